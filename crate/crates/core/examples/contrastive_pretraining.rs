//! Hashtag-pair contrastive pre-training with the auxiliary MLM loss, then a
//! checkpoint round trip.
//!
//! ```text
//! cargo run --release --example contrastive_pretraining [--full]
//! ```
//!
//! The default is a few-second run with a narrow encoder; `--full` trains the
//! desk-scale encoder for 10 epochs on the 2,000-post synthetic corpus.

use hicl::corpus::{build_index, build_vocab};
use hicl::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, EncoderParams};
use hicl::pretrain::{PretrainConfig, Pretrainer};
use hicl::rng::SeedTree;
use hicl::synthetic::{topic_corpus, TopicCorpusConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = run_example(&args) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

pub fn run_example(args: &[String]) -> hicl::Result<()> {
    let full = args.iter().any(|a| a == "--full");
    let corpus_cfg = TopicCorpusConfig {
        posts: if full { 2000 } else { 500 },
        ..TopicCorpusConfig::default()
    };
    let posts: Vec<_> = topic_corpus(&corpus_cfg).into_iter().map(|t| t.post).collect();
    let vocab = build_vocab(&posts, 5000)?;
    let (index, _) = build_index(posts)?;

    let mut enc_cfg = EncoderConfig::desk(vocab.len());
    let mut cfg = PretrainConfig::default();
    if !full {
        enc_cfg.d_model = 32;
        enc_cfg.d_ff = 64;
        cfg.epochs = 2;
        cfg.pairs_per_epoch = Some(256);
    }
    let seeds = SeedTree::new(0).child("pretrain");
    cfg.seed = seeds.seed();
    let params = EncoderParams::init(enc_cfg, &mut seeds.child("init").rng())?;
    println!(
        "encoder: {} parameters, vocab {}, tau {}, alpha {}",
        params.config.param_count(),
        vocab.len(),
        cfg.tau,
        cfg.alpha
    );

    let mut trainer = Pretrainer::new(params, cfg, &vocab, &index)?;
    println!("{} steps per epoch", trainer.steps_per_epoch());
    let summaries = trainer.train(&mut |m| {
        if m.step % 4 == 0 {
            println!(
                "step {:>4}  lr {:.2e}  total {:.4}  contrastive {:.4}  mlm {:.4}",
                m.step, m.lr, m.loss_total, m.loss_cl, m.loss_mlm
            );
        }
    })?;
    for s in &summaries {
        println!("epoch {}: mean loss {:.4}", s.epoch + 1, s.mean_loss);
    }

    let params = trainer.into_params();
    let path = std::env::temp_dir().join(format!("hicl-example-{}.ckpt", std::process::id()));
    save_checkpoint(&params, &path)?;
    let reloaded = load_checkpoint(&path, Some(&params.config))?;
    std::fs::remove_file(&path).ok();
    assert_eq!(reloaded.digest(), params.digest());
    println!("checkpoint round trip ok, digest {}", &params.digest()[..16]);
    Ok(())
}
