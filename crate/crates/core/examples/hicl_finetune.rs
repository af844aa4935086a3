//! Retrieval-enriched fine-tuning on the synthetic topic-cue task: inputs
//! hold rare topic words only, so the label is recoverable mainly through a
//! retrieved topic-mate. Compares the no-retrieval baseline with one
//! retrieved post plus five middle trigger terms.
//!
//! ```text
//! cargo run --release --example hicl_finetune [--full]
//! ```
//!
//! The default pre-trains the retriever for 6 epochs and fine-tunes 2 seeds
//! for 15 epochs; `--full` uses 10, 10 and 30.

use hicl::analysis::mean_std;
use hicl::corpus::{build_index, build_vocab};
use hicl::database::{build_database, DatabaseConfig};
use hicl::encoder::{EncoderConfig, EncoderParams};
use hicl::finetune::{
    attach_retrievals, evaluate, finetune, predict, prepare_inputs, FinetuneConfig, Metric, Placement, Retriever,
    TriggerConfig,
};
use hicl::pretrain::{PretrainConfig, Pretrainer};
use hicl::rng::SeedTree;
use hicl::synthetic::{topic_corpus, topic_cue_dataset, TaskSizes, TopicCorpusConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = run_example(&args) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

pub fn run_example(args: &[String]) -> hicl::Result<()> {
    let full = args.iter().any(|a| a == "--full");
    let corpus_cfg = TopicCorpusConfig::default();
    let posts: Vec<_> = topic_corpus(&corpus_cfg).into_iter().map(|t| t.post).collect();
    let vocab = build_vocab(&posts, 5000)?;
    let (index, _) = build_index(posts.clone())?;

    let enc_cfg = EncoderConfig::desk(vocab.len());
    let mut pre_cfg = PretrainConfig::default();
    if !full {
        pre_cfg.epochs = 6;
    }
    let seeds = SeedTree::new(0);
    let params = EncoderParams::init(enc_cfg.clone(), &mut seeds.child("init").rng())?;
    let mut trainer = Pretrainer::new(params, pre_cfg, &vocab, &index)?;
    trainer.train(&mut |_| {})?;
    let encoder = trainer.into_params();
    let db_cfg = DatabaseConfig {
        per_hashtag_cap: 500,
        seed: 0,
    };
    let (db, _) = build_database(&posts, &db_cfg, &encoder, &vocab)?;
    let retriever = Retriever::new(&encoder, &vocab, &db)?;

    let mut data = topic_cue_dataset(&corpus_cfg, TaskSizes::default());
    attach_retrievals(&mut data, &retriever, 1, None, None)?;
    let ex = &data.test[0];
    println!("input     {:?} (label {})", ex.text, data.label_names[ex.label]);
    println!("retrieved {:?}", ex.retrieved.as_ref().unwrap()[0]);

    let runs = if full { 10 } else { 2 };
    let base = FinetuneConfig {
        epochs: if full { 30 } else { 15 },
        metric: Metric::Accuracy,
        backbone: Some(enc_cfg),
        ..FinetuneConfig::default()
    };
    let variants = [
        ("baseline (no retrieval)", FinetuneConfig { k_retrieved: 0, trigger: TriggerConfig::none(), ..base.clone() }),
        ("HICL k=1, 5 middle triggers", FinetuneConfig { trigger: TriggerConfig::preset(Placement::Middle, 5), ..base.clone() }),
    ];
    let gold: Vec<usize> = data.test.iter().map(|e| e.label).collect();
    for (name, cfg) in &variants {
        let mut scores = Vec::new();
        for run in 0..runs {
            let seed = seeds.child("finetune").child(&format!("run-{run}")).seed();
            let (model, history) = finetune(None, &vocab, &data, None, cfg, seed)?;
            let demo = SeedTree::new(seed).child("finetune").child("demonstrations");
            let inputs = prepare_inputs(&data.test, &data.train, &data.label_names, &vocab, cfg, demo)?;
            let (acc, _) = evaluate(&model, &inputs, &gold, cfg.metric)?;
            assert!(history.freeze_held());
            scores.push(100.0 * acc);
            if run == 0 {
                let (label, _) = predict(&model, &vocab, &ex.text, Some(&retriever), cfg.max_len)?;
                println!("{name}: first test input -> {}", data.label_names[label]);
            }
        }
        let (mean, std) = mean_std(&scores)?;
        println!("{name:<28} accuracy {mean:.2} ± {std:.2} over {runs} seeds");
    }
    Ok(())
}
