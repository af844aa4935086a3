//! Topic retrieval: pre-train on the synthetic topic corpus, build the
//! per-hashtag-capped database, persist it and query held-out posts.
//!
//! ```text
//! cargo run --release --example topic_retrieval [--full]
//! ```
//!
//! The default trains the desk-scale encoder for 6 epochs and asks 100
//! held-out queries; `--full` trains 10 epochs and asks 500. Reports
//! precision@1: the share of queries whose nearest stored post comes from
//! the same topic.

use hicl::corpus::{build_index, build_vocab};
use hicl::database::{build_database, embed_text, load_index, save_index, DatabaseConfig};
use hicl::encoder::{EncoderConfig, EncoderParams};
use hicl::pretrain::{PretrainConfig, Pretrainer};
use hicl::rng::SeedTree;
use hicl::synthetic::{held_out_posts, topic_corpus, TopicCorpusConfig};

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
        posts: 2000,
        ..TopicCorpusConfig::default()
    };
    let corpus = topic_corpus(&corpus_cfg);
    let topic_of: std::collections::HashMap<String, usize> =
        corpus.iter().map(|t| (t.post.id.clone(), t.topic)).collect();
    let posts: Vec<_> = corpus.into_iter().map(|t| t.post).collect();
    let vocab = build_vocab(&posts, 5000)?;
    let (index, _) = build_index(posts.clone())?;

    let seeds = SeedTree::new(0);
    let enc_cfg = EncoderConfig::desk(vocab.len());
    let mut cfg = PretrainConfig {
        seed: seeds.child("pretrain").seed(),
        ..PretrainConfig::default()
    };
    if !full {
        cfg.epochs = 6;
    }
    let params = EncoderParams::init(enc_cfg, &mut seeds.child("pretrain").child("init").rng())?;
    let mut trainer = Pretrainer::new(params, cfg, &vocab, &index)?;
    trainer.train(&mut |_| {})?;
    let params = trainer.into_params();

    let db_cfg = DatabaseConfig {
        per_hashtag_cap: 500,
        seed: seeds.child("database").seed(),
    };
    let (db, report) = build_database(&posts, &db_cfg, &params, &vocab)?;
    println!("database: {} posts over {} hashtags", report.stored, report.sampled_per_hashtag.len());
    let path = std::env::temp_dir().join(format!("hicl-example-{}.index", std::process::id()));
    save_index(&db, &path)?;
    let db = load_index(&path, Some(&params.digest()))?;
    std::fs::remove_file(&path).ok();

    let queries = held_out_posts(&corpus_cfg, if full { 500 } else { 100 }, 0);
    let mut hits = 0;
    for (i, q) in queries.iter().enumerate() {
        let e = embed_text(&params, &vocab, &q.post.text)?;
        let top = db.query_top_k(&e, 3, Some(&q.post.text));
        if topic_of[&top[0].0] == q.topic {
            hits += 1;
        }
        if i < 2 {
            println!("query {:?}", q.post.text);
            for (id, score) in &top {
                println!("  {score:.4}  {id}  {}", db.text_of(id).unwrap_or(""));
            }
        }
    }
    println!("precision@1 over {} held-out queries: {:.3}", queries.len(), hits as f64 / queries.len() as f64);
    Ok(())
}
