//! Corpus pipeline: hashtag extraction, rare-hashtag filtering,
//! inverse-frequency pair sampling, hashtag noise and long-document packing.
//!
//! ```text
//! cargo run --release --example corpus_pipeline [CORPUS.jsonl]
//! ```
//!
//! Without an argument it runs on a small synthetic topic corpus plus a few
//! hand-written posts.

use hicl::corpus::{
    build_index, build_pairs, build_vocab, filter_by_frequency, noise_hashtags, pack_long_documents,
    read_corpus_jsonl, NoiseConfig, PairMode, RawPost,
};
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
    let posts = match args.first() {
        Some(path) => read_corpus_jsonl(path)?,
        None => {
            let cfg = TopicCorpusConfig {
                posts: 400,
                ..TopicCorpusConfig::default()
            };
            let mut posts: Vec<RawPost> = topic_corpus(&cfg).into_iter().map(|t| t.post).collect();
            posts.push(RawPost::new("hand-1", "no hashtag in this one"));
            posts.push(RawPost::new("hand-2", "a one-off tag #RareTopic"));
            posts.push(RawPost::new("hand-3", "loving the #SunnyDay at the #BeachLife"));
            posts
        }
    };
    println!("read {} posts", posts.len());
    println!("hashtags of {:?}: {:?}", posts.last().unwrap().text, posts.last().unwrap().hashtags);

    let (index, drops) = build_index(posts)?;
    println!("dropped {} posts without hashtags", drops.without_hashtags);
    let kept = filter_by_frequency(&index, 10);
    println!(
        "min count 10 keeps {} of {} posts and {} of {} hashtags",
        kept.posts().len(),
        index.posts().len(),
        kept.frequencies().len(),
        index.frequencies().len()
    );
    for (tag, n) in kept.frequencies() {
        println!("  {tag:<18} {n}");
    }

    let seeds = SeedTree::new(7);
    let pairs = build_pairs(&kept, 3, PairMode::HashtagPair, &mut seeds.child("pairs").rng())?;
    let noise = NoiseConfig::new(0.25, 0.25)?;
    let mut rng = seeds.child("noise").rng();
    for p in &pairs {
        println!("pair via {}:", p.shared_hashtag.as_deref().unwrap_or("-"));
        println!("  anchor   {}", noise_hashtags(&p.anchor.text, &noise, &mut rng));
        println!("  positive {}", noise_hashtags(&p.positive.text, &noise, &mut rng));
    }

    let vocab = build_vocab(kept.posts(), 5000)?;
    let docs = pack_long_documents(&kept, 48, &vocab, 0.5, &mut seeds.child("pack").rng())?;
    let longest = docs.iter().map(Vec::len).max().unwrap_or(0);
    println!("vocab {} tokens; {} packed documents, longest {} tokens", vocab.len(), docs.len(), longest);
    Ok(())
}
