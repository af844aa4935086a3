//! The command-line pipeline driven in-process: every stage writes a run
//! manifest, and replaying a manifest reproduces byte-identical artifacts.
//!
//! ```text
//! cargo run --release --example reproducible_runs [WORK_DIR]
//! ```
//!
//! Equivalent shell session with the `hicl` binary:
//!
//! ```text
//! hicl synth   --out work/synth --posts 300 --train 10 --val 10 --test 20
//! hicl ingest  --out work/ingest --corpus work/synth/corpus.jsonl --min-hashtag-count 10
//! hicl pretrain --out work/pretrain --corpus work/ingest/posts.jsonl --vocab work/ingest/vocab.txt
//! hicl replay  --manifest work/pretrain/manifest.json
//! ```

use std::path::{Path, PathBuf};

use hicl::cli::{run_with, RunManifest};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = run_example(&args) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn hicl(args: &[&str]) -> hicl::Result<()> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("hicl").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    print!("{}", String::from_utf8_lossy(&out));
    if code == 0 {
        Ok(())
    } else {
        Err(hicl::Error::Invalid(format!("exit {code}: {}", String::from_utf8_lossy(&err))))
    }
}

pub fn run_example(args: &[String]) -> hicl::Result<()> {
    let work: PathBuf = match args.first() {
        Some(d) => d.into(),
        None => std::env::temp_dir().join(format!("hicl-runs-{}", std::process::id())),
    };
    let w = |p: &str| work.join(p).display().to_string();
    let conf = w("small.conf");
    std::fs::create_dir_all(&work).map_err(|e| hicl::Error::Invalid(e.to_string()))?;
    std::fs::write(
        &conf,
        "# a fast configuration\nencoder.d_model = 16\nencoder.d_ff = 32\npretrain.epochs = 1\npretrain.pairs_per_epoch = 64\ndatabase.cap = 40\n",
    )
    .map_err(|e| hicl::Error::Invalid(e.to_string()))?;

    hicl(&["synth", "--config", &conf, "--out", &w("synth"), "--posts", "300", "--train", "10", "--val", "10", "--test", "20"])?;
    hicl(&["ingest", "--config", &conf, "--out", &w("ingest"), "--corpus", &w("synth/corpus.jsonl"), "--min-hashtag-count", "10"])?;
    hicl(&["pretrain", "--config", &conf, "--out", &w("pretrain"), "--corpus", &w("ingest/posts.jsonl"), "--vocab", &w("ingest/vocab.txt"), "--seed", "3"])?;
    hicl(&["build-db", "--config", &conf, "--out", &w("db"), "--corpus", &w("ingest/posts.jsonl"), "--vocab", &w("ingest/vocab.txt"), "--checkpoint", &w("pretrain/encoder.ckpt")])?;

    let manifest = RunManifest::load(Path::new(&w("pretrain/manifest.json")))?;
    println!("pretrain manifest: seeds {:?}", manifest.seeds);
    for (path, digest) in &manifest.artifacts {
        println!("  {path:<16} {}", &digest[..16]);
    }
    for stage in ["synth", "ingest", "pretrain", "db"] {
        hicl(&["replay", "--manifest", &w(&format!("{stage}/manifest.json")), "--out", &w(&format!("replay/{stage}"))])?;
    }
    if args.is_empty() {
        std::fs::remove_dir_all(&work).ok();
    }
    Ok(())
}
