//! The `hicl` command line: exit codes, settings precedence, retrieval
//! output and manifest replay.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use hicl::cli::{run_with, RunManifest};
use hicl::corpus::Vocab;
use hicl::database::load_index;
use hicl::encoder::load_checkpoint;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn hicl(args: &[&str]) -> Outcome {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(std::iter::once("hicl").chain(args.iter().copied()), &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let o = hicl(args);
    assert_eq!(o.code, 0, "hicl {args:?} failed: {}", o.stderr);
    o.stdout
}

const SMALL: &str = "encoder.d_model = 16\nencoder.d_ff = 32\npretrain.epochs = 1\npretrain.pairs_per_epoch = 64\ndatabase.cap = 40\n";

/// synth -> ingest -> pretrain -> build-db, run once for every test.
fn pipeline() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let w = |p: &str| dir.join(p).display().to_string();
        std::fs::write(dir.join("small.conf"), SMALL).unwrap();
        let conf = w("small.conf");
        ok(&["synth", "--config", &conf, "--out", &w("synth"), "--posts", "300", "--train", "10", "--val", "10", "--test", "20"]);
        ok(&["ingest", "--config", &conf, "--out", &w("ingest"), "--corpus", &w("synth/corpus.jsonl"), "--min-hashtag-count", "10"]);
        ok(&["pretrain", "--config", &conf, "--out", &w("pretrain"), "--corpus", &w("ingest/posts.jsonl"), "--vocab", &w("ingest/vocab.txt")]);
        ok(&[
            "build-db", "--config", &conf, "--out", &w("db"), "--corpus", &w("ingest/posts.jsonl"), "--vocab",
            &w("ingest/vocab.txt"), "--checkpoint", &w("pretrain/encoder.ckpt"),
        ]);
        dir
    })
}

fn p(rel: &str) -> String {
    pipeline().join(rel).display().to_string()
}

#[test]
fn exit_codes() {
    let none = hicl(&[]);
    assert_eq!(none.code, 2);
    assert!(none.stderr.contains("Usage"), "{}", none.stderr);
    assert_eq!(hicl(&["frobnicate"]).code, 2);
    assert_eq!(hicl(&["retrieve", "--k", "1"]).code, 2);
    assert_eq!(hicl(&["--help"]).code, 0);
    let missing = hicl(&["ingest", "--corpus", "/nonexistent/corpus.jsonl", "--out", "/nonexistent/out"]);
    assert_eq!(missing.code, 1);
    assert!(missing.stderr.starts_with("error:"));
    let bad_key = hicl(&["ingest", "--set", "corpus.nope=3", "--corpus", "x", "--out", "/nonexistent/out"]);
    assert_eq!(bad_key.code, 1);
}

#[test]
fn binary_without_arguments_prints_usage_and_exits_2() {
    let o = Command::new(env!("CARGO_BIN_EXE_hicl")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn check_grads_reports_a_small_error() {
    let out = ok(&["check-grads"]);
    let line = out.lines().find(|l| l.starts_with("max relative error:")).expect(&out);
    let value: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(value < 1e-4, "{line}");
}

#[test]
fn later_settings_sources_win() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    std::fs::write(&conf, "corpus.vocab_size = 50\ncorpus.min_hashtag_count = 10\n").unwrap();
    let conf = conf.display().to_string();
    let corpus = p("synth/corpus.jsonl");
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name).display().to_string();
        let mut args = vec!["ingest", "--config", &conf, "--corpus", &corpus, "--out", &out];
        args.extend_from_slice(extra);
        ok(&args);
        let m = RunManifest::load(&dir.path().join(name).join("manifest.json")).unwrap();
        let v = Vocab::load(dir.path().join(name).join("vocab.txt")).unwrap();
        (m.settings, v.len())
    };
    let (file, len) = run("file", &[]);
    assert!(file.contains("corpus.vocab_size = 50\n"));
    assert_eq!(len, 50);
    let (set, _) = run("set", &["--set", "corpus.vocab_size=60"]);
    assert!(set.contains("corpus.vocab_size = 60\n"));
    let (flag, len) = run("flag", &["--set", "corpus.vocab_size=60", "--vocab-size", "70"]);
    assert!(flag.contains("corpus.vocab_size = 70\n"));
    assert_eq!(len, 70);
}

#[test]
fn retrieve_skips_the_query_itself() {
    let vocab = Vocab::load(p("ingest/vocab.txt")).unwrap();
    let params = load_checkpoint(p("pretrain/encoder.ckpt"), None).unwrap();
    let index = load_index(p("db/index.bin"), Some(&params.digest())).unwrap();
    let query = index.posts()[0].text.clone();
    let q = hicl::database::embed_text(&params, &vocab, &query).unwrap();
    let unfiltered = index.query_top_k(&q, 2, None);
    assert_eq!(index.text_of(&unfiltered[0].0), Some(query.as_str()));
    let runner_up = &unfiltered[1].0;

    let out = ok(&[
        "retrieve", "--index", &p("db/index.bin"), "--checkpoint", &p("pretrain/encoder.ckpt"), "--vocab",
        &p("ingest/vocab.txt"), "--query", &query, "--k", "1",
    ]);
    let fields: Vec<&str> = out.trim_end().split('\t').collect();
    assert_eq!(out.lines().count(), 1);
    assert_eq!(fields[0], "1");
    assert_eq!(fields[2], runner_up);
    assert_ne!(fields[3], query);
}

#[test]
fn manifests_replay_byte_identically() {
    for stage in ["synth", "ingest", "pretrain", "db"] {
        let manifest = p(&format!("{stage}/manifest.json"));
        let m = RunManifest::load(Path::new(&manifest)).unwrap();
        assert!(!m.artifacts.is_empty());
        let out = p(&format!("replay-{stage}"));
        let text = ok(&["replay", "--manifest", &manifest, "--out", &out]);
        assert!(text.contains("identical"), "{text}");
        assert!(m.compare_artifacts(Path::new(&out)).unwrap().is_empty());
    }
}

#[test]
fn replay_detects_a_changed_input() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::copy(p("synth/corpus.jsonl"), &corpus).unwrap();
    let out = dir.path().join("ing").display().to_string();
    ok(&["ingest", "--corpus", &corpus.display().to_string(), "--min-hashtag-count", "10", "--out", &out]);
    std::fs::write(&corpus, "{\"id\":\"x\",\"text\":\"changed #tag\"}\n").unwrap();
    let o = hicl(&["replay", "--manifest", &format!("{out}/manifest.json")]);
    assert_eq!(o.code, 1);
}
