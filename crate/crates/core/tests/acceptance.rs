//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! ```text
//! cargo test --release -p hicl --test acceptance            # all criteria
//! cargo test --release -p hicl --test acceptance -- 3 5     # a subset
//! ```
//!
//! Criteria 7-9 train desk-scale models over 10 seeds and take several
//! minutes on one core. The process exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use hicl::analysis::{aggregate_runs, emit_report, lls_slope, ReportOptions, RunResult, SweepResult};
use hicl::cli::{run_with, RunManifest};
use hicl::corpus::{build_index, build_vocab, RawPost, Vocab, CLS_ID, SEP_ID};
use hicl::database::{build_database, embed_text, DatabaseConfig, EmbeddingIndex, IndexMeta, StoredPost};
use hicl::encoder::{trigger_row, trigger_sentinel, EncoderConfig, EncoderParams, SentenceEmbedding};
use hicl::finetune::{
    attach_retrievals, evaluate, finetune, prepare_inputs, reformulate_input, Dataset, FinetuneConfig, Metric,
    Placement, Retriever, Segment, TriggerConfig, TriggerPhase,
};
use hicl::nn::Mat;
use hicl::pretrain::{contrastive_loss, PretrainConfig, Pretrainer};
use hicl::rng::{rng_from_seed, SeedTree};
use hicl::synthetic::{held_out_posts, topic_corpus, topic_cue_dataset, TaskSizes, TopicCorpusConfig};
use rand::Rng as _;

const SEEDS: u64 = 10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Seed-0 retriever from criterion 7, reused by criteria 8 and 9.
struct TopicModel {
    vocab: Vocab,
    encoder: EncoderParams,
    db: EmbeddingIndex,
}

#[derive(Default)]
struct Shared {
    topic_model: Option<TopicModel>,
    task: Option<Dataset>,
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn(&mut Shared) -> Verdict); 11] = [
        (1, "gradient fidelity", c01_gradients),
        (2, "contrastive-loss closed forms", c02_contrastive),
        (3, "retrieval exactness", c03_retrieval),
        (4, "database cap", c04_cap),
        (5, "trigger layouts", c05_layouts),
        (6, "trigger-pass freeze", c06_freeze),
        (7, "topic retrieval quality", c07_topic_retrieval),
        (8, "retrieval-enriched gain", c08_gain),
        (9, "one trigger vs plain concatenation", c09_trigger_direction),
        (10, "analysis oracles", c10_analysis),
        (11, "manifest replay determinism", c11_replay),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut shared = Shared::default();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(|| check(&mut shared))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} criterion {n:>2} ({name}): {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn hicl(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(std::iter::once("hicl").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

fn c01_gradients(_: &mut Shared) -> Verdict {
    let t = Instant::now();
    let (code, out, err) = hicl(&["check-grads"]);
    let elapsed = t.elapsed();
    let max = out
        .lines()
        .find_map(|l| l.strip_prefix("max relative error: "))
        .and_then(|l| l.split_whitespace().next())
        .and_then(|v| v.parse::<f64>().ok())
        .unwrap_or(f64::INFINITY);
    let covers_triggers = out.lines().any(|l| l.starts_with("classification") && l.contains("triggers"));
    let pass = code == 0 && max < 1e-4 && covers_triggers && elapsed < Duration::from_secs(60);
    verdict(
        pass,
        format!(
            "max relative error {max:.3e} < 1e-4, trigger rows checked: {covers_triggers}, {:.1}s < 60s{}",
            elapsed.as_secs_f64(),
            if code == 0 { String::new() } else { format!(", exit {code}: {err}") }
        ),
    )
}

fn c02_contrastive(_: &mut Shared) -> Verdict {
    let basis = |i: usize, d: usize| SentenceEmbedding::from_raw((0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect());
    let one = contrastive_loss(&[basis(0, 3)], &[basis(1, 3)], 0.05).unwrap().loss;
    let same: Vec<_> = (0..4).map(|_| SentenceEmbedding::from_raw(vec![0.3, -1.2, 2.0])).collect();
    let four = contrastive_loss(&same, &same, 0.05).unwrap().loss;
    let eye: Vec<_> = (0..8).map(|i| basis(i, 8)).collect();
    let eight = contrastive_loss(&eye, &eye, 0.05).unwrap().loss;
    let want8 = (7.0 * (-20f64).exp()).ln_1p();
    let (e4, e8) = ((four - 4f64.ln()).abs(), (eight - want8).abs());
    verdict(
        one == 0.0 && e4 <= 1e-10 && e8 <= 1e-12,
        format!("N=1 -> {one:e}; N=4 |err| {e4:.1e} <= 1e-10; N=8 {eight:.6e} |err| {e8:.1e} <= 1e-12"),
    )
}

fn c03_retrieval(_: &mut Shared) -> Verdict {
    let t = Instant::now();
    let d = 64;
    let mut rng = rng_from_seed(2024);
    let unit = |rng: &mut hicl::rng::Rng| {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let rows: Vec<Vec<f64>> = (0..10_000).map(|_| unit(&mut rng)).collect();
    let posts = (0..rows.len())
        .map(|i| StoredPost { id: format!("p{i:05}"), text: format!("post {i}") })
        .collect();
    let m = Mat::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]);
    let meta = IndexMeta { encoder_digest: "random".into(), config: DatabaseConfig::default(), built_at: 0 };
    let index = EmbeddingIndex::from_parts(posts, m, meta).unwrap();
    let mut agree = 0;
    let mut total = 0;
    for _ in 0..100 {
        let q = unit(&mut rng);
        let mut oracle: Vec<(String, f64)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("p{i:05}"), r.iter().zip(&q).map(|(a, b)| a * b).sum()))
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let query = SentenceEmbedding::from_raw(q.clone());
        for k in [1, 5, 50] {
            let ids: Vec<String> = index.query_top_k(&query, k, None).into_iter().map(|(id, _)| id).collect();
            let want: Vec<String> = oracle[..k].iter().map(|(id, _)| id.clone()).collect();
            total += 1;
            if ids == want {
                agree += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        agree == total && secs < 30.0,
        format!("{agree}/{total} (query, k) cases equal the full-sort oracle, k in {{1,5,50}}; {secs:.1}s < 30s"),
    )
}

fn c04_cap(_: &mut Shared) -> Verdict {
    let mut posts: Vec<RawPost> = (0..700).map(|i| RawPost::new(format!("big{i:04}"), format!("word{} #big", i % 37))).collect();
    posts.extend((0..120).map(|i| RawPost::new(format!("small{i:04}"), format!("other{} #small", i % 11))));
    let vocab = build_vocab(&posts, 200).unwrap();
    let params = EncoderParams::init(EncoderConfig::tiny(vocab.len()), &mut rng_from_seed(0)).unwrap();
    let cfg = DatabaseConfig { per_hashtag_cap: 500, seed: 0 };
    let (db, report) = build_database(&posts, &cfg, &params, &vocab).unwrap();
    let big = db.posts().iter().filter(|p| p.id.starts_with("big")).count();
    let sampled = report.sampled_per_hashtag["#big"];
    verdict(
        sampled == 500 && big == 500 && report.sampled_per_hashtag["#small"] == 120,
        format!("700-post hashtag -> {sampled} sampled, {big} stored; 120-post hashtag kept whole"),
    )
}

fn c05_layouts(_: &mut Shared) -> Verdict {
    let t = trigger_sentinel;
    let (x, xr) = ([10u32, 11], vec![20u32, 21, 22]);
    let table = [
        (Placement::Front, vec![t(0), t(1), t(2), t(3), t(4), CLS_ID, 10, 11, 20, 21, 22, SEP_ID], (0..5).collect::<Vec<usize>>()),
        (Placement::Middle, vec![CLS_ID, 10, 11, t(0), t(1), t(2), t(3), t(4), 20, 21, 22, SEP_ID], (3..8).collect()),
        (Placement::End, vec![CLS_ID, 10, 11, 20, 21, 22, t(0), t(1), t(2), t(3), t(4), SEP_ID], (6..11).collect()),
        (
            Placement::All,
            vec![
                t(0), t(1), t(2), t(3), t(4), CLS_ID, 10, 11, t(10), t(11), t(12), t(13), t(14), 20, 21, 22, t(5), t(6),
                t(7), t(8), t(9), SEP_ID,
            ],
            (0..5).chain(8..13).chain(16..21).collect(),
        ),
    ];
    let mut cases = 0;
    let mut ok = 0;
    for (placement, ids, positions) in &table {
        let r = reformulate_input(&x, &[xr.clone()], &TriggerConfig::preset(*placement, 5), 64).unwrap();
        cases += 1;
        if &r.ids == ids && &r.trigger_positions() == positions {
            ok += 1;
        }
    }
    // Round trip over every placement, segment count and source length.
    for placement in [Placement::Front, Placement::Middle, Placement::End, Placement::All] {
        for k in 0..4usize {
            for len in 1..6u32 {
                let src: Vec<u32> = (0..len).map(|i| 100 + i).collect();
                let retrieved: Vec<Vec<u32>> = (0..k).map(|g| (0..=g as u32).map(|i| 200 + 10 * g as u32 + i).collect()).collect();
                let r = reformulate_input(&src, &retrieved, &TriggerConfig::preset(placement, 5), 128).unwrap();
                let stripped: Vec<u32> = r
                    .ids
                    .iter()
                    .copied()
                    .filter(|&id| trigger_row(id).is_none() && id != CLS_ID && id != SEP_ID)
                    .collect();
                let want: Vec<u32> = src.iter().chain(retrieved.iter().flatten()).copied().collect();
                let segments_ok = r.segment_tokens(Segment::Source) == src
                    && (0..k).all(|g| r.segment_tokens(Segment::Retrieved(g)) == retrieved[g]);
                cases += 1;
                if stripped == want && segments_ok {
                    ok += 1;
                }
            }
        }
    }
    verdict(ok == cases, format!("{ok}/{cases} layout fixtures (4 hand-enumerated n=5 presets + round trips)"))
}

fn c06_freeze(_: &mut Shared) -> Verdict {
    let corpus = TopicCorpusConfig { topics: 3, source_words_per_topic: 12, seed: 6, ..TopicCorpusConfig::default() };
    let data = topic_cue_dataset(&corpus, TaskSizes { train: 24, val: 12, test: 12 });
    let texts: Vec<RawPost> = data.train.iter().chain(&data.val).map(|e| RawPost::new(e.id.clone(), e.text.clone())).collect();
    let vocab = build_vocab(&texts, 300).unwrap();
    let mut epochs = 0;
    let mut checks = 0;
    let mut held = true;
    for phase in [TriggerPhase::PerEpoch, TriggerPhase::PerStep] {
        for placement in [Placement::Front, Placement::All] {
            let cfg = FinetuneConfig {
                batch_size: 8,
                k_retrieved: 0,
                trigger: TriggerConfig::preset(placement, 3),
                trigger_phase: phase,
                max_len: 32,
                backbone: Some(EncoderConfig { max_seq_len: 32, ..EncoderConfig::tiny(vocab.len()) }),
                ..FinetuneConfig::default()
            };
            let (_, history) = finetune(None, &vocab, &data, None, &cfg, 11).unwrap();
            for e in &history.epochs {
                epochs += 1;
                held &= !e.freeze_checks.is_empty();
                for (before, after) in &e.freeze_checks {
                    checks += 1;
                    held &= before == after;
                }
            }
        }
    }
    verdict(held, format!("{checks} trigger-only passes over {epochs} epochs left the backbone checksum unchanged"))
}

fn pretrain_topic(seed: u64) -> (TopicModel, TopicCorpusConfig, HashMap<String, usize>, usize) {
    let corpus_cfg = TopicCorpusConfig::default();
    let corpus = topic_corpus(&corpus_cfg);
    let topic_of = corpus.iter().map(|t| (t.post.id.clone(), t.topic)).collect();
    let posts: Vec<RawPost> = corpus.into_iter().map(|t| t.post).collect();
    let vocab = build_vocab(&posts, 5000).unwrap();
    let (index, _) = build_index(posts.clone()).unwrap();
    let hashtags = index.hashtags().count();
    let seeds = SeedTree::new(seed);
    let params = EncoderParams::init(EncoderConfig::desk(vocab.len()), &mut seeds.child("pretrain").child("init").rng()).unwrap();
    let cfg = PretrainConfig { seed: seeds.child("pretrain").seed(), ..PretrainConfig::default() };
    let mut trainer = Pretrainer::new(params, cfg, &vocab, &index).unwrap();
    trainer.train(&mut |_| {}).unwrap();
    let encoder = trainer.into_params();
    let db_cfg = DatabaseConfig { per_hashtag_cap: 500, seed: seeds.child("database").seed() };
    let (db, _) = build_database(&posts, &db_cfg, &encoder, &vocab).unwrap();
    (TopicModel { vocab, encoder, db }, corpus_cfg, topic_of, hashtags)
}

fn c07_topic_retrieval(shared: &mut Shared) -> Verdict {
    let t = Instant::now();
    let mut precisions = Vec::new();
    let mut shape = String::new();
    for seed in 0..SEEDS {
        let (model, corpus_cfg, topic_of, hashtags) = pretrain_topic(seed);
        shape = format!("{} posts, {} topics, {hashtags} hashtags", corpus_cfg.posts, corpus_cfg.topics);
        let queries = held_out_posts(&corpus_cfg, 500, seed);
        let hits = queries
            .iter()
            .filter(|q| {
                let e = embed_text(&model.encoder, &model.vocab, &q.post.text).unwrap();
                let top = model.db.query_top_k(&e, 1, Some(&q.post.text));
                topic_of[&top[0].0] == q.topic
            })
            .count();
        precisions.push(hits as f64 / queries.len() as f64);
        if seed == 0 {
            shared.topic_model = Some(model);
        }
    }
    let good = precisions.iter().filter(|&&p| p >= 0.90).count();
    let secs = t.elapsed().as_secs_f64();
    let list: Vec<String> = precisions.iter().map(|p| format!("{p:.3}")).collect();
    verdict(
        good >= 9 && secs < 600.0,
        format!("{shape}; P@1 over 500 held-out queries per seed [{}]; {good}/10 seeds >= 0.90; {secs:.0}s < 600s", list.join(" ")),
    )
}

/// The seed-0 retriever and the topic-cue task with one neighbour attached.
fn topic_task(shared: &mut Shared) -> (&TopicModel, &Dataset) {
    if shared.topic_model.is_none() {
        shared.topic_model = Some(pretrain_topic(0).0);
    }
    let model = shared.topic_model.as_ref().unwrap();
    if shared.task.is_none() {
        let mut data = topic_cue_dataset(&TopicCorpusConfig::default(), TaskSizes::default());
        let retriever = Retriever::new(&model.encoder, &model.vocab, &model.db).unwrap();
        attach_retrievals(&mut data, &retriever, 1, None, None).unwrap();
        shared.task = Some(data);
    }
    (model, shared.task.as_ref().unwrap())
}

/// Mean test accuracy (percent) over the 10 fine-tuning seeds.
fn mean_accuracy(model: &TopicModel, data: &Dataset, k: usize, trigger: TriggerConfig) -> (f64, bool) {
    let cfg = FinetuneConfig {
        k_retrieved: k,
        trigger,
        metric: Metric::Accuracy,
        backbone: Some(EncoderConfig::desk(model.vocab.len())),
        ..FinetuneConfig::default()
    };
    let gold: Vec<usize> = data.test.iter().map(|e| e.label).collect();
    let mut total = 0.0;
    let mut frozen = true;
    for run in 0..SEEDS {
        let seed = SeedTree::new(0).child("finetune").child(&format!("run-{run}")).seed();
        let (m, history) = finetune(None, &model.vocab, data, None, &cfg, seed).unwrap();
        frozen &= history.freeze_held();
        let demos = SeedTree::new(seed).child("finetune").child("demonstrations");
        let inputs = prepare_inputs(&data.test, &data.train, &data.label_names, &model.vocab, &cfg, demos).unwrap();
        total += 100.0 * evaluate(&m, &inputs, &gold, Metric::Accuracy).unwrap().0;
    }
    (total / SEEDS as f64, frozen)
}

fn c08_gain(shared: &mut Shared) -> Verdict {
    let (model, data) = topic_task(shared);
    let (base, _) = mean_accuracy(model, data, 0, TriggerConfig::none());
    let (hicl, frozen) = mean_accuracy(model, data, 1, TriggerConfig::preset(Placement::Middle, 5));
    verdict(
        hicl - base >= 5.0 && frozen,
        format!("k=1 + 5 middle triggers {hicl:.2} vs no retrieval {base:.2}: gain {:+.2} >= 5 points (10 seeds)", hicl - base),
    )
}

fn c09_trigger_direction(shared: &mut Shared) -> Verdict {
    let (model, data) = topic_task(shared);
    let (concat, _) = mean_accuracy(model, data, 1, TriggerConfig::none());
    let (one, _) = mean_accuracy(model, data, 1, TriggerConfig::preset(Placement::Middle, 1));
    verdict(
        one >= concat - 0.5,
        format!("1 middle trigger {one:.2} vs plain concatenation {concat:.2}: difference {:+.2} >= -0.5 (10 seeds)", one - concat),
    )
}

fn c10_analysis(_: &mut Shared) -> Verdict {
    let slope = lls_slope(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.9, 3.2, 3.9]).unwrap();
    let slope_ok = (slope - 1.0).abs() <= 1e-9;
    let values = [67.3, 68.0, 68.6];
    let runs: Vec<RunResult> = values
        .iter()
        .enumerate()
        .map(|(i, &m)| RunResult { task: "t".into(), config_digest: "c".into(), seed: i as u64, metric: m })
        .collect();
    let agg = &aggregate_runs(&runs).unwrap()[0];
    let mean = values.iter().sum::<f64>() / 3.0;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    let agg_ok = (agg.mean - mean).abs() <= 1e-9
        && (agg.std - std).abs() <= 1e-9
        && (agg.mean - 67.9667).abs() < 1e-4
        && (agg.std - 0.6506).abs() < 1e-4;
    let sweeps = vec![SweepResult::new("t", "triggers[middle,k=1]", vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 1.9, 3.2, 3.9]).unwrap()];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let opts = ReportOptions::default();
    emit_report(&runs, &sweeps, &[], &opts, a.path()).unwrap();
    emit_report(&runs, &sweeps, &[], &opts, b.path()).unwrap();
    let same = ["report.txt", "report.jsonl"]
        .iter()
        .all(|f| std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap());
    verdict(
        slope_ok && agg_ok && same,
        format!(
            "slope {slope:.12} (closed form 1.0); mean {:.4} std {:.4} (hand 67.9667 / 0.6506); reports byte-identical: {same}",
            agg.mean, agg.std
        ),
    )
}

fn c11_replay(_: &mut Shared) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let w = |p: &str| dir.path().join(p).display().to_string();
    std::fs::write(
        dir.path().join("small.conf"),
        "encoder.d_model = 16\nencoder.d_ff = 32\npretrain.epochs = 1\npretrain.pairs_per_epoch = 64\n\
         database.cap = 40\nfinetune.epochs = 3\nfinetune.runs = 2\n",
    )
    .unwrap();
    let conf = w("small.conf");
    let data = [
        "--dataset", &w("synth/topic-cue"), "--vocab", &w("ingest/vocab.txt"), "--index", &w("db/index.bin"),
        "--checkpoint", &w("pretrain/encoder.ckpt"),
    ]
    .map(String::from);
    let data: Vec<&str> = data.iter().map(String::as_str).collect();
    let stages: Vec<(&str, Vec<&str>)> = vec![
        ("synth", vec!["synth", "--posts", "300", "--train", "12", "--val", "12", "--test", "20"]),
        ("ingest", vec!["ingest", "--corpus", "SYNTH", "--min-hashtag-count", "10"]),
        ("pretrain", vec!["pretrain", "--corpus", "POSTS", "--vocab", "VOCAB"]),
        ("db", vec!["build-db", "--corpus", "POSTS", "--vocab", "VOCAB", "--checkpoint", "CKPT"]),
        ("finetune", [vec!["--threads", "4", "finetune"], data.clone()].concat()),
        ("sweep", [vec!["--threads", "4", "sweep"], data.clone(), vec!["--triggers", "1,2", "--k-retrieved", "0,1", "--runs", "1"]].concat()),
        ("analyze", vec!["analyze", "--results", "RESULTS", "--sweeps", "SWEEPS", "--model", "MODEL", "--vocab", "VOCAB"]),
        ("gradcheck", vec!["check-grads"]),
    ];
    let subst = |a: &str| -> String {
        match a {
            "SYNTH" => w("synth/corpus.jsonl"),
            "POSTS" => w("ingest/posts.jsonl"),
            "VOCAB" => w("ingest/vocab.txt"),
            "CKPT" => w("pretrain/encoder.ckpt"),
            "RESULTS" => w("finetune/results.jsonl"),
            "SWEEPS" => w("sweep/sweeps.jsonl"),
            "MODEL" => w("finetune/model-run0.bin"),
            other => other.to_string(),
        }
    };
    let mut problems = Vec::new();
    let mut artifacts = 0;
    for &(name, ref args) in &stages {
        let mut full: Vec<String> = vec!["--config".into(), conf.clone(), "--out".into(), w(name)];
        full.extend(args.iter().map(|a| subst(a)));
        let refs: Vec<&str> = full.iter().map(String::as_str).collect();
        let (code, _, err) = hicl(&refs);
        if code != 0 {
            problems.push(format!("{name} exited {code}: {}", err.trim()));
            continue;
        }
        let manifest = dir.path().join(name).join("manifest.json");
        let replay_dir = w(&format!("{name}-replay"));
        let (code, _, err) = hicl(&["--threads", "1", "replay", "--manifest", &manifest.display().to_string(), "--out", &replay_dir]);
        let m = RunManifest::load(&manifest).unwrap();
        if name == "finetune" && !m.artifacts.keys().any(|k| k.starts_with("cache/")) {
            problems.push("finetune manifest lacks the retrieval cache".into());
        }
        artifacts += m.artifacts.len();
        if code != 0 || !m.compare_artifacts(Path::new(&replay_dir)).unwrap().is_empty() {
            problems.push(format!("{name} replay differs: {}", err.trim()));
        }
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} subcommands, {artifacts} artifacts byte-identical on replay (finetune/sweep recorded with 4 threads, replayed with 1)", stages.len())
        } else {
            problems.join("; ")
        },
    )
}
