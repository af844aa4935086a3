use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::json;

use super::{
    AnalyzeArgs, BuildDbArgs, CheckGradsArgs, Command, Ctx, DataArgs, FinetuneArgs, IngestArgs, PretrainArgs,
    RetrieveArgs, SweepArgs, SynthArgs,
};
use crate::analysis::{emit_report, mean_std, trigger_token_distances, ReportOptions, RunResult, SweepResult};
use crate::corpus::{build_index, build_vocab, filter_by_frequency, read_corpus_jsonl, write_corpus_jsonl, Vocab};
use crate::database::{build_database, embed_text, load_index, save_index, EmbeddingIndex};
use crate::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::finetune::{
    attach_retrievals, evaluate, finetune, load_model, prepare_inputs, save_model, tiny_classification_check,
    Dataset, FinetuneConfig, InputMode, Placement, Retriever,
};
use crate::gradcheck::GradCheckReport;
use crate::pretrain::{check_gradients, tiny_pretrain_batch, PretrainConfig, Pretrainer};
use crate::rng::SeedTree;
use crate::synthetic::{topic_corpus, topic_cue_dataset, TaskSizes, TopicCorpusConfig};

pub(super) fn dispatch(cmd: &Command, ctx: &mut Ctx, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(a, ctx, out),
        Command::Pretrain(a) => pretrain(a, ctx, out),
        Command::BuildDb(a) => build_db(a, ctx, out),
        Command::Retrieve(a) => retrieve(a, ctx, out),
        Command::Finetune(a) => finetune_cmd(a, ctx, out),
        Command::Sweep(a) => sweep(a, ctx, out),
        Command::Analyze(a) => analyze(a, ctx, out),
        Command::CheckGrads(a) => check_grads(a, ctx, out),
        Command::Synth(a) => synth(a, ctx, out),
        Command::Replay(_) => Err(Error::Invalid("replay cannot be nested".into())),
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) {
    let _ = writeln!(out, "{line}");
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?);
    }
    Ok(rows)
}

fn load_encoder(path: &Path, vocab: &Vocab) -> Result<EncoderParams> {
    let params = load_checkpoint(path, None)?;
    if params.config.vocab_size != vocab.len() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint {} has vocab size {}, vocabulary has {}",
            path.display(),
            params.config.vocab_size,
            vocab.len()
        )));
    }
    Ok(params)
}

fn ingest(a: &IngestArgs, ctx: &mut Ctx, out: &mut dyn Write) -> Result<()> {
    ctx.input(&a.corpus)?;
    let posts = read_corpus_jsonl(&a.corpus)?;
    let read = posts.len();
    let (index, drops) = build_index(posts)?;
    let min_count: usize = ctx.settings.get("corpus.min_hashtag_count")?;
    let kept = filter_by_frequency(&index, min_count);
    let vocab = build_vocab(kept.posts(), ctx.settings.get("corpus.vocab_size")?)?;
    write_corpus_jsonl(ctx.artifact("posts.jsonl")?, kept.posts())?;
    vocab.save(ctx.artifact("vocab.txt")?)?;
    let stats = json!({
        "posts_read": read,
        "dropped_without_hashtags": drops.without_hashtags,
        "dropped_by_frequency": index.posts().len() - kept.posts().len(),
        "posts_kept": kept.posts().len(),
        "min_hashtag_count": min_count,
        "hashtags": kept.frequencies(),
        "vocab_size": vocab.len(),
    });
    ctx.write_json("ingest.json", &stats)?;
    say(
        out,
        format_args!(
            "ingest: kept {} of {} posts under {} hashtags; vocab {}",
            kept.posts().len(),
            read,
            kept.frequencies().len(),
            vocab.len()
        ),
    );
    Ok(())
}

fn pretrain(a: &PretrainArgs, ctx: &mut Ctx, out: &mut dyn Write) -> Result<()> {
    ctx.input(&a.corpus)?;
    ctx.input(&a.vocab)?;
    let (index, _) = build_index(read_corpus_jsonl(&a.corpus)?)?;
    let vocab = Vocab::load(&a.vocab)?;
    let seeds = ctx.seeds("pretrain");
    let enc_cfg = ctx.settings.encoder_config(vocab.len())?;
    let params = EncoderParams::init(enc_cfg, &mut seeds.child("init").rng())?;
    let cfg: PretrainConfig = ctx.settings.pretrain_config(seeds.seed())?;
    let every: usize = ctx.settings.get("pretrain.checkpoint_every")?;
    let mut trainer = Pretrainer::new(params, cfg.clone(), &vocab, &index)?;
    let mut log = Vec::new();
    let mut summaries = Vec::new();
    for epoch in 0..cfg.epochs {
        let summary = trainer.train_epoch(epoch, &mut |m| log.push(m.clone()))?;
        say(
            out,
            format_args!("epoch {}: mean loss {:.4} over {} steps", epoch + 1, summary.mean_loss, summary.steps),
        );
        summaries.push(summary);
        if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < cfg.epochs {
            save_checkpoint(&trainer.params, ctx.artifact(&format!("encoder-epoch{}.ckpt", epoch + 1))?)?;
        }
    }
    save_checkpoint(&trainer.params, ctx.artifact("encoder.ckpt")?)?;
    ctx.write_jsonl("train_log.jsonl", &log)?;
    ctx.write_json("epochs.json", &summaries)?;
    say(out, format_args!("pretrain: encoder digest {}", trainer.params.digest()));
    Ok(())
}

fn build_db(a: &BuildDbArgs, ctx: &mut Ctx, out: &mut dyn Write) -> Result<()> {
    ctx.input(&a.corpus)?;
    ctx.input(&a.vocab)?;
    ctx.input(&a.checkpoint)?;
    let posts = read_corpus_jsonl(&a.corpus)?;
    let vocab = Vocab::load(&a.vocab)?;
    let params = load_encoder(&a.checkpoint, &vocab)?;
    let seed = ctx.seeds("database").seed();
    let cfg = ctx.settings.database_config(seed)?;
    let (index, report) = build_database(&posts, &cfg, &params, &vocab)?;
    save_index(&index, ctx.artifact("index.bin")?)?;
    ctx.write_json("build_report.json", &report)?;
    say(
        out,
        format_args!(
            "build-db: stored {} posts from {} hashtags (cap {})",
            report.stored,
            report.sampled_per_hashtag.len(),
            cfg.per_hashtag_cap
        ),
    );
    Ok(())
}

fn retrieve(a: &RetrieveArgs, _ctx: &mut Ctx, out: &mut dyn Write) -> Result<()> {
    let vocab = Vocab::load(&a.vocab)?;
    let params = load_encoder(&a.checkpoint, &vocab)?;
    let index = load_index(&a.index, Some(&params.digest()))?;
    let q = embed_text(&params, &vocab, &a.query)?;
    for (rank, (row, score)) in index.query_rows(&q.unit, a.k, Some(&a.query)).into_iter().enumerate() {
        let post = &index.posts()[row];
        say(out, format_args!("{}\t{:.6}\t{}\t{}", rank + 1, score, post.id, post.text));
    }
    Ok(())
}

/// Loaded inputs shared by `finetune` and `sweep`.
struct TaskData {
    dataset: Dataset,
    vocab: Vocab,
    init: Option<EncoderParams>,
    task: String,
}

fn load_task(d: &DataArgs, ctx: &mut Ctx) -> Result<TaskData> {
    ctx.input(&d.dataset)?;
    ctx.input(&d.vocab)?;
    let vocab = Vocab::load(&d.vocab)?;
    let init = match &d.init {
        Some(p) => {
            ctx.input(p)?;
            Some(load_encoder(p, &vocab)?)
        }
        None => None,
    };
    let task = d.task.clone().unwrap_or_else(|| {
        d.dataset
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "task".into())
    });
    Ok(TaskData {
        dataset: Dataset::load(&d.dataset)?,
        vocab,
        init,
        task,
    })
}

/// Fills retrieved posts (top `k`) on every example, caching under
/// `cache/` in the output directory.
fn attach(d: &DataArgs, data: &mut TaskData, k: usize, ctx: &mut Ctx) -> Result<()> {
    let (Some(index_path), Some(ckpt)) = (&d.index, &d.checkpoint) else {
        return Err(Error::Config("k_retrieved > 0 needs --index and --checkpoint".into()));
    };
    ctx.input(index_path)?;
    ctx.input(ckpt)?;
    let params = load_encoder(ckpt, &data.vocab)?;
    let index: EmbeddingIndex = load_index(index_path, Some(&params.digest()))?;
    let retriever = Retriever::new(&params, &data.vocab, &index)?;
    let cache_dir = ctx.out_dir()?.join("cache");
    let threads = ctx.settings.threads()?;
    let path = attach_retrievals(&mut data.dataset, &retriever, k, Some(&cache_dir), threads)?;
    if let Some(name) = path.as_ref().and_then(|p| p.file_name()) {
        ctx.artifact(&format!("cache/{}", name.to_string_lossy()))?;
    }
    Ok(())
}

struct SeedRun {
    result: RunResult,
    val_metric: f64,
    freeze_held: bool,
}

/// Fine-tunes once per run seed and scores the test split.
fn run_seeds(
    data: &TaskData,
    cfg: &FinetuneConfig,
    config_digest: &str,
    ctx: &mut Ctx,
    mut on_run: impl FnMut(usize, &crate::finetune::FinetuneModel, &crate::finetune::History, &mut Ctx) -> Result<()>,
) -> Result<Vec<SeedRun>> {
    let tree = ctx.seeds("finetune");
    let mut runs = Vec::new();
    for (i, _) in cfg.seeds.iter().enumerate() {
        let seed = tree.child(&format!("run-{i}")).seed();
        ctx.record_seed(format!("finetune.run-{i}"), seed);
        let (model, history) = finetune(data.init.as_ref(), &data.vocab, &data.dataset, None, cfg, seed)?;
        let demo_seeds = SeedTree::new(seed).child("finetune").child("demonstrations");
        let ds = &data.dataset;
        let inputs = prepare_inputs(&ds.test, &ds.train, &ds.label_names, &data.vocab, cfg, demo_seeds)?;
        let gold: Vec<usize> = ds.test.iter().map(|e| e.label).collect();
        let (score, _) = evaluate(&model, &inputs, &gold, cfg.metric)?;
        on_run(i, &model, &history, ctx)?;
        runs.push(SeedRun {
            result: RunResult {
                task: data.task.clone(),
                config_digest: config_digest.to_string(),
                seed,
                metric: 100.0 * score,
            },
            val_metric: history.best_val_metric,
            freeze_held: history.freeze_held(),
        });
    }
    Ok(runs)
}

fn finetune_cmd(a: &FinetuneArgs, ctx: &mut Ctx, out: &mut dyn Write) -> Result<()> {
    let mut data = load_task(&a.data, ctx)?;
    let cfg = ctx.settings.finetune_config(data.vocab.len())?;
    if cfg.input_mode == InputMode::Retrieval && cfg.k_retrieved > 0 {
        attach(&a.data, &mut data, cfg.k_retrieved, ctx)?;
    }
    let digest = ctx.settings.digest(&["encoder.", "finetune."]);
    let runs = run_seeds(&data, &cfg, &digest, ctx, |i, model, history, ctx| {
        save_model(model, ctx.artifact(&format!("model-run{i}.bin"))?)?;
        ctx.write_json(&format!("history-run{i}.json"), history)
    })?;
    let results: Vec<RunResult> = runs.iter().map(|r| r.result.clone()).collect();
    ctx.write_jsonl("results.jsonl", &results)?;
    let metrics: Vec<f64> = results.iter().map(|r| r.metric).collect();
    let (mean, std) = mean_std(&metrics)?;
    let summary = json!({
        "task": data.task,
        "config_digest": digest,
        "metric": cfg.metric.to_string(),
        "runs": results.len(),
        "test_mean": mean,
        "test_std": std,
        "test_per_run": metrics,
        "val_best_per_run": runs.iter().map(|r| r.val_metric).collect::<Vec<_>>(),
        "freeze_held": runs.iter().all(|r| r.freeze_held),
    });
    ctx.write_json("metrics.json", &summary)?;
    say(
        out,
        format_args!("finetune {}: test {} {:.2} ± {:.2} over {} runs", data.task, cfg.metric, mean, std, results.len()),
    );
    Ok(())
}

fn sorted_unique<T: Ord + Copy>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v.dedup();
    v
}

fn sweep(a: &SweepArgs, ctx: &mut Ctx, out: &mut dyn Write) -> Result<()> {
    let mut data = load_task(&a.data, ctx)?;
    let (placements, triggers, ks) = ctx.settings.sweep_grid()?;
    let triggers = sorted_unique(triggers);
    let ks = sorted_unique(ks);
    if placements.is_empty() || triggers.is_empty() || ks.is_empty() {
        return Err(Error::Config("sweep grid has an empty axis".into()));
    }
    let base = ctx.settings.clone();
    let k_max = *ks.last().expect("non-empty");
    if k_max > 0 && base.raw("finetune.input_mode") == "retrieval" {
        attach(&a.data, &mut data, k_max, ctx)?;
    }
    let mut results = Vec::new();
    let mut means: BTreeMap<(Placement, usize, usize), f64> = BTreeMap::new();
    let mut by_digest: BTreeMap<String, f64> = BTreeMap::new();
    for &p in &placements {
        for &t in &triggers {
            for &k in &ks {
                let mut s = base.clone();
                s.set("finetune.placement", &p.to_string())?;
                s.set("finetune.triggers", &t.to_string())?;
                s.set("finetune.k_retrieved", &k.to_string())?;
                let digest = s.digest(&["encoder.", "finetune."]);
                if let Some(&m) = by_digest.get(&digest) {
                    means.insert((p, t, k), m);
                    continue;
                }
                let cfg = s.finetune_config(data.vocab.len())?;
                let runs = run_seeds(&data, &cfg, &digest, ctx, |_, _, _, _| Ok(()))?;
                let metrics: Vec<f64> = runs.iter().map(|r| r.result.metric).collect();
                let (mean, std) = mean_std(&metrics)?;
                say(out, format_args!("sweep {p} T={t} k={k}: {mean:.2} ± {std:.2}"));
                means.insert((p, t, k), mean);
                by_digest.insert(digest, mean);
                results.extend(runs.into_iter().map(|r| r.result));
            }
        }
    }
    let mut sweeps = Vec::new();
    for &p in &placements {
        if ks.len() >= 2 {
            for &t in &triggers {
                let ys = ks.iter().map(|&k| means[&(p, t, k)]).collect();
                let xs = ks.iter().map(|&k| k as f64).collect();
                sweeps.push(SweepResult::new(&data.task, format!("k_retrieved[{p},T={t}]"), xs, ys)?);
            }
        }
        if triggers.len() >= 2 {
            for &k in &ks {
                let ys = triggers.iter().map(|&t| means[&(p, t, k)]).collect();
                let xs = triggers.iter().map(|&t| t as f64).collect();
                sweeps.push(SweepResult::new(&data.task, format!("triggers[{p},k={k}]"), xs, ys)?);
            }
        }
    }
    ctx.write_jsonl("results.jsonl", &results)?;
    ctx.write_jsonl("sweeps.jsonl", &sweeps)?;
    Ok(())
}

fn analyze(a: &AnalyzeArgs, ctx: &mut Ctx, out: &mut dyn Write) -> Result<()> {
    let mut results: Vec<RunResult> = Vec::new();
    for p in &a.results {
        ctx.input(p)?;
        results.extend(read_jsonl::<RunResult>(p)?);
    }
    let mut sweeps: Vec<SweepResult> = Vec::new();
    for p in &a.sweeps {
        ctx.input(p)?;
        sweeps.extend(read_jsonl::<SweepResult>(p)?);
    }
    let distances = match (&a.model, &a.vocab) {
        (Some(m), Some(v)) => {
            ctx.input(m)?;
            ctx.input(v)?;
            let model = load_model(m)?;
            let vocab = Vocab::load(v)?;
            trigger_token_distances(&model, &vocab, ctx.settings.get("analysis.top_n")?)
        }
        _ => Vec::new(),
    };
    let opts = ReportOptions {
        exclude_tasks: ctx.settings.exclude_tasks(),
    };
    ctx.artifact("report.txt")?;
    ctx.artifact("report.jsonl")?;
    let dir = ctx.out_dir()?.to_path_buf();
    emit_report(&results, &sweeps, &distances, &opts, &dir)?;
    let text = std::fs::read_to_string(dir.join("report.txt")).map_err(|e| Error::io(dir.join("report.txt"), e))?;
    let _ = write!(out, "{text}");
    Ok(())
}

fn print_report(out: &mut dyn Write, label: &str, rep: &GradCheckReport) {
    for (name, err) in &rep.per_tensor {
        say(out, format_args!("{label:<14} {name:<28} {err:.3e}"));
    }
}

fn check_grads(a: &CheckGradsArgs, ctx: &mut Ctx, out: &mut dyn Write) -> Result<()> {
    let config = EncoderConfig::tiny(20);
    let batch = tiny_pretrain_batch(&config, 4, 3);
    let pre = check_gradients(&config, &PretrainConfig::default(), &batch, a.epsilon)?;
    let cls = tiny_classification_check(a.epsilon)?;
    print_report(out, "pretrain", &pre);
    print_report(out, "classification", &cls);
    let max = pre.max_rel_error.max(cls.max_rel_error);
    say(out, format_args!("max relative error: {max:.3e} (tolerance {:.0e})", a.tolerance));
    if ctx.out_dir().is_ok() {
        let record = json!({
            "epsilon": a.epsilon,
            "tolerance": a.tolerance,
            "max_relative_error": max,
            "pretrain": pre.per_tensor,
            "classification": cls.per_tensor,
        });
        ctx.write_json("gradcheck.json", &record)?;
    }
    if max < a.tolerance {
        Ok(())
    } else {
        Err(Error::Invalid(format!("gradient check failed: max relative error {max:.3e}")))
    }
}

fn synth(a: &SynthArgs, ctx: &mut Ctx, out: &mut dyn Write) -> Result<()> {
    let cfg = TopicCorpusConfig {
        posts: a.posts,
        seed: ctx.seeds("synth").seed(),
        ..TopicCorpusConfig::default()
    };
    let posts: Vec<_> = topic_corpus(&cfg).into_iter().map(|t| t.post).collect();
    write_corpus_jsonl(ctx.artifact("corpus.jsonl")?, &posts)?;
    let sizes = TaskSizes {
        train: a.train,
        val: a.val,
        test: a.test,
    };
    let dataset = topic_cue_dataset(&cfg, sizes);
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "labels.json"] {
        ctx.artifact(&format!("topic-cue/{f}"))?;
    }
    dataset.save(ctx.out_dir()?.join("topic-cue"))?;
    say(
        out,
        format_args!(
            "synth: {} posts; topic-cue splits {}/{}/{}",
            posts.len(),
            sizes.train,
            sizes.val,
            sizes.test
        ),
    );
    Ok(())
}
