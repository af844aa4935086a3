//! Command-line driver: one subcommand per pipeline stage.
//!
//! Settings resolve as defaults, then the `--config` file, then `--set`
//! overrides, then per-subcommand flags. A single `--seed` feeds a
//! [`SeedTree`] with one child stream per subsystem. Every subcommand that
//! writes artifacts also writes a [`RunManifest`]; `replay` reruns it and
//! compares digests.

mod commands;
mod manifest;
mod settings;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedTree;

pub use manifest::{dir_digests, file_digest, path_digest, RunManifest, MANIFEST_FILE};
pub use settings::{Settings, KEYS};

/// Exit code for malformed command lines.
pub const EXIT_USAGE: i32 = 2;
/// Exit code when an operation fails.
pub const EXIT_FAILURE: i32 = 1;

const DEFAULT_OUT: &str = "hicl-out";

#[derive(Debug, Parser)]
#[command(
    name = "hicl",
    version,
    about = "Hashtag-driven contrastive encoder, post retrieval and trigger-term fine-tuning",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Default, Args, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// Flat `key = value` settings file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root of the seed-derivation tree.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Directory for artifacts and the run manifest.
    #[arg(long, global = true, value_name = "DIR")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Override any setting, e.g. `--set pretrain.epochs=2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker cap for parallel retrieval (defaults to HICL_THREADS).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Read a JSONL corpus, drop rare hashtags, write posts and vocabulary.
    Ingest(IngestArgs),
    /// Pre-train the sentence encoder on hashtag pairs.
    Pretrain(PretrainArgs),
    /// Sample posts per hashtag, embed them and write the index file.
    BuildDb(BuildDbArgs),
    /// Print the top-k database posts for a query.
    Retrieve(RetrieveArgs),
    /// Fine-tune a classifier on retrieval-enriched inputs.
    Finetune(FinetuneArgs),
    /// Fine-tune over a grid of trigger counts, placements and k values.
    Sweep(SweepArgs),
    /// Aggregate run results into a text and JSONL report.
    Analyze(AnalyzeArgs),
    /// Verify analytic gradients against finite differences.
    CheckGrads(CheckGradsArgs),
    /// Rerun a manifest and compare artifact digests.
    Replay(ReplayArgs),
    /// Write the synthetic topic corpus and topic-cue dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// JSONL corpus with `id` and `text` fields.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_name = "N")]
    pub min_hashtag_count: Option<usize>,
    #[arg(long, value_name = "N")]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PretrainArgs {
    /// Ingested posts (JSONL).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BuildDbArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Encoder checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Posts sampled per hashtag at most.
    #[arg(long, value_name = "N")]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Directory with train/val/test JSONL splits and labels.json.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Database index; needed when k_retrieved > 0.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Encoder that built the index.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Backbone initialization; a fresh encoder when absent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Task name in results (defaults to the dataset directory name).
    #[arg(long)]
    pub task: Option<String>,
    /// Number of seeds.
    #[arg(long, value_name = "N")]
    pub runs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "N")]
    pub triggers: Option<usize>,
    /// front, middle, end or all.
    #[arg(long)]
    pub placement: Option<String>,
    #[arg(long, value_name = "N")]
    pub k_retrieved: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated trigger counts.
    #[arg(long, value_name = "LIST")]
    pub triggers: Option<String>,
    /// Comma-separated placements.
    #[arg(long, value_name = "LIST")]
    pub placement: Option<String>,
    /// Comma-separated k values.
    #[arg(long, value_name = "LIST")]
    pub k_retrieved: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    /// JSONL files of run results.
    #[arg(long, required = true, num_args = 1..)]
    pub results: Vec<PathBuf>,
    /// JSONL files of sweep results.
    #[arg(long, num_args = 1..)]
    pub sweeps: Vec<PathBuf>,
    /// Fine-tuned model whose trigger neighbours to list (needs --vocab).
    #[arg(long, requires = "vocab")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Task left out of the averages; repeatable.
    #[arg(long)]
    pub exclude_task: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CheckGradsArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Pass threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub posts: usize,
    #[arg(long, default_value_t = 40)]
    pub train: usize,
    #[arg(long, default_value_t = 50)]
    pub val: usize,
    #[arg(long, default_value_t = 250)]
    pub test: usize,
}

/// The parsed command line minus `--out`; what a manifest replays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub global: GlobalArgs,
    pub command: Command,
}

fn absolute(p: &mut PathBuf) -> Result<()> {
    *p = std::path::absolute(&*p).map_err(|e| Error::io(&*p, e))?;
    Ok(())
}

fn absolute_opt(p: &mut Option<PathBuf>) -> Result<()> {
    p.as_mut().map(absolute).transpose().map(|_| ())
}

impl Invocation {
    fn absolutize(&mut self) -> Result<()> {
        absolute_opt(&mut self.global.config)?;
        self.global.out = None;
        match &mut self.command {
            Command::Ingest(a) => absolute(&mut a.corpus),
            Command::Pretrain(a) => {
                absolute(&mut a.corpus)?;
                absolute(&mut a.vocab)
            }
            Command::BuildDb(a) => {
                absolute(&mut a.corpus)?;
                absolute(&mut a.vocab)?;
                absolute(&mut a.checkpoint)
            }
            Command::Retrieve(a) => {
                absolute(&mut a.index)?;
                absolute(&mut a.checkpoint)?;
                absolute(&mut a.vocab)
            }
            Command::Finetune(FinetuneArgs { data, .. }) | Command::Sweep(SweepArgs { data, .. }) => {
                absolute(&mut data.dataset)?;
                absolute(&mut data.vocab)?;
                absolute_opt(&mut data.index)?;
                absolute_opt(&mut data.checkpoint)?;
                absolute_opt(&mut data.init)
            }
            Command::Analyze(a) => {
                a.results.iter_mut().try_for_each(absolute)?;
                a.sweeps.iter_mut().try_for_each(absolute)?;
                absolute_opt(&mut a.model)?;
                absolute_opt(&mut a.vocab)
            }
            Command::Replay(a) => absolute(&mut a.manifest),
            Command::CheckGrads(_) | Command::Synth(_) => Ok(()),
        }
    }

    /// Defaults, then the config file, then `--set`, then subcommand flags.
    pub fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(p) = &self.global.config {
            s.load_file(p)?;
        }
        for kv in &self.global.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            s.set(k.trim(), v.trim())?;
        }
        let mut flag = |key: &str, v: Option<String>| v.map_or(Ok(()), |v| s.set(key, &v));
        match &self.command {
            Command::Ingest(a) => {
                flag("corpus.min_hashtag_count", a.min_hashtag_count.map(|v| v.to_string()))?;
                flag("corpus.vocab_size", a.vocab_size.map(|v| v.to_string()))?;
            }
            Command::Pretrain(a) => {
                flag("pretrain.tau", a.tau.map(|v| v.to_string()))?;
                flag("pretrain.alpha", a.alpha.map(|v| v.to_string()))?;
                flag("pretrain.epochs", a.epochs.map(|v| v.to_string()))?;
            }
            Command::BuildDb(a) => flag("database.cap", a.cap.map(|v| v.to_string()))?,
            Command::Finetune(a) => {
                flag("finetune.runs", a.data.runs.map(|v| v.to_string()))?;
                flag("finetune.triggers", a.triggers.map(|v| v.to_string()))?;
                flag("finetune.placement", a.placement.clone())?;
                flag("finetune.k_retrieved", a.k_retrieved.map(|v| v.to_string()))?;
            }
            Command::Sweep(a) => {
                flag("finetune.runs", a.data.runs.map(|v| v.to_string()))?;
                flag("sweep.triggers", a.triggers.clone())?;
                flag("sweep.placements", a.placement.clone())?;
                flag("sweep.k_values", a.k_retrieved.clone())?;
            }
            Command::Analyze(a) if !a.exclude_task.is_empty() => {
                flag("analysis.exclude_tasks", Some(a.exclude_task.join(",")))?;
            }
            _ => {}
        }
        if let Some(seed) = self.global.seed {
            s.set("seed", &seed.to_string())?;
        }
        if let Some(t) = self.global.threads {
            s.set("threads", &t.to_string())?;
        }
        Ok(s)
    }
}

/// Per-run state: resolved settings, seed tree and what was read and written.
pub(crate) struct Ctx {
    pub settings: Settings,
    root: SeedTree,
    out: Option<PathBuf>,
    seeds: BTreeMap<String, u64>,
    inputs: BTreeMap<String, String>,
    artifacts: Vec<String>,
}

impl Ctx {
    fn new(settings: Settings, out: Option<PathBuf>) -> Result<Self> {
        let root = SeedTree::new(settings.get("seed")?);
        let mut seeds = BTreeMap::new();
        seeds.insert("root".to_string(), root.seed());
        Ok(Self {
            settings,
            root,
            out,
            seeds,
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
        })
    }

    /// The subsystem's child stream, recorded in the manifest.
    pub fn seeds(&mut self, subsystem: &str) -> SeedTree {
        let t = self.root.child(subsystem);
        self.seeds.insert(subsystem.to_string(), t.seed());
        t
    }

    pub fn record_seed(&mut self, label: String, seed: u64) {
        self.seeds.insert(label, seed);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let key = path.display().to_string();
        let digest = path_digest(path)?;
        self.inputs.insert(key, digest);
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("this subcommand needs --out".into()))
    }

    /// Registers `rel` as an artifact and returns its full path.
    pub fn artifact(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.out_dir()?.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        if !self.artifacts.iter().any(|a| a == rel) {
            self.artifacts.push(rel.to_string());
        }
        Ok(path)
    }

    pub fn write_artifact(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.artifact(rel)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
        self.write_artifact(rel, text)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<()> {
        let text: String = rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
            .collect();
        self.write_artifact(rel, text)
    }
}

/// Runs the command line, writing to the process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// Like [`run`] with explicit output streams. `argv[0]` is the program name.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let out = cli.global.out.clone();
    let mut inv = Invocation {
        global: cli.global,
        command: cli.command,
    };
    inv.absolutize()?;
    if let Command::Replay(a) = &inv.command {
        return replay(&a.manifest, out, inv.global.threads, stdout);
    }
    run_invocation(&inv, out, stdout).map(|_| ())
}

/// Runs one invocation; returns the manifest when artifacts were written.
pub fn run_invocation(inv: &Invocation, out: Option<PathBuf>, stdout: &mut dyn Write) -> Result<Option<RunManifest>> {
    let settings = inv.settings()?;
    let out = match (&inv.command, out) {
        (_, Some(o)) => Some(o),
        (Command::Retrieve(_) | Command::CheckGrads(_), None) => None,
        (_, None) => Some(PathBuf::from(DEFAULT_OUT)),
    };
    if let Some(o) = &out {
        std::fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
    }
    let mut ctx = Ctx::new(settings, out)?;
    if let Some(p) = &inv.global.config {
        ctx.input(p)?;
    }
    commands::dispatch(&inv.command, &mut ctx, stdout)?;
    if ctx.artifacts.is_empty() {
        return Ok(None);
    }
    let out_dir = ctx.out_dir()?.to_path_buf();
    let mut artifacts = BTreeMap::new();
    for rel in &ctx.artifacts {
        artifacts.insert(rel.clone(), file_digest(&out_dir.join(rel))?);
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        invocation: inv.clone(),
        config_digest: ctx.settings.digest(&[]),
        settings: ctx.settings.canonical(&[]),
        seeds: ctx.seeds,
        inputs: ctx.inputs,
        artifacts,
    };
    manifest.save(&out_dir)?;
    Ok(Some(manifest))
}

/// Reruns `manifest_path` into `out` (default: a `-replay` sibling of the
/// original output directory) and checks every artifact digest.
pub fn replay(
    manifest_path: &Path,
    out: Option<PathBuf>,
    threads: Option<usize>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let manifest = RunManifest::load(manifest_path)?;
    manifest.verify_inputs()?;
    let out = match out {
        Some(o) => o,
        None => {
            let dir = manifest_path
                .parent()
                .ok_or_else(|| Error::Invalid("manifest has no parent directory".into()))?;
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            dir.with_file_name(format!("{name}-replay"))
        }
    };
    let mut inv = manifest.invocation.clone();
    if threads.is_some() {
        inv.global.threads = threads;
    }
    let rerun = run_invocation(&inv, Some(out.clone()), &mut std::io::sink())?
        .ok_or_else(|| Error::Invalid("replayed command wrote no artifacts".into()))?;
    if rerun.config_digest != manifest.config_digest {
        return Err(Error::Invalid(format!(
            "settings digest {} differs from recorded {}",
            rerun.config_digest, manifest.config_digest
        )));
    }
    let mut diffs = manifest.compare_artifacts(&out)?;
    for rel in rerun.artifacts.keys() {
        if !manifest.artifacts.contains_key(rel) {
            diffs.push((rel.clone(), String::new(), rerun.artifacts[rel].clone()));
        }
    }
    if diffs.is_empty() {
        writeln!(
            stdout,
            "replay: {} artifacts identical in {}",
            manifest.artifacts.len(),
            out.display()
        )
        .ok();
        Ok(())
    } else {
        for (rel, want, got) in &diffs {
            writeln!(stdout, "differs: {rel} recorded={want} replayed={got}").ok();
        }
        Err(Error::Invalid(format!("{} artifacts differ on replay", diffs.len())))
    }
}
