use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use super::{aggregate_runs, RunResult, SweepResult, TriggerDistances};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportOptions {
    /// Tasks left out of the cross-task averages (they still get rows).
    pub exclude_tasks: Vec<String>,
}

impl ReportOptions {
    fn included(&self, task: &str) -> bool {
        !self.exclude_tasks.iter().any(|t| t == task)
    }
}

/// Plain-text report: per-(task, config) mean ± std, cross-task averages per
/// config, sweep tables with raw and x1000 slopes, and trigger neighbours.
pub fn render_text(
    results: &[RunResult],
    sweeps: &[SweepResult],
    distances: &[TriggerDistances],
    opts: &ReportOptions,
) -> Result<String> {
    let aggs = aggregate_runs(results)?;
    let mut s = String::new();
    writeln!(s, "== Results (mean ± sample std over seeds) ==").ok();
    writeln!(s, "{:<24} {:<20} {:>4} {:>8} {:>8}", "task", "config", "n", "mean", "std").ok();
    for a in &aggs {
        writeln!(
            s,
            "{:<24} {:<20} {:>4} {:>8.2} {:>8.2}",
            a.task,
            short(&a.config_digest),
            a.n,
            a.mean,
            a.std
        )
        .ok();
    }
    let averages = config_averages(results, opts)?;
    if !averages.is_empty() {
        writeln!(s).ok();
        if opts.exclude_tasks.is_empty() {
            writeln!(s, "== Average over tasks ==").ok();
        } else {
            writeln!(s, "== Average over tasks (excluding {}) ==", opts.exclude_tasks.join(", ")).ok();
        }
        for (cfg, tasks, mean) in &averages {
            writeln!(s, "{:<20} tasks={:<3} mean={:.2}", short(cfg), tasks, mean).ok();
        }
    }
    if !sweeps.is_empty() {
        writeln!(s).ok();
        writeln!(s, "== Sweeps (least-squares slope; x1000 for presentation) ==").ok();
        for sw in sweeps {
            let slope = sw.slope()?;
            writeln!(s, "{} / {}: slope={:.6e} x1000={:.3}", sw.task, sw.variable, slope, slope * 1000.0).ok();
            for (x, y) in sw.xs.iter().zip(&sw.ys) {
                writeln!(s, "  {:>8} {:>8.2}", fmt_x(*x), y).ok();
            }
        }
    }
    if !distances.is_empty() {
        writeln!(s).ok();
        writeln!(s, "== Nearest tokens to trigger embeddings (Euclidean) ==").ok();
        for d in distances {
            let near: Vec<String> = d.nearest.iter().map(|(t, v)| format!("{t}:{v:.4}")).collect();
            let special = if d.special_in_top.is_empty() {
                "none".to_string()
            } else {
                d.special_in_top.join(",")
            };
            writeln!(s, "T{}: {} | special in top: {}", d.trigger, near.join(" "), special).ok();
        }
    }
    Ok(s)
}

/// One JSON object per line, each tagged with `kind`.
pub fn render_jsonl(
    results: &[RunResult],
    sweeps: &[SweepResult],
    distances: &[TriggerDistances],
    opts: &ReportOptions,
) -> Result<String> {
    let mut lines = Vec::new();
    for a in aggregate_runs(results)? {
        lines.push(json!({
            "kind": "aggregate",
            "task": a.task,
            "config_digest": a.config_digest,
            "n": a.n,
            "mean": a.mean,
            "std": a.std,
        }));
    }
    for (cfg, tasks, mean) in config_averages(results, opts)? {
        lines.push(json!({
            "kind": "average",
            "config_digest": cfg,
            "tasks": tasks,
            "mean": mean,
            "excluded_tasks": opts.exclude_tasks,
        }));
    }
    for sw in sweeps {
        let slope = sw.slope()?;
        lines.push(json!({
            "kind": "sweep",
            "task": sw.task,
            "variable": sw.variable,
            "xs": sw.xs,
            "ys": sw.ys,
            "slope": slope,
            "slope_x1000": slope * 1000.0,
        }));
    }
    for d in distances {
        lines.push(json!({
            "kind": "trigger_distance",
            "trigger": d.trigger,
            "nearest": d.nearest,
            "special_in_top": d.special_in_top,
        }));
    }
    Ok(lines.iter().map(|l| l.to_string() + "\n").collect())
}

/// Writes `<dir>/report.txt` and `<dir>/report.jsonl`.
pub fn emit_report(
    results: &[RunResult],
    sweeps: &[SweepResult],
    distances: &[TriggerDistances],
    opts: &ReportOptions,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let txt = render_text(results, sweeps, distances, opts)?;
    let jsonl = render_jsonl(results, sweeps, distances, opts)?;
    let p = dir.join("report.txt");
    std::fs::write(&p, txt).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("report.jsonl");
    std::fs::write(&p, jsonl).map_err(|e| Error::io(&p, e))
}

/// `(config, task count, mean of per-task means)` over included tasks.
fn config_averages(results: &[RunResult], opts: &ReportOptions) -> Result<Vec<(String, usize, f64)>> {
    let mut by_cfg: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for a in aggregate_runs(results)? {
        if opts.included(&a.task) {
            by_cfg.entry(a.config_digest).or_default().push(a.mean);
        }
    }
    Ok(by_cfg
        .into_iter()
        .map(|(cfg, means)| {
            let n = means.len();
            (cfg, n, means.iter().sum::<f64>() / n as f64)
        })
        .collect())
}

fn short(digest: &str) -> &str {
    &digest[..digest.len().min(20)]
}

fn fmt_x(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}
