//! Multi-seed aggregation, least-squares trend slopes, trigger-embedding
//! distance ranking, and the deterministic report writer.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocab, MASK_ID, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::finetune::FinetuneModel;

pub use report::{emit_report, render_jsonl, render_text, ReportOptions};

/// One finished run; `metric` is on the percentage scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task: String,
    pub config_digest: String,
    pub seed: u64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub task: String,
    pub config_digest: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator), 0 for one run.
    pub std: f64,
}

/// Arithmetic mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Invalid("cannot aggregate an empty group".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// Mean and std per `(task, config)`, in sorted key order.
pub fn aggregate_runs(results: &[RunResult]) -> Result<Vec<Aggregate>> {
    let mut groups: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for r in results {
        if !(0.0..=100.0).contains(&r.metric) {
            return Err(Error::Invalid(format!(
                "metric {} of task {:?} is outside [0, 100]",
                r.metric, r.task
            )));
        }
        groups
            .entry((r.task.as_str(), r.config_digest.as_str()))
            .or_default()
            .push(r.metric);
    }
    groups
        .into_iter()
        .map(|((task, cfg), vals)| {
            let (mean, std) = mean_std(&vals)?;
            Ok(Aggregate {
                task: task.to_string(),
                config_digest: cfg.to_string(),
                n: vals.len(),
                mean,
                std,
            })
        })
        .collect()
}

/// Ordinary least-squares slope `sum((x - mx)(y - my)) / sum((x - mx)^2)`.
pub fn lls_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Invalid(format!(
            "slope needs two equally long series of >= 2 points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("slope is undefined when all x values are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Mean metric per value of one swept variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub task: String,
    pub variable: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl SweepResult {
    pub fn new(task: impl Into<String>, variable: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Invalid("sweep xs and ys differ in length".into()));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("sweep values must be strictly increasing".into()));
        }
        Ok(Self {
            task: task.into(),
            variable: variable.into(),
            xs,
            ys,
        })
    }

    pub fn slope(&self) -> Result<f64> {
        lls_slope(&self.xs, &self.ys)
    }
}

/// Nearest vocabulary embeddings to one trigger row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerDistances {
    pub trigger: usize,
    /// `(token, Euclidean distance)`, ascending; ties by token id.
    pub nearest: Vec<(String, f64)>,
    /// Which of `<mask>`, `<pad>`, `<unk>` occur among `nearest`.
    pub special_in_top: Vec<String>,
}

/// Euclidean distance between `a` and `b`.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Ranks every vocabulary embedding by distance to each trigger row and
/// keeps the `top_n` nearest.
pub fn trigger_token_distances(model: &FinetuneModel, vocab: &Vocab, top_n: usize) -> Vec<TriggerDistances> {
    let table = model.encoder.token_embeddings();
    let watched = [MASK_ID, PAD_ID, UNK_ID];
    (0..model.triggers.nrows())
        .map(|t| {
            let row = model.triggers.row(t);
            let row = row.as_slice().expect("contiguous");
            let mut ranked: Vec<(usize, f64)> = (0..table.nrows())
                .map(|id| (id, euclidean(row, table.row(id).as_slice().expect("contiguous"))))
                .collect();
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            ranked.truncate(top_n);
            let name = |id: usize| vocab.token(id as u32).unwrap_or("<?>").to_string();
            TriggerDistances {
                trigger: t,
                special_in_top: watched
                    .iter()
                    .filter(|&&w| ranked.iter().any(|(id, _)| *id == w as usize))
                    .map(|&w| name(w as usize))
                    .collect(),
                nearest: ranked.into_iter().map(|(id, d)| (name(id), d)).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_statistics() {
        let (m, s) = mean_std(&[67.3, 68.0, 68.6]).unwrap();
        assert!((m - 67.966_666_666_666_67).abs() < 1e-9);
        assert!((s - 0.650_640_709_864_771).abs() < 1e-9);
        assert_eq!(mean_std(&[67.3]).unwrap(), (67.3, 0.0));
        assert!(mean_std(&[]).is_err());
    }

    #[test]
    fn slope_closed_form() {
        assert!((lls_slope(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.9, 3.2, 3.9]).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(lls_slope(&[1.0, 2.0, 3.0], &[5.0; 3]).unwrap(), 0.0);
        assert!(lls_slope(&[2.0, 2.0], &[1.0, 3.0]).is_err());
    }
}
