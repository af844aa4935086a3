//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::error::Result;
use crate::tensors::TensorMap;

/// Per-tensor relative error: `max|a - n| / max(max|a|, max|n|, floor)`,
/// where `floor` is `1e-3` times the largest analytic entry over all tensors.
///
/// The floor keeps tensors whose true gradient is structurally zero (key
/// biases, by softmax shift-invariance) from dividing round-off by itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub max_rel_error: f64,
    pub per_tensor: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn merge(mut self, other: GradCheckReport) -> GradCheckReport {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.per_tensor.extend(other.per_tensor);
        self
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_tensor
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

const FLOOR_FRACTION: f64 = 1e-3;

/// Perturbs every scalar of every tensor in `point` by `±epsilon`, evaluates
/// `loss`, and compares the central difference with `analytic`.
pub fn finite_difference_check(
    point: &TensorMap,
    analytic: &TensorMap,
    epsilon: f64,
    mut loss: impl FnMut(&TensorMap) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut work = point.clone();
    let mut raw = Vec::with_capacity(point.len());
    let names: Vec<String> = point.names().map(str::to_owned).collect();
    for name in names {
        let a = analytic.expect(&name);
        let len = a.len();
        let mut diff = 0f64;
        let mut a_max = 0f64;
        let mut n_max = 0f64;
        for flat in 0..len {
            let idx = (flat / a.ncols(), flat % a.ncols());
            let orig = work.expect(&name)[idx];
            work.get_mut(&name).expect("present")[idx] = orig + epsilon;
            let plus = loss(&work)?;
            work.get_mut(&name).expect("present")[idx] = orig - epsilon;
            let minus = loss(&work)?;
            work.get_mut(&name).expect("present")[idx] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            diff = diff.max((numeric - a[idx]).abs());
            a_max = a_max.max(a[idx].abs());
            n_max = n_max.max(numeric.abs());
        }
        raw.push((name, diff, a_max.max(n_max)));
    }
    let floor = FLOOR_FRACTION * analytic.iter().map(|(_, a)| a.iter().fold(0f64, |m, v| m.max(v.abs()))).fold(f64::MIN_POSITIVE, f64::max);
    let per_tensor: Vec<(String, f64)> = raw
        .into_iter()
        .map(|(name, diff, scale)| (name, diff / scale.max(floor)))
        .collect();
    let max_rel_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        epsilon,
        max_rel_error,
        per_tensor,
    })
}
