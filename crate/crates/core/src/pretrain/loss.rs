use crate::encoder::SentenceEmbedding;
use crate::error::{Error, Result};
use crate::nn::{logsumexp_rows, Mat};

/// In-batch-negative contrastive loss with its exact gradients.
#[derive(Debug, Clone)]
pub struct ContrastiveLoss {
    /// Mean of `per_example`.
    pub loss: f64,
    pub per_example: Vec<f64>,
    /// `dloss / dscores`, where `scores[i][j] = cos(a_i, p_j) / tau`.
    pub d_scores: Mat,
    /// Gradients w.r.t. the unit-normalized anchors and positives.
    pub d_anchors: Mat,
    pub d_positives: Mat,
}

fn unit_matrix(e: &[SentenceEmbedding]) -> Mat {
    let d = e.first().map_or(0, |x| x.unit.len());
    Mat::from_shape_fn((e.len(), d), |(i, j)| e[i].unit[j])
}

/// `mean_i -log( exp(cos(a_i, p_i)/tau) / sum_j exp(cos(a_i, p_j)/tau) )`.
///
/// Cosines are dot products of the unit-normalized forms.
pub fn contrastive_loss(
    anchors: &[SentenceEmbedding],
    positives: &[SentenceEmbedding],
    tau: f64,
) -> Result<ContrastiveLoss> {
    let n = anchors.len();
    if n == 0 {
        return Err(Error::Invalid("contrastive loss needs at least one pair".into()));
    }
    if positives.len() != n {
        return Err(Error::Invalid(format!(
            "{} anchors but {} positives",
            n,
            positives.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("temperature must be positive, got {tau}")));
    }
    let a = unit_matrix(anchors);
    let p = unit_matrix(positives);
    let scores = a.dot(&p.t()) / tau;
    let lse = logsumexp_rows(&scores);
    let per_example: Vec<f64> = (0..n).map(|i| lse[i] - scores[[i, i]]).collect();
    let loss = per_example.iter().sum::<f64>() / n as f64;

    let mut d_scores = scores.clone();
    for (i, mut row) in d_scores.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|s| (s - lse[i]).exp() / n as f64);
        row[i] -= 1.0 / n as f64;
    }
    let d_anchors = d_scores.dot(&p) / tau;
    let d_positives = d_scores.t().dot(&a) / tau;
    Ok(ContrastiveLoss {
        loss,
        per_example,
        d_scores,
        d_anchors,
        d_positives,
    })
}

/// Maps a gradient w.r.t. `raw / |raw|` to a gradient w.r.t. `raw`.
pub fn unit_grad_to_raw(e: &SentenceEmbedding, g_unit: &[f64]) -> Vec<f64> {
    let norm = e.norm();
    if norm == 0.0 {
        return vec![0.0; g_unit.len()];
    }
    let proj: f64 = g_unit.iter().zip(&e.unit).map(|(g, u)| g * u).sum();
    g_unit
        .iter()
        .zip(&e.unit)
        .map(|(g, u)| (g - proj * u) / norm)
        .collect()
}

/// Mean token cross-entropy over rows of `logits` with `targets`, and its
/// gradient. Zero rows give zero loss.
pub fn cross_entropy_mean(logits: &Mat, targets: &[u32]) -> (f64, Mat) {
    let n = targets.len();
    if n == 0 {
        return (0.0, Mat::zeros(logits.raw_dim()));
    }
    let lse = logsumexp_rows(logits);
    let mut loss = 0.0;
    let mut d = logits.clone();
    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
        let t = targets[i] as usize;
        loss += lse[i] - logits[[i, t]];
        row.mapv_inplace(|z| (z - lse[i]).exp() / n as f64);
        row[t] -= 1.0 / n as f64;
    }
    (loss / n as f64, d)
}
