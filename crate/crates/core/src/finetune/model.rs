use std::collections::BTreeSet;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use super::layout::{reformulate_input, Placement, ReformulatedInput, TriggerConfig};
use crate::binio::{get_records, put_records, ByteReader, ByteWriter};
use crate::encoder::{
    backward, forward, get_config, put_config, EncoderConfig, EncoderParams, TokenBatch, Upstream,
};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_difference_check, GradCheckReport};
use crate::nn::{linear, linear_backward, logsumexp_rows, Mat};
use crate::rng::{rng_from_seed, Rng};
use crate::tensors::TensorMap;

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";
pub const TRIGGERS: &str = "triggers";

/// Backbone encoder, classification head and trigger table.
///
/// The trigger table is trained but is not part of the backbone: the
/// trainable names split into `backbone_names()` and `{"triggers"}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneModel {
    pub encoder: EncoderParams,
    /// `head.weight` (d x labels) and `head.bias` (1 x labels).
    pub head: TensorMap,
    pub triggers: Mat,
    pub trigger_cfg: TriggerConfig,
    pub k_retrieved: usize,
}

impl FinetuneModel {
    /// Fresh head (Xavier-normal weight, zero bias) and Gaussian triggers.
    pub fn new(
        encoder: EncoderParams,
        labels: usize,
        trigger_cfg: TriggerConfig,
        k_retrieved: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if labels == 0 {
            return Err(Error::Invalid("a classifier needs at least one label".into()));
        }
        let d = encoder.config.d_model;
        let std = (2.0 / (d + labels) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let mut head = TensorMap::new();
        head.insert(HEAD_WEIGHT, Mat::from_shape_simple_fn((d, labels), || normal.sample(rng)));
        head.insert(HEAD_BIAS, Mat::zeros((1, labels)));
        let scale = trigger_cfg
            .init_scale
            .unwrap_or_else(|| embedding_std(encoder.token_embeddings()));
        if !(scale > 0.0) {
            return Err(Error::Config(format!("trigger init_scale must be > 0, got {scale}")));
        }
        let normal = Normal::new(0.0, scale).expect("valid std");
        let n = trigger_cfg.total(k_retrieved);
        let triggers = Mat::from_shape_simple_fn((n, d), || normal.sample(rng));
        Ok(Self {
            encoder,
            head,
            triggers,
            trigger_cfg,
            k_retrieved,
        })
    }

    pub fn labels(&self) -> usize {
        self.head.expect(HEAD_BIAS).ncols()
    }

    /// Encoder tensor names plus the head's.
    pub fn backbone_names(&self) -> BTreeSet<String> {
        self.encoder
            .tensors
            .names()
            .chain(self.head.names())
            .map(str::to_owned)
            .collect()
    }

    pub fn trigger_names(&self) -> BTreeSet<String> {
        [TRIGGERS.to_string()].into()
    }

    /// Every trainable tensor, keyed by name.
    pub fn trainable(&self) -> TensorMap {
        let mut all = self.encoder.tensors.clone();
        all.accumulate(&self.head);
        all.insert(TRIGGERS, self.triggers.clone());
        all
    }

    fn from_trainable(&self, t: &TensorMap) -> Self {
        let mut m = self.clone();
        for (name, v) in t.iter() {
            if name == TRIGGERS {
                m.triggers = v.clone();
            } else if let Some(h) = m.head.get_mut(name) {
                *h = v.clone();
            } else {
                *m.encoder.tensors.get_mut(name).expect("encoder tensor") = v.clone();
            }
        }
        m
    }

    /// SHA-256 over the exact bits of every backbone tensor.
    pub fn backbone_checksum(&self) -> String {
        let mut all = self.encoder.tensors.clone();
        all.accumulate(&self.head);
        all.checksum()
    }

    fn trigger_table(&self) -> Option<&Mat> {
        (self.triggers.nrows() > 0).then_some(&self.triggers)
    }

    /// Class logits for a batch of inputs.
    pub fn logits(&self, inputs: &[ReformulatedInput], train: bool, rng: &mut Rng) -> Result<Mat> {
        let batch = TokenBatch::from_sequences(&inputs.iter().map(|r| r.ids.as_slice()).collect::<Vec<_>>());
        let out = forward(&self.encoder, &batch, self.trigger_table(), train, rng)?;
        Ok(linear(&out.pooled, self.head.expect(HEAD_WEIGHT), self.head.expect(HEAD_BIAS)))
    }
}

fn embedding_std(m: &Mat) -> f64 {
    let n = m.len() as f64;
    let mean = m.sum() / n;
    (m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Gradients split along the trainable partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationGrads {
    /// Encoder tensors and head.
    pub backbone: TensorMap,
    pub triggers: Mat,
}

/// Summed cross-entropy `-sum log P(y | input)` and its gradients.
pub fn classification_loss(
    model: &FinetuneModel,
    inputs: &[ReformulatedInput],
    labels: &[usize],
    train: bool,
    rng: &mut Rng,
) -> Result<(f64, ClassificationGrads)> {
    let (loss, grads) = loss_impl(model, inputs, labels, train, true, rng)?;
    Ok((loss, grads.expect("requested")))
}

fn loss_impl(
    model: &FinetuneModel,
    inputs: &[ReformulatedInput],
    labels: &[usize],
    train: bool,
    with_grads: bool,
    rng: &mut Rng,
) -> Result<(f64, Option<ClassificationGrads>)> {
    if inputs.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let n_labels = model.labels();
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_labels) {
        return Err(Error::Invalid(format!("label {bad} out of range for {n_labels} labels")));
    }
    let batch = TokenBatch::from_sequences(&inputs.iter().map(|r| r.ids.as_slice()).collect::<Vec<_>>());
    let out = forward(&model.encoder, &batch, model.trigger_table(), train, rng)?;
    let w = model.head.expect(HEAD_WEIGHT);
    let logits = linear(&out.pooled, w, model.head.expect(HEAD_BIAS));
    let lse = logsumexp_rows(&logits);
    let loss: f64 = labels.iter().enumerate().map(|(i, &y)| lse[i] - logits[[i, y]]).sum();
    if !with_grads {
        return Ok((loss, None));
    }
    let mut d_logits = logits.clone();
    for (i, mut row) in d_logits.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|z| (z - lse[i]).exp());
        row[labels[i]] -= 1.0;
    }
    let (d_pooled, dw, db) = linear_backward(&out.pooled, w, &d_logits);
    let enc = backward(
        &model.encoder,
        &out,
        Upstream {
            d_pooled: Some(&d_pooled),
            d_hidden: None,
        },
    )?;
    let mut backbone = enc.params;
    backbone.insert(HEAD_WEIGHT, dw);
    backbone.insert(HEAD_BIAS, db);
    let triggers = enc
        .triggers
        .unwrap_or_else(|| Mat::zeros(model.triggers.raw_dim()));
    Ok((loss, Some(ClassificationGrads { backbone, triggers })))
}

/// Argmax label (ties to the lowest id) and the softmax distribution.
pub fn predict_input(model: &FinetuneModel, input: &ReformulatedInput) -> Result<(usize, Vec<f64>)> {
    let logits = model.logits(std::slice::from_ref(input), false, &mut rng_from_seed(0))?;
    let row = logits.row(0);
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / s).collect();
    let mut best = 0;
    for (i, &z) in row.iter().enumerate() {
        if z > row[best] {
            best = i;
        }
    }
    Ok((best, probs))
}

/// Checks the classification-loss gradient, trigger rows included, against
/// central differences on `model` with dropout off.
pub fn check_classification_gradients(
    model: &FinetuneModel,
    inputs: &[ReformulatedInput],
    labels: &[usize],
    epsilon: f64,
) -> Result<GradCheckReport> {
    let mut model = model.clone();
    model.encoder.config.dropout_rate = 0.0;
    let mut rng = rng_from_seed(0);
    let (_, grads) = loss_impl(&model, inputs, labels, false, true, &mut rng)?;
    let grads = grads.expect("requested");
    let mut analytic = grads.backbone;
    analytic.insert(TRIGGERS, grads.triggers);
    finite_difference_check(&model.trainable(), &analytic, epsilon, |t| {
        Ok(loss_impl(&model.from_trainable(t), inputs, labels, false, false, &mut rng)?.0)
    })
}

/// [`check_classification_gradients`] on the tiny encoder with two
/// triggers in every block and one retrieved post per input.
pub fn tiny_classification_check(epsilon: f64) -> Result<GradCheckReport> {
    let mut rng = rng_from_seed(5);
    let enc = EncoderParams::init(EncoderConfig::tiny(20), &mut rng)?;
    let cfg = TriggerConfig {
        init_scale: Some(0.5),
        ..TriggerConfig::preset(Placement::All, 2)
    };
    let model = FinetuneModel::new(enc, 3, cfg, 1, &mut rng)?;
    let inputs = [(vec![5, 6], vec![7, 8, 9]), (vec![10], vec![11, 12]), (vec![13, 14, 15], vec![16])]
        .iter()
        .map(|(x, r)| reformulate_input(x, &[r.clone()], &model.trigger_cfg, 16))
        .collect::<Result<Vec<_>>>()?;
    check_classification_gradients(&model, &inputs, &[0, 2, 1], epsilon)
}

const MAGIC: &[u8; 8] = b"HICLFTMD";
const VERSION: u32 = 1;

pub fn model_bytes(model: &FinetuneModel) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    put_config(&mut w, &model.encoder.config);
    let t = &model.trigger_cfg;
    for v in [t.count_front, t.count_middle, t.count_end, model.k_retrieved] {
        w.u32(v as u32);
    }
    w.f64(t.init_scale.unwrap_or(-1.0));
    put_records(&mut w, &model.trainable());
    w.buf
}

pub fn save_model(model: &FinetuneModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FinetuneModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let config: EncoderConfig = get_config(&mut r)?;
    let mut counts = [0usize; 4];
    for c in &mut counts {
        *c = r.u32()? as usize;
    }
    let scale = r.f64()?;
    let mut tensors = get_records(&mut r)?;
    r.finish()?;
    let missing = |n: &str| Error::Format(format!("model file lacks tensor {n}"));
    let triggers = tensors.remove(TRIGGERS).ok_or_else(|| missing(TRIGGERS))?;
    let mut head = TensorMap::new();
    for n in [HEAD_WEIGHT, HEAD_BIAS] {
        head.insert(n, tensors.remove(n).ok_or_else(|| missing(n))?);
    }
    let encoder = EncoderParams { config, tensors };
    encoder.check_shapes()?;
    let trigger_cfg = TriggerConfig {
        count_front: counts[0],
        count_middle: counts[1],
        count_end: counts[2],
        init_scale: (scale > 0.0).then_some(scale),
    };
    if triggers.nrows() != trigger_cfg.total(counts[3]) {
        return Err(Error::Format("trigger table size disagrees with its config".into()));
    }
    Ok(FinetuneModel {
        encoder,
        head,
        triggers,
        trigger_cfg,
        k_retrieved: counts[3],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_gradients_include_trigger_rows() {
        let rep = tiny_classification_check(1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{:?}", rep.worst());
        let trig = rep.per_tensor.iter().find(|(n, _)| n == TRIGGERS).unwrap();
        assert!(trig.1 < 1e-4);
    }

    #[test]
    fn zero_head_gives_log_label_count() {
        let mut rng = rng_from_seed(1);
        let enc = EncoderParams::init(EncoderConfig::tiny(20), &mut rng).unwrap();
        let mut model = FinetuneModel::new(enc, 4, TriggerConfig::none(), 0, &mut rng).unwrap();
        model.head.get_mut(HEAD_WEIGHT).unwrap().fill(0.0);
        let input = reformulate_input(&[5, 6, 7], &[], &model.trigger_cfg, 16).unwrap();
        let (loss, _) = classification_loss(&model, &[input.clone(), input], &[0, 3], false, &mut rng).unwrap();
        assert!((loss - 2.0 * 4f64.ln()).abs() < 1e-12);
    }
}
