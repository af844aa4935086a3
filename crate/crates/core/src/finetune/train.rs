use rand::seq::SliceRandom;
use serde::Serialize;

use super::data::{Dataset, LabeledExample, Retriever};
use super::icl::build_icl_demonstrations;
use super::layout::{reformulate_input, ReformulatedInput, TriggerConfig};
use super::metrics::Metric;
use super::model::{classification_loss, FinetuneModel, HEAD_BIAS, HEAD_WEIGHT, TRIGGERS};
use crate::corpus::Vocab;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::pretrain::{Adam, LrSchedule};
use crate::rng::{rng_from_seed, SeedTree};

/// When the trigger-only refinement runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TriggerPhase {
    /// One trigger-only pass over the training data after each joint pass.
    #[default]
    PerEpoch,
    /// One trigger-only step on the same batch after each joint step.
    PerStep,
    /// Joint training only.
    Off,
}

/// How each classification input is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputMode {
    /// Source, trigger blocks and retrieved posts.
    #[default]
    Retrieval,
    /// One demonstration per class before the source; no triggers.
    Demonstrations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub patience: usize,
    pub k_retrieved: usize,
    pub trigger: TriggerConfig,
    pub trigger_phase: TriggerPhase,
    pub input_mode: InputMode,
    pub seeds: Vec<u64>,
    pub metric: Metric,
    pub max_len: usize,
    /// Architecture of a freshly initialized backbone; `None` uses the desk
    /// configuration over the vocabulary.
    pub backbone: Option<EncoderConfig>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            peak_lr: 1e-3,
            warmup_fraction: 0.1,
            patience: 5,
            k_retrieved: 1,
            trigger: TriggerConfig::default(),
            trigger_phase: TriggerPhase::PerEpoch,
            input_mode: InputMode::Retrieval,
            seeds: (0..10).collect(),
            metric: Metric::MacroF1,
            max_len: 128,
            backbone: None,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if !(self.peak_lr > 0.0) {
            return Err(Error::Config(format!("peak_lr must be > 0, got {}", self.peak_lr)));
        }
        Ok(())
    }
}

/// Stops once the metric has failed to strictly improve for `patience`
/// consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records `metric` for `epoch`; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|(_, b)| metric > b);
        if improved {
            self.best = Some((epoch, metric));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        (improved, self.since_best >= self.patience)
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub trigger_loss: Option<f64>,
    pub val_metric: f64,
    /// Backbone checksum before and after each trigger-only pass or step.
    pub freeze_checks: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub stopped_early: bool,
}

impl History {
    /// True when no trigger-only update changed a backbone bit.
    pub fn freeze_held(&self) -> bool {
        self.epochs
            .iter()
            .flat_map(|e| &e.freeze_checks)
            .all(|(a, b)| a == b)
    }
}

fn retrieved_tokens(ex: &LabeledExample, vocab: &Vocab, k: usize) -> Result<Vec<Vec<u32>>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let r = ex.retrieved.as_ref().ok_or_else(|| {
        Error::Invalid(format!("example {:?} has no retrieved context; attach retrievals first", ex.id))
    })?;
    Ok(r.iter().take(k).map(|t| vocab.tokenize(t)).collect())
}

/// Turns examples into model inputs per `cfg`. Demonstration sampling draws
/// from `seeds`.
pub fn prepare_inputs(
    examples: &[LabeledExample],
    train: &[LabeledExample],
    label_names: &[String],
    vocab: &Vocab,
    cfg: &FinetuneConfig,
    seeds: SeedTree,
) -> Result<Vec<ReformulatedInput>> {
    match cfg.input_mode {
        InputMode::Retrieval => examples
            .iter()
            .map(|ex| {
                let retrieved = retrieved_tokens(ex, vocab, cfg.k_retrieved)?;
                reformulate_input(&vocab.tokenize(&ex.text), &retrieved, &cfg.trigger, cfg.max_len)
            })
            .collect(),
        InputMode::Demonstrations => examples
            .iter()
            .map(|ex| {
                let mut rng = seeds.child(&ex.id).rng();
                let ids = build_icl_demonstrations(train, &ex.text, label_names, vocab, cfg.max_len, &mut rng)?;
                let n = ids.len();
                Ok(ReformulatedInput {
                    ids,
                    trigger_mask: vec![false; n],
                    segments: vec![super::layout::Segment::Source; n],
                })
            })
            .collect(),
    }
}

/// Predicted labels (ties to the lowest id) for `inputs`, dropout off.
pub fn predict_batch(model: &FinetuneModel, inputs: &[ReformulatedInput]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut rng = rng_from_seed(0);
    for chunk in inputs.chunks(64) {
        let logits = model.logits(chunk, false, &mut rng)?;
        for row in logits.rows() {
            let mut best = 0;
            for (i, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = i;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Metric in `[0, 1]` and the predictions.
pub fn evaluate(
    model: &FinetuneModel,
    inputs: &[ReformulatedInput],
    gold: &[usize],
    metric: Metric,
) -> Result<(f64, Vec<usize>)> {
    let pred = predict_batch(model, inputs)?;
    Ok((metric.score(&pred, gold, model.labels()), pred))
}

/// Retrieval-enriched fine-tuning with two-phase trigger optimization.
///
/// The backbone starts from `init` or, when absent, from a fresh
/// initialization drawn from `seed`. Examples need `retrieved` filled in
/// when `k_retrieved > 0` unless a `retriever` is given. Returns the
/// best-validation snapshot.
pub fn finetune(
    init: Option<&EncoderParams>,
    vocab: &Vocab,
    data: &Dataset,
    retriever: Option<&Retriever<'_>>,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(FinetuneModel, History)> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Invalid("train and val splits must be non-empty".into()));
    }
    let seeds = SeedTree::new(seed).child("finetune");
    let mut data = data.clone();
    if cfg.input_mode == InputMode::Retrieval && cfg.k_retrieved > 0 {
        for ex in data.train.iter_mut().chain(data.val.iter_mut()) {
            if ex.retrieved.is_none() {
                let r = retriever.ok_or_else(|| {
                    Error::Invalid(format!("example {:?} lacks retrieved context and no retriever was given", ex.id))
                })?;
                ex.retrieved = Some(r.retrieve(&ex.text, cfg.k_retrieved)?);
            }
        }
    }
    let demo_seeds = seeds.child("demonstrations");
    let train_inputs = prepare_inputs(&data.train, &data.train, &data.label_names, vocab, cfg, demo_seeds)?;
    let val_inputs = prepare_inputs(&data.val, &data.train, &data.label_names, vocab, cfg, demo_seeds)?;
    let train_labels: Vec<usize> = data.train.iter().map(|e| e.label).collect();
    let val_labels: Vec<usize> = data.val.iter().map(|e| e.label).collect();

    let encoder = match init {
        Some(p) => p.clone(),
        None => {
            let config = cfg.backbone.clone().unwrap_or_else(|| EncoderConfig::desk(vocab.len()));
            EncoderParams::init(config, &mut seeds.child("backbone").rng())?
        }
    };
    if encoder.config.vocab_size != vocab.len() {
        return Err(Error::ConfigMismatch(format!(
            "backbone vocab size {} differs from vocabulary size {}",
            encoder.config.vocab_size,
            vocab.len()
        )));
    }
    let (trigger_cfg, k) = match cfg.input_mode {
        InputMode::Retrieval => (cfg.trigger, cfg.k_retrieved),
        InputMode::Demonstrations => (TriggerConfig::none(), 0),
    };
    let mut model = FinetuneModel::new(encoder, data.labels(), trigger_cfg, k, &mut seeds.child("head").rng())?;
    let has_triggers = model.triggers.nrows() > 0 && cfg.trigger_phase != TriggerPhase::Off;

    let steps_per_epoch = train_inputs.len().div_ceil(cfg.batch_size);
    let schedule = LrSchedule::new(cfg.peak_lr, cfg.warmup_fraction, (cfg.epochs * steps_per_epoch) as u64);
    let mut joint = Adam::default();
    let mut trig = Adam::default();

    let ids_of = |batch: &[usize]| batch.iter().map(|&i| data.train[i].id.clone()).collect::<Vec<_>>();

    let joint_step = |model: &mut FinetuneModel, joint: &mut Adam, batch: &[usize], rng: &mut crate::rng::Rng| -> Result<f64> {
        let inputs: Vec<ReformulatedInput> = batch.iter().map(|&i| train_inputs[i].clone()).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
        let (loss, grads) = classification_loss(model, &inputs, &labels, true, rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { value: loss, batch_ids: ids_of(batch) });
        }
        joint.begin_step(schedule.lr(joint.step_count()));
        for (name, g) in grads.backbone.iter() {
            if name == HEAD_WEIGHT || name == HEAD_BIAS {
                joint.update(name, model.head.get_mut(name).expect("head"), g);
            } else {
                joint.update(name, model.encoder.tensors.get_mut(name).expect("encoder"), g);
            }
        }
        if model.triggers.nrows() > 0 {
            joint.update(TRIGGERS, &mut model.triggers, &grads.triggers);
        }
        Ok(loss)
    };
    let trigger_step = |model: &mut FinetuneModel, trig: &mut Adam, batch: &[usize], rng: &mut crate::rng::Rng| -> Result<f64> {
        let inputs: Vec<ReformulatedInput> = batch.iter().map(|&i| train_inputs[i].clone()).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
        let (loss, grads) = classification_loss(model, &inputs, &labels, true, rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { value: loss, batch_ids: ids_of(batch) });
        }
        trig.begin_step(schedule.lr(trig.step_count()));
        let g: Mat = grads.triggers;
        trig.update(TRIGGERS, &mut model.triggers, &g);
        Ok(loss)
    };

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_model = model.clone();
    let mut history = History {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_metric: 0.0,
        stopped_early: false,
    };
    for epoch in 1..=cfg.epochs {
        let es = seeds.child(&format!("epoch-{epoch}"));
        let mut order: Vec<usize> = (0..train_inputs.len()).collect();
        order.shuffle(&mut es.child("order").rng());
        let mut train_loss = 0.0;
        let mut trigger_loss = 0.0;
        let mut freeze_checks = Vec::new();
        for (s, batch) in order.chunks(cfg.batch_size).enumerate() {
            train_loss += joint_step(&mut model, &mut joint, batch, &mut es.child(&format!("joint-{s}")).rng())?;
            if has_triggers && cfg.trigger_phase == TriggerPhase::PerStep {
                let before = model.backbone_checksum();
                trigger_loss += trigger_step(&mut model, &mut trig, batch, &mut es.child(&format!("trigger-{s}")).rng())?;
                freeze_checks.push((before, model.backbone_checksum()));
            }
        }
        if has_triggers && cfg.trigger_phase == TriggerPhase::PerEpoch {
            let before = model.backbone_checksum();
            let mut order2 = order.clone();
            order2.shuffle(&mut es.child("trigger-order").rng());
            for (s, batch) in order2.chunks(cfg.batch_size).enumerate() {
                trigger_loss += trigger_step(&mut model, &mut trig, batch, &mut es.child(&format!("trigger-{s}")).rng())?;
            }
            freeze_checks.push((before, model.backbone_checksum()));
        }
        let n = train_inputs.len() as f64;
        let (val_metric, _) = evaluate(&model, &val_inputs, &val_labels, cfg.metric)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: train_loss / n,
            trigger_loss: has_triggers.then_some(trigger_loss / n),
            val_metric,
            freeze_checks,
        });
        let (improved, stop) = stopper.observe(epoch, val_metric);
        if improved {
            best_model = model.clone();
        }
        if stop {
            history.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    let (best_epoch, best) = stopper.best().expect("at least one epoch ran");
    history.best_epoch = best_epoch;
    history.best_val_metric = best;
    Ok((best_model, history))
}
