use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::Serialize;

use super::loss::{contrastive_loss, cross_entropy_mean, unit_grad_to_raw};
use super::mlm::{apply_mlm_mask, MlmSplit};
use super::optim::{Adam, LrSchedule};
use crate::corpus::{
    build_pairs, encode_single, noise_hashtags, pack_greedy, HashtagIndex, NoiseConfig, PairMode,
    TrainingPair, Vocab, CLS_ID, SEP_ID,
};
use crate::encoder::{
    backward, forward, mlm_backward, mlm_logits, EncoderConfig, EncoderParams, TokenBatch, Upstream,
};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_difference_check, GradCheckReport};
use crate::nn::Mat;
use crate::rng::{rng_from_seed, Rng, SeedTree};
use crate::tensors::TensorMap;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub tau: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub mask_rate: f64,
    pub mlm_split: MlmSplit,
    pub seed: u64,
    pub pair_mode: PairMode,
    pub noise: NoiseConfig,
    /// Share of anchors that become same-hashtag long documents.
    pub pack_fraction: f64,
    /// Length cap (including `<cls>`/`<sep>`) for packed anchors.
    pub pack_max_len: usize,
    /// Pairs per epoch; `None` means half the indexed post count.
    pub pairs_per_epoch: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            alpha: 0.1,
            batch_size: 32,
            peak_lr: 1e-3,
            warmup_fraction: 0.1,
            epochs: 10,
            mask_rate: 0.15,
            mlm_split: MlmSplit::default(),
            seed: 0,
            pair_mode: PairMode::HashtagPair,
            noise: NoiseConfig::default(),
            pack_fraction: 0.5,
            pack_max_len: 48,
            pairs_per_epoch: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate must lie in (0,1), got {}", self.mask_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction must lie in [0,1], got {}", self.warmup_fraction));
        }
        if !(0.0..=1.0).contains(&self.pack_fraction) {
            return bad(format!("pack_fraction must lie in [0,1], got {}", self.pack_fraction));
        }
        if self.pack_max_len < 3 {
            return bad(format!("pack_max_len must be >= 3, got {}", self.pack_max_len));
        }
        self.noise.validate()
    }
}

/// Encoder-ready pair sequences with MLM corruption already applied to the
/// anchors. `mlm_targets` holds `(anchor row, position, original id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainBatch {
    pub anchors: Vec<Vec<u32>>,
    pub positives: Vec<Vec<u32>>,
    pub mlm_targets: Vec<(usize, usize, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub loss_total: f64,
    pub loss_cl: f64,
    pub loss_mlm: f64,
}

/// Combined objective and, when `with_grads`, its gradient for every encoder
/// tensor. Dropout follows `train`.
pub fn pretrain_loss(
    params: &EncoderParams,
    batch: &PretrainBatch,
    tau: f64,
    alpha: f64,
    train: bool,
    with_grads: bool,
    rng: &mut Rng,
) -> Result<(LossBreakdown, Option<TensorMap>)> {
    let n = batch.anchors.len();
    if batch.positives.len() != n {
        return Err(Error::Invalid("anchor and positive counts differ".into()));
    }
    let seqs: Vec<&[u32]> = batch
        .anchors
        .iter()
        .chain(&batch.positives)
        .map(Vec::as_slice)
        .collect();
    let tokens = TokenBatch::from_sequences(&seqs);
    let out = forward(params, &tokens, None, train, rng)?;
    let emb = out.embeddings();
    let cl = contrastive_loss(&emb[..n], &emb[n..], tau)?;

    let positions: Vec<(usize, usize)> = batch.mlm_targets.iter().map(|&(r, p, _)| (r, p)).collect();
    let targets: Vec<u32> = batch.mlm_targets.iter().map(|&(_, _, t)| t).collect();
    let logits = mlm_logits(params, &out, &positions)?;
    let (loss_mlm, d_logits) = cross_entropy_mean(&logits, &targets);
    let breakdown = LossBreakdown {
        loss_total: cl.loss + alpha * loss_mlm,
        loss_cl: cl.loss,
        loss_mlm,
    };
    if !with_grads {
        return Ok((breakdown, None));
    }

    let d = params.config.d_model;
    let mut d_pooled = Mat::zeros((2 * n, d));
    for i in 0..n {
        let ga = unit_grad_to_raw(&emb[i], cl.d_anchors.row(i).as_slice().expect("contiguous"));
        let gp = unit_grad_to_raw(&emb[n + i], cl.d_positives.row(i).as_slice().expect("contiguous"));
        for j in 0..d {
            d_pooled[[i, j]] = ga[j];
            d_pooled[[n + i, j]] = gp[j];
        }
    }
    let (mut head_grads, mut d_hidden) = mlm_backward(params, &out, &positions, &d_logits)?;
    head_grads.scale(alpha);
    d_hidden *= alpha;
    let mut grads = backward(
        params,
        &out,
        Upstream {
            d_pooled: Some(&d_pooled),
            d_hidden: Some(&d_hidden),
        },
    )?
    .params;
    grads.accumulate(&head_grads);
    Ok((breakdown, Some(grads)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_cl: f64,
    pub loss_mlm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
}

/// Owns the encoder and optimizer state for one pre-training run.
pub struct Pretrainer<'a> {
    pub params: EncoderParams,
    pub opt: Adam,
    pub schedule: LrSchedule,
    cfg: PretrainConfig,
    vocab: &'a Vocab,
    index: &'a HashtagIndex,
    seeds: SeedTree,
}

impl<'a> Pretrainer<'a> {
    pub fn new(
        params: EncoderParams,
        cfg: PretrainConfig,
        vocab: &'a Vocab,
        index: &'a HashtagIndex,
    ) -> Result<Self> {
        cfg.validate()?;
        if index.is_empty() {
            return Err(Error::Invalid("cannot pre-train on an empty hashtag index".into()));
        }
        let steps = (cfg.epochs * Self::steps_for(&cfg, index)) as u64;
        let schedule = LrSchedule::new(cfg.peak_lr, cfg.warmup_fraction, steps);
        let seeds = SeedTree::new(cfg.seed).child("pretrain");
        Ok(Self {
            params,
            opt: Adam::default(),
            schedule,
            cfg,
            vocab,
            index,
            seeds,
        })
    }

    fn pairs_for(cfg: &PretrainConfig, index: &HashtagIndex) -> usize {
        cfg.pairs_per_epoch
            .unwrap_or(index.posts().len() / 2)
            .max(1)
    }

    fn steps_for(cfg: &PretrainConfig, index: &HashtagIndex) -> usize {
        Self::pairs_for(cfg, index).div_ceil(cfg.batch_size)
    }

    pub fn config(&self) -> &PretrainConfig {
        &self.cfg
    }

    pub fn steps_per_epoch(&self) -> usize {
        Self::steps_for(&self.cfg, self.index)
    }

    pub fn into_params(self) -> EncoderParams {
        self.params
    }

    fn noised(&self, text: &str, rng: &mut Rng) -> Vec<u32> {
        match self.cfg.pair_mode {
            PairMode::HashtagPair => self.vocab.tokenize(&noise_hashtags(text, &self.cfg.noise, rng)),
            PairMode::DropoutSelf => self.vocab.tokenize(text),
        }
    }

    /// Tokenizes, noises, optionally packs and MLM-masks a batch of pairs.
    pub fn prepare_batch(&self, pairs: &[TrainingPair], rng: &mut Rng) -> PretrainBatch {
        let max_len = self.params.config.max_seq_len;
        let mut batch = PretrainBatch {
            anchors: Vec::with_capacity(pairs.len()),
            positives: Vec::with_capacity(pairs.len()),
            mlm_targets: Vec::new(),
        };
        for (row, pair) in pairs.iter().enumerate() {
            let first = self.noised(&pair.anchor.text, rng);
            let anchor = match &pair.shared_hashtag {
                Some(tag) if rng.random::<f64>() < self.cfg.pack_fraction => {
                    let budget = self.cfg.pack_max_len.min(max_len) - 2;
                    let mut mates: Vec<_> = self
                        .index
                        .group(tag)
                        .into_iter()
                        .filter(|p| p.id != pair.anchor.id && p.id != pair.positive.id)
                        .collect();
                    mates.shuffle(rng);
                    let mut rest = Vec::new();
                    let mut used = first.len();
                    for mate in mates {
                        if used >= budget {
                            break;
                        }
                        let toks = self.noised(&mate.text, rng);
                        used += toks.len() + 1;
                        rest.push(toks);
                    }
                    let (body, _) = pack_greedy(&first, rest.iter().map(Vec::as_slice), budget);
                    encode_single(&body, max_len)
                }
                _ => encode_single(&first, max_len),
            };
            let (masked, targets) = apply_mlm_mask(
                &anchor,
                self.cfg.mask_rate,
                self.cfg.mlm_split,
                self.params.config.vocab_size,
                rng,
            );
            batch
                .mlm_targets
                .extend(targets.into_iter().map(|(pos, id)| (row, pos, id)));
            batch.anchors.push(masked);
            let positive = self.noised(&pair.positive.text, rng);
            batch.positives.push(encode_single(&positive, max_len));
        }
        batch
    }

    /// One Adam update on the combined loss of `pairs`.
    pub fn train_step(&mut self, pairs: &[TrainingPair], epoch: usize, rng: &mut Rng) -> Result<StepMetrics> {
        let batch = self.prepare_batch(pairs, rng);
        let ids = || {
            pairs
                .iter()
                .flat_map(|p| [p.anchor.id.clone(), p.positive.id.clone()])
                .collect::<Vec<_>>()
        };
        let (loss, grads) = pretrain_loss(
            &self.params,
            &batch,
            self.cfg.tau,
            self.cfg.alpha,
            true,
            true,
            rng,
        )?;
        let grads = grads.expect("requested");
        if !loss.loss_total.is_finite() || !grads.all_finite() {
            return Err(Error::NonFiniteLoss {
                value: loss.loss_total,
                batch_ids: ids(),
            });
        }
        let step = self.opt.step_count();
        let lr = self.schedule.lr(step);
        self.opt.begin_step(lr);
        self.opt.update_all(&mut self.params.tensors, &grads);
        Ok(StepMetrics {
            step,
            epoch,
            loss_total: loss.loss_total,
            loss_cl: loss.loss_cl,
            loss_mlm: loss.loss_mlm,
            lr,
        })
    }

    /// Samples a fresh set of pairs and runs every step of epoch `epoch`
    /// (zero-based). Randomness derives from the config seed only.
    pub fn train_epoch(&mut self, epoch: usize, on_step: &mut dyn FnMut(&StepMetrics)) -> Result<EpochSummary> {
        let epoch_seeds = self.seeds.child(&format!("epoch-{epoch}"));
        let mut rng = epoch_seeds.child("pairs").rng();
        let pairs = build_pairs(
            self.index,
            Self::pairs_for(&self.cfg, self.index),
            self.cfg.pair_mode,
            &mut rng,
        )?;
        let mut total = 0.0;
        let mut steps = 0;
        for (i, chunk) in pairs.chunks(self.cfg.batch_size).enumerate() {
            let mut step_rng = epoch_seeds.child(&format!("step-{i}")).rng();
            let m = self.train_step(chunk, epoch, &mut step_rng)?;
            on_step(&m);
            total += m.loss_total;
            steps += 1;
        }
        Ok(EpochSummary {
            epoch,
            steps,
            mean_loss: total / steps as f64,
        })
    }

    /// Runs all configured epochs.
    pub fn train(&mut self, on_step: &mut dyn FnMut(&StepMetrics)) -> Result<Vec<EpochSummary>> {
        (0..self.cfg.epochs).map(|e| self.train_epoch(e, on_step)).collect()
    }
}

/// A deterministic small batch for gradient verification: `n` pairs of
/// random in-vocabulary sequences, with at least one MLM target.
pub fn tiny_pretrain_batch(config: &EncoderConfig, n: usize, seed: u64) -> PretrainBatch {
    let mut rng = rng_from_seed(seed);
    let v = config.vocab_size as u32;
    let max_body = config.max_seq_len.saturating_sub(2).clamp(1, 6);
    let seq = |rng: &mut Rng| {
        let len = rng.random_range(1..=max_body);
        let mut s = vec![CLS_ID];
        s.extend((0..len).map(|_| rng.random_range(5..v)));
        s.push(SEP_ID);
        s
    };
    let anchors: Vec<Vec<u32>> = (0..n).map(|_| seq(&mut rng)).collect();
    let positives: Vec<Vec<u32>> = (0..n).map(|_| seq(&mut rng)).collect();
    let mut mlm_targets = Vec::new();
    let mut masked = anchors.clone();
    for (row, a) in anchors.iter().enumerate() {
        for pos in 1..a.len() - 1 {
            if rng.random::<f64>() < 0.3 || (row == 0 && pos == 1) {
                mlm_targets.push((row, pos, a[pos]));
                masked[row][pos] = crate::corpus::MASK_ID;
            }
        }
    }
    PretrainBatch {
        anchors: masked,
        positives,
        mlm_targets,
    }
}

/// Compares the analytic gradient of the combined pre-training loss against
/// central differences for every encoder tensor. Dropout is forced off.
pub fn check_gradients(
    config: &EncoderConfig,
    cfg: &PretrainConfig,
    batch: &PretrainBatch,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let mut config = config.clone();
    config.dropout_rate = 0.0;
    let params = EncoderParams::init(config.clone(), &mut SeedTree::new(cfg.seed).child("gradcheck").rng())?;
    let mut rng = rng_from_seed(0);
    let (_, grads) = pretrain_loss(&params, batch, cfg.tau, cfg.alpha, false, true, &mut rng)?;
    let grads = grads.expect("requested");
    finite_difference_check(&params.tensors, &grads, epsilon, |t| {
        let p = EncoderParams {
            config: config.clone(),
            tensors: t.clone(),
        };
        Ok(pretrain_loss(&p, batch, cfg.tau, cfg.alpha, false, false, &mut rng)?.0.loss_total)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_loss_gradients_match_finite_differences() {
        let config = EncoderConfig::tiny(20);
        let batch = tiny_pretrain_batch(&config, 4, 3);
        let rep = check_gradients(&config, &PretrainConfig::default(), &batch, 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{:?}", rep.worst());
    }
}
