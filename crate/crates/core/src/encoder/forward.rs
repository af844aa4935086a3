use std::ops::Range;

use ndarray::{s, ArrayView1, Axis, Zip};

use super::{trigger_row, EncoderConfig, EncoderParams, Pooling, SentenceEmbedding};
use crate::corpus::{CLS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::nn::{dropout_mask, gelu_with_grad, layer_norm, linear, softmax_rows_inplace, LnCache, Mat};
use crate::rng::Rng;

/// A padded token-id matrix with its attention mask (`true` = real token).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    ids: Vec<Vec<u32>>,
    mask: Vec<Vec<bool>>,
}

impl TokenBatch {
    pub fn new(ids: Vec<Vec<u32>>, mask: Vec<Vec<bool>>) -> Result<Self> {
        let width = ids.first().map_or(0, Vec::len);
        if ids.len() != mask.len()
            || ids.iter().any(|r| r.len() != width)
            || mask.iter().any(|r| r.len() != width)
        {
            return Err(Error::Invalid(
                "token batch rows and mask must form equal-width matrices".into(),
            ));
        }
        Ok(Self { ids, mask })
    }

    /// Right-pads with `<pad>` to the longest sequence.
    pub fn from_sequences<S: AsRef<[u32]>>(seqs: &[S]) -> Self {
        let width = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len());
        let mut mask = Vec::with_capacity(seqs.len());
        for s in seqs {
            let s = s.as_ref();
            let mut row = s.to_vec();
            row.resize(width, PAD_ID);
            let mut m = vec![true; s.len()];
            m.resize(width, false);
            ids.push(row);
            mask.push(m);
        }
        Self { ids, mask }
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn width(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    pub fn ids(&self) -> &[Vec<u32>] {
        &self.ids
    }

    pub fn mask(&self) -> &[Vec<bool>] {
        &self.mask
    }
}

/// Masked positions are dropped before any computation; every sequence is
/// processed over its unmasked positions only, keeping their original
/// position indices. This is exactly attention with `-inf` on masked keys.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub seq_ranges: Vec<Range<usize>>,
    pub positions: Vec<usize>,
    pub slots: Vec<u32>,
    pub lookup: Vec<Vec<Option<usize>>>,
    pub pool_rows: Vec<usize>,
}

impl Layout {
    fn build(cfg: &EncoderConfig, batch: &TokenBatch, trigger_rows: Option<usize>) -> Result<Self> {
        if batch.width() > cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: batch.width(),
                max: cfg.max_seq_len,
            });
        }
        let mut layout = Layout {
            seq_ranges: Vec::with_capacity(batch.rows()),
            positions: Vec::new(),
            slots: Vec::new(),
            lookup: Vec::with_capacity(batch.rows()),
            pool_rows: Vec::with_capacity(batch.rows()),
        };
        for (row, (ids, mask)) in batch.ids.iter().zip(&batch.mask).enumerate() {
            let start = layout.positions.len();
            let mut look = vec![None; ids.len()];
            let mut cls = None;
            for (pos, (&id, &m)) in ids.iter().zip(mask).enumerate() {
                if !m {
                    continue;
                }
                let ok = match trigger_row(id) {
                    Some(r) => trigger_rows.is_some_and(|n| r < n),
                    None => (id as usize) < cfg.vocab_size,
                };
                if !ok {
                    return Err(Error::TokenOutOfRange {
                        row,
                        position: pos,
                        id,
                        vocab_size: cfg.vocab_size,
                    });
                }
                if id == CLS_ID && cls.is_none() {
                    cls = Some(layout.positions.len());
                }
                look[pos] = Some(layout.positions.len());
                layout.positions.push(pos);
                layout.slots.push(id);
            }
            let end = layout.positions.len();
            if end == start {
                return Err(Error::Invalid(format!("batch row {row} has no unmasked token")));
            }
            layout.pool_rows.push(cls.unwrap_or(start));
            layout.seq_ranges.push(start..end);
            layout.lookup.push(look);
        }
        Ok(layout)
    }

    pub fn row_of(&self, seq: usize, pos: usize) -> Option<usize> {
        self.lookup.get(seq)?.get(pos).copied().flatten()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub ln1: LnCache,
    pub a: Mat,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// `[sequence][head]` attention probabilities.
    pub probs: Vec<Vec<Mat>>,
    pub ctx: Mat,
    pub m1: Option<Mat>,
    pub ln2: LnCache,
    pub b: Mat,
    /// GELU derivative at the FFN pre-activation.
    pub dgelu: Mat,
    pub g: Mat,
    pub m2: Option<Mat>,
}

#[derive(Debug, Clone)]
pub(crate) struct Cache {
    pub config: EncoderConfig,
    pub trigger_rows: Option<usize>,
    pub m0: Option<Mat>,
    pub layers: Vec<LayerCache>,
    pub final_ln: LnCache,
    pub pool_in: Mat,
}

/// Result of a forward pass; keeps the activations needed by [`super::backward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `batch x d_model` pooled sentence vectors (before normalization).
    pub pooled: Mat,
    /// Final hidden states, one row per unmasked input position.
    pub hidden: Mat,
    pub(crate) layout: Layout,
    pub(crate) cache: Cache,
}

impl ForwardOutput {
    pub fn embeddings(&self) -> Vec<SentenceEmbedding> {
        self.pooled
            .rows()
            .into_iter()
            .map(|r| SentenceEmbedding::from_raw(r.to_vec()))
            .collect()
    }

    pub fn batch_rows(&self) -> usize {
        self.pooled.nrows()
    }

    /// Hidden state at `(row, position)`, or `None` for masked positions.
    pub fn hidden_at(&self, row: usize, pos: usize) -> Option<ArrayView1<'_, f64>> {
        self.layout.row_of(row, pos).map(|r| self.hidden.row(r))
    }

    /// Attention probabilities of one head, over the unmasked positions of
    /// one sequence.
    pub fn attention(&self, layer: usize, seq: usize, head: usize) -> &Mat {
        &self.cache.layers[layer].probs[seq][head]
    }
}

/// Runs the encoder. `triggers` supplies the rows addressed by trigger
/// sentinel ids; `train` enables dropout.
pub fn forward(
    params: &EncoderParams,
    batch: &TokenBatch,
    triggers: Option<&Mat>,
    train: bool,
    rng: &mut Rng,
) -> Result<ForwardOutput> {
    let cfg = &params.config;
    if let Some(t) = triggers {
        if t.ncols() != cfg.d_model {
            return Err(Error::Invalid(format!(
                "trigger table width {} != d_model {}",
                t.ncols(),
                cfg.d_model
            )));
        }
    }
    let layout = Layout::build(cfg, batch, triggers.map(|t| t.nrows()))?;
    let n = layout.positions.len();
    let d = cfg.d_model;
    let dk = cfg.head_dim();
    let scale = cfg.scale();
    let p_drop = if train { cfg.dropout_rate } else { 0.0 };

    let tok = params.get("embeddings.token");
    let pos = params.get("embeddings.position");
    let mut x = Mat::zeros((n, d));
    for (r, mut row) in x.rows_mut().into_iter().enumerate() {
        let id = layout.slots[r];
        match trigger_row(id) {
            Some(t) => row.assign(&triggers.expect("validated").row(t)),
            None => row.assign(&tok.row(id as usize)),
        }
        row += &pos.row(layout.positions[r]);
    }
    let m0 = (p_drop > 0.0).then(|| dropout_mask(n, d, p_drop, rng));
    if let Some(m) = &m0 {
        x *= m;
    }

    let mut h = x;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let w = |s: &str| params.get(&format!("layers.{l}.{s}"));
        let (a, ln1) = layer_norm(&h, w("ln1.gamma"), w("ln1.beta"));
        let q = linear(&a, w("attn.q.weight"), w("attn.q.bias"));
        let k = linear(&a, w("attn.k.weight"), w("attn.k.bias"));
        let v = linear(&a, w("attn.v.weight"), w("attn.v.bias"));
        let mut ctx = Mat::zeros((n, d));
        let mut probs = Vec::with_capacity(layout.seq_ranges.len());
        for range in &layout.seq_ranges {
            let mut per_head = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let cols = head * dk..(head + 1) * dk;
                let qs = q.slice(s![range.clone(), cols.clone()]);
                let ks = k.slice(s![range.clone(), cols.clone()]);
                let vs = v.slice(s![range.clone(), cols.clone()]);
                let mut scores = qs.dot(&ks.t());
                scores.mapv_inplace(|z| z / scale);
                softmax_rows_inplace(&mut scores);
                ctx.slice_mut(s![range.clone(), cols]).assign(&scores.dot(&vs));
                per_head.push(scores);
            }
            probs.push(per_head);
        }
        let mut o = linear(&ctx, w("attn.out.weight"), w("attn.out.bias"));
        let m1 = (p_drop > 0.0).then(|| dropout_mask(n, d, p_drop, rng));
        if let Some(m) = &m1 {
            o *= m;
        }
        let h1 = &h + &o;
        let (b, ln2) = layer_norm(&h1, w("ln2.gamma"), w("ln2.beta"));
        let u = linear(&b, w("ffn.in.weight"), w("ffn.in.bias"));
        let mut g = u;
        let mut dgelu = Mat::zeros(g.raw_dim());
        Zip::from(&mut g).and(&mut dgelu).for_each(|x, dx| {
            let (v, dv) = gelu_with_grad(*x);
            *x = v;
            *dx = dv;
        });
        let mut f = linear(&g, w("ffn.out.weight"), w("ffn.out.bias"));
        let m2 = (p_drop > 0.0).then(|| dropout_mask(n, d, p_drop, rng));
        if let Some(m) = &m2 {
            f *= m;
        }
        h = &h1 + &f;
        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            m1,
            ln2,
            b,
            dgelu,
            g,
            m2,
        });
    }
    let (hidden, final_ln) = layer_norm(
        &h,
        params.get("final_ln.gamma"),
        params.get("final_ln.beta"),
    );

    let bsz = layout.seq_ranges.len();
    let mut pool_in = Mat::zeros((bsz, d));
    for (b, mut row) in pool_in.rows_mut().into_iter().enumerate() {
        match cfg.pooling {
            Pooling::FirstToken => row.assign(&hidden.row(layout.pool_rows[b])),
            Pooling::Mean => {
                let range = layout.seq_ranges[b].clone();
                let len = range.len() as f64;
                row.assign(&(hidden.slice(s![range, ..]).sum_axis(Axis(0)) / len));
            }
        }
    }
    let pooled = linear(&pool_in, params.get("pooler.weight"), params.get("pooler.bias"))
        .mapv(f64::tanh);

    Ok(ForwardOutput {
        pooled,
        hidden,
        layout,
        cache: Cache {
            config: cfg.clone(),
            trigger_rows: triggers.map(|t| t.nrows()),
            m0,
            layers,
            final_ln,
            pool_in,
        },
    })
}

pub(crate) fn positions_to_rows(out: &ForwardOutput, positions: &[(usize, usize)]) -> Result<Vec<usize>> {
    positions
        .iter()
        .map(|&(row, position)| {
            out.layout
                .row_of(row, position)
                .ok_or(Error::PositionOutOfBounds { row, position })
        })
        .collect()
}

/// MLM head logits at `(batch row, position)` pairs: `|positions| x vocab`.
pub fn mlm_logits(
    params: &EncoderParams,
    out: &ForwardOutput,
    positions: &[(usize, usize)],
) -> Result<Mat> {
    let rows = positions_to_rows(out, positions)?;
    let sel = out.hidden.select(Axis(0), &rows);
    Ok(linear(&sel, params.get("mlm.weight"), params.get("mlm.bias")))
}
