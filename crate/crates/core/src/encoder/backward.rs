use ndarray::{s, Axis};

use super::forward::{positions_to_rows, ForwardOutput};
use super::{trigger_row, EncoderParams, Pooling};
use crate::error::{Error, Result};
use crate::nn::{layer_norm_backward, linear_backward, Mat};
use crate::tensors::TensorMap;

/// Gradients flowing into the encoder outputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct Upstream<'a> {
    /// `batch x d_model`, w.r.t. [`ForwardOutput::pooled`].
    pub d_pooled: Option<&'a Mat>,
    /// One row per unmasked position, w.r.t. [`ForwardOutput::hidden`].
    pub d_hidden: Option<&'a Mat>,
}

#[derive(Debug, Clone)]
pub struct EncoderGrads {
    /// One entry per encoder tensor; untouched tensors hold zeros.
    pub params: TensorMap,
    /// Gradient of the trigger table, when the forward pass used one.
    pub triggers: Option<Mat>,
}

/// Reverse-mode differentiation of [`super::forward`].
pub fn backward(params: &EncoderParams, out: &ForwardOutput, up: Upstream<'_>) -> Result<EncoderGrads> {
    let cache = &out.cache;
    let layout = &out.layout;
    let cfg = &params.config;
    if cache.config != *cfg {
        return Err(Error::CacheMismatch(
            "forward pass ran with a different encoder config".into(),
        ));
    }
    let n = out.hidden.nrows();
    let d = cfg.d_model;
    let dk = cfg.head_dim();
    let scale = cfg.scale();
    if let Some(dp) = up.d_pooled {
        if dp.dim() != out.pooled.dim() {
            return Err(Error::CacheMismatch(format!(
                "d_pooled is {:?}, pooled output is {:?}",
                dp.dim(),
                out.pooled.dim()
            )));
        }
    }
    if let Some(dh) = up.d_hidden {
        if dh.dim() != out.hidden.dim() {
            return Err(Error::CacheMismatch(format!(
                "d_hidden is {:?}, hidden output is {:?}",
                dh.dim(),
                out.hidden.dim()
            )));
        }
    }

    let mut grads = params.tensors.zeros_like();
    let mut put = |name: &str, g: Mat| {
        *grads.get_mut(name).expect("known tensor") += &g;
    };

    let mut d_hidden = up.d_hidden.cloned().unwrap_or_else(|| Mat::zeros((n, d)));
    if let Some(dp) = up.d_pooled {
        let dpre = dp * &out.pooled.mapv(|y| 1.0 - y * y);
        let (dz, dw, db) = linear_backward(&cache.pool_in, params.get("pooler.weight"), &dpre);
        put("pooler.weight", dw);
        put("pooler.bias", db);
        for (b, dzr) in dz.rows().into_iter().enumerate() {
            match cfg.pooling {
                Pooling::FirstToken => {
                    let mut row = d_hidden.row_mut(layout.pool_rows[b]);
                    row += &dzr;
                }
                Pooling::Mean => {
                    let range = layout.seq_ranges[b].clone();
                    let share = &dzr / range.len() as f64;
                    for r in range {
                        let mut row = d_hidden.row_mut(r);
                        row += &share;
                    }
                }
            }
        }
    }

    let (mut dh, dg, db) = layer_norm_backward(&cache.final_ln, params.get("final_ln.gamma"), &d_hidden);
    put("final_ln.gamma", dg);
    put("final_ln.beta", db);

    for (l, lc) in cache.layers.iter().enumerate().rev() {
        let name = |s: &str| format!("layers.{l}.{s}");
        let w = |s: &str| params.get(&name(s));

        // h_out = h1 + dropout(ffn(ln2(h1)))
        let mut df = dh.clone();
        if let Some(m) = &lc.m2 {
            df *= m;
        }
        let (dgact, dw2, db2) = linear_backward(&lc.g, w("ffn.out.weight"), &df);
        put(&name("ffn.out.weight"), dw2);
        put(&name("ffn.out.bias"), db2);
        let du = &dgact * &lc.dgelu;
        let (dbn, dw1, db1) = linear_backward(&lc.b, w("ffn.in.weight"), &du);
        put(&name("ffn.in.weight"), dw1);
        put(&name("ffn.in.bias"), db1);
        let (dh1_ln, dg2, dbeta2) = layer_norm_backward(&lc.ln2, w("ln2.gamma"), &dbn);
        put(&name("ln2.gamma"), dg2);
        put(&name("ln2.beta"), dbeta2);
        let dh1 = dh + &dh1_ln;

        // h1 = h + dropout(attn(ln1(h)))
        let mut dout = dh1.clone();
        if let Some(m) = &lc.m1 {
            dout *= m;
        }
        let (dctx, dwo, dbo) = linear_backward(&lc.ctx, w("attn.out.weight"), &dout);
        put(&name("attn.out.weight"), dwo);
        put(&name("attn.out.bias"), dbo);

        let mut dq = Mat::zeros((n, d));
        let mut dkm = Mat::zeros((n, d));
        let mut dv = Mat::zeros((n, d));
        for (si, range) in layout.seq_ranges.iter().enumerate() {
            for head in 0..cfg.n_heads {
                let cols = head * dk..(head + 1) * dk;
                let p = &lc.probs[si][head];
                let dctx_h = dctx.slice(s![range.clone(), cols.clone()]);
                let qs = lc.q.slice(s![range.clone(), cols.clone()]);
                let ks = lc.k.slice(s![range.clone(), cols.clone()]);
                let vs = lc.v.slice(s![range.clone(), cols.clone()]);
                let dp = dctx_h.dot(&vs.t());
                dv.slice_mut(s![range.clone(), cols.clone()])
                    .assign(&p.t().dot(&dctx_h));
                let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                let mut ds = p * &(&dp - &row_dot);
                ds.mapv_inplace(|z| z / scale);
                dq.slice_mut(s![range.clone(), cols.clone()]).assign(&ds.dot(&ks));
                dkm.slice_mut(s![range.clone(), cols]).assign(&ds.t().dot(&qs));
            }
        }
        let (da_q, dwq, dbq) = linear_backward(&lc.a, w("attn.q.weight"), &dq);
        let (da_k, dwk, dbk) = linear_backward(&lc.a, w("attn.k.weight"), &dkm);
        let (da_v, dwv, dbv) = linear_backward(&lc.a, w("attn.v.weight"), &dv);
        put(&name("attn.q.weight"), dwq);
        put(&name("attn.q.bias"), dbq);
        put(&name("attn.k.weight"), dwk);
        put(&name("attn.k.bias"), dbk);
        put(&name("attn.v.weight"), dwv);
        put(&name("attn.v.bias"), dbv);
        let da = da_q + &da_k + &da_v;
        let (dh_ln, dg1, dbeta1) = layer_norm_backward(&lc.ln1, w("ln1.gamma"), &da);
        put(&name("ln1.gamma"), dg1);
        put(&name("ln1.beta"), dbeta1);
        dh = dh1 + &dh_ln;
    }

    if let Some(m) = &cache.m0 {
        dh *= m;
    }
    let mut d_tok = Mat::zeros(params.get("embeddings.token").raw_dim());
    let mut d_pos = Mat::zeros(params.get("embeddings.position").raw_dim());
    let mut d_trig = cache.trigger_rows.map(|r| Mat::zeros((r, d)));
    for (r, g) in dh.rows().into_iter().enumerate() {
        let id = layout.slots[r];
        match trigger_row(id) {
            Some(t) => {
                let table = d_trig.as_mut().expect("trigger rows validated in forward");
                let mut row = table.row_mut(t);
                row += &g;
            }
            None => {
                let mut row = d_tok.row_mut(id as usize);
                row += &g;
            }
        }
        let mut row = d_pos.row_mut(layout.positions[r]);
        row += &g;
    }
    put("embeddings.token", d_tok);
    put("embeddings.position", d_pos);

    Ok(EncoderGrads {
        params: grads,
        triggers: d_trig,
    })
}

/// Backward through the MLM head. Returns the head's parameter gradients and
/// the gradient w.r.t. [`ForwardOutput::hidden`].
pub fn mlm_backward(
    params: &EncoderParams,
    out: &ForwardOutput,
    positions: &[(usize, usize)],
    d_logits: &Mat,
) -> Result<(TensorMap, Mat)> {
    let rows = positions_to_rows(out, positions)?;
    if d_logits.nrows() != rows.len() || d_logits.ncols() != params.config.vocab_size {
        return Err(Error::CacheMismatch(format!(
            "d_logits is {:?}, expected ({}, {})",
            d_logits.dim(),
            rows.len(),
            params.config.vocab_size
        )));
    }
    let sel = out.hidden.select(Axis(0), &rows);
    let (dsel, dw, db) = linear_backward(&sel, params.get("mlm.weight"), d_logits);
    let mut d_hidden = Mat::zeros(out.hidden.raw_dim());
    for (i, &r) in rows.iter().enumerate() {
        let mut row = d_hidden.row_mut(r);
        row += &dsel.row(i);
    }
    let mut grads = TensorMap::new();
    grads.insert("mlm.weight", dw);
    grads.insert("mlm.bias", db);
    Ok((grads, d_hidden))
}
