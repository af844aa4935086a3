//! Dense building blocks with explicit backward passes.
//!
//! Weights are stored `in x out`, so a linear layer is `y = x W + b` with `b`
//! a `1 x out` row broadcast over the batch rows.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng as _;

use crate::rng::Rng;

pub type Mat = Array2<f64>;

pub const LN_EPS: f64 = 1e-5;

pub fn linear(x: &Mat, w: &Mat, b: &Mat) -> Mat {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward(x: &Mat, w: &Mat, dy: &Mat) -> (Mat, Mat, Mat) {
    let dx = dy.dot(&w.t());
    let dw = x.t().dot(dy);
    (dx, dw, col_sum(dy))
}

/// Column sums as a `1 x n` row.
pub fn col_sum(m: &Mat) -> Mat {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

#[derive(Debug, Clone)]
pub struct LnCache {
    xhat: Mat,
    inv_std: Array1<f64>,
}

pub fn layer_norm(x: &Mat, gamma: &Mat, beta: &Mat) -> (Mat, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * is);
        *s = is;
    }
    let mut y = &xhat * gamma;
    y += beta;
    (y, LnCache { xhat, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(cache: &LnCache, gamma: &Mat, dy: &Mat) -> (Mat, Mat, Mat) {
    let d = dy.ncols() as f64;
    let dgamma = col_sum(&(dy * &cache.xhat));
    let dbeta = col_sum(dy);
    let mut dx = dy * gamma;
    for ((mut row, xh), &is) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_d = row.sum() / d;
        let mean_dx = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        Zip::from(&mut row)
            .and(&xh)
            .for_each(|g, &x| *g = is * (*g - mean_d - x * mean_dx));
    }
    (dx, dgamma, dbeta)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    gelu_with_grad(x).0
}

pub fn gelu_grad(x: f64) -> f64 {
    gelu_with_grad(x).1
}

/// GELU value and derivative sharing one tanh evaluation.
#[inline]
pub fn gelu_with_grad(x: f64) -> (f64, f64) {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = fast_tanh(inner);
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    (
        0.5 * x * (1.0 + t),
        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner,
    )
}

#[inline]
fn fast_tanh(z: f64) -> f64 {
    if z.abs() < 0.02 {
        return z.tanh();
    }
    let e = exp_approx(-2.0 * z.abs());
    ((1.0 - e) / (1.0 + e)).copysign(z)
}

pub fn softmax_rows_inplace(m: &mut Mat) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| exp_approx(v - max));
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Branch-free `exp` accurate to a few ulp over `[-708, 709]`; it
/// vectorizes, unlike the libm call, which matters in attention softmax.
#[inline]
pub fn exp_approx(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.clamp(-708.0, 709.0);
    let n = (x * std::f64::consts::LOG2_E).round();
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = INV_FACT[12];
    p = p * r + INV_FACT[11];
    p = p * r + INV_FACT[10];
    p = p * r + INV_FACT[9];
    p = p * r + INV_FACT[8];
    p = p * r + INV_FACT[7];
    p = p * r + INV_FACT[6];
    p = p * r + INV_FACT[5];
    p = p * r + INV_FACT[4];
    p = p * r + INV_FACT[3];
    p = p * r + INV_FACT[2];
    p = p * r + INV_FACT[1];
    p = p * r + INV_FACT[0];
    let scale = f64::from_bits(((n as i64 + 1023) as u64) << 52);
    p * scale
}

const INV_FACT: [f64; 13] = [
    1.0,
    1.0,
    0.5,
    0.16666666666666666,
    0.041666666666666664,
    0.008333333333333333,
    0.001388888888888889,
    0.0001984126984126984,
    2.48015873015873e-05,
    2.7557319223985893e-06,
    2.755731922398589e-07,
    2.505210838544172e-08,
    2.08767569878681e-09,
];

/// `log(sum(exp(row)))` per row, computed stably.
pub fn logsumexp_rows(m: &Mat) -> Vec<f64> {
    m.rows()
        .into_iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        })
        .collect()
}

/// Inverted-dropout mask: entries are 0 or `1/(1-p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Mat {
    let keep = 1.0 / (1.0 - p);
    Mat::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    })
}
