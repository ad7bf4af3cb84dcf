//! Scalar and row-level numeric primitives shared by the forward and
//! backward passes. Everything is stable in log space: softmax subtracts the
//! row max, binary cross-entropy goes through softplus.

use ndarray::{Array1, Array2, Axis};

pub const LN_EPS: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn dgelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `-delta ln p - (1-delta) ln(1-p)` for `p = sigmoid(score)`, computed
/// without ever forming `p`.
pub fn bce_with_logit(score: f64, delta: f64) -> f64 {
    softplus(score) - delta * score
}

/// Softmax over a mutable row, max-subtracted.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `ln(sum(exp(row)))`, max-subtracted.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Per-row layer norm `gamma * (x - mean)/sqrt(var + eps) + beta`.
pub fn layer_norm(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let h = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / h;
        *is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * *is);
    }
    let y = &xhat * gamma + beta;
    (y, LnCache { xhat, inv_std })
}

/// Reverse layer norm: returns dx and accumulates dgamma/dbeta.
pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: &Array1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    *dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0));
    let h = dy.ncols() as f64;
    let dxhat = dy * gamma;
    let mut dx = Array2::zeros(dy.raw_dim());
    for ((dxh_row, xh_row), (mut dx_row, &is)) in dxhat
        .rows()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(dx.rows_mut().into_iter().zip(cache.inv_std.iter()))
    {
        let m1 = dxh_row.sum() / h;
        let m2 = dxh_row
            .iter()
            .zip(xh_row.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / h;
        for ((d, &dxh), &xh) in dx_row.iter_mut().zip(dxh_row.iter()).zip(xh_row.iter()) {
            *d = is * (dxh - m1 - xh * m2);
        }
    }
    dx
}
