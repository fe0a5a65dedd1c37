use statrs::function::erf::erf;

use crate::cohort::{EncodedSequence, PAD};
use crate::{Error, Result};

/// Additive value for masked attention keys.
pub const MASK_VALUE: f64 = -1e4;
pub(crate) const LN_EPS: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Additive key mask shared by every query, layer and head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub additive: Vec<f64>,
}

/// `MASK_VALUE` at key positions holding an anchor token or `[PAD]`, 0 elsewhere.
pub fn build_anchor_mask(tokens: &EncodedSequence, anchor_token_ids: &[u32]) -> AttentionMask {
    AttentionMask {
        additive: tokens
            .token_ids
            .iter()
            .zip(&tokens.valid)
            .map(|(t, &valid)| if !valid || *t == PAD || anchor_token_ids.contains(t) { MASK_VALUE } else { 0.0 })
            .collect(),
    }
}

/// Row-wise `softmax(q k^T / sqrt(d_k) + mask)` where `d_k = q.cols`.
pub fn attention_weights(q: &Matrix, k: &Matrix, mask: &AttentionMask) -> Result<Matrix> {
    if q.cols != k.cols || mask.additive.len() != k.rows {
        return Err(Error::Shape(format!(
            "q {}x{}, k {}x{}, mask {}",
            q.rows,
            q.cols,
            k.rows,
            k.cols,
            mask.additive.len()
        )));
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut p = vec![0.0; q.rows * k.rows];
    for i in 0..q.rows {
        let out = &mut p[i * k.rows..(i + 1) * k.rows];
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(q.row(i), k.row(j)) * scale + mask.additive[j];
        }
        softmax_in_place(out);
    }
    Matrix::new(q.rows, k.rows, p)
}

/// `softmax(q k^T / sqrt(d_k) + mask) v`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, mask: &AttentionMask) -> Result<Matrix> {
    if v.rows != k.rows {
        return Err(Error::Shape(format!("k has {} rows, v has {}", k.rows, v.rows)));
    }
    let p = attention_weights(q, k, mask)?;
    let mut out = vec![0.0; q.rows * v.cols];
    for i in 0..q.rows {
        let o = &mut out[i * v.cols..(i + 1) * v.cols];
        for j in 0..k.rows {
            axpy(p.data[i * k.rows + j], v.row(j), o);
        }
    }
    Matrix::new(q.rows, v.cols, out)
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = a (m×k) · w (k×n) + bias`.
pub(crate) fn linear(a: &[f64], m: usize, k: usize, w: &[f64], bias: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &w[p * n..(p + 1) * n], o);
        }
    }
    out
}

/// Backward of `linear`: accumulates `dw += a^T g`, `db += colsum(g)` and returns `g w^T`.
pub(crate) fn linear_backward(
    a: &[f64],
    m: usize,
    k: usize,
    w: &[f64],
    n: usize,
    g: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        axpy(1.0, gi, db);
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip != 0.0 {
                axpy(a_ip, gi, &mut dw[p * n..(p + 1) * n]);
            }
        }
    }
    let mut da = vec![0.0; m * k];
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] = dot(gi, &w[p * n..(p + 1) * n]);
        }
    }
    da
}

/// Per-row normalization state kept for the backward pass.
pub(crate) struct LnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LnCache) {
    let m = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; m];
    for i in 0..m {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = inv;
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[i * d + j] = h;
            y[i * d + j] = gamma[j] * h + beta[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    d: usize,
    cache: &LnCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let m = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for i in 0..m {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        for j in 0..d {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
            dxhat[j] = dyr[j] * gamma[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dot(&dxhat, xh) / d as f64;
        for j in 0..d {
            dx[i * d + j] = cache.inv_std[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Fixed sinusoidal position table, `max_len × d`.
pub(crate) fn sinusoidal_table(max_len: usize, d: usize) -> Vec<f64> {
    let mut t = vec![0.0; max_len * d];
    for pos in 0..max_len {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            t[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn single_position_returns_value_row() {
        let q = m(1, 2, &[0.3, -1.0]);
        let k = m(1, 2, &[2.0, 0.5]);
        let v = m(1, 3, &[1.5, -2.0, 7.0]);
        let out = attention(&q, &k, &v, &AttentionMask { additive: vec![0.0] }).unwrap();
        assert_eq!(out.data, v.data);
    }

    #[test]
    fn identical_keys_split_evenly() {
        let q = m(1, 2, &[0.3, -1.0]);
        let k = m(2, 2, &[2.0, 0.5, 2.0, 0.5]);
        let p = attention_weights(&q, &k, &AttentionMask { additive: vec![0.0, 0.0] }).unwrap();
        assert_eq!(p.data, vec![0.5, 0.5]);
    }

    #[test]
    fn masked_key_matches_hand_softmax() {
        let q = m(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let k = m(3, 2, &[1.0, 1.0, 3.0, -1.0, 0.5, 0.5]);
        let mask = AttentionMask { additive: vec![0.0, MASK_VALUE, 0.0] };
        let p = attention_weights(&q, &k, &mask).unwrap();
        let s = 1.0 / 2f64.sqrt();
        for i in 0..2 {
            assert!(p.data[i * 3 + 1] < 1e-12);
            let a = crate::classifiers::transformer::ops::dot(q.row(i), k.row(0)) * s;
            let b = crate::classifiers::transformer::ops::dot(q.row(i), k.row(2)) * s;
            let w0 = a.exp() / (a.exp() + b.exp());
            assert!((p.data[i * 3] - w0).abs() < 1e-15);
            assert!((p.data[i * 3 + 2] - (1.0 - w0)).abs() < 1e-15);
            let sum: f64 = p.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let q = m(1, 2, &[0.0, 0.0]);
        let k = m(1, 3, &[0.0; 3]);
        assert!(attention_weights(&q, &k, &AttentionMask { additive: vec![0.0] }).is_err());
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-9);
        }
    }
}
