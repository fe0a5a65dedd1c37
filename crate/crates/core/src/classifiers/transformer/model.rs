use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{
    axpy, build_anchor_mask, dot, AttentionMask, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, LnCache,
};
use super::{LayerOffsets, TransformerModel};
use crate::cohort::EncodedSequence;
use crate::{Error, Result};

/// Loss and d(loss)/d(logit) for binary cross-entropy on a logit.
pub(crate) fn bce_with_logit(logit: f64, y: f64) -> (f64, f64) {
    let softplus = if logit > 0.0 { logit + (-logit).exp().ln_1p() } else { logit.exp().ln_1p() };
    (softplus - y * logit, crate::util::sigmoid(logit) - y)
}

/// Inverted-dropout multipliers (0 or `1/(1-p)`); `None` means identity.
fn dropout_mask(rng: &mut Option<&mut ChaCha8Rng>, n: usize, p: f64) -> Option<Vec<f64>> {
    let rng = rng.as_deref_mut()?;
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

/// Splits `buf[off..]` into two adjacent mutable slices of lengths `a` and `b`.
fn pair_mut(buf: &mut [f64], off: usize, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    buf[off..off + a + b].split_at_mut(a)
}

pub(crate) struct LayerCache {
    x: Vec<f64>,
    rq: usize,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    att_drop: Option<Vec<f64>>,
    ctx: Vec<f64>,
    attn_out_drop: Option<Vec<f64>>,
    ln1: LnCache,
    h1: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ffn_drop: Option<Vec<f64>>,
    ln2: LnCache,
}

pub(crate) struct ForwardCache {
    pub logit: f64,
    len: usize,
    tokens: Vec<u32>,
    segments: Vec<u8>,
    emb_ln: LnCache,
    emb_drop: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    /// Inputs to each pooling layer followed by the final pooled vector.
    pooled: Vec<Vec<f64>>,
    head_drop: Option<Vec<f64>>,
    head_in: Vec<f64>,
}

impl TransformerModel {
    /// Runs the encoder on the non-pad prefix of `seq`. Padding keys would get
    /// exactly zero attention weight, so trimming them leaves the `[CLS]` output unchanged.
    /// Passing an RNG turns dropout on.
    pub(crate) fn forward(
        &self,
        params: &[f64],
        seq: &EncodedSequence,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardCache> {
        let mask = build_anchor_mask(seq, &self.anchor_token_ids);
        self.forward_with_mask(params, seq, &mask, rng)
    }

    pub(crate) fn forward_with_mask(
        &self,
        params: &[f64],
        seq: &EncodedSequence,
        mask: &AttentionMask,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardCache> {
        let cfg = &self.config;
        let d = cfg.d_model;
        if seq.len() != cfg.max_len {
            return Err(Error::Shape(format!("sequence length {} != max_len {}", seq.len(), cfg.max_len)));
        }
        let len = seq.active_len();
        if len == 0 {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        let vocab_size = self.vocab.len() as u32;
        if let Some(t) = seq.token_ids[..len].iter().find(|&&t| t >= vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {t} outside vocabulary of {vocab_size}")));
        }
        let lay = &self.layout;
        if mask.additive.len() != seq.len() {
            return Err(Error::Shape(format!("mask length {} != sequence length {}", mask.additive.len(), seq.len())));
        }
        let mask = &mask.additive[..len];

        let mut e = vec![0.0; len * d];
        for i in 0..len {
            let row = &mut e[i * d..(i + 1) * d];
            let t = seq.token_ids[i] as usize;
            let s = seq.segment_ids[i] as usize;
            let p = seq.position_ids[i] as usize;
            axpy(1.0, &params[lay.tok + t * d..lay.tok + (t + 1) * d], row);
            axpy(1.0, &params[lay.seg + s * d..lay.seg + (s + 1) * d], row);
            axpy(1.0, &self.positional[p * d..(p + 1) * d], row);
        }
        let (mut x, emb_ln) = layer_norm(&e, d, &params[lay.emb_ln_g..lay.emb_ln_g + d], &params[lay.emb_ln_b..lay.emb_ln_b + d]);
        let emb_drop = dropout_mask(&mut rng, len * d, cfg.hidden_dropout);
        apply_mask(&mut x, &emb_drop);

        let mut layers = Vec::with_capacity(lay.layers.len());
        for (l, off) in lay.layers.iter().enumerate() {
            let rq = if l + 1 == lay.layers.len() { 1 } else { len };
            let (out, cache) = self.layer_forward(params, off, x, len, rq, mask, &mut rng);
            layers.push(cache);
            x = out;
        }

        let mut pooled = vec![x[..d].to_vec()];
        for &(w, b) in &lay.pooler {
            let z: Vec<f64> = linear(pooled.last().unwrap(), 1, d, &params[w..w + d * d], &params[b..b + d], d)
                .into_iter()
                .map(f64::tanh)
                .collect();
            pooled.push(z);
        }
        let mut head_in = pooled.last().unwrap().clone();
        let head_drop = dropout_mask(&mut rng, d, cfg.hidden_dropout);
        apply_mask(&mut head_in, &head_drop);
        let logit = dot(&head_in, &params[lay.head_w..lay.head_w + d]) + params[lay.head_b];

        Ok(ForwardCache {
            logit,
            len,
            tokens: seq.token_ids[..len].to_vec(),
            segments: seq.segment_ids[..len].to_vec(),
            emb_ln,
            emb_drop,
            layers,
            pooled,
            head_drop,
            head_in,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_forward(
        &self,
        params: &[f64],
        off: &LayerOffsets,
        x: Vec<f64>,
        len: usize,
        rq: usize,
        mask: &[f64],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, LayerCache) {
        let cfg = &self.config;
        let (d, f, nh, dk) = (cfg.d_model, cfg.intermediate_size, cfg.n_heads, cfg.head_dim());
        let w = |o: usize, n: usize| &params[o..o + n];
        let q = linear(&x[..rq * d], rq, d, w(off.wq, d * d), w(off.bq, d), d);
        let k = linear(&x, len, d, w(off.wk, d * d), &vec![0.0; d], d);
        let v = linear(&x, len, d, w(off.wv, d * d), w(off.bv, d), d);

        let scale = 1.0 / (dk as f64).sqrt();
        let mut probs = vec![0.0; nh * rq * len];
        for h in 0..nh {
            for i in 0..rq {
                let qi = &q[i * d + h * dk..i * d + (h + 1) * dk];
                let row = &mut probs[(h * rq + i) * len..(h * rq + i + 1) * len];
                for j in 0..len {
                    row[j] = dot(qi, &k[j * d + h * dk..j * d + (h + 1) * dk]) * scale + mask[j];
                }
                super::ops::softmax_in_place(row);
            }
        }
        let att_drop = dropout_mask(rng, probs.len(), cfg.attention_dropout);
        let mut ctx = vec![0.0; rq * d];
        for h in 0..nh {
            for i in 0..rq {
                let base = (h * rq + i) * len;
                let out = &mut ctx[i * d + h * dk..i * d + (h + 1) * dk];
                for j in 0..len {
                    let mut p = probs[base + j];
                    if let Some(m) = &att_drop {
                        p *= m[base + j];
                    }
                    if p != 0.0 {
                        axpy(p, &v[j * d + h * dk..j * d + (h + 1) * dk], out);
                    }
                }
            }
        }

        let mut a = linear(&ctx, rq, d, w(off.wo, d * d), w(off.bo, d), d);
        let attn_out_drop = dropout_mask(rng, rq * d, cfg.hidden_dropout);
        apply_mask(&mut a, &attn_out_drop);
        for (ai, xi) in a.iter_mut().zip(&x[..rq * d]) {
            *ai += xi;
        }
        let (h1, ln1) = layer_norm(&a, d, w(off.ln1_g, d), w(off.ln1_b, d));

        let ff_pre = linear(&h1, rq, d, w(off.w1, d * f), w(off.b1, f), f);
        let ff_act: Vec<f64> = ff_pre.iter().map(|&z| gelu(z)).collect();
        let mut g = linear(&ff_act, rq, f, w(off.w2, f * d), w(off.b2, d), d);
        let ffn_drop = dropout_mask(rng, rq * d, cfg.hidden_dropout);
        apply_mask(&mut g, &ffn_drop);
        for (gi, hi) in g.iter_mut().zip(&h1) {
            *gi += hi;
        }
        let (out, ln2) = layer_norm(&g, d, w(off.ln2_g, d), w(off.ln2_b, d));

        (out, LayerCache { x, rq, q, k, v, probs, att_drop, ctx, attn_out_drop, ln1, h1, ff_pre, ff_act, ffn_drop, ln2 })
    }

    /// Accumulates `dlogit * d(logit)/d(params)` into `grad`.
    pub(crate) fn backward(&self, params: &[f64], cache: &ForwardCache, dlogit: f64, grad: &mut [f64]) {
        let cfg = &self.config;
        let d = cfg.d_model;
        let lay = &self.layout;

        grad[lay.head_b] += dlogit;
        axpy(dlogit, &cache.head_in, &mut grad[lay.head_w..lay.head_w + d]);
        let mut dz: Vec<f64> = params[lay.head_w..lay.head_w + d].iter().map(|w| w * dlogit).collect();
        apply_mask(&mut dz, &cache.head_drop);
        for (k, &(w, _)) in lay.pooler.iter().enumerate().rev() {
            let out = &cache.pooled[k + 1];
            let dpre: Vec<f64> = dz.iter().zip(out).map(|(g, z)| g * (1.0 - z * z)).collect();
            let (dw, db) = pair_mut(grad, w, d * d, d);
            dz = linear_backward(&cache.pooled[k], 1, d, &params[w..w + d * d], d, &dpre, dw, db);
        }

        // Gradient w.r.t. the last layer's output rows (only [CLS] is used).
        let mut dx = vec![0.0; d];
        dx.copy_from_slice(&dz);
        for (l, off) in lay.layers.iter().enumerate().rev() {
            dx = self.layer_backward(params, off, &cache.layers[l], cache.len, dx, grad);
        }

        apply_mask(&mut dx, &cache.emb_drop);
        let (dg, db) = pair_mut(grad, lay.emb_ln_g, d, d);
        let de = layer_norm_backward(&dx, d, &cache.emb_ln, &params[lay.emb_ln_g..lay.emb_ln_g + d], dg, db);
        for i in 0..cache.len {
            let row = &de[i * d..(i + 1) * d];
            let t = cache.tokens[i] as usize;
            let s = cache.segments[i] as usize;
            axpy(1.0, row, &mut grad[lay.tok + t * d..lay.tok + (t + 1) * d]);
            axpy(1.0, row, &mut grad[lay.seg + s * d..lay.seg + (s + 1) * d]);
        }
    }

    /// Takes d(loss)/d(layer output rows) and returns d(loss)/d(layer input), `len × d`.
    fn layer_backward(
        &self,
        params: &[f64],
        off: &LayerOffsets,
        c: &LayerCache,
        len: usize,
        dout: Vec<f64>,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let cfg = &self.config;
        let (d, f, nh, dk) = (cfg.d_model, cfg.intermediate_size, cfg.n_heads, cfg.head_dim());
        let rq = c.rq;
        let w = |o: usize, n: usize| &params[o..o + n];

        let (dg2, db2n) = pair_mut(grad, off.ln2_g, d, d);
        let dr2 = layer_norm_backward(&dout, d, &c.ln2, w(off.ln2_g, d), dg2, db2n);
        let mut dh1 = dr2.clone();
        let mut dffo = dr2;
        apply_mask(&mut dffo, &c.ffn_drop);
        let (dw2, db2) = pair_mut(grad, off.w2, f * d, d);
        let mut dff = linear_backward(&c.ff_act, rq, f, w(off.w2, f * d), d, &dffo, dw2, db2);
        for (g, &z) in dff.iter_mut().zip(&c.ff_pre) {
            *g *= gelu_grad(z);
        }
        let (dw1, db1) = pair_mut(grad, off.w1, d * f, f);
        let dh1_ff = linear_backward(&c.h1, rq, d, w(off.w1, d * f), f, &dff, dw1, db1);
        for (a, b) in dh1.iter_mut().zip(&dh1_ff) {
            *a += b;
        }

        let (dg1, db1n) = pair_mut(grad, off.ln1_g, d, d);
        let dr1 = layer_norm_backward(&dh1, d, &c.ln1, w(off.ln1_g, d), dg1, db1n);
        let mut dx = vec![0.0; len * d];
        axpy(1.0, &dr1, &mut dx[..rq * d]);
        let mut da = dr1;
        apply_mask(&mut da, &c.attn_out_drop);
        let (dwo, dbo) = pair_mut(grad, off.wo, d * d, d);
        let dctx = linear_backward(&c.ctx, rq, d, w(off.wo, d * d), d, &da, dwo, dbo);

        let scale = 1.0 / (dk as f64).sqrt();
        let mut dq = vec![0.0; rq * d];
        let mut dk_ = vec![0.0; len * d];
        let mut dv = vec![0.0; len * d];
        let mut dp = vec![0.0; len];
        for h in 0..nh {
            let hs = h * dk..(h + 1) * dk;
            for i in 0..rq {
                let base = (h * rq + i) * len;
                let dci = &dctx[i * d + hs.start..i * d + hs.end];
                for j in 0..len {
                    let keep = c.att_drop.as_ref().map_or(1.0, |m| m[base + j]);
                    let p = c.probs[base + j];
                    dp[j] = dot(dci, &c.v[j * d + hs.start..j * d + hs.end]) * keep;
                    let pd = p * keep;
                    if pd != 0.0 {
                        axpy(pd, dci, &mut dv[j * d + hs.start..j * d + hs.end]);
                    }
                }
                let row_p = &c.probs[base..base + len];
                let s = dot(&dp, row_p);
                for j in 0..len {
                    let ds = row_p[j] * (dp[j] - s) * scale;
                    if ds != 0.0 {
                        axpy(ds, &c.k[j * d + hs.start..j * d + hs.end], &mut dq[i * d + hs.start..i * d + hs.end]);
                        axpy(ds, &c.q[i * d + hs.start..i * d + hs.end], &mut dk_[j * d + hs.start..j * d + hs.end]);
                    }
                }
            }
        }

        let (dwq, dbq) = pair_mut(grad, off.wq, d * d, d);
        let dxq = linear_backward(&c.x[..rq * d], rq, d, w(off.wq, d * d), d, &dq, dwq, dbq);
        axpy(1.0, &dxq, &mut dx[..rq * d]);
        let mut unused_bias = vec![0.0; d];
        let dxk = linear_backward(&c.x, len, d, w(off.wk, d * d), d, &dk_, &mut grad[off.wk..off.wk + d * d], &mut unused_bias);
        axpy(1.0, &dxk, &mut dx);
        let (dwv, dbv) = pair_mut(grad, off.wv, d * d, d);
        let dxv = linear_backward(&c.x, len, d, w(off.wv, d * d), d, &dv, dwv, dbv);
        axpy(1.0, &dxv, &mut dx);
        dx
    }
}
