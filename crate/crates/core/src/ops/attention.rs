//! Single-head scaled dot-product attention over spatial tokens.
//!
//! A `[B, C, H, W]` feature map is read as `N = H * W` tokens in row-major
//! order (token `y * W + x`), each with `C` features. Queries come from one
//! stream and keys/values from the other; softmax runs over the key axis.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{gemm, Tensor};

/// Attention output `[B, C, H, W]` plus the row-stochastic weights `[B, N, N]`.
pub struct AttentionOutput {
    pub out: Tensor,
    pub probs: Tensor,
}

pub fn attention_forward(q: &Tensor, k: &Tensor, v: &Tensor, max_tokens: usize) -> Result<AttentionOutput> {
    let (b, d, h, w) = q.dims4()?;
    if k.shape() != q.shape() {
        return shape_err(format!("query {:?} vs key {:?}", q.shape(), k.shape()));
    }
    let (vb, c, vh, vw) = v.dims4()?;
    if (vb, vh, vw) != (b, h, w) {
        return shape_err(format!("value {:?} vs query {:?}", v.shape(), q.shape()));
    }
    let n = h * w;
    if n > max_tokens {
        return Err(Error::InvalidArgument(format!("{} tokens exceed the limit of {}", n, max_tokens)));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let mut probs = Tensor::zeros(&[b, n, n]);
    for bi in 0..b {
        let p = probs.sample_mut(bi);
        // scores[i, j] = scale * sum_c q[c, i] k[c, j]
        gemm(n, n, d, scale, q.sample(bi), true, k.sample(bi), false, 0.0, p);
        for row in p.chunks_mut(n) {
            softmax_in_place(row);
        }
        // out[c, i] = sum_j v[c, j] p[i, j]
        gemm(c, n, n, 1.0, v.sample(bi), false, probs.sample(bi), true, 0.0, out.sample_mut(bi));
    }
    Ok(AttentionOutput { out, probs })
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub struct AttentionGrads {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

pub fn attention_backward(q: &Tensor, k: &Tensor, v: &Tensor, probs: &Tensor, grad_out: &Tensor) -> Result<AttentionGrads> {
    let (b, d, h, w) = q.dims4()?;
    let c = v.shape()[1];
    let n = h * w;
    let scale = 1.0 / (d as f64).sqrt();
    let mut gq = Tensor::zeros(q.shape());
    let mut gk = Tensor::zeros(k.shape());
    let mut gv = Tensor::zeros(v.shape());
    let mut dp = vec![0.0; n * n];
    for bi in 0..b {
        let p = probs.sample(bi);
        let go = grad_out.sample(bi);
        // dV[c, j] = sum_i dO[c, i] p[i, j]
        gemm(c, n, n, 1.0, go, false, p, false, 0.0, gv.sample_mut(bi));
        // dP[i, j] = sum_c dO[c, i] v[c, j]
        gemm(n, n, c, 1.0, go, true, v.sample(bi), false, 0.0, &mut dp);
        for (drow, prow) in dp.chunks_mut(n).zip(p.chunks(n)) {
            let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
            for (dv, pv) in drow.iter_mut().zip(prow) {
                *dv = pv * (*dv - dot);
            }
        }
        // dQ[c, i] = scale * sum_j k[c, j] dS[i, j];  dK[c, j] = scale * sum_i q[c, i] dS[i, j]
        gemm(d, n, n, scale, k.sample(bi), false, &dp, true, 0.0, gq.sample_mut(bi));
        gemm(d, n, n, scale, q.sample(bi), false, &dp, false, 0.0, gk.sample_mut(bi));
    }
    Ok(AttentionGrads { q: gq, k: gk, v: gv })
}
