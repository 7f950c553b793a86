//! Fused batch reductions behind the variational mutual-information bounds.
//!
//! All of them operate on `[B, B]` pair matrices whose row index is the
//! conditioning sample and column index the scored sample.

use std::f64::consts::PI;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

fn square_batch(t: &Tensor) -> Result<usize> {
    let (r, c) = t.dims2()?;
    if r != c {
        return shape_err(format!("pair matrix must be square, got {:?}", t.shape()));
    }
    if r < 2 {
        return Err(Error::InvalidArgument(format!("batch of {} samples; at least 2 are required", r)));
    }
    Ok(r)
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `L[i, j] = log N(y_j; mu_i, diag(exp(logvar_i)))`.
pub fn gaussian_loglik_matrix(mu: &Tensor, logvar: &Tensor, y: &Tensor) -> Result<Tensor> {
    let (b, d) = mu.dims2()?;
    mu.expect_same_shape(logvar)?;
    mu.expect_same_shape(y)?;
    let norm = 0.5 * (2.0 * PI).ln();
    let mut out = Tensor::zeros(&[b, b]);
    for i in 0..b {
        let mi = &mu.data()[i * d..(i + 1) * d];
        let li = &logvar.data()[i * d..(i + 1) * d];
        for j in 0..b {
            let yj = &y.data()[j * d..(j + 1) * d];
            let mut acc = 0.0;
            for k in 0..d {
                let r = yj[k] - mi[k];
                acc -= 0.5 * (r * r * (-li[k]).exp() + li[k]) + norm;
            }
            out.data_mut()[i * b + j] = acc;
        }
    }
    Ok(out)
}

pub fn gaussian_loglik_matrix_backward(
    mu: &Tensor,
    logvar: &Tensor,
    y: &Tensor,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, d) = mu.dims2()?;
    let mut gmu = Tensor::zeros(mu.shape());
    let mut glv = Tensor::zeros(logvar.shape());
    let mut gy = Tensor::zeros(y.shape());
    for i in 0..b {
        for j in 0..b {
            let g = grad.data()[i * b + j];
            if g == 0.0 {
                continue;
            }
            for k in 0..d {
                let inv = (-logvar.data()[i * d + k]).exp();
                let r = y.data()[j * d + k] - mu.data()[i * d + k];
                gmu.data_mut()[i * d + k] += g * r * inv;
                glv.data_mut()[i * d + k] += g * 0.5 * (r * r * inv - 1.0);
                gy.data_mut()[j * d + k] -= g * r * inv;
            }
        }
    }
    Ok((gmu, glv, gy))
}

/// All ordered pairs: row `j * B + i` of the result is `x_j ++ z_i`.
pub fn pair_rows(x: &Tensor, z: &Tensor) -> Result<Tensor> {
    let (b, dx) = x.dims2()?;
    let (bz, dz) = z.dims2()?;
    if b != bz {
        return shape_err(format!("cannot pair batches of {b} and {bz}"));
    }
    let mut out = Vec::with_capacity(b * b * (dx + dz));
    for j in 0..b {
        for i in 0..b {
            out.extend_from_slice(&x.data()[j * dx..(j + 1) * dx]);
            out.extend_from_slice(&z.data()[i * dz..(i + 1) * dz]);
        }
    }
    Tensor::from_vec(&[b * b, dx + dz], out)
}

pub fn pair_rows_backward(grad: &Tensor, b: usize, dx: usize, dz: usize) -> Result<(Tensor, Tensor)> {
    let d = dx + dz;
    let mut gx = Tensor::zeros(&[b, dx]);
    let mut gz = Tensor::zeros(&[b, dz]);
    for j in 0..b {
        for i in 0..b {
            let row = &grad.data()[(j * b + i) * d..(j * b + i + 1) * d];
            for k in 0..dx {
                gx.data_mut()[j * dx + k] += row[k];
            }
            for k in 0..dz {
                gz.data_mut()[i * dz + k] += row[dx + k];
            }
        }
    }
    Ok((gx, gz))
}

/// `L[j, i] = log N(y_i; mu_r, diag(exp(logvar_r)))` with `r = j * B + i`, i.e. one
/// predicted density per ordered pair (see [`pair_rows`]).
pub fn gaussian_loglik_pairs(mu: &Tensor, logvar: &Tensor, y: &Tensor) -> Result<Tensor> {
    let (b, d) = y.dims2()?;
    mu.expect_same_shape(logvar)?;
    if mu.shape() != [b * b, d] {
        return shape_err(format!("pair predictions {:?} for targets {:?}", mu.shape(), y.shape()));
    }
    let norm = 0.5 * (2.0 * PI).ln();
    let mut out = Tensor::zeros(&[b, b]);
    for r in 0..b * b {
        let i = r % b;
        let mut acc = 0.0;
        for k in 0..d {
            let l = logvar.data()[r * d + k];
            let e = y.data()[i * d + k] - mu.data()[r * d + k];
            acc -= 0.5 * (e * e * (-l).exp() + l) + norm;
        }
        out.data_mut()[r] = acc;
    }
    Ok(out)
}

pub fn gaussian_loglik_pairs_backward(
    mu: &Tensor,
    logvar: &Tensor,
    y: &Tensor,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, d) = y.dims2()?;
    let mut gmu = Tensor::zeros(mu.shape());
    let mut glv = Tensor::zeros(logvar.shape());
    let mut gy = Tensor::zeros(y.shape());
    for r in 0..b * b {
        let (i, g) = (r % b, grad.data()[r]);
        for k in 0..d {
            let inv = (-logvar.data()[r * d + k]).exp();
            let e = y.data()[i * d + k] - mu.data()[r * d + k];
            gmu.data_mut()[r * d + k] += g * e * inv;
            glv.data_mut()[r * d + k] += g * 0.5 * (e * e * inv - 1.0);
            gy.data_mut()[i * d + k] -= g * e * inv;
        }
    }
    Ok((gmu, glv, gy))
}

/// Contrastive (InfoNCE) lower bound from critic scores `S[i, j] = f(x_i, y_j)`:
/// `mean_i (S_ii - log mean_j exp S_ij)`.
pub fn infonce(scores: &Tensor) -> Result<f64> {
    let b = square_batch(scores)?;
    let s = scores.data();
    let mut acc = 0.0;
    for i in 0..b {
        let row = &s[i * b..(i + 1) * b];
        acc += row[i] - logsumexp(row.iter().copied());
    }
    Ok(acc / b as f64 + (b as f64).ln())
}

pub fn infonce_backward(scores: &Tensor, grad: f64) -> Result<Tensor> {
    let b = square_batch(scores)?;
    let mut out = Tensor::zeros(scores.shape());
    for i in 0..b {
        let row = &scores.data()[i * b..(i + 1) * b];
        let lse = logsumexp(row.iter().copied());
        for j in 0..b {
            let p = (row[j] - lse).exp();
            let delta = if i == j { 1.0 } else { 0.0 };
            out.data_mut()[i * b + j] = grad * (delta - p) / b as f64;
        }
    }
    Ok(out)
}

/// Leave-one-out upper bound from conditional log-likelihoods `L[i, j] = log q(y_j | x_i)`:
/// `mean_i (L_ii - log mean_{j != i} exp L_ji)`.
pub fn l1out(loglik: &Tensor) -> Result<f64> {
    let b = square_batch(loglik)?;
    let l = loglik.data();
    let mut acc = 0.0;
    for i in 0..b {
        let others = (0..b).filter(move |&j| j != i).map(move |j| l[j * b + i]);
        acc += l[i * b + i] - (logsumexp(others) - ((b - 1) as f64).ln());
    }
    Ok(acc / b as f64)
}

pub fn l1out_backward(loglik: &Tensor, grad: f64) -> Result<Tensor> {
    let b = square_batch(loglik)?;
    let l = loglik.data();
    let scale = grad / b as f64;
    let mut out = Tensor::zeros(loglik.shape());
    for i in 0..b {
        out.data_mut()[i * b + i] += scale;
        let others = (0..b).filter(move |&j| j != i).map(move |j| l[j * b + i]);
        let lse = logsumexp(others);
        for j in (0..b).filter(|&j| j != i) {
            out.data_mut()[j * b + i] -= scale * (l[j * b + i] - lse).exp();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infonce_of_identical_rows_is_zero() {
        let s = Tensor::full(&[4, 4], 2.5);
        assert!(infonce(&s).unwrap().abs() < 1e-12);
    }

    #[test]
    fn infonce_saturates_at_log_batch() {
        let mut s = Tensor::full(&[8, 8], -1e3);
        for i in 0..8 {
            s.data_mut()[i * 8 + i] = 0.0;
        }
        assert!((infonce(&s).unwrap() - 8f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn l1out_rejects_single_sample() {
        assert!(l1out(&Tensor::zeros(&[1, 1])).is_err());
    }

    #[test]
    fn loglik_of_standard_normal_at_mean() {
        let z = Tensor::zeros(&[2, 1]);
        let l = gaussian_loglik_matrix(&z, &z, &z).unwrap();
        assert!((l.data()[0] + 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn pairs_enumerate_every_combination() {
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap();
        let z = Tensor::from_vec(&[2, 2], vec![10.0, 11.0, 20.0, 21.0]).unwrap();
        let p = pair_rows(&x, &z).unwrap();
        assert_eq!(p.shape(), &[4, 3]);
        assert_eq!(p.data(), &[1.0, 10.0, 11.0, 1.0, 20.0, 21.0, 2.0, 10.0, 11.0, 2.0, 20.0, 21.0]);
    }

    #[test]
    fn pair_loglik_agrees_with_matrix_form_when_predictions_ignore_z() {
        // rows j*B+i repeating mu_j reproduce the ordinary [B, B] matrix
        let mu = Tensor::from_vec(&[3, 2], vec![0.1, -0.3, 0.5, 0.2, -1.0, 0.7]).unwrap();
        let lv = Tensor::from_vec(&[3, 2], vec![0.0, 0.4, -0.2, 0.1, 0.3, -0.5]).unwrap();
        let y = Tensor::from_vec(&[3, 2], vec![0.2, 0.1, -0.4, 0.9, 1.1, -0.6]).unwrap();
        let rep = |t: &Tensor| {
            let d: Vec<f64> = (0..9).flat_map(|r| t.data()[(r / 3) * 2..(r / 3) * 2 + 2].to_vec()).collect();
            Tensor::from_vec(&[9, 2], d).unwrap()
        };
        let a = gaussian_loglik_pairs(&rep(&mu), &rep(&lv), &y).unwrap();
        let b = gaussian_loglik_matrix(&mu, &lv, &y).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14);
    }
}
