//! Nested-loop references shared by the oracle tests and the acceptance run.
#![allow(dead_code)]

use jmpose_core::ops::deform::DeformableKernelSpec;
use jmpose_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Zero-padded bilinear read: each of the four corners contributes only if it lies inside.
fn bilinear(x: &Tensor, b: usize, c: usize, sy: f64, sx: f64) -> f64 {
    let s = x.shape();
    let (h, w) = (s[2] as i64, s[3] as i64);
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let mut acc = 0.0;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let (yy, xx) = (y0 as i64 + dy, x0 as i64 + dx);
            if yy >= 0 && yy < h && xx >= 0 && xx < w {
                acc += wy * wx * x.at4(b, c, yy as usize, xx as usize);
            }
        }
    }
    acc
}

pub fn deform_reference(m: &Tensor, off: &Tensor, mask: &Tensor, w: &Tensor, bias: &Tensor) -> Tensor {
    let s = m.shape();
    let (bn, ci, h, wd) = (s[0], s[1], s[2], s[3]);
    let co = w.shape()[0];
    let mut out = Tensor::zeros(&[bn, co, h, wd]);
    for b in 0..bn {
        for o in 0..co {
            for y in 0..h {
                for x in 0..wd {
                    let mut acc = bias.data()[o];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let q = ky * 3 + kx;
                            let sx = x as f64 + kx as f64 - 1.0 + off.at4(b, 2 * q, y, x);
                            let sy = y as f64 + ky as f64 - 1.0 + off.at4(b, 2 * q + 1, y, x);
                            for c in 0..ci {
                                acc += w.at4(o, c, ky, kx) * mask.at4(b, q, y, x) * bilinear(m, b, c, sy, sx);
                            }
                        }
                    }
                    *out.at4_mut(b, o, y, x) = acc;
                }
            }
        }
    }
    out
}

pub fn conv_reference(x: &Tensor, w: &Tensor, bias: &Tensor) -> Tensor {
    let s = x.shape();
    let (bn, ci, h, wd) = (s[0], s[1], s[2], s[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let p = (k / 2) as i64;
    let mut out = Tensor::zeros(&[bn, co, h, wd]);
    for b in 0..bn {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = bias.data()[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = (y as i64 + ky as i64 - p, xx as i64 + kx as i64 - p);
                                if iy >= 0 && iy < h as i64 && ix >= 0 && ix < wd as i64 {
                                    acc += w.at4(o, c, ky, kx) * x.at4(b, c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    *out.at4_mut(b, o, y, xx) = acc;
                }
            }
        }
    }
    out
}

pub struct Case {
    pub m: Tensor,
    pub off: Tensor,
    pub mask: Tensor,
    pub w: Tensor,
    pub bias: Tensor,
    pub spec: DeformableKernelSpec,
}

pub fn random_case(rng: &mut ChaCha8Rng, offset_range: f64) -> Case {
    let ci = rng.random_range(1..=3);
    let co = rng.random_range(1..=3);
    let (b, h, w) = (rng.random_range(1..=2), rng.random_range(1..=6), rng.random_range(1..=6));
    let spec = DeformableKernelSpec::new(ci, co);
    Case {
        m: Tensor::randn(&[b, ci, h, w], 1.0, rng),
        off: if offset_range > 0.0 { Tensor::uniform(&[b, 18, h, w], -offset_range, offset_range, rng) } else { Tensor::zeros(&[b, 18, h, w]) },
        mask: Tensor::uniform(&[b, 9, h, w], 0.0, 1.0, rng),
        w: Tensor::randn(&[co, ci, 3, 3], 1.0, rng),
        bias: Tensor::randn(&[co], 1.0, rng),
        spec,
    }
}
