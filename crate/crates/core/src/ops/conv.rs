//! Standard 2-D convolution via im2col + GEMM.

use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub const SAME3: Self = Self { stride: 1, padding: 1 };
    pub const POINTWISE: Self = Self { stride: 1, padding: 0 };

    pub fn output_size(&self, h: usize, w: usize, k: usize) -> (usize, usize) {
        let ho = (h + 2 * self.padding - k) / self.stride + 1;
        let wo = (w + 2 * self.padding - k) / self.stride + 1;
        (ho, wo)
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, g: Conv2dGeometry, cols: &mut [f64]) {
    let (ho, wo) = g.output_size(h, w, k);
    let pad = g.padding as isize;
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride) as isize + ky as isize - pad;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride) as isize + kx as isize - pad;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, g: Conv2dGeometry, dx: &mut [f64]) {
    let (ho, wo) = g.output_size(h, w, k);
    let pad = g.padding as isize;
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn check(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (bn, ci, h, wd) = x.dims4()?;
    let (co, wci, kh, kw) = w.dims4()?;
    if wci != ci || kh != kw {
        return shape_err(format!("conv weight {:?} for input {:?}", w.shape(), x.shape()));
    }
    if let Some(b) = b {
        if b.shape() != [co] {
            return shape_err(format!("conv bias {:?} for {} outputs", b.shape(), co));
        }
    }
    Ok((bn, ci, h, wd, co, kh))
}

/// `x: [B, Ci, H, W]`, `w: [Co, Ci, k, k]`, `b: [Co]`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: Conv2dGeometry) -> Result<Tensor> {
    let (bn, ci, h, wd, co, k) = check(x, w, b)?;
    if h + 2 * g.padding < k || wd + 2 * g.padding < k {
        return shape_err(format!("kernel {} larger than padded input {}x{}", k, h, wd));
    }
    let (ho, wo) = g.output_size(h, wd, k);
    let n = ho * wo;
    let kk = ci * k * k;
    let mut out = Tensor::zeros(&[bn, co, ho, wo]);
    let pointwise = k == 1 && g == Conv2dGeometry::POINTWISE;
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; kk * n] };
    for bi in 0..bn {
        let xs = x.sample(bi);
        let rhs: &[f64] = if pointwise {
            xs
        } else {
            im2col(xs, ci, h, wd, k, g, &mut cols);
            &cols
        };
        let os = out.sample_mut(bi);
        if let Some(b) = b {
            for (c, chunk) in os.chunks_mut(n).enumerate() {
                chunk.fill(b.data()[c]);
            }
        }
        gemm(co, n, kk, 1.0, w.data(), false, rhs, false, if b.is_some() { 1.0 } else { 0.0 }, os);
    }
    Ok(out)
}

pub struct Conv2dGrads {
    pub x: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

pub fn conv2d_backward(x: &Tensor, w: &Tensor, g: Conv2dGeometry, grad_out: &Tensor) -> Result<Conv2dGrads> {
    let (bn, ci, h, wd, co, k) = check(x, w, None)?;
    let (ho, wo) = g.output_size(h, wd, k);
    let n = ho * wo;
    let kk = ci * k * k;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[co]);
    let pointwise = k == 1 && g == Conv2dGeometry::POINTWISE;
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; kk * n] };
    let mut dcols = vec![0.0; kk * n];
    for bi in 0..bn {
        let go = grad_out.sample(bi);
        for (c, chunk) in go.chunks(n).enumerate() {
            db.data_mut()[c] += chunk.iter().sum::<f64>();
        }
        let xs = x.sample(bi);
        let rhs: &[f64] = if pointwise {
            xs
        } else {
            im2col(xs, ci, h, wd, k, g, &mut cols);
            &cols
        };
        gemm(co, kk, n, 1.0, go, false, rhs, true, 1.0, dw.data_mut());
        if pointwise {
            gemm(kk, n, co, 1.0, w.data(), true, go, false, 1.0, dx.sample_mut(bi));
        } else {
            gemm(kk, n, co, 1.0, w.data(), true, go, false, 0.0, &mut dcols);
            col2im(&dcols, ci, h, wd, k, g, dx.sample_mut(bi));
        }
    }
    Ok(Conv2dGrads { x: dx, w: dw, b: db })
}
