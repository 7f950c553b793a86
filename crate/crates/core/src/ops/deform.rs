//! Modulated deformable convolution.
//!
//! For every output location `p` and kernel tap `q` the input is sampled
//! bilinearly at `p + grid(q) + offset_q(p)`, scaled by the modulation
//! `mask_q(p)`, and contracted with the kernel weight of tap `q`. Offsets are
//! shared across input channels (a single deformable group).
//!
//! Layouts, for a `k x k` kernel with `K = k * k` taps in row-major tap order
//! (`q = ky * k + kx`):
//!
//! * input `[B, Ci, H, W]`
//! * offsets `[B, 2K, H, W]`: channel `2q` is the x displacement of tap `q`,
//!   channel `2q + 1` its y displacement, both in input pixels
//! * modulation `[B, K, H, W]`
//! * weight `[Co, Ci, k, k]`, bias `[Co]`
//!
//! Stride is 1 and the grid is padded so the output keeps the input's spatial
//! size. Samples falling outside the input read as zero.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeformableKernelSpec {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub dilation: usize,
}

impl DeformableKernelSpec {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self { kernel_size: 3, in_channels, out_channels, dilation: 1 }
    }

    pub fn taps(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    pub fn offset_channels(&self) -> usize {
        2 * self.taps()
    }

    pub fn weight_channels(&self) -> usize {
        self.taps()
    }

    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel_size - 1) / 2
    }

    /// Regular-grid displacement of tap `q` relative to the output location, as `(dx, dy)`.
    pub fn grid(&self, q: usize) -> (f64, f64) {
        let k = self.kernel_size;
        let pad = self.padding() as f64;
        let d = self.dilation as f64;
        ((q % k) as f64 * d - pad, (q / k) as f64 * d - pad)
    }

    pub fn validate(&self, m: &Tensor, offsets: &Tensor, mask: &Tensor, w: &Tensor) -> Result<()> {
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return shape_err(format!("deformable kernel size must be odd, got {}", self.kernel_size));
        }
        let (b, c, h, wd) = m.dims4()?;
        if c != self.in_channels {
            return shape_err(format!("input has {} channels, kernel expects {}", c, self.in_channels));
        }
        if offsets.shape() != [b, self.offset_channels(), h, wd] {
            return shape_err(format!(
                "offsets {:?}, expected {:?}",
                offsets.shape(),
                [b, self.offset_channels(), h, wd]
            ));
        }
        if mask.shape() != [b, self.weight_channels(), h, wd] {
            return shape_err(format!(
                "modulation {:?}, expected {:?}",
                mask.shape(),
                [b, self.weight_channels(), h, wd]
            ));
        }
        let k = self.kernel_size;
        if w.shape() != [self.out_channels, self.in_channels, k, k] {
            return shape_err(format!("deformable weight {:?}", w.shape()));
        }
        Ok(())
    }
}

/// Corner weights of a bilinear sample; out-of-range corners carry index `None`.
#[derive(Clone, Copy, Default)]
struct Sample {
    idx: [Option<usize>; 4],
    wt: [f64; 4],
    // d(weight)/dx and d(weight)/dy for each corner
    dwx: [f64; 4],
    dwy: [f64; 4],
}

fn sample_at(h: usize, w: usize, y: f64, x: f64) -> Sample {
    let mut s = Sample::default();
    if y <= -1.0 || y >= h as f64 || x <= -1.0 || x >= w as f64 {
        return s;
    }
    let y0 = y.floor();
    let x0 = x.floor();
    let ly = y - y0;
    let lx = x - x0;
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    let corners = [(y0, x0), (y0, x0 + 1.0), (y0 + 1.0, x0), (y0 + 1.0, x0 + 1.0)];
    s.wt = [hy * hx, hy * lx, ly * hx, ly * lx];
    s.dwx = [-hy, hy, -ly, ly];
    s.dwy = [-hx, -lx, hx, lx];
    for (i, &(cy, cx)) in corners.iter().enumerate() {
        if cy >= 0.0 && cx >= 0.0 && cy < h as f64 && cx < w as f64 {
            s.idx[i] = Some(cy as usize * w + cx as usize);
        }
    }
    s
}

impl Sample {
    #[inline]
    fn value(&self, plane: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..4 {
            if let Some(j) = self.idx[i] {
                v += self.wt[i] * plane[j];
            }
        }
        v
    }

    #[inline]
    fn grad_xy(&self, plane: &[f64]) -> (f64, f64) {
        let (mut gx, mut gy) = (0.0, 0.0);
        for i in 0..4 {
            if let Some(j) = self.idx[i] {
                gx += self.dwx[i] * plane[j];
                gy += self.dwy[i] * plane[j];
            }
        }
        (gx, gy)
    }
}

fn sampling_grid(spec: &DeformableKernelSpec, offsets: &[f64], h: usize, w: usize) -> Vec<Sample> {
    let taps = spec.taps();
    let n = h * w;
    let mut grid = Vec::with_capacity(taps * n);
    for q in 0..taps {
        let (gx, gy) = spec.grid(q);
        let ox = &offsets[2 * q * n..(2 * q + 1) * n];
        let oy = &offsets[(2 * q + 1) * n..(2 * q + 2) * n];
        for py in 0..h {
            for px in 0..w {
                let p = py * w + px;
                grid.push(sample_at(h, w, py as f64 + gy + oy[p], px as f64 + gx + ox[p]));
            }
        }
    }
    grid
}

/// Absolute sampling positions `(x, y)` for every tap at output location `(py, px)`.
pub fn sampling_positions(spec: &DeformableKernelSpec, offsets: &Tensor, b: usize, py: usize, px: usize) -> Vec<(f64, f64)> {
    (0..spec.taps())
        .map(|q| {
            let (gx, gy) = spec.grid(q);
            let dx = offsets.at4(b, 2 * q, py, px);
            let dy = offsets.at4(b, 2 * q + 1, py, px);
            (px as f64 + gx + dx, py as f64 + gy + dy)
        })
        .collect()
}

fn fill_columns(m: &[f64], mask: &[f64], grid: &[Sample], ci: usize, taps: usize, n: usize, cols: &mut [f64]) {
    for c in 0..ci {
        let plane = &m[c * n..(c + 1) * n];
        for q in 0..taps {
            let row = &mut cols[(c * taps + q) * n..(c * taps + q + 1) * n];
            let gq = &grid[q * n..(q + 1) * n];
            let mq = &mask[q * n..(q + 1) * n];
            for p in 0..n {
                row[p] = mq[p] * gq[p].value(plane);
            }
        }
    }
}

pub fn deform_conv_forward(
    spec: &DeformableKernelSpec,
    m: &Tensor,
    offsets: &Tensor,
    mask: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
) -> Result<Tensor> {
    spec.validate(m, offsets, mask, w)?;
    let (bn, ci, h, wd) = m.dims4()?;
    let co = spec.out_channels;
    let taps = spec.taps();
    let n = h * wd;
    let kk = ci * taps;
    let mut out = Tensor::zeros(&[bn, co, h, wd]);
    let mut cols = vec![0.0; kk * n];
    for bi in 0..bn {
        let grid = sampling_grid(spec, offsets.sample(bi), h, wd);
        fill_columns(m.sample(bi), mask.sample(bi), &grid, ci, taps, n, &mut cols);
        let os = out.sample_mut(bi);
        if let Some(b) = b {
            for (c, chunk) in os.chunks_mut(n).enumerate() {
                chunk.fill(b.data()[c]);
            }
        }
        gemm(co, n, kk, 1.0, w.data(), false, &cols, false, if b.is_some() { 1.0 } else { 0.0 }, os);
    }
    Ok(out)
}

pub struct DeformConvGrads {
    pub input: Tensor,
    pub offsets: Tensor,
    pub mask: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn deform_conv_backward(
    spec: &DeformableKernelSpec,
    m: &Tensor,
    offsets: &Tensor,
    mask: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
) -> Result<DeformConvGrads> {
    spec.validate(m, offsets, mask, w)?;
    let (bn, ci, h, wd) = m.dims4()?;
    let co = spec.out_channels;
    let taps = spec.taps();
    let n = h * wd;
    let kk = ci * taps;
    let mut g = DeformConvGrads {
        input: Tensor::zeros(m.shape()),
        offsets: Tensor::zeros(offsets.shape()),
        mask: Tensor::zeros(mask.shape()),
        weight: Tensor::zeros(w.shape()),
        bias: Tensor::zeros(&[co]),
    };
    let mut cols = vec![0.0; kk * n];
    let mut dcols = vec![0.0; kk * n];
    for bi in 0..bn {
        let go = grad_out.sample(bi);
        for (c, chunk) in go.chunks(n).enumerate() {
            g.bias.data_mut()[c] += chunk.iter().sum::<f64>();
        }
        let ms = m.sample(bi);
        let masks = mask.sample(bi);
        let grid = sampling_grid(spec, offsets.sample(bi), h, wd);
        fill_columns(ms, masks, &grid, ci, taps, n, &mut cols);
        gemm(co, kk, n, 1.0, go, false, &cols, true, 1.0, g.weight.data_mut());
        gemm(kk, n, co, 1.0, w.data(), true, go, false, 0.0, &mut dcols);

        let dm = g.input.sample_mut(bi);
        let mut doff = vec![0.0; 2 * taps * n];
        let mut dmask = vec![0.0; taps * n];
        for c in 0..ci {
            let plane = &ms[c * n..(c + 1) * n];
            for q in 0..taps {
                let row = &dcols[(c * taps + q) * n..(c * taps + q + 1) * n];
                for p in 0..n {
                    let gcol = row[p];
                    if gcol == 0.0 {
                        continue;
                    }
                    let s = &grid[q * n + p];
                    let mq = masks[q * n + p];
                    dmask[q * n + p] += gcol * s.value(plane);
                    let gm = gcol * mq;
                    for i in 0..4 {
                        if let Some(j) = s.idx[i] {
                            dm[c * n + j] += gm * s.wt[i];
                        }
                    }
                    let (gx, gy) = s.grad_xy(plane);
                    doff[2 * q * n + p] += gm * gx;
                    doff[(2 * q + 1) * n + p] += gm * gy;
                }
            }
        }
        g.offsets.sample_mut(bi).copy_from_slice(&doff);
        g.mask.sample_mut(bi).copy_from_slice(&dmask);
    }
    Ok(g)
}
