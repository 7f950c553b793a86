//! Optical flow fields, flow providers and the keyframe motion volume.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::clip::FrameClip;
use crate::data::synthetic::exact_flow;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FLOW_MAGIC: &[u8; 4] = b"JMFL";

/// Per-pixel displacement: pixel `p` of the source frame moves to `p + (u, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, u: vec![0.0; height * width], v: vec![0.0; height * width] }
    }

    pub fn new(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::Shape(format!("flow components must hold {}x{} values", height, width)));
        }
        Ok(Self { height, width, u, v })
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn negated(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            u: self.u.iter().map(|v| -v).collect(),
            v: self.v.iter().map(|v| -v).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(&self.v).all(|&v| v == 0.0)
    }

    /// `[2, H, W]` tensor with channels `u, v`.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = self.u.clone();
        data.extend_from_slice(&self.v);
        Tensor::from_vec(&[2, self.height, self.width], data).expect("flow tensor shape")
    }

    /// Raw little-endian `f32` file: `"JMFL"`, `u16` height, `u16` width, then `u` and `v` planes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (h, w) = (u16::try_from(self.height), u16::try_from(self.width));
        let (Ok(h), Ok(w)) = (h, w) else {
            return Err(Error::InvalidArgument("flow too large for a 16-bit header".into()));
        };
        let mut out = Vec::with_capacity(8 + 8 * self.u.len());
        out.extend_from_slice(FLOW_MAGIC);
        out.extend_from_slice(&h.to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
        for v in self.u.iter().chain(&self.v) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != FLOW_MAGIC {
            return Err(Error::Dataset("flow file lacks the JMFL header".into()));
        }
        let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
        let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let n = h * w;
        if bytes.len() != 8 + 8 * n {
            return Err(Error::Dataset(format!("flow file for {h}x{w} has {} bytes", bytes.len())));
        }
        let vals: Vec<f64> =
            bytes[8..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let field = Self::new(h, w, vals[..n].to_vec(), vals[n..].to_vec())?;
        if !field.is_finite() {
            return Err(Error::Dataset("flow file holds non-finite values".into()));
        }
        Ok(field)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Estimates flow from frame `from` to frame `to` of a clip.
pub trait FlowProvider {
    fn name(&self) -> &'static str;
    fn estimate(&self, clip: &FrameClip, from: usize, to: usize) -> Result<FlowField>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowProviderKind {
    Oracle,
    BlockMatch,
    File,
}

impl std::str::FromStr for FlowProviderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "blockmatch" => Ok(Self::BlockMatch),
            "file" => Ok(Self::File),
            other => Err(Error::Config(format!("unknown flow provider {other:?}"))),
        }
    }
}

impl FlowProviderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::BlockMatch => "blockmatch",
            Self::File => "file",
        }
    }
}

/// Exact flow from the clip's generating scene.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleFlow;

impl FlowProvider for OracleFlow {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn estimate(&self, clip: &FrameClip, from: usize, to: usize) -> Result<FlowField> {
        check_indices(clip, from, to)?;
        let scene = clip
            .scene
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("oracle flow needs a synthetic clip".into()))?;
        Ok(exact_flow(scene, from, to))
    }
}

/// Coarse-to-fine block matching (sum of absolute differences).
#[derive(Clone, Copy, Debug)]
pub struct BlockMatchFlow {
    pub block_radius: usize,
    pub search_radius: usize,
    pub levels: usize,
}

impl Default for BlockMatchFlow {
    fn default() -> Self {
        Self { block_radius: 4, search_radius: 4, levels: 2 }
    }
}

struct Plane {
    h: usize,
    w: usize,
    px: Vec<f64>,
}

impl Plane {
    fn from_frame(frame: &Tensor) -> Self {
        let s = frame.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut px = vec![0.0; h * w];
        for ci in 0..c {
            for (p, v) in px.iter_mut().zip(&frame.data()[ci * h * w..(ci + 1) * h * w]) {
                *p += v / c as f64;
            }
        }
        Self { h, w, px }
    }

    fn half(&self) -> Self {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut px = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    acc += self.get(2 * y as isize + dy, 2 * x as isize + dx);
                }
                px[y * w + x] = acc / 4.0;
            }
        }
        Self { h, w, px }
    }

    fn get(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.px[y * self.w + x]
    }
}

impl BlockMatchFlow {
    pub fn estimate_frames(&self, a: &Tensor, b: &Tensor) -> Result<FlowField> {
        a.expect_same_shape(b)?;
        if a.shape().len() != 3 {
            return Err(Error::Shape(format!("frames must be [C, H, W], got {:?}", a.shape())));
        }
        let mut pyr_a = vec![Plane::from_frame(a)];
        let mut pyr_b = vec![Plane::from_frame(b)];
        for _ in 1..self.levels.max(1) {
            let (na, nb) = (pyr_a.last().unwrap().half(), pyr_b.last().unwrap().half());
            if na.h < 2 * self.block_radius || na.w < 2 * self.block_radius {
                break;
            }
            pyr_a.push(na);
            pyr_b.push(nb);
        }
        let top = pyr_a.len() - 1;
        let mut disp: Vec<(isize, isize)> = Vec::new();
        for level in (0..=top).rev() {
            let (pa, pb) = (&pyr_a[level], &pyr_b[level]);
            let mut next = vec![(0isize, 0isize); pa.h * pa.w];
            let radius = if level == top { self.search_radius as isize } else { 1 };
            for y in 0..pa.h {
                for x in 0..pa.w {
                    let guess = if level == top {
                        (0, 0)
                    } else {
                        let cw = pyr_a[level + 1].w;
                        let (gx, gy) = disp[(y / 2).min(pyr_a[level + 1].h - 1) * cw + (x / 2).min(cw - 1)];
                        (2 * gx, 2 * gy)
                    };
                    next[y * pa.w + x] = self.best_match(pa, pb, x as isize, y as isize, guess, radius);
                }
            }
            disp = next;
        }
        let (h, w) = (pyr_a[0].h, pyr_a[0].w);
        let u = disp.iter().map(|d| d.0 as f64).collect();
        let v = disp.iter().map(|d| d.1 as f64).collect();
        FlowField::new(h, w, u, v)
    }

    fn best_match(&self, a: &Plane, b: &Plane, x: isize, y: isize, guess: (isize, isize), radius: isize) -> (isize, isize) {
        let r = self.block_radius as isize;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for dy in -r..=r {
            for dx in -r..=r {
                let v = a.get(y + dy, x + dx);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if hi - lo < 1e-9 {
            return (0, 0);
        }
        let mut best = (f64::INFINITY, i64::MAX, (0, 0));
        for sy in -radius..=radius {
            for sx in -radius..=radius {
                let d = (guess.0 + sx, guess.1 + sy);
                let mut cost = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        cost += (a.get(y + dy, x + dx) - b.get(y + dy + d.1, x + dx + d.0)).abs();
                    }
                }
                let norm = (d.0 * d.0 + d.1 * d.1) as i64;
                if cost < best.0 - 1e-12 || ((cost - best.0).abs() <= 1e-12 && norm < best.1) {
                    best = (cost, norm, d);
                }
            }
        }
        best.2
    }
}

impl FlowProvider for BlockMatchFlow {
    fn name(&self) -> &'static str {
        "blockmatch"
    }

    fn estimate(&self, clip: &FrameClip, from: usize, to: usize) -> Result<FlowField> {
        check_indices(clip, from, to)?;
        self.estimate_frames(&clip.frames[from], &clip.frames[to])
    }
}

/// Externally computed flow between consecutive frames (`flows[i]`: frame `i` to `i + 1`).
/// Longer spans are chained; backward spans invert the chained forward flow by splatting.
#[derive(Clone, Debug)]
pub struct FileFlow {
    pub flows: Vec<FlowField>,
}

impl FileFlow {
    pub fn new(flows: Vec<FlowField>) -> Self {
        Self { flows }
    }

    fn chain(&self, from: usize, to: usize) -> FlowField {
        let first = &self.flows[from];
        let (h, w) = (first.height, first.width);
        let mut out = FlowField::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let (mut px, mut py) = (x as f64, y as f64);
                for f in &self.flows[from..to] {
                    let xi = px.round().clamp(0.0, (w - 1) as f64) as usize;
                    let yi = py.round().clamp(0.0, (h - 1) as f64) as usize;
                    let (du, dv) = f.at(xi, yi);
                    // a static pixel is background; what covers it later is another surface
                    if du == 0.0 && dv == 0.0 {
                        break;
                    }
                    px += du;
                    py += dv;
                }
                out.u[y * w + x] = px - x as f64;
                out.v[y * w + x] = py - y as f64;
            }
        }
        out
    }
}

impl FlowProvider for FileFlow {
    fn name(&self) -> &'static str {
        "file"
    }

    fn estimate(&self, clip: &FrameClip, from: usize, to: usize) -> Result<FlowField> {
        check_indices(clip, from, to)?;
        if self.flows.len() + 1 != clip.num_frames() {
            return Err(Error::Dataset(format!(
                "{} flow files for a {}-frame clip",
                self.flows.len(),
                clip.num_frames()
            )));
        }
        let (_, h, w) = clip.frame_dims();
        if self.flows.iter().any(|f| f.height != h || f.width != w) {
            return Err(Error::Shape("flow files do not match the frame size".into()));
        }
        if from == to {
            return Ok(FlowField::zeros(h, w));
        }
        if from < to {
            return Ok(self.chain(from, to));
        }
        let forward = self.chain(to, from);
        let mut out = FlowField::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let (du, dv) = forward.at(x, y);
                if du == 0.0 && dv == 0.0 {
                    continue;
                }
                let (tx, ty) = ((x as f64 + du).round(), (y as f64 + dv).round());
                if tx >= 0.0 && ty >= 0.0 && (tx as usize) < w && (ty as usize) < h {
                    let i = ty as usize * w + tx as usize;
                    out.u[i] = -du;
                    out.v[i] = -dv;
                }
            }
        }
        Ok(out)
    }
}

fn check_indices(clip: &FrameClip, from: usize, to: usize) -> Result<()> {
    let n = clip.num_frames();
    if from >= n || to >= n {
        return Err(Error::InvalidArgument(format!("frame pair ({from}, {to}) outside a {n}-frame clip")));
    }
    Ok(())
}

/// Channels `[u_prev, v_prev, u_next, v_next]` at heatmap resolution, in heatmap cells.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionVolume {
    pub data: Tensor,
}

impl MotionVolume {
    pub fn from_flows(prev: &FlowField, next: &FlowField, stride: usize) -> Result<Self> {
        if (prev.height, prev.width) != (next.height, next.width) {
            return Err(Error::Shape("motion volume flows differ in size".into()));
        }
        let p = downsample_flow(prev, stride)?;
        let n = downsample_flow(next, stride)?;
        let (h, w) = (p.shape()[1], p.shape()[2]);
        let mut data = p.into_data();
        data.extend_from_slice(n.data());
        let data = Tensor::from_vec(&[4, h, w], data)?;
        Ok(Self { data })
    }

    pub fn dims(&self) -> (usize, usize) {
        let s = self.data.shape();
        (s[1], s[2])
    }
}

/// Cell value = mean of the non-zero displacement vectors inside the cell, divided by `stride`.
/// Static pixels (background) do not dilute the motion of the pixels that move.
pub fn downsample_flow(flow: &FlowField, stride: usize) -> Result<Tensor> {
    if stride == 0 || flow.height % stride != 0 || flow.width % stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "flow {}x{} is not divisible by stride {stride}",
            flow.height, flow.width
        )));
    }
    let (h, w) = (flow.height / stride, flow.width / stride);
    let mut out = Tensor::zeros(&[2, h, w]);
    let s = stride as f64;
    for cy in 0..h {
        for cx in 0..w {
            let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
            for y in cy * stride..(cy + 1) * stride {
                for x in cx * stride..(cx + 1) * stride {
                    let (u, v) = flow.at(x, y);
                    if u != 0.0 || v != 0.0 {
                        su += u;
                        sv += v;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                let d = out.data_mut();
                d[cy * w + cx] = su / n as f64 / s;
                d[h * w + cy * w + cx] = sv / n as f64 / s;
            }
        }
    }
    Ok(out)
}

/// Motion volume of the clip's keyframe: both flows are expressed on the keyframe grid,
/// the first as the motion that brought each keyframe pixel from frame `t - delta`.
pub fn build_motion_volume(clip: &FrameClip, provider: &dyn FlowProvider, stride: usize) -> Result<MotionVolume> {
    if clip.num_frames() < 3 {
        return Err(Error::InvalidArgument("motion volume needs at least 3 frames".into()));
    }
    let t = clip.keyframe_index;
    let prev = provider.estimate(clip, t, t - clip.delta)?.negated();
    let next = provider.estimate(clip, t, t + clip.delta)?;
    if !prev.is_finite() || !next.is_finite() {
        return Err(Error::Numerical(format!("{} flow is not finite", provider.name())));
    }
    MotionVolume::from_flows(&prev, &next, stride)
}
