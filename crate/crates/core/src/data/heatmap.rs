use serde::{Deserialize, Serialize};

use crate::data::pose::{Keypoint, PersonPose};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default peak threshold below which a decoded joint is reported invisible.
pub const VISIBILITY_THRESHOLD: f64 = 0.1;

/// Per-joint confidence maps `[K, H, W]`; one heatmap cell spans `stride` image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapStack {
    pub maps: Tensor,
    pub stride: f64,
}

impl HeatmapStack {
    pub fn new(maps: Tensor, stride: f64) -> Result<Self> {
        if maps.shape().len() != 3 {
            return Err(Error::Shape(format!("heatmap stack must be [K, H, W], got {:?}", maps.shape())));
        }
        Ok(Self { maps, stride })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.maps.shape();
        (s[0], s[1], s[2])
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let (_, h, w) = self.dims();
        &self.maps.data()[k * h * w..(k + 1) * h * w]
    }
}

/// Unnormalized Gaussian per visible joint, peak 1 at the joint's heatmap position.
pub fn render_gaussian_heatmaps(pose: &PersonPose, shape: (usize, usize, usize), sigma: f64, stride: f64) -> Result<HeatmapStack> {
    let (k, h, w) = shape;
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if pose.num_joints() != k {
        return Err(Error::Shape(format!("pose has {} joints, heatmap expects {}", pose.num_joints(), k)));
    }
    let mut maps = Tensor::zeros(&[k, h, w]);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (j, kp) in pose.keypoints.iter().enumerate() {
        let (u0, v0) = (kp.x / stride, kp.y / stride);
        if !kp.visible || !(u0 >= 0.0 && v0 >= 0.0 && u0 < w as f64 && v0 < h as f64) {
            continue;
        }
        let plane = &mut maps.data_mut()[j * h * w..(j + 1) * h * w];
        for v in 0..h {
            let dv = v as f64 - v0;
            for u in 0..w {
                let du = u as f64 - u0;
                plane[v * w + u] = (-(du * du + dv * dv) * inv).exp();
            }
        }
    }
    HeatmapStack::new(maps, stride)
}

/// Argmax with a quarter-cell shift toward the larger axis neighbour.
pub fn decode_heatmaps(hm: &HeatmapStack) -> PersonPose {
    decode_heatmaps_with_threshold(hm, VISIBILITY_THRESHOLD)
}

/// As [`decode_heatmaps`]; a channel is visible when its peak exceeds
/// `threshold` and it is not flat.
pub fn decode_heatmaps_with_threshold(hm: &HeatmapStack, threshold: f64) -> PersonPose {
    let (k, h, w) = hm.dims();
    let keypoints = (0..k)
        .map(|j| {
            let plane = hm.channel(j);
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            let mut min = f64::INFINITY;
            for (i, &v) in plane.iter().enumerate() {
                if v > best {
                    best = v;
                    arg = i;
                }
                min = min.min(v);
            }
            let (py, px) = (arg / w, arg % w);
            let mut u = px as f64;
            let mut v = py as f64;
            if px > 0 && px + 1 < w {
                u += quarter_step(plane[py * w + px + 1] - plane[py * w + px - 1]);
            }
            if py > 0 && py + 1 < h {
                v += quarter_step(plane[(py + 1) * w + px] - plane[(py - 1) * w + px]);
            }
            let visible = best > threshold && best > min;
            Keypoint::new(u * hm.stride, v * hm.stride, visible)
        })
        .collect();
    PersonPose::new(keypoints)
}

fn quarter_step(diff: f64) -> f64 {
    if diff > 0.0 {
        0.25
    } else if diff < 0.0 {
        -0.25
    } else {
        0.0
    }
}
