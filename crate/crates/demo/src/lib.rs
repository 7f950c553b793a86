//! Browser bindings: render a synthetic clip, inspect deformable sampling
//! positions, and calibrate the information bounds on correlated Gaussians.

use jmpose_core::data::heatmap::render_gaussian_heatmaps;
use jmpose_core::dataset::SyntheticDataSpec;
use jmpose_core::flow::{build_motion_volume, OracleFlow};
use jmpose_core::mi::{gaussian_calibration, CalibrationConfig};
use jmpose_core::model::ModelConfig;
use jmpose_core::ops::deform::{sampling_positions, DeformableKernelSpec};
use jmpose_core::Tensor;
use wasm_bindgen::prelude::*;

const STRIDE: usize = ModelConfig::STRIDE;

fn js(e: jmpose_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct ClipView {
    width: usize,
    height: usize,
    keyframe: usize,
    frames: Vec<Tensor>,
    heatmaps: Tensor,
    motion: Tensor,
    keypoints: Vec<f64>,
    occluded: bool,
    defocused: bool,
}

impl ClipView {
    pub fn generate(seed: u64, challenging: bool) -> jmpose_core::Result<ClipView> {
        let spec = SyntheticDataSpec {
            num_clips: 1,
            challenging_fraction: if challenging { 1.0 } else { 0.0 },
            seed,
            write_flow: false,
            ..Default::default()
        };
        let clip = spec.generate()?.remove(0);
        let (height, width) = (spec.height, spec.width);
        let key = clip.poses[clip.clip.keyframe_index].clone();
        let heatmaps = render_gaussian_heatmaps(&key, (key.num_joints(), height / STRIDE, width / STRIDE), 2.0, STRIDE as f64)?.maps;
        let motion = build_motion_volume(&clip.clip, &OracleFlow, STRIDE)?.data;
        Ok(ClipView {
            width,
            height,
            keyframe: clip.clip.keyframe_index,
            keypoints: key.to_rows().into_iter().flatten().collect(),
            occluded: clip.clip.meta.occluded,
            defocused: clip.clip.meta.defocused,
            frames: clip.clip.frames,
            heatmaps,
            motion,
        })
    }
}

#[wasm_bindgen]
impl ClipView {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, challenging: bool) -> Result<ClipView, JsError> {
        Self::generate(seed, challenging).map_err(js)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn keyframe_index(&self) -> usize {
        self.keyframe
    }

    pub fn occluded(&self) -> bool {
        self.occluded
    }

    pub fn defocused(&self) -> bool {
        self.defocused
    }

    /// `[x, y, visible]` per joint of the keyframe pose.
    pub fn keypoints(&self) -> Vec<f64> {
        self.keypoints.clone()
    }

    /// RGBA pixels of frame `i`; the ground-truth heatmaps are blended in red when `overlay` is set.
    pub fn frame_rgba(&self, i: usize, overlay: bool) -> Vec<u8> {
        let f = &self.frames[i.min(self.frames.len() - 1)];
        let (k, hh, hw) = (self.heatmaps.shape()[0], self.heatmaps.shape()[1], self.heatmaps.shape()[2]);
        let mut out = Vec::with_capacity(4 * self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let g = f.at3(0, y, x).clamp(0.0, 1.0);
                let h = if overlay {
                    let (cy, cx) = ((y / STRIDE).min(hh - 1), (x / STRIDE).min(hw - 1));
                    (0..k).map(|j| self.heatmaps.at3(j, cy, cx)).fold(0.0, f64::max)
                } else {
                    0.0
                };
                let r = g * (1.0 - h) + h;
                out.extend_from_slice(&[(255.0 * r) as u8, (255.0 * g * (1.0 - h)) as u8, (255.0 * g * (1.0 - h)) as u8, 255]);
            }
        }
        out
    }

    /// RGBA rendering of the backward (`next == false`) or forward motion field at heatmap
    /// resolution: red encodes u, green encodes v, both centered at 128.
    pub fn motion_rgba(&self, next: bool) -> Vec<u8> {
        let (_, h, w) = (self.motion.shape()[0], self.motion.shape()[1], self.motion.shape()[2]);
        let c = if next { 2 } else { 0 };
        let mut out = Vec::with_capacity(4 * h * w);
        for y in 0..h {
            for x in 0..w {
                let u = self.motion.at3(c, y, x);
                let v = self.motion.at3(c + 1, y, x);
                let enc = |d: f64| (128.0 + 100.0 * d).clamp(0.0, 255.0) as u8;
                out.extend_from_slice(&[enc(u), enc(v), 128, 255]);
            }
        }
        out
    }

    pub fn motion_width(&self) -> usize {
        self.motion.shape()[2]
    }

    pub fn motion_height(&self) -> usize {
        self.motion.shape()[1]
    }
}

/// Sampling positions `[x0, y0, x1, y1, ...]` of the nine taps at `(px, py)` on a
/// `height x width` grid when every tap is shifted by `(shift_x, shift_y)` and the
/// regular grid is spread by `dilation`.
pub fn sampling_grid(px: usize, py: usize, height: usize, width: usize, shift_x: f64, shift_y: f64, dilation: f64) -> Option<Vec<f64>> {
    if px >= width || py >= height {
        return None;
    }
    let spec = DeformableKernelSpec::new(1, 1);
    let mut offsets = Tensor::zeros(&[1, spec.offset_channels(), height, width]);
    for q in 0..spec.taps() {
        let (gx, gy) = spec.grid(q);
        *offsets.at4_mut(0, 2 * q, py, px) = gx * (dilation - 1.0) + shift_x;
        *offsets.at4_mut(0, 2 * q + 1, py, px) = gy * (dilation - 1.0) + shift_y;
    }
    Some(sampling_positions(&spec, &offsets, 0, py, px).into_iter().flat_map(|(x, y)| [x, y]).collect())
}

#[wasm_bindgen]
pub fn deform_sampling(px: usize, py: usize, height: usize, width: usize, shift_x: f64, shift_y: f64, dilation: f64) -> Result<Vec<f64>, JsError> {
    sampling_grid(px, py, height, width, shift_x, shift_y, dilation).ok_or_else(|| JsError::new("pixel outside the grid"))
}

/// `(truth, lower, upper)` for a correlated Gaussian pair after `steps` estimator updates.
pub fn calibrate(rho: f64, steps: usize) -> jmpose_core::Result<(f64, f64, f64)> {
    let cfg = CalibrationConfig { steps, batch: 128, eval_batches: 5, ..Default::default() };
    let row = gaussian_calibration(&[rho], &cfg)?.remove(0);
    Ok((row.truth, row.lower, row.upper))
}

/// JSON `{"rho", "truth", "lower", "upper"}`.
#[wasm_bindgen]
pub fn mi_calibration(rho: f64, steps: usize) -> Result<String, JsError> {
    if !(-1.0 < rho && rho < 1.0) {
        return Err(JsError::new("rho must lie in (-1, 1)"));
    }
    let (truth, lower, upper) = calibrate(rho, steps).map_err(js)?;
    Ok(serde_json::json!({"rho": rho, "truth": truth, "lower": lower, "upper": upper}).to_string())
}
