//! Clip-level geometric augmentation. One transform is shared by every frame,
//! the poses and (optionally) the motion volume.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::clip::FrameClip;
use crate::data::image::{sample_bilinear, warp_affine, Affine2};
use crate::data::pose::{flip_partner, BBox, Keypoint, PersonPose};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub flip: bool,
    /// Region kept after the geometric transform; pixels and joints outside it are dropped.
    pub truncation: Option<BBox>,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { rotation_deg: 0.0, scale: 1.0, flip: false, truncation: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_prob: f64,
    pub truncation_prob: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self { max_rotation_deg: 45.0, scale_min: 0.65, scale_max: 1.35, flip_prob: 0.5, truncation_prob: 0.0 }
    }
}

impl AugmentRanges {
    pub fn none() -> Self {
        Self { max_rotation_deg: 0.0, scale_min: 1.0, scale_max: 1.0, flip_prob: 0.0, truncation_prob: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.max_rotation_deg >= 0.0
            && self.scale_min > 0.0
            && self.scale_min <= self.scale_max
            && (0.0..=1.0).contains(&self.flip_prob)
            && (0.0..=1.0).contains(&self.truncation_prob);
        if !ok {
            return Err(Error::Config(format!("invalid augmentation ranges {self:?}")));
        }
        Ok(())
    }

    /// Draws one parameter set; truncation keeps a random 70-100% window of a `width x height` frame.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, height: usize, width: usize) -> AugmentParams {
        let rotation_deg = if self.max_rotation_deg > 0.0 {
            rng.random_range(-self.max_rotation_deg..=self.max_rotation_deg)
        } else {
            0.0
        };
        let scale = if self.scale_max > self.scale_min { rng.random_range(self.scale_min..=self.scale_max) } else { self.scale_min };
        let flip = rng.random_bool(self.flip_prob);
        let truncation = if rng.random_bool(self.truncation_prob) {
            let (w, h) = (width as f64, height as f64);
            let (kw, kh) = (w * rng.random_range(0.7..=1.0), h * rng.random_range(0.7..=1.0));
            let (x0, y0) = (rng.random_range(0.0..=w - kw), rng.random_range(0.0..=h - kh));
            Some(BBox { x0, y0, x1: x0 + kw, y1: y0 + kh })
        } else {
            None
        };
        AugmentParams { rotation_deg, scale, flip, truncation }
    }
}

impl AugmentParams {
    pub fn is_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.scale == 1.0 && !self.flip && self.truncation.is_none()
    }

    /// Image-space transform about the frame center.
    pub fn transform(&self, height: usize, width: usize) -> Affine2 {
        let center = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        Affine2::about_center(center, self.rotation_deg, self.scale, self.flip.then_some(width))
    }
}

pub fn augment_pose(pose: &PersonPose, params: &AugmentParams, height: usize, width: usize) -> PersonPose {
    let t = params.transform(height, width);
    let mut out = vec![Keypoint::new(0.0, 0.0, false); pose.num_joints()];
    for (j, kp) in pose.keypoints.iter().enumerate() {
        let (x, y) = t.apply(kp.x, kp.y);
        let slot = if params.flip { flip_partner(j) } else { j };
        let kept = params.truncation.is_none_or(|b| b.contains(x, y));
        out[slot] = Keypoint::new(x, y, kp.visible && kept);
    }
    let mut pose = PersonPose::new(out);
    pose.clip_visibility(width, height);
    pose
}

fn truncate_frame(frame: &mut Tensor, keep: &BBox) {
    let s = frame.shape().to_vec();
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = frame.data_mut();
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                if !keep.contains(x as f64, y as f64) {
                    d[(ci * h + y) * w + x] = 0.0;
                }
            }
        }
    }
}

/// Applies the same transform to every frame and pose. The result no longer
/// carries its generating scene, so flow must come from a transformed volume.
pub fn augment(clip: &FrameClip, poses: &[PersonPose], params: &AugmentParams) -> Result<(FrameClip, Vec<PersonPose>)> {
    if poses.len() != clip.num_frames() {
        return Err(Error::InvalidArgument(format!("{} poses for {} frames", poses.len(), clip.num_frames())));
    }
    if params.is_identity() {
        return Ok((clip.clone(), poses.to_vec()));
    }
    if !(params.scale > 0.0) {
        return Err(Error::InvalidArgument(format!("augmentation scale {} must be positive", params.scale)));
    }
    let (_, h, w) = clip.frame_dims();
    let t = params.transform(h, w);
    let frames = clip
        .frames
        .iter()
        .map(|f| {
            let mut out = warp_affine(f, &t);
            if let Some(keep) = &params.truncation {
                truncate_frame(&mut out, keep);
            }
            out
        })
        .collect();
    let new_poses: Vec<PersonPose> = poses.iter().map(|p| augment_pose(p, params, h, w)).collect();
    let person_box = new_poses[clip.keyframe_index].visible_bounds().unwrap_or_else(|| {
        let corners = [(clip.person_box.x0, clip.person_box.y0), (clip.person_box.x1, clip.person_box.y1)];
        let [(ax, ay), (bx, by)] = corners.map(|(x, y)| t.apply(x, y));
        BBox { x0: ax.min(bx), y0: ay.min(by), x1: ax.max(bx), y1: ay.max(by) }
    });
    let out = FrameClip::new(frames, clip.delta, person_box, clip.meta, None)?;
    Ok((out, new_poses))
}

/// Transforms a `[4, h, w]` motion volume (in heatmap cells) for a clip of
/// `height x width` pixels seen through `params`: positions are resampled and
/// displacement vectors are rotated/scaled/mirrored with the image.
pub fn augment_motion_volume(volume: &Tensor, params: &AugmentParams, height: usize, width: usize, stride: usize) -> Result<Tensor> {
    let s = volume.shape();
    if s.len() != 3 || s[0] % 2 != 0 {
        return Err(Error::Shape(format!("motion volume must be [2n, h, w], got {:?}", s)));
    }
    if params.is_identity() {
        return Ok(volume.clone());
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let st = stride as f64;
    let img = params.transform(height, width);
    let cell = Affine2 { a: img.a, t: [img.t[0] / st, img.t[1] / st] };
    let inv = cell.inverse();
    let mut out = Tensor::zeros(s);
    for pair in 0..c / 2 {
        let pu = &volume.data()[(2 * pair) * h * w..(2 * pair + 1) * h * w];
        let pv = &volume.data()[(2 * pair + 1) * h * w..(2 * pair + 2) * h * w];
        let mut nu = vec![0.0; h * w];
        let mut nv = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = inv.apply(x as f64, y as f64);
                let (du, dv) = (sample_bilinear(pu, h, w, sx, sy), sample_bilinear(pv, h, w, sx, sy));
                let (ru, rv) = cell.apply_vector(du, dv);
                nu[y * w + x] = ru;
                nv[y * w + x] = rv;
            }
        }
        let d = out.data_mut();
        d[(2 * pair) * h * w..(2 * pair + 1) * h * w].copy_from_slice(&nu);
        d[(2 * pair + 1) * h * w..(2 * pair + 2) * h * w].copy_from_slice(&nv);
    }
    if let Some(keep) = &params.truncation {
        let k = keep.scaled(1.0 / st);
        let d = out.data_mut();
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if !k.contains(x as f64, y as f64) {
                        d[(ci * h + y) * w + x] = 0.0;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pose::NUM_JOINTS;

    fn pose_at(x: f64, y: f64) -> PersonPose {
        PersonPose::new(vec![Keypoint::new(x, y, true); NUM_JOINTS])
    }

    #[test]
    fn identity_params_change_nothing() {
        let p = pose_at(10.0, 20.0);
        assert_eq!(augment_pose(&p, &AugmentParams::default(), 96, 72), p);
    }

    #[test]
    fn flip_mirrors_and_swaps_channels() {
        let mut p = pose_at(30.0, 40.0);
        p.keypoints[13] = Keypoint::new(50.0, 80.0, true);
        let q = augment_pose(&p, &AugmentParams { flip: true, ..Default::default() }, 96, 72);
        assert_eq!(q.keypoints[14].x, 72.0 - 1.0 - 50.0);
        assert_eq!(q.keypoints[14].y, 80.0);
    }

    #[test]
    fn quarter_turn_rotates_offsets() {
        let (cx, cy) = (35.5, 47.5);
        let p = pose_at(cx + 10.0, cy);
        let q = augment_pose(&p, &AugmentParams { rotation_deg: 90.0, ..Default::default() }, 96, 72);
        assert!((q.keypoints[0].x - cx).abs() < 1e-4);
        assert!((q.keypoints[0].y - (cy + 10.0)).abs() < 1e-4);
    }

    #[test]
    fn truncation_hides_joints_outside() {
        let p = pose_at(5.0, 5.0);
        let params = AugmentParams { truncation: Some(BBox { x0: 10.0, y0: 0.0, x1: 72.0, y1: 96.0 }), ..Default::default() };
        assert!(augment_pose(&p, &params, 96, 72).keypoints.iter().all(|k| !k.visible));
    }

    #[test]
    fn flipped_volume_negates_horizontal_motion() {
        let mut v = Tensor::zeros(&[4, 4, 4]);
        v.data_mut()[..16].fill(0.5);
        let out = augment_motion_volume(&v, &AugmentParams { flip: true, ..Default::default() }, 16, 16, 4).unwrap();
        // interior cell stays inside after mirroring
        assert!((out.at3(0, 1, 1) + 0.5).abs() < 1e-12);
    }
}
