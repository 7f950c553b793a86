use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint labels in dataset order (15 keypoints, PoseTrack-style).
pub const JOINT_NAMES: [&str; 15] = [
    "nose",
    "head_bottom",
    "head_top",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

pub const NUM_JOINTS: usize = JOINT_NAMES.len();

/// Left/right channel pairs swapped by a horizontal flip.
pub const FLIP_PAIRS: [(usize, usize); 6] = [(3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14)];

pub fn flip_partner(joint: usize) -> usize {
    FLIP_PAIRS
        .iter()
        .find_map(|&(a, b)| {
            if a == joint {
                Some(b)
            } else if b == joint {
                Some(a)
            } else {
                None
            }
        })
        .unwrap_or(joint)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, visible: bool) -> Self {
        Self { x, y, visible }
    }

    pub fn inside(&self, width: usize, height: usize) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x < width as f64 && self.y < height as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonPose {
    pub keypoints: Vec<Keypoint>,
}

impl PersonPose {
    pub fn new(keypoints: Vec<Keypoint>) -> Self {
        Self { keypoints }
    }

    pub fn num_joints(&self) -> usize {
        self.keypoints.len()
    }

    /// Marks joints outside a `width x height` image as invisible.
    pub fn clip_visibility(&mut self, width: usize, height: usize) {
        for kp in &mut self.keypoints {
            if !kp.inside(width, height) {
                kp.visible = false;
            }
        }
    }

    /// Tight box around the visible keypoints.
    pub fn visible_bounds(&self) -> Option<BBox> {
        let vis: Vec<&Keypoint> = self.keypoints.iter().filter(|k| k.visible).collect();
        if vis.is_empty() {
            return None;
        }
        let x0 = vis.iter().map(|k| k.x).fold(f64::INFINITY, f64::min);
        let y0 = vis.iter().map(|k| k.y).fold(f64::INFINITY, f64::min);
        let x1 = vis.iter().map(|k| k.x).fold(f64::NEG_INFINITY, f64::max);
        let y1 = vis.iter().map(|k| k.y).fold(f64::NEG_INFINITY, f64::max);
        Some(BBox { x0, y0, x1, y1 })
    }

    /// `[x, y, visible]` triples as stored in annotation files.
    pub fn to_rows(&self) -> Vec<[f64; 3]> {
        self.keypoints.iter().map(|k| [k.x, k.y, if k.visible { 1.0 } else { 0.0 }]).collect()
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Self {
        Self { keypoints: rows.iter().map(|r| Keypoint::new(r[0], r[1], r[2] > 0.5)).collect() }
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { x0: cx - w / 2.0, y0: cy - h / 2.0, x1: cx + w / 2.0, y1: cy + h / 2.0 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { x0: self.x0 * s, y0: self.y0 * s, x1: self.x1 * s, y1: self.y1 * s }
    }
}

/// Grows `bbox` about its center by `(1 + factor)` in both dimensions, then
/// clamps it to the `[0, image_w] x [0, image_h]` frame.
pub fn crop_and_enlarge(bbox: BBox, factor: f64, image_w: f64, image_h: f64) -> Result<BBox> {
    if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
        return Err(Error::InvalidArgument(format!("degenerate box {:?}", bbox)));
    }
    if factor.is_nan() || factor < 0.0 {
        return Err(Error::InvalidArgument(format!("enlarge factor {factor} must be >= 0")));
    }
    let (cx, cy) = bbox.center();
    let grown = BBox::from_center(cx, cy, bbox.width() * (1.0 + factor), bbox.height() * (1.0 + factor));
    Ok(BBox {
        x0: grown.x0.max(0.0),
        y0: grown.y0.max(0.0),
        x1: grown.x1.min(image_w),
        y1: grown.y1.min(image_h),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enlarges_by_a_quarter() {
        let b = BBox::from_center(50.0, 50.0, 40.0, 80.0);
        let e = crop_and_enlarge(b, 0.25, 1000.0, 1000.0).unwrap();
        assert_eq!(e.center(), (50.0, 50.0));
        assert_eq!((e.width(), e.height()), (50.0, 100.0));
    }

    #[test]
    fn zero_factor_is_identity() {
        let b = BBox { x0: 3.5, y0: 1.0, x1: 20.25, y1: 9.0 };
        assert_eq!(crop_and_enlarge(b, 0.0, 100.0, 100.0).unwrap(), b);
    }

    #[test]
    fn clamps_at_image_edges() {
        // box touching the left and bottom edges of a 64x48 image
        let b = BBox { x0: 0.0, y0: 30.0, x1: 20.0, y1: 48.0 };
        let e = crop_and_enlarge(b, 0.25, 64.0, 48.0).unwrap();
        // scalar re-computation per edge: half extents grow by 2.5 and 2.25
        assert_eq!(e.x0, (0.0f64 - 2.5).max(0.0));
        assert_eq!(e.x1, (20.0f64 + 2.5).min(64.0));
        assert_eq!(e.y0, (30.0f64 - 2.25).max(0.0));
        assert_eq!(e.y1, (48.0f64 + 2.25).min(48.0));
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let b = BBox { x0: 5.0, y0: 5.0, x1: 5.0, y1: 9.0 };
        assert!(crop_and_enlarge(b, 0.25, 10.0, 10.0).is_err());
    }

    #[test]
    fn flip_partners_are_involutive() {
        for j in 0..NUM_JOINTS {
            assert_eq!(flip_partner(flip_partner(j)), j);
        }
        assert_eq!(JOINT_NAMES[flip_partner(13)], "right_ankle");
    }
}
