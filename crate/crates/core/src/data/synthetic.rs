//! Synthetic articulated stick-figure clips with exact poses and flow.
//!
//! A figure is a kinematic tree rooted at the neck. Each bone carries an
//! angle relative to its parent bone that evolves linearly in time, and the
//! root translates at constant velocity. Limbs are rasterized with 4x4
//! supersampling. Flow is analytic: a figure pixel is attached to the limb
//! that covers it, expressed in that limb's frame (position along the bone,
//! signed distance from its axis) and carried to the same limb coordinates
//! in the target frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::clip::{FrameClip, SceneMeta};
use crate::data::image::gaussian_blur;
use crate::data::pose::{BBox, Keypoint, PersonPose, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::tensor::Tensor;

const SUPERSAMPLE: usize = 4;

/// One bone: `parent -> child` joint indices, length in pixels, rest angle
/// relative to the parent bone (the root bones are relative to the body axis).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
    pub length: f64,
    pub rest_angle: f64,
    /// Index of the bone whose direction this one is relative to, `None` for the body axis.
    pub parent_bone: Option<usize>,
}

/// A drawn stroke between two joints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limb {
    pub a: usize,
    pub b: usize,
    pub width: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub bones: Vec<Bone>,
    pub limbs: Vec<Limb>,
    pub root_joint: usize,
}

impl FigureSpec {
    /// Upright 15-joint figure about 70 px tall at `scale = 1`, facing the camera
    /// (the figure's left side is on the image's right).
    pub fn standard(scale: f64) -> Self {
        use std::f64::consts::FRAC_PI_2;
        let b = |parent, child, length: f64, rest_angle, parent_bone| Bone {
            parent,
            child,
            length: length * scale,
            rest_angle,
            parent_bone,
        };
        // joint ids follow `pose::JOINT_NAMES`
        let bones = vec![
            b(1, 2, 12.0, std::f64::consts::PI, None), // 0 neck -> head top
            b(1, 0, 7.0, std::f64::consts::PI + 0.45, None), // 1 neck -> nose
            b(1, 3, 9.0, -FRAC_PI_2, None),            // 2 left shoulder
            b(1, 4, 9.0, FRAC_PI_2, None),             // 3 right shoulder
            b(3, 5, 12.0, FRAC_PI_2, Some(2)),         // 4 left elbow
            b(4, 6, 12.0, -FRAC_PI_2, Some(3)),        // 5 right elbow
            b(5, 7, 11.0, 0.0, Some(4)),               // 6 left wrist
            b(6, 8, 11.0, 0.0, Some(5)),               // 7 right wrist
            b(1, 9, 26.0, -0.22, None),                // 8 left hip
            b(1, 10, 26.0, 0.22, None),                // 9 right hip
            b(9, 11, 17.0, 0.22, Some(8)),             // 10 left knee
            b(10, 12, 17.0, -0.22, Some(9)),           // 11 right knee
            b(11, 13, 16.0, 0.0, Some(10)),            // 12 left ankle
            b(12, 14, 16.0, 0.0, Some(11)),            // 13 right ankle
        ];
        let w = 2.0 * scale.max(0.75);
        let l = |a, b, width, intensity| Limb { a, b, width, intensity };
        let limbs = vec![
            l(1, 2, 2.0 * w, 0.75),
            l(1, 0, w, 0.85),
            l(1, 9, w, 0.7),
            l(1, 10, w, 0.7),
            l(9, 10, w, 0.7),
            l(1, 3, w, 0.95),
            l(3, 5, w, 0.95),
            l(5, 7, w, 0.95),
            l(9, 11, w, 0.95),
            l(11, 13, w, 0.95),
            l(1, 4, w, 0.5),
            l(4, 6, w, 0.5),
            l(6, 8, w, 0.5),
            l(10, 12, w, 0.5),
            l(12, 14, w, 0.5),
        ];
        Self { bones, limbs, root_joint: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Root position at frame 0.
    pub root_start: (f64, f64),
    /// Root displacement per frame.
    pub root_velocity: (f64, f64),
    /// Body-axis tilt at frame 0 (radians) and its rate.
    pub tilt: f64,
    pub tilt_rate: f64,
    /// Per-bone angle offsets at frame 0 and angular velocities (radians/frame).
    pub bone_offsets: Vec<f64>,
    pub angular_velocity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub rect: BBox,
    pub velocity: (f64, f64),
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub figure: FigureSpec,
    pub trajectory: Trajectory,
    pub delta: usize,
    pub height: usize,
    pub width: usize,
    pub background: f64,
    pub blur_sigma: f64,
    pub occluder: Option<Occluder>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSceneSpec {
    /// Static centered figure: no motion, no blur, no noise.
    pub fn still(height: usize, width: usize, delta: usize) -> Self {
        let figure = FigureSpec::standard(1.0);
        let n = figure.bones.len();
        Self {
            figure,
            trajectory: Trajectory {
                root_start: (width as f64 / 2.0, height as f64 / 2.0 - 22.0),
                root_velocity: (0.0, 0.0),
                tilt: 0.0,
                tilt_rate: 0.0,
                bone_offsets: vec![0.0; n],
                angular_velocity: vec![0.0; n],
            },
            delta,
            height,
            width,
            background: 0.1,
            blur_sigma: 0.0,
            occluder: None,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    /// Pure root translation by `velocity` px/frame, keyframe centered.
    pub fn translating(height: usize, width: usize, delta: usize, velocity: (f64, f64)) -> Self {
        let mut s = Self::still(height, width, delta);
        let (cx, cy) = s.trajectory.root_start;
        s.trajectory.root_start = (cx - velocity.0 * delta as f64, cy - velocity.1 * delta as f64);
        s.trajectory.root_velocity = velocity;
        s
    }

    pub fn num_frames(&self) -> usize {
        2 * self.delta + 1
    }

    /// Draws a random scene. `challenging` adds an occluder and/or defocus.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, delta: usize, challenging: bool) -> Self {
        let scale = rng.random_range(0.8..1.0);
        let figure = FigureSpec::standard(scale);
        let n = figure.bones.len();
        let frames = (2 * delta) as f64;
        // at least 1 px/frame so every clip carries a motion signal
        let velocity = loop {
            let v: (f64, f64) = (rng.random_range(-2.5..2.5), rng.random_range(-1.5..1.5));
            if v.0.hypot(v.1) >= 1.0 {
                break v;
            }
        };
        let center = (
            width as f64 / 2.0 + rng.random_range(-6.0..6.0),
            height as f64 / 2.0 - 24.0 * scale + rng.random_range(-5.0..5.0),
        );
        let root_start = (center.0 - velocity.0 * frames / 2.0, center.1 - velocity.1 * frames / 2.0);
        let mut bone_offsets = vec![0.0; n];
        let mut angular_velocity = vec![0.0; n];
        for (i, bone) in figure.bones.iter().enumerate() {
            let limb_like = bone.parent_bone.is_some() || matches!(i, 2 | 3);
            let (amp, rate) = if limb_like { (0.6, 0.12) } else { (0.08, 0.03) };
            bone_offsets[i] = rng.random_range(-amp..amp);
            angular_velocity[i] = rng.random_range(-rate..rate);
        }
        let (mut blur_sigma, mut occluder) = (0.0, None);
        if challenging {
            let mode = rng.random_range(0..3);
            if mode != 1 {
                blur_sigma = rng.random_range(1.5..2.5);
            }
            if mode != 0 {
                let w = rng.random_range(22.0..34.0) * scale;
                let h = rng.random_range(22.0..34.0) * scale;
                let cx = center.0 + rng.random_range(-12.0..12.0);
                let cy = center.1 + rng.random_range(16.0..44.0) * scale;
                occluder = Some(Occluder {
                    rect: BBox::from_center(cx, cy, w, h),
                    velocity: (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)),
                    intensity: rng.random_range(0.3..0.6),
                });
            }
        }
        Self {
            figure,
            trajectory: Trajectory {
                root_start,
                root_velocity: velocity,
                tilt: rng.random_range(-0.15..0.15),
                tilt_rate: rng.random_range(-0.02..0.02),
                bone_offsets,
                angular_velocity,
            },
            delta,
            height,
            width,
            background: rng.random_range(0.05..0.2),
            blur_sigma,
            occluder,
            noise_sigma: if challenging { 0.05 } else { 0.02 },
            seed: rng.random(),
        }
    }

    /// Joint positions at (possibly fractional) time `t`.
    pub fn joints_at(&self, t: f64) -> Vec<(f64, f64)> {
        let (root, rel) = self.articulation_at(t);
        rel.into_iter().map(|(x, y)| (root.0 + x, root.1 + y)).collect()
    }

    /// Root position and joint offsets from the root at time `t`.
    pub fn articulation_at(&self, t: f64) -> ((f64, f64), Vec<(f64, f64)>) {
        let tr = &self.trajectory;
        let mut rel = vec![(f64::NAN, f64::NAN); NUM_JOINTS];
        rel[self.figure.root_joint] = (0.0, 0.0);
        let axis = std::f64::consts::FRAC_PI_2 + tr.tilt + tr.tilt_rate * t;
        let mut angles = vec![0.0; self.figure.bones.len()];
        for (i, bone) in self.figure.bones.iter().enumerate() {
            let base = match bone.parent_bone {
                Some(p) => angles[p],
                None => axis,
            };
            let offset = tr.bone_offsets.get(i).copied().unwrap_or(0.0);
            let rate = tr.angular_velocity.get(i).copied().unwrap_or(0.0);
            angles[i] = base + bone.rest_angle + offset + rate * t;
            let (px, py) = rel[bone.parent];
            rel[bone.child] = (px + bone.length * angles[i].cos(), py + bone.length * angles[i].sin());
        }
        let root = (tr.root_start.0 + tr.root_velocity.0 * t, tr.root_start.1 + tr.root_velocity.1 * t);
        (root, rel)
    }

    pub fn pose_at(&self, frame: usize) -> PersonPose {
        let mut pose = PersonPose::new(
            self.joints_at(frame as f64).into_iter().map(|(x, y)| Keypoint::new(x, y, true)).collect(),
        );
        pose.clip_visibility(self.width, self.height);
        pose
    }

    pub fn occluder_at(&self, frame: usize) -> Option<BBox> {
        self.occluder.as_ref().map(|o| {
            let (dx, dy) = (o.velocity.0 * frame as f64, o.velocity.1 * frame as f64);
            BBox { x0: o.rect.x0 + dx, y0: o.rect.y0 + dy, x1: o.rect.x1 + dx, y1: o.rect.y1 + dy }
        })
    }
}

/// Per-pixel raster of one frame before blur and noise.
pub struct FigureRaster {
    pub intensity: Vec<f64>,
    /// Fraction of subsamples covered by any limb.
    pub coverage: Vec<f64>,
    /// Topmost limb owning each pixel (the one covering its center, else the nearest), `None` off-figure.
    pub owner: Vec<Option<usize>>,
}

fn segment_coords(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 { ((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2 } else { 0.0 };
    let sc = s.clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + sc * dx, a.1 + sc * dy);
    let dist = (p.0 - cx).hypot(p.1 - cy);
    let len = len2.sqrt();
    let perp = if len > 0.0 { ((p.0 - a.0) * -dy + (p.1 - a.1) * dx) / len } else { 0.0 };
    (s, perp, dist)
}

pub fn rasterize_figure(spec: &SyntheticSceneSpec, joints: &[(f64, f64)]) -> FigureRaster {
    let (h, w) = (spec.height, spec.width);
    let n = h * w;
    let mut r = FigureRaster { intensity: vec![spec.background; n], coverage: vec![0.0; n], owner: vec![None; n] };
    let sub = SUPERSAMPLE as f64;
    let mut hits = vec![0u16; n];
    let mut sums = vec![0.0; n];
    for (li, limb) in spec.figure.limbs.iter().enumerate() {
        let (a, b) = (joints[limb.a], joints[limb.b]);
        let half = limb.width / 2.0;
        let x0 = (a.0.min(b.0) - half - 1.0).floor().max(0.0) as usize;
        let y0 = (a.1.min(b.1) - half - 1.0).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + half + 1.0).ceil().max(0.0) as usize).min(w);
        let y1 = ((a.1.max(b.1) + half + 1.0).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * w + x;
                let mut covered = 0u16;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let p = (x as f64 + (sx as f64 + 0.5) / sub - 0.5, y as f64 + (sy as f64 + 0.5) / sub - 0.5);
                        if segment_coords(p, a, b).2 <= half {
                            covered += 1;
                        }
                    }
                }
                if covered == 0 {
                    continue;
                }
                // later limbs paint over earlier ones
                let frac = covered as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                sums[i] = sums[i] * (1.0 - frac) + limb.intensity * frac;
                hits[i] = hits[i].max(covered);
                let center_in = segment_coords((x as f64, y as f64), a, b).2 <= half;
                let replace = match r.owner[i] {
                    None => true,
                    Some(_) => center_in,
                };
                if replace {
                    r.owner[i] = Some(li);
                }
            }
        }
    }
    for i in 0..n {
        if hits[i] > 0 {
            // union coverage approximated by the strongest single limb; composite over background
            let cov = (hits[i] as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64).min(1.0);
            r.coverage[i] = cov;
            let painted = sums[i];
            let limb_weight: f64 = if cov > 0.0 { painted / cov } else { 0.0 };
            r.intensity[i] = spec.background * (1.0 - cov) + limb_weight.min(1.0) * cov;
        }
    }
    r
}

fn unit_normal(d: (f64, f64)) -> (f64, f64) {
    let len = d.0.hypot(d.1);
    if len > 0.0 {
        (-d.1 / len, d.0 / len)
    } else {
        (0.0, 0.0)
    }
}

/// Exact displacement of every figure pixel from frame `from` to frame `to`
/// (background and occluder-hidden pixels get zero, occluder pixels move with the occluder).
pub fn exact_flow(spec: &SyntheticSceneSpec, from: usize, to: usize) -> FlowField {
    let (h, w) = (spec.height, spec.width);
    let mut flow = FlowField::zeros(h, w);
    if from == to {
        return flow;
    }
    let (_, ra) = spec.articulation_at(from as f64);
    let (_, rb) = spec.articulation_at(to as f64);
    let ja = spec.joints_at(from as f64);
    let dt = to as f64 - from as f64;
    // displacement assembled from differences so that rigid motion is exact and antisymmetric
    let root_shift = (spec.trajectory.root_velocity.0 * dt, spec.trajectory.root_velocity.1 * dt);
    let raster = rasterize_figure(spec, &ja);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let Some(li) = raster.owner[i] else { continue };
            let limb = &spec.figure.limbs[li];
            let (s, perp, _) = segment_coords((x as f64, y as f64), ja[limb.a], ja[limb.b]);
            let d0 = (ra[limb.b].0 - ra[limb.a].0, ra[limb.b].1 - ra[limb.a].1);
            let d1 = (rb[limb.b].0 - rb[limb.a].0, rb[limb.b].1 - rb[limb.a].1);
            let n0 = unit_normal(d0);
            let n1 = unit_normal(d1);
            flow.u[i] = root_shift.0 + (rb[limb.a].0 - ra[limb.a].0) + s * (d1.0 - d0.0) + perp * (n1.0 - n0.0);
            flow.v[i] = root_shift.1 + (rb[limb.a].1 - ra[limb.a].1) + s * (d1.1 - d0.1) + perp * (n1.1 - n0.1);
        }
    }
    if let (Some(occ), Some(o)) = (spec.occluder_at(from), spec.occluder.as_ref()) {
        for y in 0..h {
            for x in 0..w {
                if occ.contains(x as f64, y as f64) {
                    let i = y * w + x;
                    flow.u[i] = o.velocity.0 * dt;
                    flow.v[i] = o.velocity.1 * dt;
                }
            }
        }
    }
    flow
}

/// Binary figure mask (coverage > 0) of a frame.
pub fn figure_mask(spec: &SyntheticSceneSpec, frame: usize) -> Vec<bool> {
    rasterize_figure(spec, &spec.joints_at(frame as f64)).coverage.iter().map(|&c| c > 0.0).collect()
}

pub struct SyntheticClip {
    pub clip: FrameClip,
    pub poses: Vec<PersonPose>,
    /// `flows[i]` carries frame `i` to frame `i + 1`.
    pub flows: Vec<FlowField>,
}

pub fn generate_synthetic_clip(spec: &SyntheticSceneSpec) -> Result<SyntheticClip> {
    if spec.delta == 0 || spec.height == 0 || spec.width == 0 {
        return Err(Error::InvalidArgument("scene needs delta >= 1 and a non-empty canvas".into()));
    }
    if spec.figure.bones.iter().any(|b| b.parent >= NUM_JOINTS || b.child >= NUM_JOINTS) {
        return Err(Error::InvalidArgument("bone references an unknown joint".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let (h, w) = (spec.height, spec.width);
    let nframes = spec.num_frames();
    let mut frames = Vec::with_capacity(nframes);
    let mut poses = Vec::with_capacity(nframes);
    for f in 0..nframes {
        let joints = spec.joints_at(f as f64);
        let raster = rasterize_figure(spec, &joints);
        if raster.coverage.iter().all(|&c| c == 0.0) {
            return Err(Error::FigureOffCanvas(format!("no figure pixel on frame {f}")));
        }
        let mut img = raster.intensity;
        if let (Some(occ), Some(o)) = (spec.occluder_at(f), spec.occluder.as_ref()) {
            for y in 0..h {
                for x in 0..w {
                    if occ.contains(x as f64, y as f64) {
                        // faint checker texture keeps the occluder trackable
                        let checker = if ((x / 4) + (y / 4)) % 2 == 0 { 0.05 } else { -0.05 };
                        img[y * w + x] = o.intensity + checker;
                    }
                }
            }
        }
        let mut frame = Tensor::from_vec(&[1, h, w], img)?;
        if spec.blur_sigma > 0.0 {
            frame = gaussian_blur(&frame, spec.blur_sigma);
        }
        if let Some(n) = &noise {
            for v in frame.data_mut() {
                *v += n.sample(&mut rng);
            }
        }
        for v in frame.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        frames.push(frame);
        poses.push(spec.pose_at(f));
    }
    let flows = (0..nframes - 1).map(|f| exact_flow(spec, f, f + 1)).collect();
    let key = &poses[spec.delta];
    let person_box = key
        .visible_bounds()
        .ok_or_else(|| Error::FigureOffCanvas("no visible keypoint on the keyframe".into()))?;
    let key_mask = figure_mask(spec, spec.delta);
    let occluded = spec.occluder_at(spec.delta).is_some_and(|occ| {
        key_mask.iter().enumerate().any(|(i, &m)| m && occ.contains((i % w) as f64, (i / w) as f64))
    });
    let clip = FrameClip::new(
        frames,
        spec.delta,
        person_box,
        SceneMeta { occluded, defocused: spec.blur_sigma > 0.0 },
        Some(spec.clone()),
    )?;
    Ok(SyntheticClip { clip, poses, flows })
}
