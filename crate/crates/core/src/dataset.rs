//! Training/evaluation samples: a clip, its poses and its precomputed motion volume.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::augment::{augment, augment_motion_volume, AugmentParams};
use crate::data::clip::{FrameClip, SceneMeta};
use crate::data::heatmap::render_gaussian_heatmaps;
use crate::data::io::{load_dataset, save_clip, StoredClip};
use crate::data::pose::{BBox, PersonPose};
use crate::data::synthetic::{generate_synthetic_clip, SyntheticSceneSpec};
use crate::error::{Error, Result};
use crate::flow::{build_motion_volume, BlockMatchFlow, FileFlow, FlowProvider, FlowProviderKind, OracleFlow};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Sample {
    pub clip: FrameClip,
    pub poses: Vec<PersonPose>,
    /// `[4, h, w]`
    pub motion: Tensor,
}

impl Sample {
    pub fn keyframe_pose(&self) -> &PersonPose {
        &self.poses[self.clip.keyframe_index]
    }

    pub fn person_box(&self) -> BBox {
        self.clip.person_box
    }

    pub fn meta(&self) -> SceneMeta {
        self.clip.meta
    }
}

pub fn motion_for(stored: &StoredClip, kind: FlowProviderKind, stride: usize) -> Result<Tensor> {
    let provider: Box<dyn FlowProvider> = match kind {
        FlowProviderKind::Oracle => Box::new(OracleFlow),
        FlowProviderKind::BlockMatch => Box::new(BlockMatchFlow::default()),
        FlowProviderKind::File => {
            let flows = stored
                .flows
                .clone()
                .ok_or_else(|| Error::Dataset("the file flow provider needs clips with flow files".into()))?;
            Box::new(FileFlow::new(flows))
        }
    };
    let mv = build_motion_volume(&stored.clip, provider.as_ref(), stride)?;
    Ok(mv.data)
}

pub fn sample_from_stored(stored: StoredClip, kind: FlowProviderKind, stride: usize) -> Result<Sample> {
    let motion = motion_for(&stored, kind, stride)?;
    Ok(Sample { clip: stored.clip, poses: stored.poses, motion })
}

pub fn load_samples(dir: &Path, kind: FlowProviderKind, stride: usize) -> Result<Vec<Sample>> {
    load_dataset(dir)?.into_iter().map(|s| sample_from_stored(s, kind, stride)).collect()
}

/// Recipe for a synthetic dataset (the `generate-data` spec file).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDataSpec {
    pub num_clips: usize,
    pub challenging_fraction: f64,
    pub height: usize,
    pub width: usize,
    pub delta: usize,
    pub seed: u64,
    pub write_flow: bool,
}

impl Default for SyntheticDataSpec {
    fn default() -> Self {
        Self { num_clips: 500, challenging_fraction: 0.3, height: 96, width: 72, delta: 2, seed: 1, write_flow: true }
    }
}

impl SyntheticDataSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.challenging_fraction) || self.delta == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("invalid synthetic data spec {self:?}")));
        }
        Ok(())
    }

    /// Scene specs; clip `i` is challenging when `i < round(fraction * n)` after a seeded shuffle.
    pub fn scenes(&self) -> Result<Vec<SyntheticSceneSpec>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n_hard = (self.challenging_fraction * self.num_clips as f64).round() as usize;
        let mut flags: Vec<bool> = (0..self.num_clips).map(|i| i < n_hard).collect();
        for i in (1..flags.len()).rev() {
            flags.swap(i, rng.random_range(0..=i));
        }
        let mut scenes = Vec::with_capacity(self.num_clips);
        for hard in flags {
            // retry until the figure stays well inside the canvas
            loop {
                let scene = SyntheticSceneSpec::random(&mut rng, self.height, self.width, self.delta, hard);
                if scene_fits(&scene) {
                    scenes.push(scene);
                    break;
                }
            }
        }
        Ok(scenes)
    }

    pub fn generate(&self) -> Result<Vec<crate::data::synthetic::SyntheticClip>> {
        self.scenes()?.iter().map(generate_synthetic_clip).collect()
    }

    pub fn write(&self, out: &Path) -> Result<usize> {
        let clips = self.generate()?;
        std::fs::create_dir_all(out)?;
        for (i, c) in clips.iter().enumerate() {
            let flows = self.write_flow.then_some(c.flows.as_slice());
            save_clip(&out.join(format!("clip_{i:05}")), &c.clip, &c.poses, flows)?;
        }
        Ok(clips.len())
    }

    /// In-memory samples with oracle motion volumes (skips the disk round trip).
    pub fn samples(&self, stride: usize) -> Result<Vec<Sample>> {
        self.generate()?
            .into_iter()
            .map(|c| {
                let motion = build_motion_volume(&c.clip, &OracleFlow, stride)?.data;
                Ok(Sample { clip: c.clip, poses: c.poses, motion })
            })
            .collect()
    }
}

fn scene_fits(scene: &SyntheticSceneSpec) -> bool {
    (0..scene.num_frames()).all(|f| {
        scene.joints_at(f as f64).iter().all(|&(x, y)| x >= 1.0 && y >= 1.0 && x < scene.width as f64 - 1.0 && y < scene.height as f64 - 1.0)
    })
}

/// Clips flagged occluded or defocused.
pub fn select_challenging_subset(samples: &[Sample]) -> Vec<&Sample> {
    samples.iter().filter(|s| s.meta().challenging()).collect()
}

pub fn select_clean_subset(samples: &[Sample]) -> Vec<&Sample> {
    samples.iter().filter(|s| !s.meta().challenging()).collect()
}

/// Network inputs and targets for a list of samples.
pub struct Batch {
    /// `[B * T, C, H, W]`
    pub frames: Tensor,
    /// `[B, 4, h, w]`
    pub motion: Tensor,
    /// `[B, K, h, w]`
    pub targets: Tensor,
}

/// Assembles a batch, applying `params[i]` (if any) to sample `i`.
pub fn make_batch(samples: &[&Sample], params: Option<&[AugmentParams]>, cfg: &ModelConfig, sigma: f64) -> Result<Batch> {
    let stride = ModelConfig::STRIDE;
    let (hh, hw) = cfg.heatmap_dims();
    let mut frames = Vec::new();
    let mut motions = Vec::new();
    let mut targets = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let (_, h, w) = s.clip.frame_dims();
        if s.clip.delta != cfg.delta || (h, w) != (cfg.height, cfg.width) {
            return Err(Error::Dataset(format!("clip {h}x{w} delta {} does not match the model config", s.clip.delta)));
        }
        let p = params.map(|p| p[i]).unwrap_or_default();
        let (clip, pose, motion) = if p.is_identity() {
            (s.clip.clone(), s.keyframe_pose().clone(), s.motion.clone())
        } else {
            let (c, poses) = augment(&s.clip, &s.poses, &p)?;
            let m = augment_motion_volume(&s.motion, &p, h, w, stride)?;
            let key = poses[c.keyframe_index].clone();
            (c, key, m)
        };
        frames.extend(clip.frames);
        motions.push(motion);
        targets.push(render_gaussian_heatmaps(&pose, (cfg.num_joints, hh, hw), sigma, stride as f64)?.maps);
    }
    Ok(Batch { frames: Tensor::stack(&frames)?, motion: Tensor::stack(&motions)?, targets: Tensor::stack(&targets)? })
}
