//! The full pose network and its ablation variants.

pub mod backbone;
pub mod cjl;
pub mod jmml;

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::mi::IoEstimators;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub use backbone::{aggregate_heatmaps, extract_frame_heatmaps, extract_heatmaps, BackboneParams};
pub use cjl::{cjl_forward, fuse, modulated_deformable_conv, predict_offsets_weights, CjlParams};
pub use jmml::{aggregate_and_detect, jmib_cross_attend, jmib_gate, jmml_forward, HeadParams, JmibParams, LayerState};

pub const MOTION_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoCjl,
    NoJmml,
    NoJmib,
    NoIo,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoCjl, Variant::NoJmml, Variant::NoJmib, Variant::NoIo];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCjl => "no_cjl",
            Variant::NoJmml => "no_jmml",
            Variant::NoJmib => "no_jmib",
            Variant::NoIo => "no_io",
        }
    }

    pub fn uses_cjl(&self) -> bool {
        *self != Variant::NoCjl
    }

    pub fn uses_jmml(&self) -> bool {
        *self != Variant::NoJmml
    }

    pub fn uses_io(&self) -> bool {
        !matches!(self, Variant::NoIo | Variant::NoJmml)
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected full, no_cjl, no_jmml, no_jmib or no_io)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_joints: usize,
    pub delta: usize,
    pub layers: usize,
    pub image_channels: usize,
    pub height: usize,
    pub width: usize,
    pub backbone_widths: [usize; 3],
    pub fuse_channels: usize,
    pub channels: usize,
    pub estimator_hidden: usize,
    pub max_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_joints: 15,
            delta: 2,
            layers: 4,
            image_channels: 1,
            height: 96,
            width: 72,
            backbone_widths: [16, 32, 64],
            fuse_channels: 32,
            channels: 32,
            estimator_hidden: 32,
            max_tokens: 4096,
        }
    }
}

impl ModelConfig {
    pub const STRIDE: usize = 4;

    pub fn num_frames(&self) -> usize {
        2 * self.delta + 1
    }

    pub fn heatmap_dims(&self) -> (usize, usize) {
        (self.height / Self::STRIDE, self.width / Self::STRIDE)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.delta == 0 {
            return bad("delta must be at least 1");
        }
        if self.layers == 0 {
            return bad("layers must be at least 1");
        }
        if self.height % Self::STRIDE != 0 || self.width % Self::STRIDE != 0 || self.height == 0 || self.width == 0 {
            return bad("image size must be a positive multiple of 4");
        }
        if self.num_joints == 0 || self.channels == 0 || self.fuse_channels == 0 || self.image_channels == 0 {
            return bad("channel counts must be positive");
        }
        let (h, w) = self.heatmap_dims();
        if h * w > self.max_tokens {
            return bad("heatmap token count exceeds max_tokens");
        }
        Ok(())
    }
}

/// Parameters of every component, all registered in one store.
#[derive(Clone, Debug, PartialEq)]
pub struct JmPose {
    pub config: ModelConfig,
    pub variant: Variant,
    pub store: ParamStore,
    pub backbone: BackboneParams,
    pub cjl: Option<CjlParams>,
    pub layers: Vec<JmibParams>,
    pub head: HeadParams,
    pub estimators: Vec<IoEstimators>,
}

/// Tape handles produced by one forward pass.
pub struct ForwardOutput {
    pub heatmaps: Var,
    pub frame_heatmaps: Var,
    pub h_hat: Var,
    pub motion: Var,
    pub joint: Var,
    pub states: Vec<LayerState>,
    pub attention: Vec<Var>,
}

impl JmPose {
    /// Builds a model; parameter initialisation is a pure function of `seed`.
    pub fn new(config: ModelConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.channels;
        let k = config.num_joints;
        let backbone = BackboneParams::new(&mut store, config.image_channels, config.backbone_widths, k, config.num_frames(), &mut rng);
        let cjl = variant
            .uses_cjl()
            .then(|| CjlParams::new(&mut store, k, MOTION_CHANNELS, config.fuse_channels, c, &mut rng));
        let joint_in = if variant.uses_cjl() { c } else { k };
        let layers: Vec<JmibParams> = if variant.uses_jmml() {
            (0..config.layers)
                .map(|i| {
                    let (ji, mi) = if i == 0 { (joint_in, MOTION_CHANNELS) } else { (c, c) };
                    JmibParams::new(&mut store, i, ji, mi, c, &mut rng)
                })
                .collect()
        } else {
            Vec::new()
        };
        let head_in = if variant.uses_jmml() { 2 * c } else { c };
        let head = HeadParams::new(&mut store, head_in, c, k, &mut rng);
        let estimators = if variant.uses_jmml() {
            (0..layers.len())
                .map(|i| IoEstimators::new(&mut store, &format!("mi.{i}"), c, c, k, config.estimator_hidden, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self { config, variant, store, backbone, cjl, layers, head, estimators })
    }

    /// Full forward pass.
    ///
    /// `frames`: `[B * T, C_img, H, W]` with the `T = 2 delta + 1` frames of each clip contiguous;
    /// `motion`: `[B, 4, H / 4, W / 4]`.
    pub fn forward(&self, g: &mut Graph, frames: &Tensor, motion: &Tensor) -> Result<ForwardOutput> {
        let t = self.config.num_frames();
        let (n, ci, h, w) = frames.dims4()?;
        let (b, mc, mh, mw) = motion.dims4()?;
        if n != b * t || ci != self.config.image_channels || (h, w) != (self.config.height, self.config.width) {
            return Err(Error::Shape(format!("frames {:?} do not match {} clips of {} frames", frames.shape(), b, t)));
        }
        if mc != MOTION_CHANNELS || (mh, mw) != self.config.heatmap_dims() {
            return Err(Error::Shape(format!("motion volume {:?}", motion.shape())));
        }
        let store = &self.store;
        let fx = g.constant(frames.clone());
        let m = g.constant(motion.clone());
        let frame_heatmaps = extract_heatmaps(g, store, &self.backbone, fx)?;
        let h_hat = aggregate_heatmaps(g, store, &self.backbone, frame_heatmaps, t)?;
        let joint = match &self.cjl {
            Some(p) => cjl_forward(g, store, p, h_hat, m)?,
            None => h_hat,
        };
        if !self.variant.uses_jmml() {
            let heatmaps = aggregate_and_detect(g, store, &self.head, joint, None)?;
            return Ok(ForwardOutput { heatmaps, frame_heatmaps, h_hat, motion: m, joint, states: Vec::new(), attention: Vec::new() });
        }
        let interact = self.variant != Variant::NoJmib;
        let out = jmml_forward(g, store, &self.layers, LayerState { joint, motion: m, index: 0 }, interact)?;
        let heatmaps = aggregate_and_detect(g, store, &self.head, out.last.joint, Some(out.last.motion))?;
        let attention = out.attended.iter().flat_map(|a| [a.joint_attention, a.motion_attention]).collect();
        Ok(ForwardOutput { heatmaps, frame_heatmaps, h_hat, motion: m, joint, states: out.layers, attention })
    }

    /// Heatmaps `[B, K, h, w]` without keeping a tape for training.
    pub fn predict(&self, frames: &Tensor, motion: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new().with_max_tokens(self.config.max_tokens);
        let out = self.forward(&mut g, frames, motion)?;
        Ok(g.value(out.heatmaps).clone())
    }

    pub fn estimator_ids(&self) -> Vec<crate::params::ParamId> {
        self.estimators.iter().flat_map(|e| e.param_ids()).collect()
    }

    pub fn model_ids(&self) -> Vec<crate::params::ParamId> {
        let est: std::collections::HashSet<_> = self.estimator_ids().into_iter().collect();
        self.store.ids().filter(|id| !est.contains(id)).collect()
    }
}
