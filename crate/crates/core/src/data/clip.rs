use serde::{Deserialize, Serialize};

use crate::data::pose::BBox;
use crate::data::synthetic::SyntheticSceneSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub occluded: bool,
    pub defocused: bool,
}

impl SceneMeta {
    pub fn challenging(&self) -> bool {
        self.occluded || self.defocused
    }
}

/// `2 * delta + 1` frames of one person centered on the keyframe.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameClip {
    /// Each frame is `[C, H, W]` with values in `[0, 1]`.
    pub frames: Vec<Tensor>,
    pub delta: usize,
    pub keyframe_index: usize,
    pub person_box: BBox,
    pub meta: SceneMeta,
    /// Generating scene, when the clip is synthetic.
    pub scene: Option<SyntheticSceneSpec>,
}

impl FrameClip {
    pub fn new(
        frames: Vec<Tensor>,
        delta: usize,
        person_box: BBox,
        meta: SceneMeta,
        scene: Option<SyntheticSceneSpec>,
    ) -> Result<Self> {
        if delta == 0 || frames.len() != 2 * delta + 1 {
            return Err(Error::InvalidArgument(format!(
                "clip with delta {delta} needs {} frames, got {}",
                2 * delta + 1,
                frames.len()
            )));
        }
        let shape = frames[0].shape().to_vec();
        if shape.len() != 3 || frames.iter().any(|f| f.shape() != shape.as_slice()) {
            return Err(Error::Shape("clip frames must share one [C, H, W] shape".into()));
        }
        Ok(Self { frames, delta, keyframe_index: delta, person_box, meta, scene })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// `(channels, height, width)` of every frame.
    pub fn frame_dims(&self) -> (usize, usize, usize) {
        let s = self.frames[0].shape();
        (s[0], s[1], s[2])
    }

    pub fn keyframe(&self) -> &Tensor {
        &self.frames[self.keyframe_index]
    }
}
