pub mod augment;
pub mod clip;
pub mod heatmap;
pub mod image;
pub mod io;
pub mod pose;
pub mod synthetic;

pub use clip::{FrameClip, SceneMeta};
pub use heatmap::{decode_heatmaps, render_gaussian_heatmaps, HeatmapStack};
pub use pose::{crop_and_enlarge, BBox, Keypoint, PersonPose, JOINT_NAMES, NUM_JOINTS};
pub use synthetic::{generate_synthetic_clip, SyntheticClip, SyntheticSceneSpec};
