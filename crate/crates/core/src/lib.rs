//! Joint-motion mutual learning for video human pose estimation.
//!
//! The pipeline: a toy per-frame encoder produces initial heatmaps that are
//! aggregated over the clip; a context-aware joint learner retrieves joint
//! features from the motion volume with modulated deformable convolution;
//! a stack of joint-motion interaction blocks exchanges information between
//! the joint and motion streams; an information-orthogonality objective keeps
//! the two streams diverse. Synthetic articulated-figure clips with exact
//! poses and flow make every stage testable at desk scale.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gradcheck;
pub mod mi;
pub mod model;
pub mod optim;
pub mod ops;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
