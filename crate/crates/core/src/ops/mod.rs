//! Forward/backward kernels used by the autograd tape.

pub mod attention;
pub mod bounds;
pub mod conv;
pub mod deform;

pub use conv::Conv2dGeometry;
pub use deform::DeformableKernelSpec;
