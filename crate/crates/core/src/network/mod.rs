//! Proposal network architectures, parameters and forward/backward passes.

mod arch;
mod format;
mod model;

pub use arch::{builtin_spec, compute_stride, validate_geometry, ArchitectureSpec, Geometry, LayerSpec, BUILTIN_NAMES};
pub use format::{FORMAT_VERSION, MAGIC};
pub use model::{ConvParams, ForwardTrace, HeadOutput, Init, Model};
