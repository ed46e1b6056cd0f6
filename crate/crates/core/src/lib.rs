//! Large sparse-kernel 3D submanifold convolution.
//!
//! The crate is organised bottom-up:
//!
//! * [`voxel`] sparse voxel tensors, coordinate indexing, kernel offsets and neighbor maps.
//! * [`conv`] spatially grouped, masked submanifold convolution with exact reverse mode.
//! * [`sds`] spatial-wise dynamic sparsity: ER mask init, magnitude pruning, random regrowth.
//! * [`cws`] channel-wise weight selection: L1 sorting and top-D slicing.
//! * [`network`] residual large-kernel blocks, loss, AdamW, the training loop and checkpoints.
//! * [`metrics`] mIoU, parameter and FLOP accounting, effective receptive fields, reports.
//! * [`harness`] run configuration, synthetic scenes and the command implementations.

pub mod conv;
pub mod cws;
mod error;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod scalar;
pub mod sds;
pub mod voxel;

pub use error::{Error, Result};
pub use scalar::Scalar;
