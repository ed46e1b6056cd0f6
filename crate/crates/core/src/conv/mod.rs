//! Spatially grouped submanifold sparse convolution.
//!
//! Weights are stored dense as `[slot][out][in]` with an explicit binary mask;
//! masked entries are held at exactly zero. The kernel lattice is split into
//! spatial groups whose bookkeeping drives dynamic sparsity.

mod kernel;
mod ops;
mod partition;

pub use kernel::{gather_layout, GroupedSparseKernel};
pub use ops::{
    subm_conv_backward, subm_conv_backward_input, subm_conv_forward, subm_conv_forward_ordered,
    subm_conv_forward_taped, subm_conv_forward_taped_ordered, ConvTape,
};
pub use partition::{partition_groups, GroupPartition};
