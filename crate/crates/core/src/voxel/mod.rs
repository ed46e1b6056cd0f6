//! Sparse voxel tensors and the lattice machinery shared by every convolution.

mod coord;
mod neighbors;
mod offsets;
mod scene;
mod tensor;
mod voxelize;

pub use coord::{build_index, Coord3, CoordHasher, CoordIndex};
pub use neighbors::{gather_neighbors, NeighborMap, NeighborPair};
pub use offsets::{kernel_offsets, KernelOffsets};
pub use scene::Scene;
pub use tensor::SparseTensor;
pub use voxelize::{devoxelize, voxel_labels, voxelize, PointVoxelMap};
