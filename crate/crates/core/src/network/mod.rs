//! Residual large-kernel segmentation network and its training machinery.

mod checkpoint;
mod layers;
mod loss;
mod model;
mod optim;
mod train;

pub use checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint, Checkpoint, RngState};
pub use layers::{BatchNorm, Linear, NormMode, Param, SparseConv};
pub use loss::weighted_ce_loss;
pub use model::{
    lsk_block_forward, ForwardCache, Gradients, LskBlock, LskNetwork, NetworkConfig, ParamMut,
};
pub use optim::{AdamW, OneCycle};
pub use train::{inference_network, IterationRecord, Sample, TrainSchedule, Trainer};
