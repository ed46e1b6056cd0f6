//! Segmentation quality, parameter/FLOPs accounting, effective receptive
//! fields, and their CSV/SVG emission.

mod cost;
mod erf;
mod iou;
mod report;

pub use cost::{count_flops, count_params, kernel_flops, CostReport, LayerCost};
pub use erf::{compute_erf, ErfMap};
pub use iou::{argmax_rows, miou, ConfusionMatrix, MiouReport};
pub use report::{emit_report, Report};
