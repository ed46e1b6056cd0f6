use std::sync::Arc;

use crate::network::{LskNetwork, NormMode};
use crate::voxel::{build_index, Coord3, NeighborMap, SparseTensor};
use crate::{Error, Result};

/// Per-input-voxel gradient magnitude of the summed last-block features at `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErfMap {
    pub center: Coord3,
    pub coords: Vec<Coord3>,
    pub magnitude: Vec<f64>,
}

impl ErfMap {
    /// Coordinates with nonzero gradient, sorted.
    pub fn support(&self) -> Vec<Coord3> {
        let mut s: Vec<Coord3> =
            self.coords.iter().zip(&self.magnitude).filter(|(_, &m)| m > 0.0).map(|(&c, _)| c).collect();
        s.sort();
        s
    }
}

/// Effective receptive field of `net` at `center`, with normalisation in
/// inference mode so that the gradient reflects the trained function.
pub fn compute_erf(net: &LskNetwork, x: &SparseTensor<f32>, nmap: &Arc<NeighborMap>, center: Coord3) -> Result<ErfMap> {
    let row = build_index(x)?.lookup(center).ok_or(Error::CenterAbsent(center.x, center.y, center.z))?;
    let cache = net.forward(x, nmap, NormMode::Eval)?;
    let w = net.stream_width();
    let mut g = vec![0.0f32; x.len() * w];
    g[row * w..(row + 1) * w].fill(1.0);
    let grads = net.backward_from_stream(&cache, g, false)?;
    let magnitude = grads
        .input
        .chunks(x.channels())
        .map(|r| r.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt())
        .collect();
    Ok(ErfMap { center, coords: x.coords().to_vec(), magnitude })
}
