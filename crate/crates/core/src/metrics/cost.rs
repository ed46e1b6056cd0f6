use crate::conv::GroupedSparseKernel;
use crate::network::LskNetwork;
use crate::voxel::NeighborMap;
use crate::Scalar;

/// Size and cost of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub dense_params: u64,
    pub nnz_params: u64,
    /// Two operations per multiply-accumulate; zero when no scene was given.
    pub flops: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn dense_params(&self) -> u64 {
        self.layers.iter().map(|l| l.dense_params).sum()
    }

    pub fn nnz_params(&self) -> u64 {
        self.layers.iter().map(|l| l.nnz_params).sum()
    }

    pub fn flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerCost> {
        self.layers.iter().find(|l| l.name == name)
    }
}

/// `2 * sum over realized (row, slot) pairs of the nonzero count in that slot's block`.
pub fn kernel_flops<T: Scalar>(kernel: &GroupedSparseKernel<T>, nmap: &NeighborMap) -> u64 {
    let block = kernel.d_out() * kernel.d_in();
    let nnz_per_slot: Vec<u64> =
        kernel.mask().chunks(block.max(1)).map(|b| b.iter().filter(|&&m| m).count() as u64).collect();
    nmap.slot_counts().iter().zip(&nnz_per_slot).map(|(&pairs, &nnz)| 2 * pairs as u64 * nnz).sum()
}

fn layers(net: &LskNetwork, nmap: Option<&NeighborMap>) -> CostReport {
    let rows = nmap.map_or(0, |m| m.rows() as u64);
    let mut out = Vec::new();
    let linear = |name: &str, l: &crate::network::Linear| {
        let n = (l.weight.len() + l.bias.len()) as u64;
        LayerCost { name: name.into(), dense_params: n, nnz_params: n, flops: 2 * rows * l.weight.len() as u64 }
    };
    let norm = |name: String, n: &crate::network::BatchNorm| {
        let c = 2 * n.channels() as u64;
        LayerCost { name, dense_params: c, nnz_params: c, flops: 0 }
    };
    let conv = |name: String, k: &GroupedSparseKernel<f32>| LayerCost {
        name,
        dense_params: k.len() as u64,
        nnz_params: k.active_count() as u64,
        flops: nmap.map_or(0, |m| kernel_flops(k, m)),
    };
    out.push(linear("stem", &net.stem));
    out.push(norm("stem.norm".into(), &net.stem_norm));
    for (b, block) in net.blocks.iter().enumerate() {
        out.push(conv(format!("blocks.{b}.conv1"), &block.conv1.kernel));
        out.push(norm(format!("blocks.{b}.norm"), &block.norm));
        out.push(conv(format!("blocks.{b}.conv2"), &block.conv2.kernel));
    }
    out.push(linear("head", &net.head));
    CostReport { layers: out }
}

/// Dense and nonzero parameter counts per layer (FLOPs left at zero).
pub fn count_params(net: &LskNetwork) -> CostReport {
    layers(net, None)
}

/// Parameter counts plus FLOPs over the realized neighbor pairs of one scene.
pub fn count_flops(net: &LskNetwork, nmap: &NeighborMap) -> CostReport {
    layers(net, Some(nmap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::partition_groups;
    use crate::voxel::{gather_neighbors, kernel_offsets, Coord3, CoordIndex};

    #[test]
    fn isolated_voxel_dense_3() {
        let p = partition_groups([3; 3], [vec![3], vec![3], vec![3]]).unwrap();
        let k = GroupedSparseKernel::<f32>::dense(p.clone(), 2, 2, vec![1.0; 27 * 4]).unwrap();
        let coords = [Coord3::new(0, 0, 0)];
        let idx = CoordIndex::from_coords(&coords).unwrap();
        let nmap = gather_neighbors(&idx, &coords, &kernel_offsets(3, 3, 3).unwrap());
        assert_eq!(kernel_flops(&k, &nmap), 8);
        let empty = GroupedSparseKernel::<f32>::with_mask(p, 2, 2, vec![0.0; 108], vec![false; 108]).unwrap();
        assert_eq!(kernel_flops(&empty, &nmap), 0);
    }
}
