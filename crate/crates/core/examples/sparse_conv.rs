// Submanifold sparse convolution with a spatially grouped, masked kernel:
// forward pass, backward pass, and the adjoint identity that ties them.

use std::sync::Arc;

use lsk3d::conv::{partition_groups, subm_conv_backward, subm_conv_forward_taped, GroupedSparseKernel};
use lsk3d::sds::er_init_mask;
use lsk3d::voxel::{build_index, gather_neighbors, kernel_offsets, Coord3, SparseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> lsk3d::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // an L-shaped patch of active voxels
    let coords: Vec<Coord3> = (0..6).map(|i| Coord3::new(i, 0, 0)).chain((1..4).map(|j| Coord3::new(0, j, 0))).collect();
    let (d_in, d_out) = (3, 2);
    let feats = (0..coords.len() * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Arc::new(SparseTensor::new(coords, feats, d_in)?);

    // 5x5x5 kernel split into groups 2,1,2 per axis; 40% of weights masked off
    let partition = partition_groups([5; 3], [vec![2, 1, 2], vec![2, 1, 2], vec![2, 1, 2]])?;
    println!("kernel groups: {} ({})", partition.num_groups(), partition.descriptor());
    let (mask, _) = er_init_mask(d_out, d_in, &partition, 0.4, &mut rng);
    let n = partition.num_slots() * d_out * d_in;
    let weights = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let kernel = GroupedSparseKernel::with_mask(partition, d_out, d_in, weights, mask)?;
    println!("kernel sparsity {:.3}", kernel.sparsity());

    let nmap = Arc::new(gather_neighbors(&build_index(&x)?, x.coords(), &kernel_offsets(5, 5, 5)?));
    let (y, tape) = subm_conv_forward_taped(x.clone(), &kernel, nmap)?;
    println!("output: {} voxels x {} channels (same coordinates as input)", y.len(), y.channels());

    let g: Vec<f32> = (0..y.feats().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (gx, gw) = subm_conv_backward(&g, &tape, &kernel)?;
    // <g, conv(x)> == <conv^T(g), x>
    let lhs: f32 = g.iter().zip(y.feats()).map(|(a, b)| a * b).sum();
    let rhs: f32 = gx.iter().zip(x.feats()).map(|(a, b)| a * b).sum();
    println!("adjoint check: {lhs:.6} vs {rhs:.6}");
    assert!((lhs - rhs).abs() < 1e-4);
    assert!(gw.iter().zip(kernel.mask()).all(|(g, &m)| m || *g == 0.0));
    Ok(())
}

#[allow(dead_code)]
fn main() -> lsk3d::Result<()> {
    run_example()
}
