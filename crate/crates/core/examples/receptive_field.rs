// Effective receptive field: gradient magnitude of the center voxel's features
// with respect to every input voxel, for small and large kernels.

use std::sync::Arc;

use lsk3d::metrics::compute_erf;
use lsk3d::network::{LskNetwork, NetworkConfig};
use lsk3d::voxel::{build_index, gather_neighbors, Coord3, SparseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn support(kernel_size: usize, x: &SparseTensor<f32>, center: Coord3) -> lsk3d::Result<usize> {
    let cfg = NetworkConfig {
        voxel_size: 0.05,
        in_feats: 1,
        hidden_width: 4,
        width_factor: 1.0,
        kernel_size,
        group_divisions: vec![],
        num_blocks: 2,
        num_classes: 2,
        class_weights: vec![1.0; 2],
        scales: vec![1],
    };
    let (net, _) = LskNetwork::build(&cfg, 4, 0.4, &mut ChaCha8Rng::seed_from_u64(9))?;
    let nmap = Arc::new(gather_neighbors(&build_index(x)?, x.coords(), net.offsets()));
    Ok(compute_erf(&net, x, &nmap, center)?.support().len())
}

pub fn run_example() -> lsk3d::Result<()> {
    let n = 12;
    let coords: Vec<Coord3> =
        (0..n * n * n).map(|i| Coord3::new(i / (n * n), (i / n) % n, i % n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let feats = (0..coords.len()).map(|_| rng.gen_range(0.5..1.5)).collect();
    let x = SparseTensor::new(coords, feats, 1)?;
    let center = Coord3::new(n / 2, n / 2, n / 2);
    let small = support(3, &x, center)?;
    let large = support(7, &x, center)?;
    println!("ERF support on a dense {n}^3 block: 3^3 kernels {small} voxels, 7^3 kernels {large} voxels");
    assert!(large > small);
    Ok(())
}

#[allow(dead_code)]
fn main() -> lsk3d::Result<()> {
    run_example()
}
