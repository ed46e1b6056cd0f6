// Channel-wise weight selection: sort a wide network's hidden channels by L1
// magnitude without changing its function, then keep the leading channels.

use std::sync::Arc;

use lsk3d::cws::{select_channels, sort_channels};
use lsk3d::network::{LskNetwork, NetworkConfig, NormMode};
use lsk3d::voxel::{build_index, gather_neighbors, Coord3, SparseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> lsk3d::Result<()> {
    let cfg = NetworkConfig {
        voxel_size: 0.05,
        in_feats: 2,
        hidden_width: 4,
        width_factor: 1.8,
        kernel_size: 5,
        group_divisions: vec![2, 1, 2],
        num_blocks: 2,
        num_classes: 3,
        class_weights: vec![1.0; 3],
        scales: vec![1],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut wide, _) = LskNetwork::build(&cfg, cfg.expanded_width(), 0.4, &mut rng)?;
    println!("training width {} (base {})", wide.stream_width(), cfg.hidden_width);

    let coords: Vec<Coord3> = (0..40).map(|i| Coord3::new(i % 5, (i / 5) % 4, i / 20)).collect();
    let feats = (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = SparseTensor::new(coords, feats, 2)?;
    let nmap = Arc::new(gather_neighbors(&build_index(&x)?, x.coords(), wide.offsets()));

    let before = wide.forward(&x, &nmap, NormMode::Eval)?.logits;
    let perm = sort_channels(&mut wide)?;
    let after = wide.forward(&x, &nmap, NormMode::Eval)?.logits;
    println!("stream permutation {:?}", perm.stream);
    assert_eq!(before, after, "sorting must not change the function");

    let small = select_channels(&wide, cfg.hidden_width)?;
    println!("selected widths: stream {}, inner {:?}", small.stream_width(), small.inner_widths());
    let logits = small.forward(&x, &nmap, NormMode::Eval)?.logits;
    assert!(logits.iter().all(|v| v.is_finite()));
    Ok(())
}

#[allow(dead_code)]
fn main() -> lsk3d::Result<()> {
    run_example()
}
