// Parameter and FLOPs accounting of a dense versus a sparse network, and of
// the width-selected deployment network.

use lsk3d::cws::select_channels;
use lsk3d::harness::{generate_scene, prepare_scene, SyntheticSceneSpec};
use lsk3d::metrics::{count_flops, Report};
use lsk3d::network::{LskNetwork, NetworkConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> lsk3d::Result<()> {
    let cfg = NetworkConfig {
        voxel_size: 0.05,
        in_feats: 2,
        hidden_width: 8,
        width_factor: 1.8,
        kernel_size: 9,
        group_divisions: vec![3, 3, 3],
        num_blocks: 2,
        num_classes: 3,
        class_weights: vec![1.0; 3],
        scales: vec![1],
    };
    let scene = prepare_scene(&generate_scene(&SyntheticSceneSpec { seed: 4, ..Default::default() }, 0)?, &cfg)?;
    let nmap = &scene.sample.nmap;
    let wide = cfg.expanded_width();
    let (dense, _) = LskNetwork::build(&cfg, wide, 0.0, &mut ChaCha8Rng::seed_from_u64(1))?;
    let (sparse, _) = LskNetwork::build(&cfg, wide, 0.4, &mut ChaCha8Rng::seed_from_u64(1))?;
    let selected = select_channels(&sparse, cfg.hidden_width)?;

    for (name, net) in [("dense wide", &dense), ("sparse wide", &sparse), ("selected", &selected)] {
        let r = count_flops(net, nmap);
        println!("{name:>12}: params {:>8} nonzero {:>8} flops {:>12}", r.dense_params(), r.nnz_params(), r.flops());
    }
    let r = count_flops(&sparse, nmap);
    print!("{}", r.csv());
    Ok(())
}

#[allow(dead_code)]
fn main() -> lsk3d::Result<()> {
    run_example()
}
