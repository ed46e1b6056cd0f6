// A short training run with dynamic sparsity and channel sorting, saved to and
// resumed from a checkpoint.

use lsk3d::cws::WidthConfig;
use lsk3d::harness::{generate_scene, prepare_scene, SyntheticSceneSpec};
use lsk3d::network::{checkpoint_hash, load_checkpoint, save_checkpoint, Checkpoint, NetworkConfig, TrainSchedule, Trainer};
use lsk3d::sds::SparsityConfig;

pub fn run_example() -> lsk3d::Result<()> {
    let cfg = NetworkConfig {
        voxel_size: 0.05,
        in_feats: 2,
        hidden_width: 4,
        width_factor: 1.5,
        kernel_size: 5,
        group_divisions: vec![2, 1, 2],
        num_blocks: 1,
        num_classes: 3,
        class_weights: vec![1.0; 3],
        scales: vec![1],
    };
    let schedule = TrainSchedule {
        iterations: 30,
        sparsity: SparsityConfig { sparsity: 0.4, prune_rate: 0.3, adapt_every: 5, seed: 1 },
        width: WidthConfig { base_width: 4, width_factor: 1.5, sort_every: 15 },
        peak_lr: 5e-3,
        weight_decay: 0.01,
        batch_size: 2,
    };
    let spec = SyntheticSceneSpec { extent: 12, shapes_per_scene: 2, seed: 2, ..Default::default() };
    let data = (0..3)
        .map(|i| Ok(prepare_scene(&generate_scene(&spec, i)?, &cfg)?.sample))
        .collect::<lsk3d::Result<Vec<_>>>()?;

    let (mut trainer, _) = Trainer::new(&cfg, schedule, 42)?;
    while trainer.iteration < 20 {
        let r = trainer.step(&data)?;
        if r.sds_event || r.sort_event {
            println!("iter {:>3} loss {:.4} sds={} sort={}", r.iteration, r.loss, r.sds_event, r.sort_event);
        }
    }

    let dir = std::env::temp_dir().join(format!("lsk3d-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("ckpt.lskc");
    save_checkpoint(&Checkpoint::from_trainer(&trainer), &path)?;
    println!("checkpoint sha256 {}", checkpoint_hash(&path)?);

    let mut resumed = load_checkpoint(&path)?.into_trainer();
    trainer.run(&data, |_| {})?;
    resumed.run(&data, |_| {})?;
    assert_eq!(trainer.net, resumed.net, "resuming must follow the same trajectory");
    println!("resumed run matches: {} sds events, {} sort events", resumed.sds_events, resumed.sort_events);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> lsk3d::Result<()> {
    run_example()
}
