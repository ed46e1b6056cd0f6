// End to end on synthetic scenes: generate a dataset, train through the
// harness, evaluate the deployed network, and emit reports.

use lsk3d::harness::{gen_dataset, run_count, run_eval, run_train, Manifest, RunConfig, SyntheticSceneSpec};

pub fn run_example() -> lsk3d::Result<()> {
    let dir = std::env::temp_dir().join(format!("lsk3d-pipeline-{}", std::process::id()));
    let spec = SyntheticSceneSpec { extent: 16, shapes_per_scene: 2, seed: 3, ..Default::default() };
    gen_dataset(&spec, 0, 4, &dir.join("train"))?;

    let mut cfg = RunConfig::desk_default();
    cfg.train_data = dir.join("train").join(Manifest::FILE_NAME);
    cfg.output_dir = dir.join("run");
    cfg.network.kernel_size = 5;
    cfg.network.group_divisions = vec![2, 1, 2];
    cfg.schedule.iterations = 40;
    cfg.schedule.sparsity.adapt_every = 10;
    cfg.schedule.width.sort_every = 20;
    let out = run_train(&cfg, None)?;
    println!("trained: loss {:.4}, {} sds / {} sort events", out.final_loss, out.sds_events, out.sort_events);

    let report = run_eval(&out.checkpoint, &cfg.train_data, Some(&dir.join("run")))?;
    println!("training-scene mIoU {:.4}", report.mean);
    let costs = run_count(&out.checkpoint, None, true, Some(&dir.join("run").join("costs")))?;
    println!("deployed network: {} of {} parameters nonzero", costs.nnz_params(), costs.dense_params());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> lsk3d::Result<()> {
    run_example()
}
