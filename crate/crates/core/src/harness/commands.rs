use std::io::Write;
use std::path::{Path, PathBuf};

use crate::metrics::{compute_erf, count_flops, count_params, emit_report, miou, CostReport, ErfMap, MiouReport};
use crate::network::{checkpoint_hash, inference_network, load_checkpoint, save_checkpoint, Checkpoint, IterationRecord, LskNetwork, Trainer};
use crate::voxel::{Coord3, Scene};
use crate::{Error, Result};

use super::config::RunConfig;
use super::data::{evaluate, load_dataset, prepare_scene};

/// Process exit code for an error: 1 for usage and configuration problems,
/// 2 for failures while running.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 1,
        _ => 2,
    }
}

/// Caps rayon's worker count at `LSK_THREADS` when set. Results never depend
/// on the thread count. Returns the number of workers in use.
pub fn configure_threads() -> Result<usize> {
    if let Ok(v) = std::env::var("LSK_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("LSK_THREADS must be a positive integer, got {v:?}")))?;
        // a pool may already exist (e.g. in tests); keeping it is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

/// Files produced by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint_hash: String,
    pub final_loss: f32,
    pub sds_events: u64,
    pub sort_events: u64,
}

/// Trains per `config`, writing `checkpoint.lskc` and `metrics.csv` into
/// `out` (or the configured output directory).
pub fn run_train(config: &RunConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    if !config.train_data.exists() {
        return Err(Error::InvalidConfig(format!("training data {} does not exist", config.train_data.display())));
    }
    let out = out.unwrap_or(&config.output_dir);
    std::fs::create_dir_all(out)?;
    let data: Vec<_> = load_dataset(&config.train_data, &config.network)?.into_iter().map(|s| s.sample).collect();
    let (mut trainer, warnings) = Trainer::new(&config.network, config.schedule.clone(), config.seed)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let metrics = out.join("metrics.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&metrics)?);
    writeln!(csv, "{}", IterationRecord::csv_header(2 * config.network.num_blocks))?;
    let mut io_err = None;
    let mut final_loss = f32::NAN;
    trainer.run(&data, |r| {
        final_loss = r.loss;
        if let Err(e) = writeln!(csv, "{}", r.csv_row()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    csv.flush()?;
    let checkpoint = out.join("checkpoint.lskc");
    save_checkpoint(&Checkpoint::from_trainer(&trainer), &checkpoint)?;
    Ok(TrainOutcome {
        checkpoint_hash: checkpoint_hash(&checkpoint)?,
        checkpoint,
        metrics,
        final_loss,
        sds_events: trainer.sds_events,
        sort_events: trainer.sort_events,
    })
}

/// The network a checkpoint deploys: sorted and cut to the base width.
pub fn deployed_network(ckpt: &Checkpoint) -> Result<LskNetwork> {
    inference_network(&ckpt.network, ckpt.schedule.width.base_width)
}

/// Evaluates the deployed network of a checkpoint on a dataset; writes
/// `iou.csv` / `iou.svg` into `out` when given.
pub fn run_eval(checkpoint: &Path, manifest: &Path, out: Option<&Path>) -> Result<MiouReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let net = deployed_network(&ckpt)?;
    let scenes = load_dataset(manifest, net.config())?;
    let report = miou(&evaluate(&net, &scenes)?);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        emit_report(&report, &dir.join("iou"))?;
    }
    Ok(report)
}

/// ERF of the deployed network at `center` of one scene file.
pub fn run_erf(checkpoint: &Path, scene: &Path, center: Coord3, out_stem: Option<&Path>) -> Result<ErfMap> {
    let ckpt = load_checkpoint(checkpoint)?;
    let net = deployed_network(&ckpt)?;
    let prepared = prepare_scene(&Scene::read_binary(scene)?, net.config())?;
    let erf = compute_erf(&net, &prepared.sample.tensor, &prepared.sample.nmap, center)?;
    if let Some(stem) = out_stem {
        emit_report(&erf, stem)?;
    }
    Ok(erf)
}

/// Parameter counts (and FLOPs when a scene is given) of the stored network,
/// or of the deployed one when `deployed` is set.
pub fn run_count(checkpoint: &Path, scene: Option<&Path>, deployed: bool, out_stem: Option<&Path>) -> Result<CostReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let net = if deployed { deployed_network(&ckpt)? } else { ckpt.network };
    let report = match scene {
        Some(path) => {
            let prepared = prepare_scene(&Scene::read_binary(path)?, net.config())?;
            count_flops(&net, &prepared.sample.nmap)
        }
        None => count_params(&net),
    };
    if let Some(stem) = out_stem {
        emit_report(&report, stem)?;
    }
    Ok(report)
}
