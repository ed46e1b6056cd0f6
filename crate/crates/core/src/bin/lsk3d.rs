use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lsk3d::harness::{
    configure_threads, exit_code, gen_dataset, run_count, run_erf, run_eval, run_train, RunConfig, SyntheticSceneSpec,
};
use lsk3d::voxel::Coord3;
use lsk3d::{Error, Result};

/// Large sparse-kernel 3D segmentation: data generation, training, evaluation
/// and analysis. `LSK_THREADS` caps parallelism.
#[derive(Parser)]
#[command(name = "lsk3d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a manifest.
    GenData {
        /// TOML scene spec; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Index of the first scene; use disjoint ranges for held-out sets.
        #[arg(long, default_value_t = 0)]
        first: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        extent: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Train from a run config; writes checkpoint.lskc and metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint's deployed network on a dataset manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Effective receptive field at one voxel of a scene.
    Erf {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Voxel coordinate as x,y,z.
        #[arg(long, value_parser = parse_coord)]
        center: Coord3,
        /// Output stem; writes <stem>.csv and <stem>.svg.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter and FLOPs accounting.
    Count {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene used for FLOPs; parameters only when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Count the sorted, base-width network instead of the stored one.
        #[arg(long)]
        deployed: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_coord(s: &str) -> std::result::Result<Coord3, String> {
    let v: Vec<i32> = s.split(',').map(|p| p.trim().parse().map_err(|e| format!("{p:?}: {e}"))).collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, z] => Ok(Coord3::new(x, y, z)),
        _ => Err("expected x,y,z".into()),
    }
}

fn run(cmd: Command) -> Result<()> {
    configure_threads()?;
    match cmd {
        Command::GenData { config, out, count, first, seed, extent, classes } => {
            let mut spec = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", p.display())))?;
                    toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?
                }
                None => SyntheticSceneSpec::default(),
            };
            spec.seed = seed.unwrap_or(spec.seed);
            spec.extent = extent.unwrap_or(spec.extent);
            spec.num_classes = classes.unwrap_or(spec.num_classes);
            spec.validate()?;
            let m = gen_dataset(&spec, first, count, &out)?;
            println!("wrote {} scenes, {} points to {}", m.files.len(), m.points.iter().sum::<usize>(), out.display());
        }
        Command::Train { config, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let o = run_train(&cfg, out.as_deref())?;
            println!(
                "iterations {} | final loss {:.6} | sds events {} | sort events {}",
                cfg.schedule.iterations, o.final_loss, o.sds_events, o.sort_events
            );
            println!("checkpoint {} sha256 {}", o.checkpoint.display(), o.checkpoint_hash);
        }
        Command::Eval { checkpoint, data, out } => {
            let r = run_eval(&checkpoint, &data, out.as_deref())?;
            for (c, iou) in r.per_class.iter().enumerate() {
                match iou {
                    Some(v) => println!("class {c}: IoU {v:.4}"),
                    None => println!("class {c}: absent"),
                }
            }
            println!("mIoU {:.4}", r.mean);
        }
        Command::Erf { checkpoint, scene, center, out } => {
            let erf = run_erf(&checkpoint, &scene, center, out.as_deref())?;
            println!("support {} of {} voxels", erf.support().len(), erf.coords.len());
        }
        Command::Count { checkpoint, scene, deployed, out } => {
            let r = run_count(&checkpoint, scene.as_deref(), deployed, out.as_deref())?;
            for l in &r.layers {
                println!("{:<18} dense {:>10} nonzero {:>10} flops {:>14}", l.name, l.dense_params, l.nnz_params, l.flops);
            }
            println!("{:<18} dense {:>10} nonzero {:>10} flops {:>14}", "total", r.dense_params(), r.nnz_params(), r.flops());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
