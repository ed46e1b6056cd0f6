//! Configuration, synthetic data, and the end-to-end commands behind the CLI.

mod commands;
mod config;
mod data;
mod synth;

pub use commands::{
    configure_threads, deployed_network, exit_code, run_count, run_erf, run_eval, run_train, TrainOutcome,
};
pub use config::RunConfig;
pub use data::{evaluate, load_dataset, predict_points, prepare_scene, PreparedScene};
pub use synth::{gen_dataset, generate_scene, Manifest, SyntheticSceneSpec, CLASS_NAMES, GROUND};
