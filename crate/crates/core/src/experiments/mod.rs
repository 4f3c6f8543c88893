//! Reproducible experiment driver: config resolution, run directories and
//! the experiments behind the `semg` binary.

mod config;
mod run;
mod tasks;

pub use config::{
    apply_override, resolve_config, EvalConfig, ExperimentConfig, GenEnvConfig, PolicyConfig,
    SweepConfig,
};
pub use run::{
    config_hash, output_root, RunDir, RunManifest, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
};
pub use tasks::{
    diffusion_estimates, held_out_rmse, held_out_set, load_denoiser, run_experiment, Experiment,
    RunOutcome, CHECKPOINT_EXT, DENOISER_CHECKPOINT, LOSS_WINDOW, RECURRENT_CHECKPOINT,
};
