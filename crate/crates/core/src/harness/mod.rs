//! Experiment orchestration behind the command-line tool.

pub mod config;
pub mod experiments;
pub mod output;
pub mod train;

use std::path::Path;

use crate::data::InteractionDataset;
use crate::error::Result;

pub use config::{Mode, PeerSeeds, RunConfig, Variant};
pub use experiments::{run_ablation_grid, run_prune_experiment, write_report, GridSpec, PruneRow};
pub use output::{write_run, RunSummary};
pub use train::{fine_tune, run, train_epoch, Coop, Peer, PeerResult, RunOutcome, TrainData};

/// Loads the configured dataset, runs, and writes all outputs to `cfg.out`.
pub fn run_to_dir(cfg: &RunConfig) -> Result<(InteractionDataset, RunOutcome)> {
    cfg.validate()?;
    let ds = cfg.dataset()?;
    let outcome = run(cfg, &ds)?;
    write_run(&outcome, &cfg.out)?;
    Ok((ds, outcome))
}

/// Reads the resolved config written next to a run's outputs.
pub fn load_run_config(dir: &Path) -> Result<RunConfig> {
    RunConfig::load(&dir.join(output::CONFIG_FILE))
}
