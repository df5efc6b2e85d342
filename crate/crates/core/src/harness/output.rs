//! Files written for every run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cooperation::CooperationReport;
use crate::error::Result;
use crate::eval::EvalResult;
use crate::harness::train::{Checksums, EpochRecord, RunOutcome};
use crate::models::checkpoint::{self, Checkpoint};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const COOPERATION_FILE: &str = "cooperation.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const MODEL_CHECKPOINT: &str = "model";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub model: String,
    pub selected_peer: usize,
    pub best_epochs: Vec<usize>,
    pub valid: EvalResult,
    pub test: EvalResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_checksums: Option<Checksums>,
}

impl RunSummary {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(SUMMARY_FILE))?)?)
    }
}

pub fn write_metrics<W: Write>(out: &mut W, run_id: &str, results: &[&EvalResult]) -> Result<()> {
    writeln!(out, "{}", EvalResult::CSV_HEADER)?;
    for r in results {
        r.write_csv_rows(run_id, out)?;
    }
    Ok(())
}

pub fn write_cooperation<W: Write>(out: &mut W, reports: &[CooperationReport]) -> Result<()> {
    writeln!(out, "{}", CooperationReport::CSV_HEADER)?;
    for r in reports {
        r.write_csv_rows(out)?;
    }
    Ok(())
}

pub fn write_history<W: Write>(out: &mut W, history: &[EpochRecord]) -> Result<()> {
    writeln!(out, "{}", EpochRecord::CSV_HEADER)?;
    for h in history {
        writeln!(
            out,
            "{},{},{},{},{},{:016x}",
            h.epoch,
            h.peer + 1,
            h.train_loss,
            h.valid_mrr5,
            h.invalid_ratio,
            h.checksum
        )?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes config, metrics, history, cooperation log, summary, and
/// checkpoints of `outcome` into `dir`.
pub fn write_run(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cfg = &outcome.config;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;

    let tag = outcome.tag();
    let mut peer_rows = Vec::new();
    if outcome.peers.len() > 1 {
        for (k, p) in outcome.peers.iter().enumerate() {
            for r in [&p.valid, &p.test] {
                let mut r = r.clone();
                r.model = format!("{tag}/peer{}", k + 1);
                peer_rows.push(r);
            }
        }
    }
    let mut rows = vec![&outcome.valid, &outcome.test];
    rows.extend(peer_rows.iter());
    let mut f = create(&dir.join(METRICS_FILE))?;
    write_metrics(&mut f, &outcome.run_id, &rows)?;
    f.flush()?;

    let mut f = create(&dir.join(HISTORY_FILE))?;
    write_history(&mut f, &outcome.history)?;
    f.flush()?;

    let mut f = create(&dir.join(COOPERATION_FILE))?;
    write_cooperation(&mut f, &outcome.cooperation)?;
    f.flush()?;

    let summary = RunSummary {
        run_id: outcome.run_id.clone(),
        model: tag,
        selected_peer: outcome.selected + 1,
        best_epochs: outcome.peers.iter().map(|p| p.best_epoch).collect(),
        valid: outcome.valid.clone(),
        test: outcome.test.clone(),
        ensemble_checksums: outcome.ensemble_checksums,
    };

    if cfg.save_checkpoints {
        let mut base = cfg.to_map()?;
        // The output location is not part of the model; leaving it out keeps
        // checkpoints of identical runs byte-identical wherever they are written.
        base.remove("out");
        let ckpt_dir = dir.join(CHECKPOINT_DIR);
        for (k, p) in outcome.peers.iter().enumerate() {
            let mut config = base.clone();
            config.insert("run_id".into(), outcome.run_id.clone());
            config.insert("peer".into(), (k + 1).to_string());
            config.insert("best_epoch".into(), p.best_epoch.to_string());
            let ckpt = Checkpoint {
                config,
                params: p.params.clone(),
            };
            if outcome.peers.len() > 1 {
                checkpoint::save(&ckpt_dir.join(format!("peer{}", k + 1)), &ckpt)?;
            }
            if k == outcome.selected {
                checkpoint::save(&ckpt_dir.join(MODEL_CHECKPOINT), &ckpt)?;
            }
        }
    }
    // Written last so that its presence marks a finished run.
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}
