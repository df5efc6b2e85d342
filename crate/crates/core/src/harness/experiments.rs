//! Multi-run experiments: the pruning study, ablation grids, and the
//! plot-data tables derived from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cooperation::magnitude_prune;
use crate::criteria::Criterion;
use crate::data::{InteractionDataset, Split};
use crate::error::{config_err, Error, Result};
use crate::eval::{evaluate, Metric};
use crate::harness::config::{Mode, RunConfig, Variant};
use crate::harness::output::{self, RunSummary, HISTORY_FILE};
use crate::harness::train::{fine_tune, run};
use crate::models::Model;
use crate::params::Scope;

pub const PRUNE_FILE: &str = "prune.csv";
pub const PRUNE_PLOT_FILE: &str = "plot_pruning.csv";
pub const GRID_RESULTS_FILE: &str = "grid_results.csv";
pub const GRID_SUMMARY_FILE: &str = "grid_summary.csv";
pub const ALPHA_PLOT_FILE: &str = "plot_alpha.csv";
pub const SCOPE_PLOT_FILE: &str = "plot_scope.csv";
pub const INVALID_RATIO_PLOT_FILE: &str = "plot_invalid_ratio.csv";

pub fn default_fractions() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

/// One pruning fraction evaluated on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRow {
    pub fraction: f64,
    pub zeroed: usize,
    pub metric: Metric,
    #[serde(rename = "N")]
    pub n: usize,
    pub unpruned: f64,
    pub pruned: f64,
    pub fine_tuned: Option<f64>,
}

impl PruneRow {
    /// `(unpruned − pruned) / unpruned`, 0 when the unpruned value is 0.
    pub fn degradation(&self) -> f64 {
        relative_drop(self.unpruned, self.pruned)
    }

    pub fn tuned_degradation(&self) -> Option<f64> {
        self.fine_tuned.map(|v| relative_drop(self.unpruned, v))
    }
}

fn relative_drop(base: f64, v: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (base - v) / base
    }
}

/// Prunes copies of `base` at each fraction, evaluates them, and optionally
/// fine-tunes each pruned copy with its zeros frozen.
pub fn run_prune_experiment(
    cfg: &RunConfig,
    ds: &InteractionDataset,
    base: &Model,
    fractions: &[f64],
    fine_tune_epochs: usize,
) -> Result<Vec<PruneRow>> {
    let eval_cfg = cfg.eval_config();
    let reference = evaluate(base, ds, Split::Test, &eval_cfg)?;
    let mut rows = Vec::new();
    for &rho in fractions {
        let mut pruned = base.clone();
        let zeroed = magnitude_prune(pruned.params_mut(), rho, cfg.scope)?;
        let after = evaluate(&pruned, ds, Split::Test, &eval_cfg)?;
        let tuned = if fine_tune_epochs > 0 {
            let r = fine_tune(cfg, ds, pruned, fine_tune_epochs, true)?;
            Some(r.test)
        } else {
            None
        };
        log::info!(
            "prune {rho}: {zeroed} zeroed, MRR@5 {:.5} -> {:.5}{}",
            reference.mrr5(),
            after.mrr5(),
            tuned
                .as_ref()
                .map_or(String::new(), |t| format!(" (fine-tuned {:.5})", t.mrr5()))
        );
        for &n in &eval_cfg.ns {
            for metric in Metric::ALL {
                let get = |r: &crate::eval::EvalResult| r.value(metric, n).unwrap_or(0.0);
                rows.push(PruneRow {
                    fraction: rho,
                    zeroed,
                    metric,
                    n,
                    unpruned: get(&reference),
                    pruned: get(&after),
                    fine_tuned: tuned.as_ref().map(get),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_prune_rows(rows: &[PruneRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(PRUNE_FILE))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(PRUNE_PLOT_FILE))?;
    w.write_record(["fraction", "degradation", "fine_tuned_degradation"])?;
    for r in rows.iter().filter(|r| r.metric == Metric::Mrr && r.n == 5) {
        w.write_record([
            r.fraction.to_string(),
            r.degradation().to_string(),
            r.tuned_degradation().map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Axes of an ablation grid. Empty axes keep the base config's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub criteria: Vec<Criterion>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub scopes: Vec<Scope>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl GridSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    /// One config per (cell, seed), cells in row-major order of the axes.
    pub fn expand(&self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        fn axis<T: Clone>(v: &[T], default: T) -> Vec<T> {
            if v.is_empty() {
                vec![default]
            } else {
                v.to_vec()
            }
        }
        let mut out = Vec::new();
        for mode in axis(&self.modes, base.mode) {
            for criterion in axis(&self.criteria, base.criterion) {
                for alpha in axis(&self.alphas, base.alpha) {
                    for variant in axis(&self.variants, base.variant) {
                        for scope in axis(&self.scopes, base.scope) {
                            let cell = format!(
                                "{mode}_{criterion}_a{alpha}_{variant}_{}",
                                scope.to_string().replace(',', "+")
                            );
                            for seed in axis(&self.seeds, base.seed) {
                                let mut cfg = base.clone();
                                cfg.mode = mode;
                                cfg.criterion = criterion;
                                cfg.alpha = alpha;
                                cfg.variant = variant;
                                cfg.scope = scope;
                                cfg.seed = seed;
                                out.push((cell.clone(), cfg));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell: String,
    pub mode: Mode,
    pub criterion: Criterion,
    pub alpha: f64,
    pub variant: Variant,
    pub scope: Scope,
    pub seed: u64,
    pub valid_mrr5: f64,
    pub test_mrr5: f64,
    pub test_hit5: f64,
    pub test_ndcg5: f64,
    pub test_mrr20: f64,
    pub test_hit20: f64,
    pub test_ndcg20: f64,
}

impl GridRow {
    fn new(cell: &str, cfg: &RunConfig, s: &RunSummary) -> Self {
        let t = |m, n| s.test.value(m, n).unwrap_or(f64::NAN);
        Self {
            cell: cell.to_string(),
            mode: cfg.mode,
            criterion: cfg.criterion,
            alpha: cfg.alpha,
            variant: cfg.variant,
            scope: cfg.scope,
            seed: cfg.seed,
            valid_mrr5: s.valid.mrr5(),
            test_mrr5: t(Metric::Mrr, 5),
            test_hit5: t(Metric::Hit, 5),
            test_ndcg5: t(Metric::Ndcg, 5),
            test_mrr20: t(Metric::Mrr, 20),
            test_hit20: t(Metric::Hit, 20),
            test_ndcg20: t(Metric::Ndcg, 20),
        }
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Runs every grid cell and seed under `out/cells/<cell>/s<seed>`.
/// Runs that already have a summary are loaded instead of retrained.
pub fn run_ablation_grid(
    base: &RunConfig,
    spec: &GridSpec,
    ds: &InteractionDataset,
    out: &Path,
) -> Result<Vec<GridRow>> {
    let runs = spec.expand(base);
    if runs.is_empty() {
        return config_err("empty grid");
    }
    let mut rows = Vec::new();
    for (cell, mut cfg) in runs {
        let dir = out.join("cells").join(&cell).join(format!("s{}", cfg.seed));
        cfg.out = dir.clone();
        let summary = match RunSummary::load(&dir) {
            Ok(s) => {
                log::info!("resuming: {} already done", dir.display());
                s
            }
            Err(_) => {
                let outcome = run(&cfg, ds)?;
                output::write_run(&outcome, &dir)?;
                RunSummary::load(&dir)?
            }
        };
        rows.push(GridRow::new(&cell, &cfg, &summary));
    }
    write_grid(&rows, out)?;
    Ok(rows)
}

type SummaryColumn = (&'static str, usize, fn(&GridRow) -> f64);

fn write_grid(rows: &[GridRow], out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join(GRID_RESULTS_FILE))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;

    let mut cells: BTreeMap<&str, Vec<&GridRow>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        if !cells.contains_key(r.cell.as_str()) {
            order.push(r.cell.as_str());
        }
        cells.entry(&r.cell).or_default().push(r);
    }
    let mut w = csv::Writer::from_path(out.join(GRID_SUMMARY_FILE))?;
    w.write_record([
        "cell",
        "mode",
        "criterion",
        "alpha",
        "variant",
        "scope",
        "runs",
        "metric",
        "N",
        "mean",
        "std",
    ])?;
    for cell in order {
        let rs = &cells[cell];
        let first = rs[0];
        let columns: [SummaryColumn; 6] = [
            ("MRR", 5, |r| r.test_mrr5),
            ("HIT", 5, |r| r.test_hit5),
            ("NDCG", 5, |r| r.test_ndcg5),
            ("MRR", 20, |r| r.test_mrr20),
            ("HIT", 20, |r| r.test_hit20),
            ("NDCG", 20, |r| r.test_ndcg20),
        ];
        for (metric, n, get) in columns {
            let (mean, std) = mean_std(&rs.iter().map(|r| get(r)).collect::<Vec<_>>());
            w.write_record([
                cell.to_string(),
                first.mode.to_string(),
                first.criterion.to_string(),
                first.alpha.to_string(),
                first.variant.to_string(),
                first.scope.to_string(),
                rs.len().to_string(),
                metric.to_string(),
                n.to_string(),
                mean.to_string(),
                std.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn group_plot<K: Ord + ToString>(
    rows: &[GridRow],
    key: impl Fn(&GridRow) -> K,
    header: &str,
    path: &Path,
) -> Result<usize> {
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry(key(r)).or_default().push(r.test_mrr5);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([header, "runs", "mean_test_mrr5", "std_test_mrr5"])?;
    for (k, v) in &groups {
        let (m, s) = mean_std(v);
        w.write_record([k.to_string(), v.len().to_string(), m.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(groups.len())
}

struct Alpha(f64);

impl PartialEq for Alpha {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Alpha {}

impl PartialOrd for Alpha {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Alpha {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl std::fmt::Display for Alpha {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Writes plot-data tables for whatever results `dir` holds and returns
/// the names of the files written.
pub fn write_report(dir: &Path) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let grid = dir.join(GRID_RESULTS_FILE);
    if grid.exists() {
        let rows = csv::Reader::from_path(&grid)?
            .deserialize()
            .collect::<std::result::Result<Vec<GridRow>, _>>()?;
        let pc: Vec<GridRow> = rows.iter().filter(|r| r.mode == Mode::PcLw).cloned().collect();
        let source = if pc.is_empty() { &rows } else { &pc };
        group_plot(source, |r| Alpha(r.alpha), "alpha", &dir.join(ALPHA_PLOT_FILE))?;
        group_plot(source, |r| r.scope.to_string(), "scope", &dir.join(SCOPE_PLOT_FILE))?;
        group_plot(
            &rows,
            |r| format!("{}/{}", r.mode, r.variant),
            "mode_variant",
            &dir.join("plot_variant.csv"),
        )?;
        written.extend([
            ALPHA_PLOT_FILE.to_string(),
            SCOPE_PLOT_FILE.to_string(),
            "plot_variant.csv".to_string(),
        ]);
    }
    let history = dir.join(HISTORY_FILE);
    if history.exists() {
        let mut r = csv::Reader::from_path(&history)?;
        let mut w = csv::Writer::from_path(dir.join(INVALID_RATIO_PLOT_FILE))?;
        w.write_record(["epoch", "peer", "invalid_ratio"])?;
        for rec in r.records() {
            let rec = rec?;
            w.write_record([&rec[0], &rec[1], &rec[4]])?;
        }
        w.flush()?;
        written.push(INVALID_RATIO_PLOT_FILE.to_string());
    }
    if written.is_empty() && !dir.join(PRUNE_PLOT_FILE).exists() {
        return config_err(format!("{} holds no run, grid, or prune results", dir.display()));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    #[test]
    fn grid_expansion_shape() {
        let base = RunConfig::new(ModelKind::Bpr, Mode::PcLw);
        let spec = GridSpec {
            alphas: vec![10.0, 20.0, 30.0, 40.0],
            ..Default::default()
        };
        let cells = spec.expand(&base);
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[2].1.alpha, 30.0);
        let spec = GridSpec {
            variants: vec![Variant::Dd, Variant::Sd, Variant::Ds],
            seeds: vec![1, 2],
            ..Default::default()
        };
        let cells = spec.expand(&base);
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].0, cells[1].0);
        assert_eq!(GridSpec::default().expand(&base)[0].1, base);
    }

    #[test]
    fn grid_spec_parses() {
        let spec: GridSpec =
            toml::from_str("alphas = [10, 20]\nscopes = [\"embedding\", \"all\"]\nvariants = [\"SD\"]\n").unwrap();
        assert_eq!(spec.alphas, vec![10.0, 20.0]);
        assert_eq!(spec.scopes[1], Scope::ALL);
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn degradation_values() {
        let r = PruneRow {
            fraction: 0.3,
            zeroed: 3,
            metric: Metric::Mrr,
            n: 5,
            unpruned: 0.2,
            pruned: 0.1,
            fine_tuned: Some(0.15),
        };
        assert!((r.degradation() - 0.5).abs() < 1e-12);
        assert!((r.tuned_degradation().unwrap() - 0.25).abs() < 1e-12);
    }
}
