//! Top-N ranking metrics over leave-one-out splits.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, ItemId, Split, PAD};
use crate::error::{config_err, data_err, Error, Result};
use crate::models::{Model, UserContext};

pub const DEFAULT_NS: [usize; 2] = [5, 20];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Mrr,
    Hit,
    Ndcg,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mrr, Metric::Hit, Metric::Ndcg];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mrr => "MRR",
            Metric::Hit => "HIT",
            Metric::Ndcg => "NDCG",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MRR" => Ok(Metric::Mrr),
            "HIT" => Ok(Metric::Hit),
            "NDCG" => Ok(Metric::Ndcg),
            _ => config_err(format!("unknown metric `{s}`")),
        }
    }
}

/// 1 + the number of candidates scoring at least as high as the target.
///
/// `scores[k]` is the score of item `k + 1`. Items in `excluded` are not
/// candidates. Ties count against the target. A NaN target score ranks last.
pub fn rank_of_target<T: PartialOrd + Copy>(scores: &[T], target: ItemId, excluded: &[ItemId]) -> Result<usize> {
    if target == PAD || target as usize > scores.len() {
        return data_err(format!("target item {target} out of range 1..={}", scores.len()));
    }
    if excluded.contains(&target) {
        return data_err(format!("target item {target} is excluded from ranking"));
    }
    let t = scores[target as usize - 1];
    let mut skip = vec![false; scores.len()];
    for &e in excluded {
        if e != PAD && (e as usize) <= scores.len() {
            skip[e as usize - 1] = true;
        }
    }
    skip[target as usize - 1] = true;
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    let beats = |s: T| !(s < t);
    let above = scores
        .iter()
        .zip(&skip)
        .filter(|&(&s, &skipped)| !skipped && beats(s))
        .count();
    Ok(1 + above)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hit: f64,
    pub ndcg: f64,
}

impl Metrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Mrr => self.mrr,
            Metric::Hit => self.hit,
            Metric::Ndcg => self.ndcg,
        }
    }
}

pub fn metrics_at_n(ranks: &[usize], n: usize) -> Result<Metrics> {
    if ranks.is_empty() {
        return config_err("no ranks to aggregate");
    }
    if n == 0 {
        return config_err("N must be positive");
    }
    let mut m = Metrics::default();
    for &r in ranks {
        if r == 0 {
            return config_err("ranks start at 1");
        }
        if r <= n {
            m.hit += 1.0;
            m.mrr += 1.0 / r as f64;
            m.ndcg += 1.0 / ((r + 1) as f64).log2();
        }
    }
    let k = ranks.len() as f64;
    m.hit /= k;
    m.mrr /= k;
    m.ndcg /= k;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ns: Vec<usize>,
    /// Drop the user's training items from the candidate list.
    pub exclude_train: bool,
    /// History window for sequence models.
    pub seq_len: usize,
}

impl EvalConfig {
    pub fn new(seq_len: usize) -> Self {
        Self {
            ns: DEFAULT_NS.to_vec(),
            exclude_train: true,
            seq_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model: String,
    pub split: Split,
    pub users: usize,
    /// `(N, metrics@N)` in the configured order.
    pub at: Vec<(usize, Metrics)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub invalid_layer_ratio: Option<f64>,
}

impl EvalResult {
    pub const CSV_HEADER: &'static str = "run_id,model,split,metric,N,value";

    pub fn value(&self, metric: Metric, n: usize) -> Option<f64> {
        self.at.iter().find(|(k, _)| *k == n).map(|(_, m)| m.get(metric))
    }

    pub fn mrr5(&self) -> f64 {
        self.value(Metric::Mrr, 5).unwrap_or(0.0)
    }

    pub fn write_csv_rows<W: Write>(&self, run_id: &str, out: &mut W) -> Result<()> {
        for (n, m) in &self.at {
            for metric in Metric::ALL {
                writeln!(
                    out,
                    "{run_id},{},{},{metric},{n},{}",
                    self.model,
                    self.split,
                    m.get(metric)
                )?;
            }
        }
        Ok(())
    }

    /// `HIT@N ≥ NDCG@N ≥ MRR@N` at each N, and MRR/HIT non-decreasing in N.
    pub fn is_consistent(&self) -> bool {
        let inner = self
            .at
            .iter()
            .all(|(_, m)| m.hit + 1e-12 >= m.ndcg && m.ndcg + 1e-12 >= m.mrr && m.mrr >= 0.0);
        let mut sorted = self.at.clone();
        sorted.sort_by_key(|(n, _)| *n);
        let monotone = sorted
            .windows(2)
            .all(|w| w[1].1.mrr + 1e-12 >= w[0].1.mrr && w[1].1.hit + 1e-12 >= w[0].1.hit);
        inner && monotone
    }
}

/// Per-user ranks from an arbitrary scorer, in user order.
///
/// Users are split across threads; the result does not depend on the
/// thread count.
pub fn user_ranks<F>(ds: &InteractionDataset, split: Split, exclude_train: bool, score: F) -> Result<Vec<usize>>
where
    F: Fn(usize) -> Result<Vec<f32>> + Sync,
{
    let n = ds.n_users();
    if n == 0 {
        return data_err("dataset has no users");
    }
    let rank_user = |u: usize| -> Result<usize> {
        let scores = score(u)?;
        if scores.len() != ds.n_items() {
            return config_err(format!(
                "scorer returned {} scores for {} items",
                scores.len(),
                ds.n_items()
            ));
        }
        let target = ds.target(u, split);
        let excluded: Vec<ItemId> = if exclude_train {
            ds.train_set(u).iter().copied().filter(|&i| i != target).collect()
        } else {
            Vec::new()
        };
        rank_of_target(&scores, target, &excluded)
    };
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(n);
    let chunk = n.div_ceil(workers);
    let parts: Vec<Result<Vec<usize>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let rank_user = &rank_user;
                s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(rank_user).collect())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("eval worker panicked"))
            .collect()
    });
    let mut ranks = Vec::with_capacity(n);
    for p in parts {
        ranks.extend(p?);
    }
    Ok(ranks)
}

pub fn aggregate(tag: &str, split: Split, ranks: &[usize], ns: &[usize]) -> Result<EvalResult> {
    let at = ns
        .iter()
        .map(|&n| Ok((n, metrics_at_n(ranks, n)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult {
        model: tag.to_string(),
        split,
        users: ranks.len(),
        at,
        invalid_layer_ratio: None,
    })
}

fn scores_for(model: &Model, ds: &InteractionDataset, u: usize, split: Split, seq_len: usize) -> Result<Vec<f32>> {
    let ctx = model.context(ds, u, split, seq_len);
    if let UserContext::History(h) = &ctx {
        if h.iter().all(|&i| i == PAD) {
            // No history: every item ties at zero.
            return Ok(vec![0.0; ds.n_items()]);
        }
    }
    model.score_all_items(&ctx)
}

pub fn evaluate(model: &Model, ds: &InteractionDataset, split: Split, cfg: &EvalConfig) -> Result<EvalResult> {
    let ranks = user_ranks(ds, split, cfg.exclude_train, |u| {
        scores_for(model, ds, u, split, cfg.seq_len)
    })?;
    aggregate(model.kind().as_str(), split, &ranks, &cfg.ns)
}

/// Scores averaged across two models. Neither model is modified.
pub fn evaluate_ensemble(
    a: &Model,
    b: &Model,
    ds: &InteractionDataset,
    split: Split,
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    let ranks = user_ranks(ds, split, cfg.exclude_train, |u| {
        crate::cooperation::ensemble_scores(
            &scores_for(a, ds, u, split, cfg.seq_len)?,
            &scores_for(b, ds, u, split, cfg.seq_len)?,
        )
    })?;
    aggregate(&format!("ensemble-m2-{}", a.kind()), split, &ranks, &cfg.ns)
}
