//! Weight and layer importance: magnitude masks, relative L1 information,
//! and histogram entropy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::numerics::{Matrix, Scalar};
use crate::params::{LayerKind, ParameterSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[serde(alias = "l1_relative")]
    L1,
    #[default]
    Entropy,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::L1 => "l1",
            Criterion::Entropy => "entropy",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "l1_relative" => Ok(Criterion::L1),
            "entropy" => Ok(Criterion::Entropy),
            _ => config_err(format!("unknown criterion `{s}`")),
        }
    }
}

/// Histogram settings for [`entropy`]. Entropy is in nats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntropyConfig {
    pub bins: usize,
}

impl EntropyConfig {
    pub fn new(bins: usize) -> Result<Self> {
        if bins < 2 {
            return config_err(format!("entropy needs at least 2 bins, got {bins}"));
        }
        Ok(Self { bins })
    }
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self { bins: 100 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceScore {
    pub layer_name: String,
    pub criterion: Criterion,
    pub value: f64,
}

/// Sum of absolute values.
pub fn layer_l1<T: Scalar>(w: &Matrix<T>) -> f64 {
    w.as_slice().iter().map(|v| v.f64().abs()).sum()
}

/// `‖self‖ / (‖self‖ + ‖peer‖)`; 0.5 when both norms vanish.
pub fn relative_l1<T: Scalar>(w_self: &Matrix<T>, w_peer: &Matrix<T>) -> Result<f64> {
    w_self.check_same_shape(w_peer)?;
    let a = layer_l1(w_self);
    let b = layer_l1(w_peer);
    if a + b == 0.0 {
        return Ok(0.5);
    }
    Ok(a / (a + b))
}

/// Bin index of `v` in `m` equal-width bins over `[min, max]`; `max` itself
/// lands in the last bin.
#[inline]
fn bin_of(v: f64, min: f64, width: f64, m: usize) -> usize {
    let b = ((v - min) / width).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(m - 1)
    }
}

/// Per-bin counts of the flattened matrix; empty when the value range is degenerate.
pub fn histogram<T: Scalar>(w: &Matrix<T>, cfg: EntropyConfig) -> Vec<usize> {
    let vals = w.as_slice();
    if vals.is_empty() {
        return Vec::new();
    }
    let (min, max) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let v = v.f64();
        (lo.min(v), hi.max(v))
    });
    if max == min {
        return Vec::new();
    }
    let width = (max - min) / cfg.bins as f64;
    let mut counts = vec![0usize; cfg.bins];
    for v in vals {
        counts[bin_of(v.f64(), min, width, cfg.bins)] += 1;
    }
    counts
}

/// Shannon entropy (nats) of the weight-value histogram.
pub fn entropy<T: Scalar>(w: &Matrix<T>, cfg: EntropyConfig) -> f64 {
    let counts = histogram(w, cfg);
    let n = w.len() as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Criterion value of `w_self` relative to its peer layer.
pub fn layer_score<T: Scalar>(
    criterion: Criterion,
    w_self: &Matrix<T>,
    w_peer: &Matrix<T>,
    cfg: EntropyConfig,
) -> Result<f64> {
    match criterion {
        Criterion::L1 => relative_l1(w_self, w_peer),
        Criterion::Entropy => {
            w_self.check_same_shape(w_peer)?;
            Ok(entropy(w_self, cfg))
        }
    }
}

/// Positions whose magnitude falls below a threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct PwMask {
    pub layer_name: String,
    pub rows: usize,
    pub cols: usize,
    pub threshold: f64,
    pub mask: Vec<bool>,
}

impl PwMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Marks every entry with `|w| < gamma`.
pub fn pw_mask<T: Scalar>(layer_name: &str, w: &Matrix<T>, gamma: f64) -> Result<PwMask> {
    if !(gamma >= 0.0) {
        return config_err(format!("threshold must be non-negative, got {gamma}"));
    }
    Ok(PwMask {
        layer_name: layer_name.to_string(),
        rows: w.rows(),
        cols: w.cols(),
        threshold: gamma,
        mask: w.as_slice().iter().map(|v| v.f64().abs() < gamma).collect(),
    })
}

/// Entropy of each measured layer. Dense layers are always measured;
/// embedding tables only when `include_embeddings` is set.
pub fn layer_entropies<T: Scalar>(
    model: &ParameterSet<T>,
    cfg: EntropyConfig,
    include_embeddings: bool,
) -> Vec<ImportanceScore> {
    model
        .groups()
        .iter()
        .filter(|g| match g.kind {
            LayerKind::Dense => true,
            LayerKind::Embedding => include_embeddings,
            LayerKind::Norm => false,
        })
        .map(|g| ImportanceScore {
            layer_name: g.name.clone(),
            criterion: Criterion::Entropy,
            value: entropy(&g.weights, cfg),
        })
        .collect()
}

/// Fraction of measured layers whose entropy is below `threshold`.
pub fn invalid_layer_ratio<T: Scalar>(
    model: &ParameterSet<T>,
    threshold: f64,
    cfg: EntropyConfig,
    include_embeddings: bool,
) -> Result<f64> {
    let scores = layer_entropies(model, cfg, include_embeddings);
    if scores.is_empty() {
        return config_err("no measurable layers for invalid-layer ratio");
    }
    let invalid = scores.iter().filter(|s| s.value < threshold).count();
    Ok(invalid as f64 / scores.len() as f64)
}
