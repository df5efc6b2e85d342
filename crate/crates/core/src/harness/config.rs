//! Run configuration: a flat key-value file that mirrors every CLI flag.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cooperation::{Cadence, LwConfig, PwConfig};
use crate::criteria::{Criterion, EntropyConfig};
use crate::data::{self, InteractionDataset};
use crate::error::{config_err, Error, Result};
use crate::eval::{EvalConfig, DEFAULT_NS};
use crate::models::{HyperParams, ModelKind};
use crate::numerics::RngStream;
use crate::params::Scope;
use crate::synthetic::{self, SyntheticConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Single,
    PcLw,
    PcPw,
    PcNoise,
    EnsembleM2,
    Prune,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::PcLw => "pc-lw",
            Mode::PcPw => "pc-pw",
            Mode::PcNoise => "pc-noise",
            Mode::EnsembleM2 => "ensemble-m2",
            Mode::Prune => "prune",
        }
    }

    /// Two peers that exchange weights.
    pub fn is_peer_collaboration(self) -> bool {
        matches!(self, Mode::PcLw | Mode::PcPw)
    }

    pub fn peer_count(self) -> usize {
        match self {
            Mode::PcLw | Mode::PcPw | Mode::EnsembleM2 => 2,
            Mode::Single | Mode::PcNoise | Mode::Prune => 1,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Mode::Single),
            "pc-lw" => Ok(Mode::PcLw),
            "pc-pw" => Ok(Mode::PcPw),
            "pc-noise" => Ok(Mode::PcNoise),
            "ensemble-m2" => Ok(Mode::EnsembleM2),
            "prune" => Ok(Mode::Prune),
            _ => config_err(format!("unknown mode `{s}`")),
        }
    }
}

/// How the two peers differ: learning rate (first letter) and data order
/// (second letter), each Different or Same.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    #[default]
    Dd,
    Sd,
    Ds,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dd => "DD",
            Variant::Sd => "SD",
            Variant::Ds => "DS",
        }
    }

    pub fn same_lr(self) -> bool {
        self == Variant::Sd
    }

    pub fn same_order(self) -> bool {
        self == Variant::Ds
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DD" => Ok(Variant::Dd),
            "SD" => Ok(Variant::Sd),
            "DS" => Ok(Variant::Ds),
            _ => config_err(format!("unknown variant `{s}` (expected DD, SD or DS)")),
        }
    }
}

fn default_alpha() -> f64 {
    30.0
}
fn default_gamma() -> f64 {
    1e-3
}
fn default_bins() -> usize {
    100
}
fn default_seed() -> u64 {
    42
}
fn default_epochs() -> usize {
    20
}
fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}
fn default_patience() -> usize {
    10
}
fn default_noise_std() -> f64 {
    0.01
}
fn default_ns() -> Vec<usize> {
    DEFAULT_NS.to_vec()
}
fn default_true() -> bool {
    true
}
fn default_invalid_threshold() -> f64 {
    0.5
}
fn default_synthetic_seed() -> u64 {
    SyntheticConfig::default().seed
}
fn default_synthetic_users() -> usize {
    SyntheticConfig::default().users
}
fn default_synthetic_items() -> usize {
    SyntheticConfig::default().items
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub mode: Mode,
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub scope: Scope,
    /// First peer's learning rate; the model's desk default when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta1: Option<f64>,
    /// Second peer's learning rate; `eta1 × 0.5` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta2: Option<f64>,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Sequence length for history-based models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default)]
    pub coop_every: Cadence,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub parallel: bool,

    /// Interaction file; the bundled synthetic generator when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default = "default_synthetic_seed")]
    pub synthetic_seed: u64,
    #[serde(default = "default_synthetic_users")]
    pub synthetic_users: usize,
    #[serde(default = "default_synthetic_items")]
    pub synthetic_items: usize,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,

    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_ns")]
    pub ns: Vec<usize>,
    #[serde(default = "default_true")]
    pub exclude_train: bool,
    #[serde(default = "default_invalid_threshold")]
    pub invalid_threshold: f64,
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
}

impl RunConfig {
    pub fn new(model: ModelKind, mode: Mode) -> Self {
        Self {
            model,
            mode,
            criterion: Criterion::default(),
            alpha: default_alpha(),
            gamma: default_gamma(),
            bins: default_bins(),
            scope: Scope::ALL,
            eta1: None,
            eta2: None,
            variant: Variant::Dd,
            seed: default_seed(),
            epochs: default_epochs(),
            t: None,
            coop_every: Cadence::Epoch,
            out: default_out(),
            parallel: false,
            data: None,
            synthetic_seed: default_synthetic_seed(),
            synthetic_users: default_synthetic_users(),
            synthetic_items: default_synthetic_items(),
            batch_size: None,
            dim: None,
            l2: None,
            dropout: None,
            blocks: None,
            patience: default_patience(),
            noise_std: default_noise_std(),
            ns: default_ns(),
            exclude_train: true,
            invalid_threshold: default_invalid_threshold(),
            save_checkpoints: true,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The resolved config as flat `key → value` strings (for checkpoints).
    pub fn to_map(&self) -> Result<BTreeMap<String, String>> {
        let value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let table = value.as_table().expect("config serializes to a table");
        Ok(table
            .iter()
            .map(|(k, v)| {
                let s = match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), s)
            })
            .collect())
    }

    pub fn hyper_params(&self) -> HyperParams {
        let mut hp = HyperParams::desk(self.model);
        if let Some(v) = self.batch_size {
            hp.batch_size = v;
        }
        if let Some(v) = self.dim {
            hp.dim = v;
        }
        if let Some(v) = self.l2 {
            hp.l2 = v;
        }
        if let Some(v) = self.dropout {
            hp.dropout = v;
        }
        if let Some(v) = self.blocks {
            hp.blocks = v;
        }
        if let Some(v) = self.t {
            hp.seq_len = v;
        }
        hp.learning_rate = self.eta1();
        hp
    }

    pub fn eta1(&self) -> f64 {
        self.eta1.unwrap_or(HyperParams::desk(self.model).learning_rate)
    }

    /// Second peer's learning rate after applying the variant.
    pub fn eta2(&self) -> f64 {
        if self.variant.same_lr() {
            return self.eta1();
        }
        self.eta2.unwrap_or(self.eta1() * 0.5)
    }

    pub fn lw_config(&self) -> LwConfig {
        LwConfig {
            alpha: self.alpha,
            criterion: self.criterion,
            cadence: self.coop_every,
            scope: self.scope,
        }
    }

    pub fn pw_config(&self) -> PwConfig {
        PwConfig {
            gamma: self.gamma,
            cadence: self.coop_every,
            scope: self.scope,
        }
    }

    pub fn entropy_config(&self) -> Result<EntropyConfig> {
        EntropyConfig::new(self.bins)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            ns: self.ns.clone(),
            exclude_train: self.exclude_train,
            seq_len: self.hyper_params().seq_len,
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            users: self.synthetic_users,
            items: self.synthetic_items,
            seed: self.synthetic_seed,
            ..SyntheticConfig::default()
        }
    }

    pub fn run_id(&self) -> String {
        let mut id = format!("{}-{}-s{}", self.mode, self.model, self.seed);
        if self.mode.is_peer_collaboration() && self.variant != Variant::Dd {
            id.push('-');
            id.push_str(self.variant.as_str());
        }
        id
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper_params().validate()?;
        self.entropy_config()?;
        if self.mode == Mode::PcLw {
            self.lw_config().validate()?;
        }
        if matches!(self.mode, Mode::PcPw | Mode::PcNoise) {
            self.pw_config().validate()?;
        }
        if self.mode == Mode::PcNoise && !(self.noise_std > 0.0) {
            return config_err("noise_std must be positive");
        }
        if !(self.eta1() > 0.0) || !(self.eta2() > 0.0) {
            return config_err("learning rates must be positive");
        }
        if self.mode.is_peer_collaboration() && !self.variant.same_lr() && self.eta1() == self.eta2() {
            return config_err("peer collaboration needs eta1 != eta2 (use variant SD for equal rates)");
        }
        if self.ns.is_empty() || self.ns.contains(&0) {
            return config_err("ns must list positive cutoffs");
        }
        if !self.ns.contains(&5) {
            return config_err("ns must include 5 (model selection uses MRR@5)");
        }
        if let Some(p) = &self.data {
            if !p.exists() {
                return config_err(format!("data file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<InteractionDataset> {
        match &self.data {
            Some(p) => data::ingest(p),
            None => synthetic::dataset(&self.synthetic_config()),
        }
    }
}

/// Random streams of one peer. DS peers share the data order; every peer
/// has its own initialization.
#[derive(Clone, Debug)]
pub struct PeerSeeds {
    pub init: RngStream,
    pub shuffle_seed: u64,
    pub sampler: RngStream,
    pub noise: RngStream,
}

const STREAMS_PER_PEER: u64 = 16;
const INIT: u64 = 0;
const SHUFFLE: u64 = 1;
const SAMPLER: u64 = 2;
const NOISE: u64 = 3;

impl PeerSeeds {
    pub fn new(seed: u64, peer: usize, same_order: bool) -> Self {
        let own = peer as u64 * STREAMS_PER_PEER;
        let data = if same_order { 0 } else { own };
        Self {
            init: RngStream::new(seed, own + INIT),
            shuffle_seed: RngStream::new(seed, data + SHUFFLE).next_u64(),
            sampler: RngStream::new(seed, data + SAMPLER),
            noise: RngStream::new(seed, own + NOISE),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::from_toml("model = \"bpr\"\nmode = \"pc-lw\"\nalpha = 10\n").unwrap();
        assert_eq!(cfg.alpha, 10.0);
        assert_eq!(cfg.eta2(), cfg.eta1() * 0.5);
        assert_eq!(cfg.patience, 10);
        cfg.validate().unwrap();
        assert!(RunConfig::from_toml("model = \"bpr\"\nmode = \"single\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn roundtrip_through_toml() {
        let mut cfg = RunConfig::new(ModelKind::SasLite, Mode::PcPw);
        cfg.coop_every = Cadence::Batches(7);
        cfg.scope = Scope::only(crate::params::LayerRole::Embedding);
        cfg.eta1 = Some(0.01);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        let map = cfg.to_map().unwrap();
        assert_eq!(map["coop_every"], "batches:7");
        assert_eq!(map["scope"], "embedding");
    }

    #[test]
    fn learning_rate_rules() {
        let mut cfg = RunConfig::new(ModelKind::Bpr, Mode::PcLw);
        cfg.eta1 = Some(0.01);
        cfg.eta2 = Some(0.01);
        assert!(cfg.validate().is_err());
        cfg.variant = Variant::Sd;
        cfg.validate().unwrap();
        cfg.eta2 = Some(0.5);
        assert_eq!(cfg.eta2(), 0.01);
        cfg.variant = Variant::Ds;
        assert_eq!(cfg.eta2(), 0.5);
    }

    #[test]
    fn peer_streams() {
        let a = PeerSeeds::new(5, 0, false);
        let b = PeerSeeds::new(5, 1, false);
        let c = PeerSeeds::new(5, 1, true);
        assert_ne!(a.shuffle_seed, b.shuffle_seed);
        assert_eq!(a.shuffle_seed, c.shuffle_seed);
        assert_ne!(a.init.clone().next_u64(), c.init.clone().next_u64());
    }

    #[test]
    fn missing_data_path_rejected() {
        let mut cfg = RunConfig::new(ModelKind::Bpr, Mode::Single);
        cfg.data = Some(PathBuf::from("/definitely/not/here.tsv"));
        assert!(cfg.validate().is_err());
    }
}
