//! Recommender models with hand-derived gradients behind one parameter-set
//! and scoring contract.

pub mod bpr;
pub mod checkpoint;
pub mod dnn;
pub mod layers;
pub mod sas;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{left_pad, InteractionDataset, ItemId, Split};
use crate::error::{config_err, Error, Result};
use crate::numerics::RngStream;
use crate::params::ParameterSet;

pub use bpr::BprModel;
pub use dnn::{DnnExample, DnnModel};
pub use sas::{SasBatch, SasConfig, SasModel, SasSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bpr,
    Dnn,
    #[serde(alias = "sas")]
    SasLite,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Bpr => "bpr",
            ModelKind::Dnn => "dnn",
            ModelKind::SasLite => "saslite",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bpr" => Ok(ModelKind::Bpr),
            "dnn" => Ok(ModelKind::Dnn),
            "saslite" | "sas" => Ok(ModelKind::SasLite),
            _ => config_err(format!("unknown model `{s}`")),
        }
    }
}

/// Public benchmark whose tuned settings [`HyperParams::reference`] returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceDataset {
    Retailrocket,
    Ml20m,
    QqBrowser,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub batch_size: usize,
    pub dim: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub dropout: f64,
    pub seq_len: usize,
    pub blocks: usize,
}

impl HyperParams {
    /// Published settings for the three benchmark datasets.
    pub fn reference(model: ModelKind, dataset: ReferenceDataset) -> Self {
        use ReferenceDataset::*;
        let seq_len = match dataset {
            Retailrocket => 10,
            QqBrowser => 50,
            Ml20m => 100,
        };
        let small = dataset == Retailrocket;
        match model {
            ModelKind::SasLite => Self {
                batch_size: 128,
                dim: if small { 64 } else { 256 },
                learning_rate: 1e-3,
                l2: 0.0,
                dropout: match dataset {
                    Retailrocket => 0.3,
                    Ml20m => 0.0,
                    QqBrowser => 0.5,
                },
                seq_len,
                blocks: 2,
            },
            ModelKind::Dnn => Self {
                batch_size: 128,
                dim: if small { 64 } else { 256 },
                learning_rate: 1e-4,
                l2: if dataset == Ml20m { 1e-6 } else { 1e-5 },
                dropout: 0.0,
                seq_len,
                blocks: 1,
            },
            ModelKind::Bpr => Self {
                batch_size: 2048,
                dim: 256,
                learning_rate: 1e-3,
                l2: if dataset == Ml20m { 0.0 } else { 1e-4 },
                dropout: 0.0,
                seq_len,
                blocks: 1,
            },
        }
    }

    /// Settings sized for the bundled synthetic data on a CPU.
    pub fn desk(model: ModelKind) -> Self {
        match model {
            ModelKind::Bpr => Self {
                batch_size: 256,
                dim: 32,
                learning_rate: 5e-3,
                l2: 1e-4,
                dropout: 0.0,
                seq_len: 20,
                blocks: 1,
            },
            ModelKind::Dnn => Self {
                batch_size: 128,
                dim: 32,
                learning_rate: 1e-2,
                l2: 1e-6,
                dropout: 0.0,
                seq_len: 20,
                blocks: 1,
            },
            ModelKind::SasLite => Self {
                batch_size: 64,
                dim: 32,
                learning_rate: 2e-3,
                l2: 0.0,
                dropout: 0.2,
                seq_len: 20,
                blocks: 2,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.dim == 0 || self.blocks == 0 {
            return config_err("batch size, dimension, and blocks must be positive");
        }
        if !(self.learning_rate >= 0.0) || !(self.l2 >= 0.0) {
            return config_err("learning rate and L2 must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return config_err("dropout must lie in [0,1)");
        }
        if self.seq_len < 2 {
            return config_err("sequence length must be >= 2");
        }
        Ok(())
    }
}

/// What a model needs to score one user.
#[derive(Clone, Debug, PartialEq)]
pub enum UserContext {
    User(usize),
    History(Vec<ItemId>),
}

/// A trained or trainable `f32` model of any kind.
#[derive(Clone, Debug)]
pub enum Model {
    Bpr(BprModel<f32>),
    Dnn(DnnModel<f32>),
    SasLite(SasModel<f32>),
}

impl Model {
    pub fn new(kind: ModelKind, ds: &InteractionDataset, hp: &HyperParams, rng: &mut RngStream) -> Result<Self> {
        hp.validate()?;
        Ok(match kind {
            ModelKind::Bpr => Model::Bpr(BprModel::new(ds.n_users(), ds.n_items(), hp.dim, hp.l2, rng)),
            ModelKind::Dnn => Model::Dnn(DnnModel::new(ds.n_items(), hp.dim, hp.l2, rng)),
            ModelKind::SasLite => Model::SasLite(SasModel::new(
                SasConfig {
                    n_items: ds.n_items(),
                    dim: hp.dim,
                    max_len: hp.seq_len,
                    blocks: hp.blocks,
                    dropout: hp.dropout,
                    l2: hp.l2,
                },
                rng,
            )?),
        })
    }

    pub fn from_params(kind: ModelKind, params: ParameterSet<f32>, hp: &HyperParams) -> Result<Self> {
        Ok(match kind {
            ModelKind::Bpr => Model::Bpr(BprModel::from_params(params, hp.l2)?),
            ModelKind::Dnn => Model::Dnn(DnnModel::from_params(params, hp.l2)?),
            ModelKind::SasLite => Model::SasLite(SasModel::from_params(params, hp.dropout, hp.l2)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Bpr(_) => ModelKind::Bpr,
            Model::Dnn(_) => ModelKind::Dnn,
            Model::SasLite(_) => ModelKind::SasLite,
        }
    }

    pub fn params(&self) -> &ParameterSet<f32> {
        match self {
            Model::Bpr(m) => m.params(),
            Model::Dnn(m) => m.params(),
            Model::SasLite(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<f32> {
        match self {
            Model::Bpr(m) => m.params_mut(),
            Model::Dnn(m) => m.params_mut(),
            Model::SasLite(m) => m.params_mut(),
        }
    }

    /// Context visible when predicting `split` for `user`.
    pub fn context(&self, ds: &InteractionDataset, user: usize, split: Split, seq_len: usize) -> UserContext {
        match self {
            Model::Bpr(_) => UserContext::User(user),
            Model::Dnn(_) | Model::SasLite(_) => UserContext::History(left_pad(ds.history(user, split), seq_len)),
        }
    }

    /// One score per catalog item; index `k` is item `k + 1`.
    pub fn score_all_items(&self, ctx: &UserContext) -> Result<Vec<f32>> {
        match (self, ctx) {
            (Model::Bpr(m), UserContext::User(u)) => m.score_all_items(*u),
            (Model::Dnn(m), UserContext::History(h)) => m.score_all_items(h),
            (Model::SasLite(m), UserContext::History(h)) => m.score_all_items(h),
            _ => config_err("user context does not match model kind"),
        }
    }

    /// Model shape facts stored alongside checkpoints.
    pub fn meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("model".into(), self.kind().to_string());
        m.insert("param_count".into(), self.params().param_count().to_string());
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_settings() {
        let sas = HyperParams::reference(ModelKind::SasLite, ReferenceDataset::Ml20m);
        assert_eq!((sas.dim, sas.learning_rate, sas.batch_size), (256, 1e-3, 128));
        let dnn = HyperParams::reference(ModelKind::Dnn, ReferenceDataset::Retailrocket);
        assert_eq!((dnn.dim, dnn.learning_rate, dnn.l2), (64, 1e-4, 1e-5));
        let bpr = HyperParams::reference(ModelKind::Bpr, ReferenceDataset::QqBrowser);
        assert_eq!((bpr.batch_size, bpr.seq_len), (2048, 50));
    }

    #[test]
    fn kind_roundtrip() {
        for k in [ModelKind::Bpr, ModelKind::Dnn, ModelKind::SasLite] {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
        }
        assert!("gru4rec".parse::<ModelKind>().is_err());
    }
}
