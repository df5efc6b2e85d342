//! Peer-collaboration training for top-N recommender models.
//!
//! Two structurally identical models train with different learning rates
//! and data orders; their weights are merged periodically, either by
//! replacing small weights with the peer's (parameter-wise) or by blending
//! whole layers with an information-driven coefficient (layer-wise).

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cooperation;
pub mod criteria;
pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod params;
pub mod synthetic;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngStream};
pub use params::{LayerGroup, LayerKind, LayerRole, ParameterSet, Scope};
