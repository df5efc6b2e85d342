//! Weight exchange between two structurally identical peers.
//!
//! Layer-wise cooperation blends each in-scope layer of the two peers with
//! an adaptive coefficient derived from a per-layer criterion. Parameter-wise
//! cooperation replaces individual small-magnitude weights with the peer's
//! value at the same position. Both read pre-update snapshots, so the result
//! does not depend on which peer or which layer is processed first.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::criteria::{layer_l1, layer_score, Criterion, EntropyConfig};
use crate::error::{config_err, Error, Result};
use crate::numerics::{sigmoid, RngStream, Scalar};
use crate::params::{LayerKind, ParameterSet, Scope};

/// How often cooperation runs during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Cadence {
    #[default]
    Epoch,
    Batches(usize),
}

impl fmt::Display for Cadence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cadence::Epoch => f.write_str("epoch"),
            Cadence::Batches(k) => write!(f, "batches:{k}"),
        }
    }
}

impl FromStr for Cadence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "epoch" {
            return Ok(Cadence::Epoch);
        }
        if let Some(k) = s.strip_prefix("batches:") {
            let k: usize = k.parse().map_err(|_| Error::Config(format!("bad cadence `{s}`")))?;
            if k == 0 {
                return config_err("cadence batches:K needs K >= 1");
            }
            return Ok(Cadence::Batches(k));
        }
        config_err(format!("bad cadence `{s}` (expected epoch or batches:K)"))
    }
}

impl Serialize for Cadence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Cadence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LwConfig {
    pub alpha: f64,
    pub criterion: Criterion,
    pub cadence: Cadence,
    pub scope: Scope,
}

impl LwConfig {
    pub fn new(alpha: f64, criterion: Criterion) -> Result<Self> {
        let cfg = Self {
            alpha,
            criterion,
            cadence: Cadence::Epoch,
            scope: Scope::ALL,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return config_err(format!("alpha must be positive, got {}", self.alpha));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PwConfig {
    pub gamma: f64,
    pub cadence: Cadence,
    pub scope: Scope,
}

impl PwConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        let cfg = Self {
            gamma,
            cadence: Cadence::Epoch,
            scope: Scope::ALL,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return config_err(format!("gamma must be non-negative, got {}", self.gamma));
        }
        Ok(())
    }
}

/// One layer's outcome of a cooperation event. "Self" is the first peer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCooperation {
    pub layer: String,
    /// Criterion of each peer (LW) or layer L1 norm of each peer (PW).
    pub h_self: f64,
    pub h_peer: f64,
    /// Blend coefficients; `None` in PW mode.
    pub mu_self: Option<f64>,
    pub mu_peer: Option<f64>,
    pub replaced_self: usize,
    pub replaced_peer: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CooperationReport {
    pub epoch: usize,
    /// `entropy`, `l1`, or `magnitude` for PW.
    pub criterion: String,
    pub layers: Vec<LayerCooperation>,
}

impl CooperationReport {
    pub const CSV_HEADER: &'static str = "epoch,layer,criterion,h_self,h_peer,mu_self,replaced_count";

    /// Two rows per layer, one from each peer's side (`peer1/<layer>`, `peer2/<layer>`).
    pub fn write_csv_rows<W: Write>(&self, out: &mut W) -> Result<()> {
        let fmt_mu = |m: Option<f64>| m.map_or(String::new(), |v| format!("{v}"));
        for l in &self.layers {
            writeln!(
                out,
                "{},peer1/{},{},{},{},{},{}",
                self.epoch,
                l.layer,
                self.criterion,
                l.h_self,
                l.h_peer,
                fmt_mu(l.mu_self),
                l.replaced_self
            )?;
            writeln!(
                out,
                "{},peer2/{},{},{},{},{},{}",
                self.epoch,
                l.layer,
                self.criterion,
                l.h_peer,
                l.h_self,
                fmt_mu(l.mu_peer),
                l.replaced_peer
            )?;
        }
        Ok(())
    }
}

/// Blend weight of the "self" layer: `σ(α (h_self − h_peer))`.
pub fn coefficient(h_self: f64, h_peer: f64, alpha: f64) -> f64 {
    sigmoid(alpha * (h_self - h_peer))
}

fn blend<T: Scalar>(a: &mut [T], b: &mut [T], mu: f64) {
    let nu = 1.0 - mu;
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let v = T::of(mu * x.f64() + nu * y.f64());
        *x = v;
        *y = v;
    }
}

/// Layer-wise cooperation. Every in-scope layer of both peers is replaced
/// by `μ W_self + (1 − μ) W_peer` with `μ = coefficient(h_self, h_peer, α)`.
/// Because the peer's coefficient is `1 − μ`, both peers end up holding the
/// same blended values. Bias and normalization parameters follow the
/// layer's coefficient; the criterion looks at the main weights only.
pub fn lw_cooperate<T: Scalar>(
    first: &mut ParameterSet<T>,
    second: &mut ParameterSet<T>,
    cfg: &LwConfig,
    entropy_cfg: EntropyConfig,
) -> Result<CooperationReport> {
    cfg.validate()?;
    first.check_same_structure(second)?;

    // Scores from the untouched snapshot before any layer is rewritten.
    let mut scores = Vec::new();
    for (a, b) in first.groups().iter().zip(second.groups()) {
        if !cfg.scope.contains(a.role) {
            continue;
        }
        let h_self = layer_score(cfg.criterion, &a.weights, &b.weights, entropy_cfg)?;
        let h_peer = layer_score(cfg.criterion, &b.weights, &a.weights, entropy_cfg)?;
        scores.push((h_self, h_peer));
    }

    let mut report = CooperationReport {
        epoch: 0,
        criterion: cfg.criterion.to_string(),
        layers: Vec::with_capacity(scores.len()),
    };
    let mut next = scores.into_iter();
    for (a, b) in first.groups_mut().iter_mut().zip(second.groups_mut()) {
        if !cfg.scope.contains(a.role) {
            continue;
        }
        let (h_self, h_peer) = next.next().expect("one score per in-scope layer");
        let mu_self = coefficient(h_self, h_peer, cfg.alpha);
        let mu_peer = coefficient(h_peer, h_self, cfg.alpha);
        for ((_, sa), (_, sb)) in a.slots_mut().into_iter().zip(b.slots_mut()) {
            blend(sa, sb, mu_self);
        }
        report.layers.push(LayerCooperation {
            layer: a.name.clone(),
            h_self,
            h_peer,
            mu_self: Some(mu_self),
            mu_peer: Some(mu_peer),
            replaced_self: 0,
            replaced_peer: 0,
        });
    }
    Ok(report)
}

fn exchange_small<T: Scalar>(a: &mut [T], b: &mut [T], gamma: f64) -> (usize, usize) {
    let (mut na, mut nb) = (0, 0);
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (ox, oy) = (*x, *y);
        if ox.f64().abs() < gamma {
            *x = oy;
            na += 1;
        }
        if oy.f64().abs() < gamma {
            *y = ox;
            nb += 1;
        }
    }
    (na, nb)
}

/// Parameter-wise cooperation: every weight (and bias) with `|w| < γ` is
/// replaced by the peer's value at the same position. Masks come from the
/// pre-update values of both peers.
pub fn pw_cooperate<T: Scalar>(
    first: &mut ParameterSet<T>,
    second: &mut ParameterSet<T>,
    cfg: &PwConfig,
) -> Result<CooperationReport> {
    cfg.validate()?;
    first.check_same_structure(second)?;
    let mut report = CooperationReport {
        epoch: 0,
        criterion: "magnitude".to_string(),
        layers: Vec::new(),
    };
    for (a, b) in first.groups_mut().iter_mut().zip(second.groups_mut()) {
        if !cfg.scope.contains(a.role) {
            continue;
        }
        let h_self = layer_l1(&a.weights);
        let h_peer = layer_l1(&b.weights);
        let (mut ra, mut rb) = exchange_small(a.weights.as_mut_slice(), b.weights.as_mut_slice(), cfg.gamma);
        if let (Some(ba), Some(bb)) = (a.bias.as_mut(), b.bias.as_mut()) {
            let (x, y) = exchange_small(ba, bb, cfg.gamma);
            ra += x;
            rb += y;
        }
        report.layers.push(LayerCooperation {
            layer: a.name.clone(),
            h_self,
            h_peer,
            mu_self: None,
            mu_peer: None,
            replaced_self: ra,
            replaced_peer: rb,
        });
    }
    Ok(report)
}

/// Overwrites in-scope weights with `|w| < γ` by draws from `N(0, σ²)`.
pub fn noise_reactivate<T: Scalar>(
    model: &mut ParameterSet<T>,
    gamma: f64,
    noise_std: f64,
    scope: Scope,
    rng: &mut RngStream,
) -> Result<usize> {
    if !(gamma >= 0.0) {
        return config_err(format!("gamma must be non-negative, got {gamma}"));
    }
    if !(noise_std > 0.0) {
        return config_err(format!("noise std must be positive, got {noise_std}"));
    }
    let mut replaced = 0;
    for g in model.groups_mut() {
        if !scope.contains(g.role) {
            continue;
        }
        for w in g.weights.as_mut_slice() {
            if w.f64().abs() < gamma {
                *w = T::of(rng.normal(noise_std));
                replaced += 1;
            }
        }
    }
    Ok(replaced)
}

/// Element-wise mean of two score vectors.
pub fn ensemble_scores<T: Scalar>(a: &[T], b: &[T]) -> Result<Vec<T>> {
    if a.len() != b.len() {
        return config_err(format!("score vectors differ in length: {} vs {}", a.len(), b.len()));
    }
    let half = T::of(0.5);
    Ok(a.iter().zip(b).map(|(&x, &y)| (x + y) * half).collect())
}

/// Zeroes the `⌊ρ · n⌋` smallest-magnitude weights among the `n` in-scope
/// weight-matrix entries, ranked globally. Ties go to the earlier entry.
/// Normalization gains and biases are never pruned.
pub fn magnitude_prune<T: Scalar>(model: &mut ParameterSet<T>, fraction: f64, scope: Scope) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return config_err(format!("prune fraction must lie in [0,1], got {fraction}"));
    }
    let prunable = |kind: LayerKind| kind != LayerKind::Norm;
    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for (gi, g) in model.groups().iter().enumerate() {
        if !scope.contains(g.role) || !prunable(g.kind) {
            continue;
        }
        for (i, w) in g.weights.as_slice().iter().enumerate() {
            entries.push((w.f64().abs(), gi, i));
        }
    }
    let k = (fraction * entries.len() as f64).floor() as usize;
    // Stable sort keeps index order among equal magnitudes.
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let groups = model.groups_mut();
    for &(_, gi, i) in &entries[..k] {
        groups[gi].weights.as_mut_slice()[i] = T::zero();
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::params::{LayerGroup, LayerRole, NormParams};

    fn single(name: &str, role: LayerRole, vals: &[f64]) -> ParameterSet<f64> {
        ParameterSet::new(vec![LayerGroup::new(
            name,
            role,
            LayerKind::Dense,
            Matrix::from_vec(1, vals.len(), vals.to_vec()).unwrap(),
        )])
        .unwrap()
    }

    #[test]
    fn coefficient_examples() {
        for alpha in [0.1, 1.0, 30.0, 1e6] {
            assert_eq!(coefficient(0.37, 0.37, alpha), 0.5);
        }
        let expected = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((coefficient(1.1, 1.0, 30.0) - expected).abs() < 1e-12);
        assert!((expected - 0.952_574_126_822_433_4).abs() < 1e-15);
        assert_eq!(coefficient(1e9, 0.0, 1e9), 1.0);
        assert_eq!(coefficient(0.0, 1e9, 1e9), 0.0);
    }

    #[test]
    fn lw_fixed_point_and_midpoint() {
        let cfg = LwConfig::new(30.0, Criterion::Entropy).unwrap();
        let ecfg = EntropyConfig::default();
        let mut a = single("w", LayerRole::Middle, &[0.1, -0.4, 0.9]);
        let mut b = a.clone();
        let orig = a.clone();
        lw_cooperate(&mut a, &mut b, &cfg, ecfg).unwrap();
        assert_eq!(a, orig);
        assert_eq!(b, orig);

        // Scalar layers: both entropies are 0, so μ = 0.5.
        let mut a = single("w", LayerRole::Middle, &[2.0]);
        let mut b = single("w", LayerRole::Middle, &[0.0]);
        let rep = lw_cooperate(&mut a, &mut b, &cfg, ecfg).unwrap();
        assert_eq!(a.groups()[0].weights.as_slice(), &[1.0]);
        assert_eq!(b.groups()[0].weights.as_slice(), &[1.0]);
        assert_eq!(rep.layers[0].mu_self, Some(0.5));
    }

    #[test]
    fn lw_blends_bias_and_norm_with_layer_mu() {
        let mk = |w: Vec<f64>, bias: f64, gain: f64| {
            ParameterSet::new(vec![LayerGroup::new(
                "fc",
                LayerRole::Middle,
                LayerKind::Dense,
                Matrix::from_vec(2, 2, w).unwrap(),
            )
            .with_bias(vec![bias; 2])
            .with_norm(NormParams {
                gain: vec![gain; 2],
                shift: vec![0.0; 2],
            })])
            .unwrap()
        };
        let mut a = mk(vec![0.0, 1.0, 2.0, 3.0], 1.0, 2.0);
        let mut b = mk(vec![1.0, 1.0, 1.0, 1.5], 3.0, 4.0);
        let cfg = LwConfig::new(30.0, Criterion::Entropy).unwrap();
        let rep = lw_cooperate(&mut a, &mut b, &cfg, EntropyConfig::new(2).unwrap()).unwrap();
        let mu = rep.layers[0].mu_self.unwrap();
        assert!(mu > 0.5);
        let g = &a.groups()[0];
        assert!((g.bias.as_ref().unwrap()[0] - (mu * 1.0 + (1.0 - mu) * 3.0)).abs() < 1e-12);
        assert!((g.norm.as_ref().unwrap().gain[1] - (mu * 2.0 + (1.0 - mu) * 4.0)).abs() < 1e-12);
        assert_eq!(a, b);
        assert!((rep.layers[0].mu_peer.unwrap() + mu - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lw_respects_scope() {
        let groups = |x: f64| {
            ParameterSet::new(vec![
                LayerGroup::new(
                    "emb",
                    LayerRole::Embedding,
                    LayerKind::Embedding,
                    Matrix::filled(2, 2, x),
                ),
                LayerGroup::new("fc", LayerRole::Middle, LayerKind::Dense, Matrix::filled(2, 2, x)),
            ])
            .unwrap()
        };
        let mut a = groups(1.0);
        let mut b = groups(3.0);
        let mut cfg = LwConfig::new(10.0, Criterion::L1).unwrap();
        cfg.scope = Scope::only(LayerRole::Embedding);
        let rep = lw_cooperate(&mut a, &mut b, &cfg, EntropyConfig::default()).unwrap();
        assert_eq!(rep.layers.len(), 1);
        assert_eq!(a.groups()[0].weights, b.groups()[0].weights);
        assert_eq!(a.groups()[1].weights.as_slice(), &[1.0; 4]);
        assert_eq!(b.groups()[1].weights.as_slice(), &[3.0; 4]);
    }

    #[test]
    fn structural_mismatch_rejected() {
        let mut a = single("w", LayerRole::Middle, &[1.0, 2.0]);
        let mut b = single("w", LayerRole::Middle, &[1.0]);
        let cfg = LwConfig::new(1.0, Criterion::L1).unwrap();
        assert!(lw_cooperate(&mut a, &mut b, &cfg, EntropyConfig::default()).is_err());
        assert!(pw_cooperate(&mut a, &mut b, &PwConfig::new(0.1).unwrap()).is_err());
        assert!(LwConfig::new(0.0, Criterion::L1).is_err());
    }

    #[test]
    fn pw_examples() {
        let mut a = single("w", LayerRole::Middle, &[0.5, 0.01]);
        let mut b = single("w", LayerRole::Middle, &[0.2, 0.9]);
        let rep = pw_cooperate(&mut a, &mut b, &PwConfig::new(0.1).unwrap()).unwrap();
        assert_eq!(a.groups()[0].weights.as_slice(), &[0.5, 0.9]);
        assert_eq!(b.groups()[0].weights.as_slice(), &[0.2, 0.9]);
        assert_eq!(rep.layers[0].replaced_self, 1);
        assert_eq!(rep.layers[0].replaced_peer, 0);

        let orig_a = single("w", LayerRole::Middle, &[0.5, -0.01]);
        let orig_b = single("w", LayerRole::Middle, &[0.2, 0.9]);
        let (mut a, mut b) = (orig_a.clone(), orig_b.clone());
        pw_cooperate(&mut a, &mut b, &PwConfig::new(0.0).unwrap()).unwrap();
        assert_eq!((a.clone(), b.clone()), (orig_a.clone(), orig_b.clone()));
        pw_cooperate(&mut a, &mut b, &PwConfig::new(10.0).unwrap()).unwrap();
        assert_eq!((a, b), (orig_b, orig_a));
    }

    #[test]
    fn noise_examples() {
        let mut rng = RngStream::new(3, 0);
        let mut m = single("w", LayerRole::Middle, &[0.0; 16]);
        assert_eq!(noise_reactivate(&mut m, 0.0, 0.1, Scope::ALL, &mut rng).unwrap(), 0);
        assert_eq!(noise_reactivate(&mut m, 0.1, 0.1, Scope::ALL, &mut rng).unwrap(), 16);
        assert!(m.groups()[0].weights.as_slice().iter().all(|&v| v != 0.0));

        let vals = [0.5, 0.01, -0.3, 0.05, -0.02];
        let mut m = single("w", LayerRole::Middle, &vals);
        let mask = crate::criteria::pw_mask("w", &m.groups()[0].weights, 0.1).unwrap();
        let n = noise_reactivate(&mut m, 0.1, 1.0, Scope::ALL, &mut rng).unwrap();
        assert_eq!(n, mask.count());
        assert!(noise_reactivate(&mut m, 0.1, 0.0, Scope::ALL, &mut rng).is_err());
    }

    #[test]
    fn ensemble_examples() {
        let a = [0.3f64, 0.9, 0.1];
        assert_eq!(ensemble_scores(&a, &a).unwrap(), a.to_vec());
        assert_eq!(ensemble_scores(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        assert!(ensemble_scores(&[1.0f64], &[1.0, 2.0]).is_err());

        // Averaged scores [0.55, 0.45, 0.5, 0.6, 0.1] rank items 3,0,2,1,4.
        let sa = [0.9f64, 0.1, 0.6, 0.4, 0.0];
        let sb = [0.2f64, 0.8, 0.4, 0.8, 0.2];
        let avg = ensemble_scores(&sa, &sb).unwrap();
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&i, &j| avg[j].total_cmp(&avg[i]));
        assert_eq!(order, vec![3, 0, 2, 1, 4]);
    }

    #[test]
    fn prune_examples() {
        let vals = [0.9, -0.05, 0.3, 0.01, -0.7, 0.2, -0.02, 0.6, 0.4, -0.8];
        let mut m = single("w", LayerRole::Middle, &vals);
        assert_eq!(magnitude_prune(&mut m, 0.0, Scope::ALL).unwrap(), 0);
        assert_eq!(m.groups()[0].weights.as_slice(), &vals);
        assert_eq!(magnitude_prune(&mut m, 0.3, Scope::ALL).unwrap(), 3);
        assert_eq!(
            m.groups()[0].weights.as_slice(),
            &[0.9, 0.0, 0.3, 0.0, -0.7, 0.2, 0.0, 0.6, 0.4, -0.8]
        );
        assert_eq!(magnitude_prune(&mut m, 1.0, Scope::ALL).unwrap(), 10);
        assert!(m.groups()[0].weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(magnitude_prune(&mut m, 1.5, Scope::ALL).is_err());
    }

    #[test]
    fn prune_ties_follow_index_order() {
        let mut m = single("w", LayerRole::Middle, &[0.5, 0.1, 0.1, 0.1]);
        magnitude_prune(&mut m, 0.5, Scope::ALL).unwrap();
        assert_eq!(m.groups()[0].weights.as_slice(), &[0.5, 0.0, 0.0, 0.1]);
    }

    #[test]
    fn cadence_parsing() {
        assert_eq!("epoch".parse::<Cadence>().unwrap(), Cadence::Epoch);
        assert_eq!("batches:5".parse::<Cadence>().unwrap(), Cadence::Batches(5));
        assert!("batches:0".parse::<Cadence>().is_err());
        assert!("weekly".parse::<Cadence>().is_err());
    }

    #[test]
    fn report_csv_has_two_rows_per_layer() {
        let mut a = single("w", LayerRole::Middle, &[0.5, 0.01]);
        let mut b = single("w", LayerRole::Middle, &[0.2, 0.9]);
        let mut rep = pw_cooperate(&mut a, &mut b, &PwConfig::new(0.1).unwrap()).unwrap();
        rep.epoch = 4;
        let mut buf = Vec::new();
        rep.write_csv_rows(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("4,peer1/w,magnitude,"));
        assert!(lines[0].ends_with(",,1"));
        assert!(lines[1].ends_with(",,0"));
    }
}
