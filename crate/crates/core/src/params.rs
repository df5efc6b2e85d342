//! Named layer groups: the substrate that criteria and cooperation act on.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::numerics::{Matrix, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRole {
    Embedding,
    Middle,
    Softmax,
}

impl LayerRole {
    pub const ALL: [LayerRole; 3] = [LayerRole::Embedding, LayerRole::Middle, LayerRole::Softmax];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerRole::Embedding => "embedding",
            LayerRole::Middle => "middle",
            LayerRole::Softmax => "softmax",
        }
    }
}

impl fmt::Display for LayerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(LayerRole::Embedding),
            "middle" => Ok(LayerRole::Middle),
            "softmax" => Ok(LayerRole::Softmax),
            _ => config_err(format!("unknown layer role `{s}`")),
        }
    }
}

/// What the group's main matrix is, as opposed to where it sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    /// Lookup table.
    Embedding,
    /// Fully connected or attention projection.
    Dense,
    /// Normalization gain stored as a `1 x d` matrix, shift as bias.
    Norm,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Embedding => "embedding",
            LayerKind::Dense => "dense",
            LayerKind::Norm => "norm",
        }
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(LayerKind::Embedding),
            "dense" => Ok(LayerKind::Dense),
            "norm" => Ok(LayerKind::Norm),
            _ => config_err(format!("unknown layer kind `{s}`")),
        }
    }
}

/// Set of layer roles that an operation applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Scope {
    embedding: bool,
    middle: bool,
    softmax: bool,
}

impl Scope {
    pub const ALL: Scope = Scope {
        embedding: true,
        middle: true,
        softmax: true,
    };

    pub fn only(role: LayerRole) -> Self {
        let mut s = Scope {
            embedding: false,
            middle: false,
            softmax: false,
        };
        s.insert(role);
        s
    }

    pub fn from_roles(roles: &[LayerRole]) -> Result<Self> {
        if roles.is_empty() {
            return config_err("scope must name at least one layer role");
        }
        let mut s = Self::only(roles[0]);
        roles.iter().for_each(|&r| s.insert(r));
        Ok(s)
    }

    pub fn insert(&mut self, role: LayerRole) {
        match role {
            LayerRole::Embedding => self.embedding = true,
            LayerRole::Middle => self.middle = true,
            LayerRole::Softmax => self.softmax = true,
        }
    }

    pub fn contains(&self, role: LayerRole) -> bool {
        match role {
            LayerRole::Embedding => self.embedding,
            LayerRole::Middle => self.middle,
            LayerRole::Softmax => self.softmax,
        }
    }

    pub fn roles(&self) -> Vec<LayerRole> {
        LayerRole::ALL.into_iter().filter(|&r| self.contains(r)).collect()
    }
}

impl Default for Scope {
    fn default() -> Self {
        Scope::ALL
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Scope::ALL {
            return f.write_str("all");
        }
        let names: Vec<_> = self.roles().iter().map(|r| r.as_str()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for Scope {
    type Err = Error;

    /// `all`, or a comma-separated list of roles.
    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Scope::ALL);
        }
        let roles = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<LayerRole>>>()?;
        Scope::from_roles(&roles)
    }
}

impl Serialize for Scope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams<T = f32> {
    pub gain: Vec<T>,
    pub shift: Vec<T>,
}

impl<T: Scalar> NormParams<T> {
    pub fn identity(d: usize) -> Self {
        Self {
            gain: vec![T::one(); d],
            shift: vec![T::zero(); d],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGroup<T = f32> {
    pub name: String,
    pub role: LayerRole,
    pub kind: LayerKind,
    pub weights: Matrix<T>,
    pub bias: Option<Vec<T>>,
    pub norm: Option<NormParams<T>>,
}

impl<T: Scalar> LayerGroup<T> {
    pub fn new(name: impl Into<String>, role: LayerRole, kind: LayerKind, weights: Matrix<T>) -> Self {
        Self {
            name: name.into(),
            role,
            kind,
            weights,
            bias: None,
            norm: None,
        }
    }

    pub fn with_bias(mut self, bias: Vec<T>) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn with_norm(mut self, norm: NormParams<T>) -> Self {
        self.norm = Some(norm);
        self
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
            + self.bias.as_ref().map_or(0, Vec::len)
            + self.norm.as_ref().map_or(0, |n| n.gain.len() + n.shift.len())
    }

    fn same_structure(&self, other: &Self) -> bool {
        self.name == other.name
            && self.role == other.role
            && self.kind == other.kind
            && self.weights.shape() == other.weights.shape()
            && self.bias.as_ref().map(Vec::len) == other.bias.as_ref().map(Vec::len)
            && self.norm.as_ref().map(|n| (n.gain.len(), n.shift.len()))
                == other.norm.as_ref().map(|n| (n.gain.len(), n.shift.len()))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            name: self.name.clone(),
            role: self.role,
            kind: self.kind,
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: self.bias.as_ref().map(|b| vec![T::zero(); b.len()]),
            norm: self.norm.as_ref().map(|n| NormParams {
                gain: vec![T::zero(); n.gain.len()],
                shift: vec![T::zero(); n.shift.len()],
            }),
        }
    }

    pub fn cast<U: Scalar>(&self) -> LayerGroup<U> {
        let conv = |v: &Vec<T>| v.iter().map(|&x| U::of(x.f64())).collect::<Vec<U>>();
        LayerGroup {
            name: self.name.clone(),
            role: self.role,
            kind: self.kind,
            weights: self.weights.cast(),
            bias: self.bias.as_ref().map(conv),
            norm: self.norm.as_ref().map(|n| NormParams {
                gain: conv(&n.gain),
                shift: conv(&n.shift),
            }),
        }
    }

    /// `(slot, values)` for every tensor in the group, main weights first.
    pub fn slots(&self) -> Vec<(Slot, &[T])> {
        let mut out: Vec<(Slot, &[T])> = vec![(Slot::Weights, self.weights.as_slice())];
        if let Some(b) = &self.bias {
            out.push((Slot::Bias, b));
        }
        if let Some(n) = &self.norm {
            out.push((Slot::NormGain, &n.gain));
            out.push((Slot::NormShift, &n.shift));
        }
        out
    }

    pub fn slots_mut(&mut self) -> Vec<(Slot, &mut [T])> {
        let mut out: Vec<(Slot, &mut [T])> = vec![(Slot::Weights, self.weights.as_mut_slice())];
        if let Some(b) = &mut self.bias {
            out.push((Slot::Bias, b));
        }
        if let Some(n) = &mut self.norm {
            out.push((Slot::NormGain, &mut n.gain));
            out.push((Slot::NormShift, &mut n.shift));
        }
        out
    }
}

/// Position of a tensor within its layer group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Weights,
    Bias,
    NormGain,
    NormShift,
}

impl Slot {
    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Weights => "weights",
            Slot::Bias => "bias",
            Slot::NormGain => "norm_gain",
            Slot::NormShift => "norm_shift",
        }
    }
}

impl FromStr for Slot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weights" => Ok(Slot::Weights),
            "bias" => Ok(Slot::Bias),
            "norm_gain" => Ok(Slot::NormGain),
            "norm_shift" => Ok(Slot::NormShift),
            _ => config_err(format!("unknown tensor slot `{s}`")),
        }
    }
}

/// Ordered collection of uniquely named layer groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T = f32> {
    groups: Vec<LayerGroup<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new(groups: Vec<LayerGroup<T>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for g in &groups {
            if !seen.insert(g.name.as_str()) {
                return config_err(format!("duplicate layer name `{}`", g.name));
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[LayerGroup<T>] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [LayerGroup<T>] {
        &mut self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, name: &str) -> Option<&LayerGroup<T>> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut LayerGroup<T>> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.groups.iter().map(LayerGroup::param_count).sum()
    }

    /// Fails unless both sets agree in names, roles, kinds, and shapes.
    pub fn check_same_structure(&self, other: &Self) -> Result<()> {
        if self.groups.len() != other.groups.len() {
            return config_err(format!(
                "structural mismatch: {} vs {} layer groups",
                self.groups.len(),
                other.groups.len()
            ));
        }
        for (a, b) in self.groups.iter().zip(&other.groups) {
            if !a.same_structure(b) {
                return config_err(format!("structural mismatch at layer `{}` / `{}`", a.name, b.name));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            groups: self.groups.iter().map(LayerGroup::zeros_like).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            groups: self.groups.iter().map(LayerGroup::cast).collect(),
        }
    }

    /// Every tensor, labelled `layer.slot`, in canonical order.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        self.groups
            .iter()
            .flat_map(|g| {
                g.slots()
                    .into_iter()
                    .map(move |(s, t)| (format!("{}.{}", g.name, s.as_str()), t))
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        self.groups
            .iter_mut()
            .flat_map(|g| {
                let name = g.name.clone();
                g.slots_mut()
                    .into_iter()
                    .map(move |(s, t)| (format!("{}.{}", name, s.as_str()), t))
            })
            .collect()
    }

    fn locate(&self, mut idx: usize) -> (usize, Slot, usize) {
        for (gi, g) in self.groups.iter().enumerate() {
            for (slot, t) in g.slots() {
                if idx < t.len() {
                    return (gi, slot, idx);
                }
                idx -= t.len();
            }
        }
        panic!("flat index out of range");
    }

    pub fn flat_get(&self, idx: usize) -> T {
        let (gi, slot, off) = self.locate(idx);
        let g = &self.groups[gi];
        g.slots().into_iter().find(|(s, _)| *s == slot).unwrap().1[off]
    }

    pub fn flat_set(&mut self, idx: usize, v: T) {
        let (gi, slot, off) = self.locate(idx);
        let g = &mut self.groups[gi];
        g.slots_mut().into_iter().find(|(s, _)| *s == slot).unwrap().1[off] = v;
    }

    pub fn flat_name(&self, idx: usize) -> String {
        let (gi, slot, off) = self.locate(idx);
        format!("{}.{}[{}]", self.groups[gi].name, slot.as_str(), off)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Hash over the bit patterns of every value; equal iff bit-identical
    /// with overwhelming probability.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, t) in self.tensors() {
            h.write(name.as_bytes());
            for v in t {
                h.write_u64(v.f64().to_bits());
            }
        }
        h.finish()
    }

    /// Largest absolute element-wise difference between two same-structure sets.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_structure(other)?;
        let mut worst = 0.0f64;
        for ((_, a), (_, b)) in self.tensors().into_iter().zip(other.tensors()) {
            for (&x, &y) in a.iter().zip(b) {
                worst = worst.max((x.f64() - y.f64()).abs());
            }
        }
        Ok(worst)
    }
}
