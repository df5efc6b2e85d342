//! On-disk parameter sets.
//!
//! A checkpoint is a directory holding `manifest.txt` and `weights.bin`.
//! The manifest starts with a `[config]` block of tab-separated key/value
//! pairs, followed by a `[tensors]` block with one line per tensor:
//!
//! ```text
//! layer  role  kind  slot  shape  byte_offset  element_count
//! ```
//!
//! `weights.bin` is every tensor's values as little-endian `f32`, in
//! manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::params::{LayerGroup, LayerKind, LayerRole, NormParams, ParameterSet, Slot};

pub const MANIFEST: &str = "manifest.txt";
pub const BLOB: &str = "weights.bin";
const MAGIC: &str = "peercollab-checkpoint\t1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub params: ParameterSet<f32>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serializes to `(manifest, blob)` without touching the filesystem.
pub fn encode(ckpt: &Checkpoint) -> Result<(String, Vec<u8>)> {
    let mut manifest = String::new();
    manifest.push_str(MAGIC);
    manifest.push_str("\n[config]\n");
    for (k, v) in &ckpt.config {
        if k.contains(['\t', '\n']) || v.contains(['\t', '\n']) {
            return Err(bad(format!("config entry `{k}` contains a tab or newline")));
        }
        manifest.push_str(&format!("{k}\t{v}\n"));
    }
    manifest.push_str("[tensors]\n");
    let mut blob = Vec::with_capacity(ckpt.params.param_count() * 4);
    for g in ckpt.params.groups() {
        for (slot, values) in g.slots() {
            let shape = if slot == Slot::Weights {
                format!("{}x{}", g.weights.rows(), g.weights.cols())
            } else {
                values.len().to_string()
            };
            manifest.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                g.name,
                g.role.as_str(),
                g.kind.as_str(),
                slot.as_str(),
                shape,
                blob.len(),
                values.len()
            ));
            for v in values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok((manifest, blob))
}

pub fn decode(manifest: &str, blob: &[u8]) -> Result<Checkpoint> {
    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing checkpoint header"));
    }
    if lines.next() != Some("[config]") {
        return Err(bad("missing [config] block"));
    }
    let mut config = BTreeMap::new();
    let mut in_tensors = false;
    let mut groups: Vec<LayerGroup<f32>> = Vec::new();
    for line in lines {
        if !in_tensors {
            if line == "[tensors]" {
                in_tensors = true;
                continue;
            }
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("bad config line `{line}`")))?;
            config.insert(k.to_string(), v.to_string());
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad(format!("bad tensor line `{line}`")));
        }
        let role: LayerRole = f[1].parse()?;
        let kind: LayerKind = f[2].parse()?;
        let slot: Slot = f[3].parse()?;
        let offset: usize = f[5].parse().map_err(|_| bad("bad offset"))?;
        let count: usize = f[6].parse().map_err(|_| bad("bad count"))?;
        let end = offset
            .checked_add(count * 4)
            .filter(|&e| e <= blob.len())
            .ok_or_else(|| bad(format!("tensor `{}` runs past the blob", f[0])))?;
        let values: Vec<f32> = blob[offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        match slot {
            Slot::Weights => {
                let (r, c) = f[4]
                    .split_once('x')
                    .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)))
                    .ok_or_else(|| bad(format!("bad shape `{}`", f[4])))?;
                groups.push(LayerGroup::new(f[0], role, kind, Matrix::from_vec(r, c, values)?));
            }
            _ => {
                let g = groups
                    .last_mut()
                    .filter(|g| g.name == f[0])
                    .ok_or_else(|| bad(format!("`{}` {} before its weights", f[0], f[3])))?;
                match slot {
                    Slot::Bias => g.bias = Some(values),
                    Slot::NormGain => {
                        g.norm
                            .get_or_insert_with(|| NormParams {
                                gain: Vec::new(),
                                shift: Vec::new(),
                            })
                            .gain = values
                    }
                    Slot::NormShift => {
                        g.norm
                            .get_or_insert_with(|| NormParams {
                                gain: Vec::new(),
                                shift: Vec::new(),
                            })
                            .shift = values
                    }
                    Slot::Weights => unreachable!(),
                }
            }
        }
    }
    if !in_tensors {
        return Err(bad("missing [tensors] block"));
    }
    Ok(Checkpoint {
        config,
        params: ParameterSet::new(groups)?,
    })
}

pub fn save(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (manifest, blob) = encode(ckpt)?;
    let mut f = fs::File::create(dir.join(MANIFEST))?;
    f.write_all(manifest.as_bytes())?;
    fs::write(dir.join(BLOB), blob)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let blob = fs::read(dir.join(BLOB))?;
    decode(&manifest, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::sas::{SasConfig, SasModel};
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn sas_params(seed: u64) -> ParameterSet<f32> {
        let cfg = SasConfig {
            n_items: 11,
            dim: 4,
            max_len: 3,
            blocks: 2,
            dropout: 0.0,
            l2: 0.0,
        };
        SasModel::<f32>::new(cfg, &mut RngStream::new(seed, 0))
            .unwrap()
            .params()
            .clone()
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(seed in 0u64..10_000, scale in -1e6f32..1e6) {
            let mut params = sas_params(seed);
            params.flat_set(3, scale);
            params.flat_set(7, f32::MIN_POSITIVE);
            params.flat_set(8, -0.0);
            let mut config = BTreeMap::new();
            config.insert("seed".to_string(), seed.to_string());
            let ckpt = Checkpoint { config, params };
            let (m, b) = encode(&ckpt).unwrap();
            let back = decode(&m, &b).unwrap();
            prop_assert_eq!(&back.config, &ckpt.config);
            prop_assert_eq!(back.params.checksum(), ckpt.params.checksum());
            prop_assert_eq!(back, ckpt);
        }
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint {
            config: BTreeMap::from([("model".to_string(), "saslite".to_string())]),
            params: sas_params(1),
        };
        save(dir.path(), &ckpt).unwrap();
        assert_eq!(load(dir.path()).unwrap(), ckpt);
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.contains("block0.attn_q\tmiddle\tdense\tnorm_gain\t4\t"));
    }

    #[test]
    fn truncated_blob_rejected() {
        let ckpt = Checkpoint {
            config: BTreeMap::new(),
            params: sas_params(2),
        };
        let (m, b) = encode(&ckpt).unwrap();
        assert!(matches!(decode(&m, &b[..b.len() - 4]), Err(Error::Checkpoint(_))));
        assert!(decode("garbage", &b).is_err());
    }
}
