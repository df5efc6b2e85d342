//! Synthetic implicit-feedback logs with planted structure.
//!
//! Items are split into topics. Every user prefers a few topics, and inside
//! a session the next item is often the successor of the current one within
//! its topic, so both collaborative and sequential signal exist.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{build_dataset, Interaction, InteractionDataset};
use crate::error::Result;
use crate::numerics::RngStream;

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub topics: usize,
    pub topics_per_user: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that the next item continues the current topic chain.
    pub follow_prob: f64,
    /// Probability of an off-preference item.
    pub noise_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 1000,
            items: 500,
            topics: 20,
            topics_per_user: 3,
            min_len: 12,
            max_len: 36,
            follow_prob: 0.5,
            noise_prob: 0.1,
            seed: 2024,
        }
    }
}

impl SyntheticConfig {
    /// A smaller variant for fast tests.
    pub fn small(seed: u64) -> Self {
        Self {
            users: 200,
            items: 120,
            topics: 8,
            min_len: 10,
            max_len: 20,
            seed,
            ..Self::default()
        }
    }
}

/// Zipf-like pick from `0..n`: low indices are more popular.
fn popular(rng: &mut RngStream, n: usize) -> usize {
    let u = rng.uniform();
    ((n as f64).powf(u) - 1.0).floor().min((n - 1) as f64) as usize
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<Interaction> {
    let mut rng = RngStream::new(cfg.seed, 0x5e_ed);
    let topic_size = cfg.items.div_ceil(cfg.topics);
    let item_of = |topic: usize, k: usize| (topic * topic_size + k % topic_size).min(cfg.items - 1);
    let topic_of = |item: usize| item / topic_size;

    let mut out = Vec::new();
    for u in 0..cfg.users {
        let mut prefs = Vec::new();
        while prefs.len() < cfg.topics_per_user.min(cfg.topics) {
            let t = rng.below(cfg.topics);
            if !prefs.contains(&t) {
                prefs.push(t);
            }
        }
        let len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
        let mut seen = vec![false; cfg.items];
        let mut last: Option<usize> = None;
        let mut ts = 1_600_000_000i64 + rng.below(1_000_000) as i64;
        let mut produced = 0;
        let mut attempts = 0;
        while produced < len && attempts < len * 50 {
            attempts += 1;
            let candidate = match last {
                Some(prev) if rng.bernoulli(cfg.follow_prob) => {
                    let topic = topic_of(prev);
                    item_of(topic, prev - topic * topic_size + 1)
                }
                _ if rng.bernoulli(cfg.noise_prob) => rng.below(cfg.items),
                _ => {
                    let topic = prefs[rng.below(prefs.len())];
                    item_of(topic, popular(&mut rng, topic_size))
                }
            };
            if seen[candidate] {
                last = None;
                continue;
            }
            seen[candidate] = true;
            last = Some(candidate);
            produced += 1;
            ts += 1 + rng.below(3600) as i64;
            out.push(Interaction {
                user: format!("u{u}"),
                item: format!("i{candidate}"),
                timestamp: ts,
            });
        }
    }
    out
}

pub fn write_tsv(interactions: &[Interaction], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for x in interactions {
        writeln!(w, "{}\t{}\t{}", x.user, x.item, x.timestamp)?;
    }
    w.flush()?;
    Ok(())
}

/// Generates, 5-core filters, and densifies in memory.
pub fn dataset(cfg: &SyntheticConfig) -> Result<InteractionDataset> {
    let raw = generate(cfg);
    build_dataset(&crate::data::k_core_filter(&raw, crate::data::MIN_CORE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dataset_shape() {
        let ds = dataset(&SyntheticConfig::default()).unwrap();
        assert!(ds.n_users() >= 950, "{}", ds.n_users());
        assert!(ds.n_items() >= 450, "{}", ds.n_items());
        for u in 0..ds.n_users() {
            assert!(ds.sequence(u).len() >= 5);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SyntheticConfig::small(3);
        assert_eq!(generate(&cfg), generate(&cfg));
        assert_ne!(generate(&cfg), generate(&SyntheticConfig::small(4)));
    }
}
