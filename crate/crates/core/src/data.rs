//! Interaction logs: ingestion, k-core filtering, leave-one-out splits,
//! padded sequences, shuffling, and negative sampling.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, Error, Result};
use crate::numerics::RngStream;

/// Item id 0 is padding; real items are `1..=n_items`.
pub type ItemId = u32;
pub const PAD: ItemId = 0;

pub const MIN_CORE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => config_err(format!("unknown split `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

/// Per-user chronological item lists with dense ids.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionDataset {
    n_items: usize,
    sequences: Vec<Vec<ItemId>>,
    train_sets: Vec<Vec<ItemId>>,
    user_names: Vec<String>,
    item_names: Vec<String>,
}

impl InteractionDataset {
    /// Builds a dataset from already-dense sequences (item ids `1..=n_items`).
    /// Every user needs at least three interactions so that train, valid,
    /// and test are all non-empty.
    pub fn from_sequences(n_items: usize, sequences: Vec<Vec<ItemId>>) -> Result<Self> {
        if sequences.is_empty() {
            return data_err("dataset has no users");
        }
        for (u, s) in sequences.iter().enumerate() {
            if s.len() < 3 {
                return data_err(format!("user {u} has {} interactions, need >= 3", s.len()));
            }
            if let Some(&bad) = s.iter().find(|&&i| i == PAD || i as usize > n_items) {
                return data_err(format!("user {u} has item id {bad} outside 1..={n_items}"));
            }
        }
        let train_sets = sequences
            .iter()
            .map(|s| {
                let mut t = s[..s.len() - 2].to_vec();
                t.sort_unstable();
                t.dedup();
                t
            })
            .collect();
        let user_names = (0..sequences.len()).map(|u| u.to_string()).collect();
        let item_names = (0..=n_items).map(|i| i.to_string()).collect();
        Ok(Self {
            n_items,
            sequences,
            train_sets,
            user_names,
            item_names,
        })
    }

    pub fn n_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_interactions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn sequence(&self, user: usize) -> &[ItemId] {
        &self.sequences[user]
    }

    pub fn sequences(&self) -> &[Vec<ItemId>] {
        &self.sequences
    }

    pub fn user_name(&self, user: usize) -> &str {
        &self.user_names[user]
    }

    pub fn item_name(&self, item: ItemId) -> &str {
        &self.item_names[item as usize]
    }

    /// Everything but the last two interactions.
    pub fn train(&self, user: usize) -> &[ItemId] {
        let s = &self.sequences[user];
        &s[..s.len() - 2]
    }

    pub fn valid(&self, user: usize) -> ItemId {
        let s = &self.sequences[user];
        s[s.len() - 2]
    }

    pub fn test(&self, user: usize) -> ItemId {
        *self.sequences[user].last().expect("non-empty sequence")
    }

    /// Sorted, de-duplicated training items.
    pub fn train_set(&self, user: usize) -> &[ItemId] {
        &self.train_sets[user]
    }

    pub fn in_train(&self, user: usize, item: ItemId) -> bool {
        self.train_sets[user].binary_search(&item).is_ok()
    }

    pub fn target(&self, user: usize, split: Split) -> ItemId {
        match split {
            Split::Valid => self.valid(user),
            Split::Test => self.test(user),
        }
    }

    /// Items visible before the split's target, oldest first.
    pub fn history(&self, user: usize, split: Split) -> &[ItemId] {
        let s = &self.sequences[user];
        match split {
            Split::Valid => &s[..s.len() - 2],
            Split::Test => &s[..s.len() - 1],
        }
    }

    /// Writes the dataset back out in the ingest format, one line per
    /// interaction with the position as timestamp.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        for (u, s) in self.sequences.iter().enumerate() {
            for (t, &i) in s.iter().enumerate() {
                writeln!(out, "{}\t{}\t{}", self.user_names[u], self.item_names[i as usize], t)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Parses `user<TAB>item<TAB>timestamp` lines. A four-column variant
/// `user<TAB>item<TAB>rating<TAB>timestamp` is accepted and the rating
/// dropped. Blank lines and `#` comments are skipped.
pub fn parse_interactions<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let (user, item, ts) = match fields.as_slice() {
            [u, i, ts] => (u, i, ts),
            [u, i, _rating, ts] => (u, i, ts),
            _ => {
                return Err(parse_err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )))
            }
        };
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let timestamp = ts
            .trim()
            .parse::<i64>()
            .map_err(|_| parse_err(format!("bad timestamp `{ts}`")))?;
        out.push(Interaction {
            user: user.to_string(),
            item: item.to_string(),
            timestamp,
        });
    }
    Ok(out)
}

/// Iteratively drops users with fewer than `k` interactions and items with
/// fewer than `k` distinct users until nothing changes. Input order is kept.
pub fn k_core_filter(interactions: &[Interaction], k: usize) -> Vec<Interaction> {
    let mut current: Vec<Interaction> = interactions.to_vec();
    loop {
        let mut user_counts: HashMap<&str, usize> = HashMap::new();
        let mut item_users: HashMap<&str, HashSet<&str>> = HashMap::new();
        for x in &current {
            *user_counts.entry(&x.user).or_default() += 1;
            item_users.entry(&x.item).or_default().insert(&x.user);
        }
        let keep: Vec<bool> = current
            .iter()
            .map(|x| user_counts[x.user.as_str()] >= k && item_users[x.item.as_str()].len() >= k)
            .collect();
        if keep.iter().all(|&b| b) {
            return current;
        }
        current = current
            .into_iter()
            .zip(keep)
            .filter_map(|(x, keep)| keep.then_some(x))
            .collect();
    }
}

/// Re-maps ids densely in order of first appearance and sorts each user's
/// interactions by timestamp (stable on ties).
pub fn build_dataset(interactions: &[Interaction]) -> Result<InteractionDataset> {
    if interactions.is_empty() {
        return data_err("no interactions left after filtering");
    }
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, ItemId> = HashMap::new();
    let mut user_names = Vec::new();
    let mut item_names = vec![String::new()];
    let mut per_user: Vec<Vec<(i64, ItemId)>> = Vec::new();
    for x in interactions {
        let u = *user_index.entry(&x.user).or_insert_with(|| {
            user_names.push(x.user.clone());
            per_user.push(Vec::new());
            user_names.len() - 1
        });
        let i = *item_index.entry(&x.item).or_insert_with(|| {
            item_names.push(x.item.clone());
            (item_names.len() - 1) as ItemId
        });
        per_user[u].push((x.timestamp, i));
    }
    let sequences: Vec<Vec<ItemId>> = per_user
        .into_iter()
        .map(|mut v| {
            v.sort_by_key(|&(ts, _)| ts);
            v.into_iter().map(|(_, i)| i).collect()
        })
        .collect();
    let n_items = item_names.len() - 1;
    let mut ds = InteractionDataset::from_sequences(n_items, sequences)?;
    ds.user_names = user_names;
    ds.item_names = item_names;
    Ok(ds)
}

/// Reads, 5-core filters, and densifies an interaction file.
pub fn ingest(path: &Path) -> Result<InteractionDataset> {
    let file = File::open(path)?;
    let raw = parse_interactions(BufReader::new(file), path)?;
    let filtered = k_core_filter(&raw, MIN_CORE);
    if filtered.is_empty() {
        return data_err(format!(
            "{}: no interactions survive {MIN_CORE}-core filtering",
            path.display()
        ));
    }
    let ds = build_dataset(&filtered)?;
    log::info!(
        "ingested {}: {} users, {} items, {} interactions ({} raw lines)",
        path.display(),
        ds.n_users(),
        ds.n_items(),
        ds.n_interactions(),
        raw.len()
    );
    Ok(ds)
}

/// Left-pads `items` (keeping the most recent `t`) to exactly length `t`.
pub fn left_pad(items: &[ItemId], t: usize) -> Vec<ItemId> {
    let tail = &items[items.len().saturating_sub(t)..];
    let mut out = vec![PAD; t - tail.len()];
    out.extend_from_slice(tail);
    out
}

/// Training items of every user cut into consecutive length-`t` chunks,
/// the last one left-padded.
pub fn build_sequences(ds: &InteractionDataset, t: usize) -> Result<Vec<Vec<ItemId>>> {
    if t < 2 {
        return Err(Error::Config(format!("sequence length must be >= 2, got {t}")));
    }
    let mut out = Vec::new();
    for u in 0..ds.n_users() {
        out.extend(chunk_sequence(ds.train(u), t));
    }
    Ok(out)
}

pub fn chunk_sequence(items: &[ItemId], t: usize) -> Vec<Vec<ItemId>> {
    items.chunks(t).map(|c| left_pad(c, t)).collect()
}

/// A seeded permutation of training examples for one epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShuffleOrder {
    pub epoch: usize,
    pub seed: u64,
    pub order: Vec<usize>,
}

/// Fisher-Yates permutation of `0..n` determined by `(seed, epoch)`.
pub fn shuffled_epoch(n: usize, seed: u64, epoch: usize) -> ShuffleOrder {
    let mut rng = RngStream::new(seed, epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        order.swap(i, j);
    }
    ShuffleOrder { epoch, seed, order }
}

const NEGATIVE_RETRIES: usize = 100;

/// Uniform item the user has not trained on, or `None` after bounded retries.
pub fn sample_negative(ds: &InteractionDataset, user: usize, rng: &mut RngStream) -> Option<ItemId> {
    if ds.train_set(user).len() >= ds.n_items() {
        return None;
    }
    (0..NEGATIVE_RETRIES)
        .map(|_| 1 + rng.below(ds.n_items()) as ItemId)
        .find(|&i| !ds.in_train(user, i))
}

/// Uniform non-pad item different from `exclude`.
pub fn sample_other_item(n_items: usize, exclude: ItemId, rng: &mut RngStream) -> ItemId {
    debug_assert!(n_items >= 2);
    loop {
        let i = 1 + rng.below(n_items) as ItemId;
        if i != exclude {
            return i;
        }
    }
}

/// `(user, positive, negative)` triple.
pub type Triple = (u32, ItemId, ItemId);

/// `b` triples: user uniform over users with training data, positive
/// uniform over the user's training items, negative uniform over items
/// outside the user's training set. Users whose training set covers the
/// whole catalog are skipped.
pub fn sample_bpr_triples(ds: &InteractionDataset, b: usize, rng: &mut RngStream) -> Vec<Triple> {
    let mut out = Vec::with_capacity(b);
    for _ in 0..b {
        let u = rng.below(ds.n_users());
        let train = ds.train(u);
        let pos = train[rng.below(train.len())];
        match sample_negative(ds, u, rng) {
            Some(neg) => out.push((u as u32, pos, neg)),
            None => log::warn!("user {u} has no sampleable negative; skipped"),
        }
    }
    out
}

/// All `(user, item)` training pairs in user-major order.
pub fn train_pairs(ds: &InteractionDataset) -> Vec<(u32, ItemId)> {
    (0..ds.n_users())
        .flat_map(|u| ds.train(u).iter().map(move |&i| (u as u32, i)))
        .collect()
}

/// `(user, position)` for every training item that has at least one
/// earlier training item; the history is everything before the position.
pub fn history_targets(ds: &InteractionDataset) -> Vec<(u32, u32)> {
    (0..ds.n_users())
        .flat_map(|u| (1..ds.train(u).len()).map(move |p| (u as u32, p as u32)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn lines(text: &str) -> Result<Vec<Interaction>> {
        parse_interactions(Cursor::new(text.to_string()), Path::new("mem"))
    }

    fn grid(users: usize, items: usize) -> String {
        let mut s = String::new();
        for u in 0..users {
            for i in 0..items {
                s.push_str(&format!("u{u}\ti{i}\t{}\n", i * 10 + u));
            }
        }
        s
    }

    #[test]
    fn single_user_fails_five_core() {
        let raw = lines("a\t1\t1\na\t2\t2\na\t3\t3\na\t4\t4\na\t5\t5\n").unwrap();
        let filtered = k_core_filter(&raw, MIN_CORE);
        assert!(filtered.is_empty());
        assert!(matches!(build_dataset(&filtered), Err(Error::Data(_))));
    }

    #[test]
    fn full_grid_survives() {
        let raw = lines(&grid(6, 6)).unwrap();
        let ds = build_dataset(&k_core_filter(&raw, MIN_CORE)).unwrap();
        assert_eq!((ds.n_users(), ds.n_items()), (6, 6));
        assert_eq!(ds.n_interactions(), 36);
    }

    #[test]
    fn k_core_is_iterative_and_idempotent() {
        // u5 has 5 items but item i6 is only seen by u5; dropping it leaves
        // u5 with 4 interactions, which in turn must go.
        let mut text = grid(5, 5);
        for i in 0..4 {
            text.push_str(&format!("u5\ti{i}\t99\n"));
        }
        text.push_str("u5\ti6\t100\n");
        let raw = lines(&text).unwrap();
        let once = k_core_filter(&raw, MIN_CORE);
        assert!(once.iter().all(|x| x.user != "u5"));
        assert_eq!(once.len(), 25);
        assert_eq!(k_core_filter(&once, MIN_CORE), once);
    }

    #[test]
    fn ties_keep_input_order() {
        let mut text = grid(5, 5);
        text = text.replace("u0\ti3\t30", "u0\ti3\t0");
        let raw = lines(&text).unwrap();
        let ds = build_dataset(&raw).unwrap();
        let names: Vec<_> = ds.sequence(0).iter().map(|&i| ds.item_name(i).to_string()).collect();
        assert_eq!(names, vec!["i0", "i3", "i1", "i2", "i4"]);
    }

    #[test]
    fn malformed_line_reports_position() {
        match lines("a\t1\t1\nbad line\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(lines("a\t1\tnope\n"), Err(Error::Parse { line: 1, .. })));
        assert_eq!(lines("# c\n\na\t1\t4.5\t7\n").unwrap()[0].timestamp, 7);
    }

    #[test]
    fn leave_one_out() {
        let ds = InteractionDataset::from_sequences(9, vec![vec![1, 2, 3, 4, 5, 6, 7]]).unwrap();
        assert_eq!(ds.train(0), &[1, 2, 3, 4, 5]);
        assert_eq!(ds.valid(0), 6);
        assert_eq!(ds.test(0), 7);
        assert_eq!(ds.history(0, Split::Test), &[1, 2, 3, 4, 5, 6]);
        assert!(InteractionDataset::from_sequences(3, vec![vec![1, 0, 2]]).is_err());
    }

    #[test]
    fn padding_and_chunking() {
        assert_eq!(left_pad(&[3, 7], 4), vec![0, 0, 3, 7]);
        let chunks = chunk_sequence(&[1, 2, 3, 4, 5, 6, 7, 8, 9], 4);
        assert_eq!(chunks, vec![vec![1, 2, 3, 4], vec![5, 6, 7, 8], vec![0, 0, 0, 9]]);
        let ds = InteractionDataset::from_sequences(20, vec![(1..=11).collect(), vec![4, 5, 6, 7]]).unwrap();
        let seqs = build_sequences(&ds, 4).unwrap();
        assert!(seqs.iter().all(|s| s.len() == 4));
        let mut kept: Vec<_> = seqs.concat().into_iter().filter(|&i| i != PAD).collect();
        let mut expected: Vec<_> = (0..2).flat_map(|u| ds.train(u).to_vec()).collect();
        kept.sort_unstable();
        expected.sort_unstable();
        assert_eq!(kept, expected);
        assert!(build_sequences(&ds, 1).is_err());
    }

    #[test]
    fn shuffles() {
        let a = shuffled_epoch(200, 9, 3);
        assert_eq!(a, shuffled_epoch(200, 9, 3));
        assert_ne!(a.order, shuffled_epoch(200, 10, 3).order);
        assert_ne!(a.order, shuffled_epoch(200, 9, 4).order);
        let mut sorted = a.order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..200).collect::<Vec<_>>());
    }

    fn small_ds() -> InteractionDataset {
        InteractionDataset::from_sequences(
            30,
            vec![
                vec![1, 2, 3, 4, 5, 6],
                vec![7, 8, 9, 10, 11],
                vec![2, 4, 6, 8, 10, 12, 14],
            ],
        )
        .unwrap()
    }

    #[test]
    fn bpr_negatives_never_in_train() {
        let ds = small_ds();
        let mut rng = RngStream::new(5, 1);
        let mut n = 0;
        while n < 100_000 {
            for (u, p, neg) in sample_bpr_triples(&ds, 1000, &mut rng) {
                assert!(ds.in_train(u as usize, p));
                assert!(!ds.in_train(u as usize, neg));
                n += 1;
            }
        }
        let a = sample_bpr_triples(&ds, 64, &mut RngStream::new(1, 2));
        let b = sample_bpr_triples(&ds, 64, &mut RngStream::new(1, 2));
        assert_eq!(a, b);
    }

    #[test]
    fn bpr_positive_frequency_uniform() {
        let ds = small_ds();
        let mut rng = RngStream::new(11, 0);
        let mut counts: HashMap<(u32, ItemId), usize> = HashMap::new();
        let mut per_user = [0usize; 3];
        for (u, p, _) in sample_bpr_triples(&ds, 100_000, &mut rng) {
            *counts.entry((u, p)).or_default() += 1;
            per_user[u as usize] += 1;
        }
        for u in 0..3 {
            let k = ds.train(u).len() as f64;
            for &i in ds.train(u) {
                let expected = per_user[u] as f64 / k;
                let got = counts[&(u as u32, i)] as f64;
                assert!(
                    (got - expected).abs() / expected < 0.05,
                    "u{u} i{i}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn saturated_user_skipped() {
        let ds = InteractionDataset::from_sequences(3, vec![vec![1, 2, 3, 1, 2]]).unwrap();
        assert!(sample_negative(&ds, 0, &mut RngStream::new(0, 0)).is_none());
        assert!(sample_bpr_triples(&ds, 10, &mut RngStream::new(0, 0)).is_empty());
    }
}
