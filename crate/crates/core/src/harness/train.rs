//! Training loops for one model or a pair of peers.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cooperation::{lw_cooperate, noise_reactivate, pw_cooperate, Cadence, CooperationReport, LayerCooperation};
use crate::criteria::invalid_layer_ratio;
use crate::data::{
    history_targets, left_pad, sample_negative, shuffled_epoch, train_pairs, InteractionDataset, ItemId, Split,
};
use crate::error::{config_err, Error, Result};
use crate::eval::{evaluate, evaluate_ensemble, EvalResult};
use crate::harness::config::{Mode, PeerSeeds, RunConfig};
use crate::models::checkpoint::{decode, encode, Checkpoint};
use crate::models::{DnnExample, HyperParams, Model, ModelKind};
use crate::numerics::{AdamConfig, Optimizer};
use crate::params::{LayerKind, ParameterSet};

/// Training examples for one model kind, indexed by a shuffle order.
#[derive(Clone, Debug)]
pub enum TrainData {
    /// `(user, positive)` pairs; negatives are drawn per batch.
    Bpr(Vec<(u32, ItemId)>),
    Dnn(Vec<DnnExample>),
    /// Length-`t` chunks of training sequences.
    Sas(Vec<Vec<ItemId>>),
}

impl TrainData {
    pub fn new(kind: ModelKind, ds: &InteractionDataset, hp: &HyperParams) -> Result<Self> {
        Ok(match kind {
            ModelKind::Bpr => TrainData::Bpr(train_pairs(ds)),
            ModelKind::Dnn => TrainData::Dnn(
                history_targets(ds)
                    .into_iter()
                    .map(|(u, p)| {
                        let train = ds.train(u as usize);
                        DnnExample {
                            history: left_pad(&train[..p as usize], hp.seq_len),
                            target: train[p as usize],
                        }
                    })
                    .collect(),
            ),
            ModelKind::SasLite => TrainData::Sas(crate::data::build_sequences(ds, hp.seq_len)?),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            TrainData::Bpr(v) => v.len(),
            TrainData::Dnn(v) => v.len(),
            TrainData::Sas(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One model with its optimizer and random streams.
#[derive(Clone, Debug)]
pub struct Peer {
    pub index: usize,
    pub model: Model,
    pub opt: Optimizer<f32>,
    pub seeds: PeerSeeds,
    pub batch_size: usize,
    /// Per-tensor flags; `false` entries are held at zero after every step.
    pub keep: Option<Vec<Vec<bool>>>,
}

impl Peer {
    pub fn new(index: usize, model: Model, learning_rate: f64, seeds: PeerSeeds, batch_size: usize) -> Self {
        let opt = Optimizer::new(model.params(), AdamConfig::with_lr(learning_rate));
        Self {
            index,
            model,
            opt,
            seeds,
            batch_size,
            keep: None,
        }
    }

    /// Freezes every currently-zero weight-matrix entry at zero.
    pub fn freeze_zeros(&mut self) {
        self.keep = Some(
            self.model
                .params()
                .tensors()
                .iter()
                .map(|(name, t)| {
                    let is_weights = name.ends_with(".weights");
                    t.iter().map(|&v| !is_weights || v != 0.0).collect()
                })
                .collect(),
        );
    }

    fn train_batch(&mut self, data: &TrainData, ds: &InteractionDataset, idx: &[usize]) -> Result<f64> {
        let rng = &mut self.seeds.sampler;
        let loss = match (&mut self.model, data) {
            (Model::Bpr(m), TrainData::Bpr(pairs)) => {
                let triples: Vec<_> = idx
                    .iter()
                    .filter_map(|&k| {
                        let (u, i) = pairs[k];
                        sample_negative(ds, u as usize, rng).map(|j| (u, i, j))
                    })
                    .collect();
                if triples.is_empty() {
                    return Ok(0.0);
                }
                f64::from(m.train_step(&triples, &mut self.opt)?) / triples.len() as f64
            }
            (Model::Dnn(m), TrainData::Dnn(examples)) => {
                let batch: Vec<_> = idx.iter().map(|&k| examples[k].clone()).collect();
                f64::from(m.train_step(&batch, &mut self.opt)?)
            }
            (Model::SasLite(m), TrainData::Sas(chunks)) => {
                let picked: Vec<_> = idx.iter().map(|&k| chunks[k].clone()).collect();
                let batch = m.make_batch(&picked, rng)?;
                if batch.samples.is_empty() {
                    return Ok(0.0);
                }
                f64::from(m.train_step(&batch, &mut self.opt)?)
            }
            _ => return config_err("training data does not match model kind"),
        };
        if let Some(keep) = &self.keep {
            for ((_, t), k) in self.model.params_mut().tensors_mut().into_iter().zip(keep) {
                for (v, &kept) in t.iter_mut().zip(k) {
                    if !kept {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(loss)
    }

    /// Runs batches `range` of this epoch's order; returns the summed loss.
    fn run_batches(
        &mut self,
        data: &TrainData,
        ds: &InteractionDataset,
        order: &[usize],
        range: Range<usize>,
    ) -> Result<f64> {
        let mut total = 0.0;
        for b in range {
            let lo = b * self.batch_size;
            let hi = (lo + self.batch_size).min(order.len());
            total += self.train_batch(data, ds, &order[lo..hi])?;
        }
        Ok(total)
    }
}

/// What happens at a barrier between training segments.
#[derive(Clone, Debug)]
pub enum Coop {
    None,
    Lw(crate::cooperation::LwConfig, crate::criteria::EntropyConfig),
    Pw(crate::cooperation::PwConfig),
    Noise {
        gamma: f64,
        std: f64,
        scope: crate::params::Scope,
    },
}

impl Coop {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(match cfg.mode {
            Mode::PcLw => Coop::Lw(cfg.lw_config(), cfg.entropy_config()?),
            Mode::PcPw => Coop::Pw(cfg.pw_config()),
            Mode::PcNoise => Coop::Noise {
                gamma: cfg.gamma,
                std: cfg.noise_std,
                scope: cfg.scope,
            },
            Mode::Single | Mode::EnsembleM2 | Mode::Prune => Coop::None,
        })
    }

    fn apply(&self, peers: &mut [Peer], epoch: usize) -> Result<Option<CooperationReport>> {
        let mut report = match (self, peers) {
            (Coop::None, _) => return Ok(None),
            (Coop::Lw(lw, ent), [a, b]) => lw_cooperate(a.model.params_mut(), b.model.params_mut(), lw, *ent)?,
            (Coop::Pw(pw), [a, b]) => pw_cooperate(a.model.params_mut(), b.model.params_mut(), pw)?,
            (Coop::Noise { gamma, std, scope }, [p]) => {
                let replaced = noise_reactivate(p.model.params_mut(), *gamma, *std, *scope, &mut p.seeds.noise)?;
                CooperationReport {
                    epoch,
                    criterion: "noise".into(),
                    layers: vec![LayerCooperation {
                        layer: "all".into(),
                        h_self: 0.0,
                        h_peer: 0.0,
                        mu_self: None,
                        mu_peer: None,
                        replaced_self: replaced,
                        replaced_peer: 0,
                    }],
                }
            }
            (_, peers) => return config_err(format!("cooperation needs a matching peer count, got {}", peers.len())),
        };
        report.epoch = epoch;
        Ok(Some(report))
    }
}

/// Batch ranges between cooperation barriers.
fn segments(n_batches: usize, cadence: Cadence) -> Vec<Range<usize>> {
    let k = match cadence {
        Cadence::Epoch => n_batches.max(1),
        Cadence::Batches(k) => k,
    };
    (0..n_batches)
        .step_by(k)
        .map(|lo| lo..(lo + k).min(n_batches))
        .collect()
}

/// Publishes and re-reads a peer's weights through the checkpoint format.
fn exchange(params: &ParameterSet<f32>) -> Result<ParameterSet<f32>> {
    let ckpt = Checkpoint {
        config: Default::default(),
        params: params.clone(),
    };
    let (manifest, blob) = encode(&ckpt)?;
    Ok(decode(&manifest, &blob)?.params)
}

/// One epoch for all peers. Serial mode interleaves the peers batch by
/// batch; parallel mode runs each segment on one thread per peer. Either
/// way the barrier runs after every segment. Returns the mean batch loss
/// of each peer and the cooperation reports.
pub fn train_epoch(
    peers: &mut [Peer],
    data: &TrainData,
    ds: &InteractionDataset,
    epoch: usize,
    cadence: Cadence,
    coop: &Coop,
    parallel: bool,
) -> Result<(Vec<f64>, Vec<CooperationReport>)> {
    let n = data.len();
    let b = peers.first().map_or(1, |p| p.batch_size);
    if peers.iter().any(|p| p.batch_size != b) {
        return config_err("peers must share the batch size");
    }
    let n_batches = n.div_ceil(b);
    let orders: Vec<Vec<usize>> = peers
        .iter()
        .map(|p| shuffled_epoch(n, p.seeds.shuffle_seed, epoch).order)
        .collect();
    let mut totals = vec![0.0; peers.len()];
    let mut reports = Vec::new();
    for seg in segments(n_batches, cadence) {
        if parallel && peers.len() > 1 {
            let results: Vec<Result<f64>> = std::thread::scope(|s| {
                let handles: Vec<_> = peers
                    .iter_mut()
                    .zip(&orders)
                    .map(|(p, order)| {
                        let seg = seg.clone();
                        s.spawn(move || p.run_batches(data, ds, order, seg))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .collect()
            });
            for (t, r) in totals.iter_mut().zip(results) {
                *t += r?;
            }
            for p in peers.iter_mut() {
                *p.model.params_mut() = exchange(p.model.params())?;
            }
        } else {
            for bi in seg {
                for (k, p) in peers.iter_mut().enumerate() {
                    totals[k] += p.run_batches(data, ds, &orders[k], bi..bi + 1)?;
                }
            }
        }
        for (k, t) in totals.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::Divergence { epoch, loss: *t });
            }
            if !peers[k].model.params().is_finite() {
                return Err(Error::Divergence { epoch, loss: f64::NAN });
            }
        }
        if let Some(r) = coop.apply(peers, epoch)? {
            reports.push(r);
        }
    }
    let means = totals.iter().map(|t| t / n_batches.max(1) as f64).collect();
    Ok((means, reports))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub peer: usize,
    pub train_loss: f64,
    pub valid_mrr5: f64,
    pub invalid_ratio: f64,
    /// Parameter checksum after this epoch's cooperation.
    pub checksum: u64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,peer,train_loss,valid_mrr5,invalid_ratio,checksum";
}

#[derive(Clone, Debug)]
pub struct PeerResult {
    pub best_epoch: usize,
    pub best_valid_mrr5: f64,
    pub params: ParameterSet<f32>,
    pub valid: EvalResult,
    pub test: EvalResult,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksums {
    pub before: [u64; 2],
    pub after: [u64; 2],
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run_id: String,
    pub config: RunConfig,
    pub history: Vec<EpochRecord>,
    pub cooperation: Vec<CooperationReport>,
    pub peers: Vec<PeerResult>,
    /// Index of the reported peer (the better validation MRR@5).
    pub selected: usize,
    pub valid: EvalResult,
    pub test: EvalResult,
    pub ensemble_checksums: Option<Checksums>,
}

impl RunOutcome {
    /// The reported single model (the selected peer's best checkpoint).
    pub fn model(&self) -> Result<Model> {
        Model::from_params(
            self.config.model,
            self.peers[self.selected].params.clone(),
            &self.config.hyper_params(),
        )
    }

    pub fn tag(&self) -> String {
        model_tag(&self.config)
    }
}

pub fn model_tag(cfg: &RunConfig) -> String {
    match cfg.mode {
        Mode::Single | Mode::Prune => cfg.model.to_string(),
        mode => format!("{mode}-{}", cfg.model),
    }
}

fn tagged(mut r: EvalResult, tag: String) -> EvalResult {
    r.model = tag;
    r
}

/// Builds the peers of a run from fresh initializations.
pub fn make_peers(cfg: &RunConfig, ds: &InteractionDataset) -> Result<Vec<Peer>> {
    let hp = cfg.hyper_params();
    let same_order = cfg.mode.is_peer_collaboration() && cfg.variant.same_order();
    (0..cfg.mode.peer_count())
        .map(|k| {
            let mut seeds = PeerSeeds::new(cfg.seed, k, same_order && k > 0);
            let model = Model::new(cfg.model, ds, &hp, &mut seeds.init)?;
            let lr = if k == 1 && cfg.mode.is_peer_collaboration() {
                cfg.eta2()
            } else {
                cfg.eta1()
            };
            Ok(Peer::new(k, model, lr, seeds, hp.batch_size))
        })
        .collect()
}

/// Dense layers only, or the embedding tables for models without any.
fn layer_ratio(cfg: &RunConfig, params: &ParameterSet<f32>) -> Result<f64> {
    let has_dense = params.groups().iter().any(|g| g.kind == LayerKind::Dense);
    invalid_layer_ratio(params, cfg.invalid_threshold, cfg.entropy_config()?, !has_dense)
}

/// Trains `peers` for up to `epochs` epochs with best-validation selection
/// and early stopping, then evaluates each peer's best state on both splits.
pub fn train_peers(
    cfg: &RunConfig,
    ds: &InteractionDataset,
    peers: &mut [Peer],
    epochs: usize,
) -> Result<(Vec<PeerResult>, Vec<EpochRecord>, Vec<CooperationReport>)> {
    let hp = cfg.hyper_params();
    let data = TrainData::new(cfg.model, ds, &hp)?;
    if data.is_empty() {
        return config_err("no training examples");
    }
    let eval_cfg = cfg.eval_config();
    let coop = Coop::from_config(cfg)?;
    let mut history = Vec::new();
    let mut cooperation = Vec::new();

    let mut best: Vec<(usize, f64, ParameterSet<f32>)> = Vec::new();
    for p in peers.iter() {
        let v = evaluate(&p.model, ds, Split::Valid, &eval_cfg)?.mrr5();
        history.push(EpochRecord {
            epoch: 0,
            peer: p.index,
            train_loss: f64::NAN,
            valid_mrr5: v,
            invalid_ratio: layer_ratio(cfg, p.model.params())?,
            checksum: p.model.params().checksum(),
        });
        best.push((0, v, p.model.params().clone()));
    }

    for epoch in 1..=epochs {
        let (losses, reports) = train_epoch(peers, &data, ds, epoch, cfg.coop_every, &coop, cfg.parallel)?;
        cooperation.extend(reports);
        for (k, p) in peers.iter().enumerate() {
            let v = evaluate(&p.model, ds, Split::Valid, &eval_cfg)?.mrr5();
            log::info!(
                "epoch {epoch} peer {} loss {:.5} valid MRR@5 {v:.5}",
                p.index,
                losses[k]
            );
            history.push(EpochRecord {
                epoch,
                peer: p.index,
                train_loss: losses[k],
                valid_mrr5: v,
                invalid_ratio: layer_ratio(cfg, p.model.params())?,
                checksum: p.model.params().checksum(),
            });
            if v > best[k].1 {
                best[k] = (epoch, v, p.model.params().clone());
            }
        }
        if best.iter().all(|b| epoch - b.0 >= cfg.patience) {
            log::info!("early stop at epoch {epoch}");
            break;
        }
    }

    let results = best
        .into_iter()
        .map(|(best_epoch, best_valid_mrr5, params)| {
            let model = Model::from_params(cfg.model, params.clone(), &hp)?;
            Ok(PeerResult {
                best_epoch,
                best_valid_mrr5,
                valid: evaluate(&model, ds, Split::Valid, &eval_cfg)?,
                test: evaluate(&model, ds, Split::Test, &eval_cfg)?,
                params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((results, history, cooperation))
}

/// Runs one configured experiment on a loaded dataset. Nothing is written.
pub fn run(cfg: &RunConfig, ds: &InteractionDataset) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut peers = make_peers(cfg, ds)?;
    let (results, history, cooperation) = train_peers(cfg, ds, &mut peers, cfg.epochs)?;
    let tag = model_tag(cfg);
    let eval_cfg = cfg.eval_config();

    let selected = results.iter().enumerate().fold(0, |acc, (k, r)| {
        if r.best_valid_mrr5 > results[acc].best_valid_mrr5 {
            k
        } else {
            acc
        }
    });

    let (valid, test, ensemble_checksums) = if cfg.mode == Mode::EnsembleM2 {
        let hp = cfg.hyper_params();
        let a = Model::from_params(cfg.model, results[0].params.clone(), &hp)?;
        let b = Model::from_params(cfg.model, results[1].params.clone(), &hp)?;
        let before = [a.params().checksum(), b.params().checksum()];
        let valid = evaluate_ensemble(&a, &b, ds, Split::Valid, &eval_cfg)?;
        let mut test = evaluate_ensemble(&a, &b, ds, Split::Test, &eval_cfg)?;
        let after = [a.params().checksum(), b.params().checksum()];
        if before != after {
            return Err(Error::Config("ensemble evaluation modified model parameters".into()));
        }
        test.invalid_ratio_from(cfg, &results[0].params)?;
        (
            tagged(valid, tag.clone()),
            tagged(test, tag),
            Some(Checksums { before, after }),
        )
    } else {
        let r = &results[selected];
        let mut test = r.test.clone();
        test.invalid_ratio_from(cfg, &r.params)?;
        (tagged(r.valid.clone(), tag.clone()), tagged(test, tag), None)
    };

    Ok(RunOutcome {
        run_id: cfg.run_id(),
        config: cfg.clone(),
        history,
        cooperation,
        peers: results,
        selected,
        valid,
        test,
        ensemble_checksums,
    })
}

trait WithRatio {
    fn invalid_ratio_from(&mut self, cfg: &RunConfig, params: &ParameterSet<f32>) -> Result<()>;
}

impl WithRatio for EvalResult {
    fn invalid_ratio_from(&mut self, cfg: &RunConfig, params: &ParameterSet<f32>) -> Result<()> {
        self.invalid_layer_ratio = Some(layer_ratio(cfg, params)?);
        Ok(())
    }
}

/// Continues training an existing model as a single peer (fresh Adam state).
/// With `freeze_zeros`, weights that are zero at the start stay zero.
pub fn fine_tune(
    cfg: &RunConfig,
    ds: &InteractionDataset,
    model: Model,
    epochs: usize,
    freeze_zeros: bool,
) -> Result<PeerResult> {
    let mut single = cfg.clone();
    single.mode = Mode::Single;
    let mut peer = Peer::new(
        0,
        model,
        cfg.eta1(),
        PeerSeeds::new(cfg.seed, 7, false),
        cfg.hyper_params().batch_size,
    );
    if freeze_zeros {
        peer.freeze_zeros();
    }
    let mut peers = [peer];
    let (mut results, _, _) = train_peers(&single, ds, &mut peers, epochs)?;
    Ok(results.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticConfig;

    fn small_cfg(model: ModelKind, mode: Mode) -> (RunConfig, InteractionDataset) {
        let mut cfg = RunConfig::new(model, mode);
        cfg.epochs = 2;
        cfg.synthetic_users = 120;
        cfg.synthetic_items = 80;
        cfg.t = Some(8);
        cfg.dim = Some(8);
        let ds = crate::synthetic::dataset(&SyntheticConfig::small(1)).unwrap();
        (cfg, ds)
    }

    #[test]
    fn segment_boundaries() {
        assert_eq!(segments(5, Cadence::Epoch), vec![0..5]);
        assert_eq!(segments(5, Cadence::Batches(2)), vec![0..2, 2..4, 4..5]);
        assert_eq!(segments(0, Cadence::Epoch), Vec::<Range<usize>>::new());
    }

    #[test]
    fn zero_epochs_evaluates_initial_model() {
        let (mut cfg, ds) = small_cfg(ModelKind::Bpr, Mode::Single);
        cfg.epochs = 0;
        let out = run(&cfg, &ds).unwrap();
        assert_eq!(out.peers[0].best_epoch, 0);
        assert_eq!(out.history.len(), 1);
        let init = Model::new(
            ModelKind::Bpr,
            &ds,
            &cfg.hyper_params(),
            &mut PeerSeeds::new(cfg.seed, 0, false).init,
        )
        .unwrap();
        assert_eq!(init.params().checksum(), out.peers[0].params.checksum());
    }

    #[test]
    fn lw_peers_match_after_cooperation() {
        for model in [ModelKind::Bpr, ModelKind::Dnn, ModelKind::SasLite] {
            let (cfg, ds) = small_cfg(model, Mode::PcLw);
            let out = run(&cfg, &ds).unwrap();
            for e in 1..=cfg.epochs {
                let rows: Vec<_> = out.history.iter().filter(|r| r.epoch == e).collect();
                assert_eq!(rows[0].checksum, rows[1].checksum, "{model} epoch {e}");
            }
        }
    }

    #[test]
    fn scope_limits_sharing() {
        let (mut cfg, ds) = small_cfg(ModelKind::Dnn, Mode::PcLw);
        cfg.scope = crate::params::Scope::only(crate::params::LayerRole::Embedding);
        cfg.epochs = 1;
        let mut peers = make_peers(&cfg, &ds).unwrap();
        let data = TrainData::new(cfg.model, &ds, &cfg.hyper_params()).unwrap();
        let coop = Coop::from_config(&cfg).unwrap();
        train_epoch(&mut peers, &data, &ds, 1, cfg.coop_every, &coop, false).unwrap();
        let (a, b) = (peers[0].model.params(), peers[1].model.params());
        assert_eq!(a.groups()[0], b.groups()[0]);
        assert_ne!(a.groups()[1].weights, b.groups()[1].weights);
        assert_ne!(a.groups()[2].weights, b.groups()[2].weights);
    }

    #[test]
    fn tiny_alpha_gives_midpoint() {
        let (mut cfg, ds) = small_cfg(ModelKind::Bpr, Mode::PcLw);
        cfg.alpha = 1e-12;
        let mut peers = make_peers(&cfg, &ds).unwrap();
        let data = TrainData::new(cfg.model, &ds, &cfg.hyper_params()).unwrap();
        let coop = Coop::from_config(&cfg).unwrap();
        let (_, reports) = train_epoch(&mut peers, &data, &ds, 1, cfg.coop_every, &coop, false).unwrap();
        for l in &reports[0].layers {
            assert!((l.mu_self.unwrap() - 0.5).abs() < 1e-9);
        }
        assert_eq!(peers[0].model.params(), peers[1].model.params());
    }

    #[test]
    fn divergence_is_reported() {
        let (mut cfg, ds) = small_cfg(ModelKind::Dnn, Mode::Single);
        cfg.epochs = 1;
        let mut peers = make_peers(&cfg, &ds).unwrap();
        peers[0].model.params_mut().groups_mut()[1].weights.set(0, 0, f32::NAN);
        let err = train_peers(&cfg, &ds, &mut peers, 1).unwrap_err();
        assert!(
            matches!(err, Error::Divergence { .. } | Error::NonFinite { .. }),
            "{err}"
        );
    }

    #[test]
    fn frozen_zeros_stay_zero() {
        let (cfg, ds) = small_cfg(ModelKind::Bpr, Mode::Single);
        let mut model = Model::new(
            cfg.model,
            &ds,
            &cfg.hyper_params(),
            &mut PeerSeeds::new(1, 0, false).init,
        )
        .unwrap();
        crate::cooperation::magnitude_prune(model.params_mut(), 0.5, crate::params::Scope::ALL).unwrap();
        let zeros_before: Vec<usize> = model
            .params()
            .tensors()
            .iter()
            .map(|(_, t)| t.iter().filter(|&&v| v == 0.0).count())
            .collect();
        let r = fine_tune(&cfg, &ds, model, 1, true).unwrap();
        let zeros_after: Vec<usize> = r
            .params
            .tensors()
            .iter()
            .map(|(_, t)| t.iter().filter(|&&v| v == 0.0).count())
            .collect();
        for (b, a) in zeros_before.iter().zip(&zeros_after) {
            assert!(a >= b);
        }
    }
}
