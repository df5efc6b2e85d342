//! Self-attention next-item model (single head, pre-norm blocks).
//!
//! Item embeddings are shared between input and prediction. Each position
//! attends causally to earlier non-pad positions; the training objective is
//! binary cross-entropy on the next item against one sampled negative.

use crate::data::{sample_other_item, ItemId, PAD};
use crate::error::{config_err, data_err, Result};
use crate::models::layers::{
    apply_mask, dense, dropout_mask, embedding, l2_penalty, layer_norm, layer_norm_backward, linear, linear_backward,
    relu, relu_backward, NormCache,
};
use crate::numerics::{
    axpy, dot, log_sigmoid, matmul, matmul_nt, matmul_tn, sigmoid, Matrix, Optimizer, RngStream, Scalar,
};
use crate::params::{LayerGroup, LayerKind, LayerRole, NormParams, ParameterSet};

pub const ITEM_EMB: usize = 0;
pub const POS_EMB: usize = 1;
const PER_BLOCK: usize = 6;
const Q: usize = 0;
const K: usize = 1;
const V: usize = 2;
const O: usize = 3;
const FFN1: usize = 4;
const FFN2: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SasConfig {
    pub n_items: usize,
    pub dim: usize,
    pub max_len: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub l2: f64,
}

/// A padded input sequence with per-position next-item targets and negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct SasSample {
    pub input: Vec<ItemId>,
    pub targets: Vec<ItemId>,
    pub negatives: Vec<ItemId>,
}

impl SasSample {
    /// Positions that carry loss: real input and real target.
    pub fn active(&self, j: usize) -> bool {
        self.input[j] != PAD && self.targets[j] != PAD
    }

    pub fn active_count(&self) -> usize {
        (0..self.input.len()).filter(|&j| self.active(j)).count()
    }
}

#[derive(Clone, Debug)]
pub struct BlockMasks<T> {
    pub attn_out: Option<Matrix<T>>,
    pub ffn_hidden: Option<Matrix<T>>,
    pub ffn_out: Option<Matrix<T>>,
}

#[derive(Clone, Debug)]
pub struct DropoutMasks<T> {
    pub embed: Option<Matrix<T>>,
    pub blocks: Vec<BlockMasks<T>>,
}

#[derive(Clone, Debug)]
pub struct SasBatch<T> {
    pub samples: Vec<SasSample>,
    pub masks: Vec<Option<DropoutMasks<T>>>,
}

struct BlockCache<T> {
    n1: Matrix<T>,
    ln1: NormCache<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    attn: Matrix<T>,
    ctx: Matrix<T>,
    n2: Matrix<T>,
    ln2: NormCache<T>,
    z1: Matrix<T>,
    f1: Matrix<T>,
}

struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    final_ln: NormCache<T>,
}

#[derive(Clone, Debug)]
pub struct SasModel<T = f32> {
    params: ParameterSet<T>,
    cfg: SasConfig,
}

fn block_name(b: usize, part: &str) -> String {
    format!("block{b}.{part}")
}

impl<T: Scalar> SasModel<T> {
    pub fn new(cfg: SasConfig, rng: &mut RngStream) -> Result<Self> {
        if cfg.blocks == 0 || cfg.dim == 0 || cfg.max_len < 2 || cfg.n_items < 2 {
            return config_err(format!("invalid self-attention config {cfg:?}"));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return config_err(format!("dropout must lie in [0,1), got {}", cfg.dropout));
        }
        let d = cfg.dim;
        let mut groups = vec![
            embedding("item_emb", rng, cfg.n_items + 1, d, true),
            embedding("pos_emb", rng, cfg.max_len, d, false),
        ];
        for b in 0..cfg.blocks {
            groups
                .push(dense(&block_name(b, "attn_q"), LayerRole::Middle, rng, d, d).with_norm(NormParams::identity(d)));
            groups.push(dense(&block_name(b, "attn_k"), LayerRole::Middle, rng, d, d));
            groups.push(dense(&block_name(b, "attn_v"), LayerRole::Middle, rng, d, d));
            groups.push(dense(&block_name(b, "attn_o"), LayerRole::Middle, rng, d, d));
            groups.push(dense(&block_name(b, "ffn1"), LayerRole::Middle, rng, d, d).with_norm(NormParams::identity(d)));
            groups.push(dense(&block_name(b, "ffn2"), LayerRole::Middle, rng, d, d));
        }
        groups.push(
            LayerGroup::new(
                "final_norm",
                LayerRole::Softmax,
                LayerKind::Norm,
                Matrix::filled(1, d, T::one()),
            )
            .with_bias(vec![T::zero(); d]),
        );
        Ok(Self {
            params: ParameterSet::new(groups)?,
            cfg,
        })
    }

    pub fn from_params(params: ParameterSet<T>, dropout: f64, l2: f64) -> Result<Self> {
        let n = params.len();
        if n < 2 + PER_BLOCK + 1 || !(n - 3).is_multiple_of(PER_BLOCK) {
            return config_err("self-attention parameter layout mismatch");
        }
        let blocks = (n - 3) / PER_BLOCK;
        let item = &params.groups()[ITEM_EMB].weights;
        let pos = &params.groups()[POS_EMB].weights;
        let cfg = SasConfig {
            n_items: item.rows() - 1,
            dim: item.cols(),
            max_len: pos.rows(),
            blocks,
            dropout,
            l2,
        };
        let mut rng = RngStream::new(0, 0);
        let template = Self::new(cfg, &mut rng)?;
        template.params.check_same_structure(&params)?;
        Ok(Self { params, cfg })
    }

    pub fn config(&self) -> &SasConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    fn block(&self, b: usize, part: usize) -> &LayerGroup<T> {
        &self.params.groups()[2 + b * PER_BLOCK + part]
    }

    fn final_norm(&self) -> NormParams<T> {
        let g = &self.params.groups()[2 + self.cfg.blocks * PER_BLOCK];
        NormParams {
            gain: g.weights.as_slice().to_vec(),
            shift: g.bias.clone().expect("final norm shift"),
        }
    }

    fn check_items(&self, items: &[ItemId]) -> Result<()> {
        if let Some(&bad) = items.iter().find(|&&i| i as usize > self.cfg.n_items) {
            return data_err(format!("item {bad} out of range 1..={}", self.cfg.n_items));
        }
        Ok(())
    }

    /// Training sample from a length-`max_len` chunk: inputs are the chunk
    /// shifted right by one, targets the chunk itself.
    pub fn sample_from_chunk(&self, chunk: &[ItemId], rng: &mut RngStream) -> Result<SasSample> {
        let t = self.cfg.max_len;
        if chunk.len() != t {
            return config_err(format!("chunk length {} != sequence length {t}", chunk.len()));
        }
        self.check_items(chunk)?;
        let mut input = vec![PAD; t];
        input[1..].copy_from_slice(&chunk[..t - 1]);
        let negatives = (0..t)
            .map(|j| {
                if input[j] != PAD && chunk[j] != PAD {
                    sample_other_item(self.cfg.n_items, chunk[j], rng)
                } else {
                    PAD
                }
            })
            .collect();
        Ok(SasSample {
            input,
            targets: chunk.to_vec(),
            negatives,
        })
    }

    pub fn draw_masks(&self, rng: &mut RngStream) -> Option<DropoutMasks<T>> {
        let p = self.cfg.dropout;
        if p <= 0.0 {
            return None;
        }
        let (t, d) = (self.cfg.max_len, self.cfg.dim);
        Some(DropoutMasks {
            embed: dropout_mask(rng, t, d, p),
            blocks: (0..self.cfg.blocks)
                .map(|_| BlockMasks {
                    attn_out: dropout_mask(rng, t, d, p),
                    ffn_hidden: dropout_mask(rng, t, d, p),
                    ffn_out: dropout_mask(rng, t, d, p),
                })
                .collect(),
        })
    }

    /// Builds a training batch; sequences without any active position are dropped.
    pub fn make_batch(&self, chunks: &[Vec<ItemId>], rng: &mut RngStream) -> Result<SasBatch<T>> {
        let mut samples = Vec::with_capacity(chunks.len());
        let mut masks = Vec::with_capacity(chunks.len());
        for c in chunks {
            let s = self.sample_from_chunk(c, rng)?;
            if s.active_count() == 0 {
                continue;
            }
            masks.push(self.draw_masks(rng));
            samples.push(s);
        }
        Ok(SasBatch { samples, masks })
    }

    fn attention(&self, q: &Matrix<T>, k: &Matrix<T>, input: &[ItemId]) -> Matrix<T> {
        let t = input.len();
        let scale = T::one() / T::of(self.cfg.dim as f64).sqrt();
        let mut a = Matrix::zeros(t, t);
        for j in 0..t {
            if input[j] == PAD {
                continue;
            }
            let row = a.row_mut(j);
            let mut max = T::neg_infinity();
            for kk in 0..=j {
                if input[kk] != PAD {
                    row[kk] = dot(q.row(j), k.row(kk)) * scale;
                    max = max.max(row[kk]);
                }
            }
            let mut sum = T::zero();
            for kk in 0..=j {
                if input[kk] != PAD {
                    row[kk] = (row[kk] - max).exp();
                    sum += row[kk];
                }
            }
            for v in &mut row[..=j] {
                *v /= sum;
            }
        }
        a
    }

    fn forward(&self, input: &[ItemId], masks: Option<&DropoutMasks<T>>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        let (t, d) = (self.cfg.max_len, self.cfg.dim);
        if input.len() != t {
            return config_err(format!("input length {} != {t}", input.len()));
        }
        self.check_items(input)?;
        let items = &self.params.groups()[ITEM_EMB].weights;
        let pos = &self.params.groups()[POS_EMB].weights;
        let mut h = Matrix::zeros(t, d);
        for (j, &i) in input.iter().enumerate() {
            if i != PAD {
                let row = h.row_mut(j);
                row.copy_from_slice(items.row(i as usize));
                axpy(T::one(), pos.row(j), row);
            }
        }
        apply_mask(&mut h, masks.and_then(|m| m.embed.as_ref()));

        let mut blocks = Vec::with_capacity(self.cfg.blocks);
        for b in 0..self.cfg.blocks {
            let bm = masks.map(|m| &m.blocks[b]);
            let gq = self.block(b, Q);
            let (n1, ln1) = layer_norm(&h, gq.norm.as_ref().expect("attn norm"));
            let q = linear(&n1, gq);
            let k = linear(&n1, self.block(b, K));
            let v = linear(&n1, self.block(b, V));
            let attn = self.attention(&q, &k, input);
            let ctx = matmul(&attn, &v)?;
            let mut o = linear(&ctx, self.block(b, O));
            apply_mask(&mut o, bm.and_then(|m| m.attn_out.as_ref()));
            let h1 = {
                let mut x = h;
                x.add_assign(&o)?;
                x
            };
            let g1 = self.block(b, FFN1);
            let (n2, ln2) = layer_norm(&h1, g1.norm.as_ref().expect("ffn norm"));
            let z1 = linear(&n2, g1);
            let mut f1 = relu(&z1);
            apply_mask(&mut f1, bm.and_then(|m| m.ffn_hidden.as_ref()));
            let mut f2 = linear(&f1, self.block(b, FFN2));
            apply_mask(&mut f2, bm.and_then(|m| m.ffn_out.as_ref()));
            h = h1;
            h.add_assign(&f2)?;
            blocks.push(BlockCache {
                n1,
                ln1,
                q,
                k,
                v,
                attn,
                ctx,
                n2,
                ln2,
                z1,
                f1,
            });
        }
        let (feats, final_ln) = layer_norm(&h, &self.final_norm());
        Ok((feats, ForwardCache { blocks, final_ln }))
    }

    /// Final per-position representations without dropout.
    pub fn sequence_outputs(&self, input: &[ItemId]) -> Result<Matrix<T>> {
        Ok(self.forward(input, None)?.0)
    }

    /// Scores of items `1..=n_items` from the last position's representation.
    pub fn score_all_items(&self, input: &[ItemId]) -> Result<Vec<T>> {
        if input.iter().all(|&i| i == PAD) {
            return data_err("empty history");
        }
        let feats = self.sequence_outputs(input)?;
        let last = feats.row(feats.rows() - 1);
        let items = &self.params.groups()[ITEM_EMB].weights;
        Ok((1..=self.cfg.n_items).map(|i| dot(last, items.row(i))).collect())
    }

    /// Mean per-position BCE (positive vs. one negative) plus `λ Σ ‖W‖²`.
    pub fn loss_and_grads(&self, batch: &SasBatch<T>) -> Result<(T, ParameterSet<T>)> {
        let mut grads = self.params.zeros_like();
        let mut loss = l2_penalty(&self.params, &mut grads, self.cfg.l2);
        let total: usize = batch.samples.iter().map(SasSample::active_count).sum();
        if total == 0 {
            return Ok((loss, grads));
        }
        let inv_n = T::one() / T::of(total as f64);
        for (sample, masks) in batch.samples.iter().zip(&batch.masks) {
            self.check_items(&sample.targets)?;
            self.check_items(&sample.negatives)?;
            loss += self.accumulate_sample(sample, masks.as_ref(), inv_n, &mut grads)?;
        }
        Ok((loss, grads))
    }

    fn accumulate_sample(
        &self,
        sample: &SasSample,
        masks: Option<&DropoutMasks<T>>,
        inv_n: T,
        grads: &mut ParameterSet<T>,
    ) -> Result<T> {
        let (t, d) = (self.cfg.max_len, self.cfg.dim);
        let (feats, cache) = self.forward(&sample.input, masks)?;
        let items = &self.params.groups()[ITEM_EMB].weights;
        let mut loss = T::zero();
        let mut dfeats = Matrix::zeros(t, d);
        for j in 0..t {
            if !sample.active(j) {
                continue;
            }
            let (pos, neg) = (sample.targets[j] as usize, sample.negatives[j] as usize);
            let f = feats.row(j);
            let lp = dot(f, items.row(pos));
            let ln = dot(f, items.row(neg));
            loss -= (log_sigmoid(lp) + log_sigmoid(-ln)) * inv_n;
            let gp = -sigmoid(-lp) * inv_n;
            let gn = sigmoid(ln) * inv_n;
            let df = dfeats.row_mut(j);
            axpy(gp, items.row(pos), df);
            axpy(gn, items.row(neg), df);
            let ge = &mut grads.groups_mut()[ITEM_EMB].weights;
            axpy(gp, f, ge.row_mut(pos));
            axpy(gn, f, ge.row_mut(neg));
        }

        let final_idx = 2 + self.cfg.blocks * PER_BLOCK;
        let mut g_final = NormParams {
            gain: vec![T::zero(); d],
            shift: vec![T::zero(); d],
        };
        let mut dh = layer_norm_backward(&dfeats, &cache.final_ln, &self.final_norm(), &mut g_final);
        {
            let gf = &mut grads.groups_mut()[final_idx];
            axpy(T::one(), &g_final.gain, gf.weights.as_mut_slice());
            axpy(T::one(), &g_final.shift, gf.bias.as_mut().expect("shift"));
        }

        for b in (0..self.cfg.blocks).rev() {
            let c = &cache.blocks[b];
            let bm = masks.map(|m| &m.blocks[b]);
            let base = 2 + b * PER_BLOCK;
            let gs = grads.groups_mut();

            // h2 = h1 + dropout(ffn2(dropout(relu(ffn1(LN2(h1))))))
            let mut df2 = dh.clone();
            apply_mask(&mut df2, bm.and_then(|m| m.ffn_out.as_ref()));
            let mut df1 = linear_backward(&c.f1, &df2, self.block(b, FFN2), &mut gs[base + FFN2]);
            apply_mask(&mut df1, bm.and_then(|m| m.ffn_hidden.as_ref()));
            relu_backward(&c.z1, &mut df1);
            let g1 = self.block(b, FFN1);
            let dn2 = linear_backward(&c.n2, &df1, g1, &mut gs[base + FFN1]);
            let dln2 = layer_norm_backward(
                &dn2,
                &c.ln2,
                g1.norm.as_ref().expect("ffn norm"),
                gs[base + FFN1].norm.as_mut().expect("ffn norm grad"),
            );
            dh.add_assign(&dln2)?;

            // h1 = h + dropout(attn_o(A V))
            let mut dout = dh.clone();
            apply_mask(&mut dout, bm.and_then(|m| m.attn_out.as_ref()));
            let dctx = linear_backward(&c.ctx, &dout, self.block(b, O), &mut gs[base + O]);
            let (dq, dk, dv) = self.attention_backward(c, &dctx)?;
            let mut dn1 = linear_backward(&c.n1, &dq, self.block(b, Q), &mut gs[base + Q]);
            dn1.add_assign(&linear_backward(&c.n1, &dk, self.block(b, K), &mut gs[base + K]))?;
            dn1.add_assign(&linear_backward(&c.n1, &dv, self.block(b, V), &mut gs[base + V]))?;
            let gq = self.block(b, Q);
            let dln1 = layer_norm_backward(
                &dn1,
                &c.ln1,
                gq.norm.as_ref().expect("attn norm"),
                gs[base + Q].norm.as_mut().expect("attn norm grad"),
            );
            dh.add_assign(&dln1)?;
        }

        apply_mask(&mut dh, masks.and_then(|m| m.embed.as_ref()));
        let gs = grads.groups_mut();
        for (j, &i) in sample.input.iter().enumerate() {
            if i != PAD {
                axpy(T::one(), dh.row(j), gs[ITEM_EMB].weights.row_mut(i as usize));
                axpy(T::one(), dh.row(j), gs[POS_EMB].weights.row_mut(j));
            }
        }
        Ok(loss)
    }

    fn attention_backward(&self, c: &BlockCache<T>, dctx: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
        let scale = T::one() / T::of(self.cfg.dim as f64).sqrt();
        let da = matmul_nt(dctx, &c.v)?;
        let dv = matmul_tn(&c.attn, dctx)?;
        let t = c.attn.rows();
        let mut ds = Matrix::zeros(t, t);
        for j in 0..t {
            let a = c.attn.row(j);
            let g = da.row(j);
            let inner = dot(a, g);
            let out = ds.row_mut(j);
            for kk in 0..t {
                out[kk] = a[kk] * (g[kk] - inner) * scale;
            }
        }
        let dq = matmul(&ds, &c.k)?;
        let dk = matmul_tn(&ds, &c.q)?;
        Ok((dq, dk, dv))
    }

    pub fn loss(&self, batch: &SasBatch<T>) -> Result<T> {
        Ok(self.loss_and_grads(batch)?.0)
    }

    pub fn train_step(&mut self, batch: &SasBatch<T>, opt: &mut Optimizer<T>) -> Result<T> {
        let (loss, grads) = self.loss_and_grads(batch)?;
        opt.step(&mut self.params, &grads)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn cfg(blocks: usize, dropout: f64) -> SasConfig {
        SasConfig {
            n_items: 9,
            dim: 8,
            max_len: 4,
            blocks,
            dropout,
            l2: 0.0,
        }
    }

    #[test]
    fn tied_zero_scores_give_two_ln2() {
        let mut rng = RngStream::new(0, 0);
        let mut m = SasModel::<f64>::new(cfg(1, 0.0), &mut rng).unwrap();
        m.params_mut().groups_mut()[ITEM_EMB].weights.scale(0.0);
        let sample = SasSample {
            input: vec![0, 0, 0, 3],
            targets: vec![0, 0, 0, 5],
            negatives: vec![0, 0, 0, 6],
        };
        let batch = SasBatch {
            samples: vec![sample],
            masks: vec![None],
        };
        let loss = m.loss(&batch).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn chunk_to_sample() {
        let mut rng = RngStream::new(0, 0);
        let m = SasModel::<f32>::new(cfg(1, 0.0), &mut rng).unwrap();
        let s = m.sample_from_chunk(&[0, 0, 3, 7], &mut rng).unwrap();
        assert_eq!(s.input, vec![0, 0, 0, 3]);
        assert_eq!(s.active_count(), 1);
        assert!(s.negatives[3] != 7 && s.negatives[3] != 0);
        let all_pad = m.make_batch(&[vec![0, 0, 0, 4]], &mut rng).unwrap();
        assert!(all_pad.samples.is_empty());
    }

    #[test]
    fn causal_masking() {
        let mut rng = RngStream::new(3, 0);
        let mut m = SasModel::<f64>::new(cfg(2, 0.0), &mut rng).unwrap();
        let input = [0, 2, 5, 7];
        let base = m.sequence_outputs(&input).unwrap();
        // Perturb the future position's positional embedding.
        m.params_mut().groups_mut()[POS_EMB].weights.row_mut(3)[0] += 1.0;
        let perturbed = m.sequence_outputs(&input).unwrap();
        for j in 1..3 {
            assert_eq!(base.row(j), perturbed.row(j));
        }
        assert_ne!(base.row(3), perturbed.row(3));
        // A different item at the future position.
        let other = m.sequence_outputs(&[0, 2, 5, 9]).unwrap();
        for j in 1..3 {
            assert_eq!(perturbed.row(j), other.row(j));
        }
    }

    #[test]
    fn padding_does_not_leak() {
        let mut rng = RngStream::new(3, 0);
        let m = SasModel::<f64>::new(cfg(1, 0.0), &mut rng).unwrap();
        let a = m.score_all_items(&[0, 0, 2, 5]).unwrap();
        let b = m.score_all_items(&[0, 0, 2, 5]).unwrap();
        assert_eq!(a, b);
        assert!(m.score_all_items(&[0, 0, 0, 0]).is_err());
        assert!(m.score_all_items(&[0, 0, 0, 10]).is_err());
    }

    fn check(dropout: f64, blocks: usize) -> f64 {
        let mut rng = RngStream::new(9, 0);
        let mut m = SasModel::<f64>::new(cfg(blocks, dropout), &mut rng).unwrap();
        for g in [ITEM_EMB, POS_EMB] {
            let w = m.params().groups()[g].weights.map(|v| v * 50.0);
            m.params_mut().groups_mut()[g].weights = w;
        }
        let chunks = vec![vec![1, 4, 2, 8], vec![0, 3, 9, 5]];
        let batch = m.make_batch(&chunks, &mut rng).unwrap();
        let (_, grads) = m.loss_and_grads(&batch).unwrap();
        let report = grad_check(
            |p| SasModel::from_params(p.clone(), dropout, 0.0)?.loss(&batch),
            m.params(),
            &grads,
            usize::MAX,
            1e-5,
            &mut rng,
        )
        .unwrap();
        report.max_rel_error
    }

    #[test]
    fn gradients_match_finite_differences() {
        assert!(check(0.0, 1) <= 1e-5);
        assert!(check(0.3, 2) <= 1e-5);
    }
}
