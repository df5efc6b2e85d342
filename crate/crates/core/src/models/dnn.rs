//! Averaged-history DNN: the user vector is the mean embedding of the
//! user's recent items, passed through one ReLU hidden layer and a full
//! softmax over the catalog.

use crate::data::{ItemId, PAD};
use crate::error::{config_err, data_err, Result};
use crate::models::layers::{dense, embedding, l2_penalty, linear, linear_backward, relu, relu_backward};
use crate::numerics::{axpy, Matrix, Optimizer, RngStream, Scalar};
use crate::params::{LayerRole, ParameterSet};

pub const ITEM_EMB: usize = 0;
pub const HIDDEN: usize = 1;
pub const OUTPUT: usize = 2;

/// One training example: history items (padding ignored) and the next item.
#[derive(Clone, Debug, PartialEq)]
pub struct DnnExample {
    pub history: Vec<ItemId>,
    pub target: ItemId,
}

#[derive(Clone, Debug)]
pub struct DnnModel<T = f32> {
    params: ParameterSet<T>,
    n_items: usize,
    dim: usize,
    pub l2: f64,
}

impl<T: Scalar> DnnModel<T> {
    pub fn new(n_items: usize, dim: usize, l2: f64, rng: &mut RngStream) -> Self {
        let params = ParameterSet::new(vec![
            embedding("item_emb", rng, n_items + 1, dim, true),
            dense("hidden", LayerRole::Middle, rng, dim, dim),
            dense("output", LayerRole::Softmax, rng, dim, n_items),
        ])
        .expect("unique names");
        Self {
            params,
            n_items,
            dim,
            l2,
        }
    }

    pub fn from_params(params: ParameterSet<T>, l2: f64) -> Result<Self> {
        let names: Vec<_> = params.groups().iter().map(|g| g.name.as_str()).collect();
        if names != ["item_emb", "hidden", "output"] {
            return config_err(format!("DNN parameter layout mismatch: {names:?}"));
        }
        let dim = params.groups()[ITEM_EMB].weights.cols();
        let n_items = params.groups()[OUTPUT].weights.cols();
        if params.groups()[ITEM_EMB].weights.rows() != n_items + 1 {
            return config_err("DNN item table and output layer disagree");
        }
        Ok(Self {
            params,
            n_items,
            dim,
            l2,
        })
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_item(&self, i: ItemId) -> Result<()> {
        if i as usize > self.n_items {
            return data_err(format!("item {i} out of range 1..={}", self.n_items));
        }
        Ok(())
    }

    /// Mean embedding of the non-pad items, or `None` if there are none.
    fn user_vector(&self, history: &[ItemId]) -> Result<Option<Vec<T>>> {
        let emb = &self.params.groups()[ITEM_EMB].weights;
        let mut acc = vec![T::zero(); self.dim];
        let mut n = 0usize;
        for &i in history {
            self.check_item(i)?;
            if i != PAD {
                axpy(T::one(), emb.row(i as usize), &mut acc);
                n += 1;
            }
        }
        if n == 0 {
            return Ok(None);
        }
        let inv = T::one() / T::of(n as f64);
        acc.iter_mut().for_each(|v| *v *= inv);
        Ok(Some(acc))
    }

    /// Logits for items `1..=n_items` given a history.
    pub fn logits(&self, history: &[ItemId]) -> Result<Vec<T>> {
        let Some(u) = self.user_vector(history)? else {
            return data_err("empty history");
        };
        let x = Matrix::from_vec(1, self.dim, u)?;
        let h = relu(&linear(&x, &self.params.groups()[HIDDEN]));
        Ok(linear(&h, &self.params.groups()[OUTPUT]).into_vec())
    }

    pub fn score_all_items(&self, history: &[ItemId]) -> Result<Vec<T>> {
        self.logits(history)
    }

    /// Mean softmax cross-entropy over the usable examples plus `λ Σ ‖W‖²`.
    /// Examples with an empty history are skipped with a warning.
    pub fn loss_and_grads(&self, batch: &[DnnExample]) -> Result<(T, ParameterSet<T>)> {
        let mut grads = self.params.zeros_like();
        let mut rows = Vec::new();
        let mut kept = Vec::new();
        for ex in batch {
            if ex.target == PAD {
                return data_err("padding item used as target");
            }
            self.check_item(ex.target)?;
            match self.user_vector(&ex.history)? {
                Some(u) => {
                    rows.extend(u);
                    kept.push(ex);
                }
                None => log::warn!("skipping example with empty history"),
            }
        }
        let mut loss = l2_penalty(&self.params, &mut grads, self.l2);
        if kept.is_empty() {
            return Ok((loss, grads));
        }
        let b = kept.len();
        let scale = T::one() / T::of(b as f64);
        let x = Matrix::from_vec(b, self.dim, rows)?;
        let hidden = &self.params.groups()[HIDDEN];
        let output = &self.params.groups()[OUTPUT];
        let z = linear(&x, hidden);
        let a = relu(&z);
        let mut dlogits = linear(&a, output);

        for (r, ex) in kept.iter().enumerate() {
            let row = dlogits.row_mut(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let tgt = ex.target as usize - 1;
            loss += (sum.ln() - (row[tgt].ln())) * scale;
            for v in row.iter_mut() {
                *v = *v / sum * scale;
            }
            row[tgt] -= scale;
        }

        let (g_items, rest) = grads.groups_mut().split_at_mut(HIDDEN);
        let (g_hidden, g_output) = rest.split_at_mut(1);
        let mut da = linear_backward(&a, &dlogits, output, &mut g_output[0]);
        relu_backward(&z, &mut da);
        let dx = linear_backward(&x, &da, hidden, &mut g_hidden[0]);

        let g_emb = &mut g_items[ITEM_EMB].weights;
        for (r, ex) in kept.iter().enumerate() {
            let n = ex.history.iter().filter(|&&i| i != PAD).count();
            let share = T::one() / T::of(n as f64);
            for &i in ex.history.iter().filter(|&&i| i != PAD) {
                axpy(share, dx.row(r), g_emb.row_mut(i as usize));
            }
        }
        Ok((loss, grads))
    }

    pub fn loss(&self, batch: &[DnnExample]) -> Result<T> {
        Ok(self.loss_and_grads(batch)?.0)
    }

    pub fn train_step(&mut self, batch: &[DnnExample], opt: &mut Optimizer<T>) -> Result<T> {
        let (loss, grads) = self.loss_and_grads(batch)?;
        opt.step(&mut self.params, &grads)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn ex(history: &[ItemId], target: ItemId) -> DnnExample {
        DnnExample {
            history: history.to_vec(),
            target,
        }
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let mut rng = RngStream::new(0, 0);
        let mut m = DnnModel::<f64>::new(7, 4, 0.0, &mut rng);
        m.params_mut().groups_mut()[OUTPUT].weights.scale(0.0);
        let loss = m.loss(&[ex(&[1, 2], 3)]).unwrap();
        assert!((loss - (7.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance() {
        let mut rng = RngStream::new(0, 0);
        let mut m = DnnModel::<f64>::new(6, 4, 0.0, &mut rng);
        let batch = [ex(&[1, 2], 3), ex(&[0, 4], 6)];
        let before = m.loss(&batch).unwrap();
        for b in m.params_mut().groups_mut()[OUTPUT].bias.as_mut().unwrap() {
            *b += 3.25;
        }
        let after = m.loss(&batch).unwrap();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn empty_history_skipped() {
        let mut rng = RngStream::new(0, 0);
        let m = DnnModel::<f64>::new(6, 4, 0.0, &mut rng);
        let full = m.loss(&[ex(&[1], 2)]).unwrap();
        let mixed = m.loss(&[ex(&[1], 2), ex(&[0, 0], 3)]).unwrap();
        assert_eq!(full, mixed);
        assert!(m.loss(&[ex(&[1], 9)]).is_err());
        assert!(m.logits(&[0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(5, 0);
        let m = DnnModel::<f64>::new(6, 4, 1e-3, &mut rng);
        let mut m = m;
        m.params_mut().groups_mut()[ITEM_EMB].weights = m.params().groups()[ITEM_EMB].weights.map(|v| v * 60.0);
        let batch = [ex(&[1, 2, 0], 3), ex(&[4], 6), ex(&[5, 6, 2], 1)];
        let (_, grads) = m.loss_and_grads(&batch).unwrap();
        let report = grad_check(
            |p| DnnModel::from_params(p.clone(), 1e-3)?.loss(&batch),
            m.params(),
            &grads,
            usize::MAX,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }
}
