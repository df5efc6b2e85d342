//! Matrix factorization trained with the pairwise BPR objective.

use crate::data::{ItemId, Triple};
use crate::error::{config_err, data_err, Result};
use crate::models::layers::embedding;
use crate::numerics::{axpy, dot, log_sigmoid, sigmoid, Optimizer, RngStream, Scalar};
use crate::params::ParameterSet;

pub const USER_EMB: usize = 0;
pub const ITEM_EMB: usize = 1;

/// `score(u, i) = ⟨user_u, item_i⟩`. Item row 0 is padding and stays zero.
#[derive(Clone, Debug)]
pub struct BprModel<T = f32> {
    params: ParameterSet<T>,
    n_users: usize,
    n_items: usize,
    dim: usize,
    pub l2: f64,
}

impl<T: Scalar> BprModel<T> {
    pub fn new(n_users: usize, n_items: usize, dim: usize, l2: f64, rng: &mut RngStream) -> Self {
        let params = ParameterSet::new(vec![
            embedding("user_emb", rng, n_users, dim, false),
            embedding("item_emb", rng, n_items + 1, dim, true),
        ])
        .expect("unique names");
        Self {
            params,
            n_users,
            n_items,
            dim,
            l2,
        }
    }

    pub fn from_params(params: ParameterSet<T>, l2: f64) -> Result<Self> {
        if params.len() != 2 {
            return config_err("BPR expects user_emb and item_emb");
        }
        let users = &params.groups()[USER_EMB];
        let items = &params.groups()[ITEM_EMB];
        if users.name != "user_emb" || items.name != "item_emb" || users.weights.cols() != items.weights.cols() {
            return config_err("BPR parameter layout mismatch");
        }
        Ok(Self {
            n_users: users.weights.rows(),
            n_items: items.weights.rows() - 1,
            dim: users.weights.cols(),
            params,
            l2,
        })
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_triple(&self, &(u, i, j): &Triple) -> Result<()> {
        if u as usize >= self.n_users {
            return data_err(format!("user {u} out of range (n_users = {})", self.n_users));
        }
        for item in [i, j] {
            if item == 0 || item as usize > self.n_items {
                return data_err(format!("item {item} out of range 1..={}", self.n_items));
            }
        }
        Ok(())
    }

    pub fn score(&self, user: usize, item: ItemId) -> T {
        dot(
            self.params.groups()[USER_EMB].weights.row(user),
            self.params.groups()[ITEM_EMB].weights.row(item as usize),
        )
    }

    /// `−Σ ln σ(s(u,i⁺) − s(u,i⁻)) + λ Σ (‖u‖² + ‖i⁺‖² + ‖i⁻‖²)` and its gradient.
    pub fn loss_and_grads(&self, triples: &[Triple]) -> Result<(T, ParameterSet<T>)> {
        let mut grads = self.params.zeros_like();
        let users = &self.params.groups()[USER_EMB].weights;
        let items = &self.params.groups()[ITEM_EMB].weights;
        let lam = T::of(self.l2);
        let two_lam = T::of(2.0 * self.l2);
        let mut loss = T::zero();
        for tr in triples {
            self.check_triple(tr)?;
            let (u, i, j) = (tr.0 as usize, tr.1 as usize, tr.2 as usize);
            let (pu, qi, qj) = (users.row(u), items.row(i), items.row(j));
            let x = dot(pu, qi) - dot(pu, qj);
            loss -= log_sigmoid(x);
            let g = -sigmoid(-x);
            if self.l2 != 0.0 {
                loss += lam * (dot(pu, pu) + dot(qi, qi) + dot(qj, qj));
            }
            {
                let gu = grads.groups_mut()[USER_EMB].weights.row_mut(u);
                axpy(g, qi, gu);
                axpy(-g, qj, gu);
                axpy(two_lam, pu, gu);
            }
            let gi = grads.groups_mut()[ITEM_EMB].weights.row_mut(i);
            axpy(g, pu, gi);
            axpy(two_lam, qi, gi);
            let gj = grads.groups_mut()[ITEM_EMB].weights.row_mut(j);
            axpy(-g, pu, gj);
            axpy(two_lam, qj, gj);
        }
        Ok((loss, grads))
    }

    pub fn loss(&self, triples: &[Triple]) -> Result<T> {
        Ok(self.loss_and_grads(triples)?.0)
    }

    /// One Adam step; returns the pre-update batch loss.
    pub fn train_step(&mut self, triples: &[Triple], opt: &mut Optimizer<T>) -> Result<T> {
        let (loss, grads) = self.loss_and_grads(triples)?;
        opt.step(&mut self.params, &grads)?;
        Ok(loss)
    }

    /// Scores of items `1..=n_items` (index `k` is item `k + 1`).
    pub fn score_all_items(&self, user: usize) -> Result<Vec<T>> {
        if user >= self.n_users {
            return data_err(format!("unknown user {user}"));
        }
        let pu = self.params.groups()[USER_EMB].weights.row(user);
        let items = &self.params.groups()[ITEM_EMB].weights;
        Ok((1..=self.n_items).map(|i| dot(pu, items.row(i))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, AdamConfig, Matrix};

    #[test]
    fn identical_pair_gives_ln2_and_no_score_gradient() {
        let mut rng = RngStream::new(1, 0);
        let m = BprModel::<f64>::new(2, 3, 4, 0.0, &mut rng);
        let (loss, g) = m.loss_and_grads(&[(0, 2, 2)]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_init_first_loss() {
        let mut rng = RngStream::new(1, 0);
        let mut m = BprModel::<f32>::new(3, 4, 4, 0.0, &mut rng);
        for g in m.params_mut().groups_mut() {
            g.weights.scale(0.0);
        }
        let batch = [(0, 1, 2), (1, 3, 4), (2, 2, 1)];
        let mut opt = Optimizer::new(m.params(), AdamConfig::default());
        let loss = m.train_step(&batch, &mut opt).unwrap();
        assert!((loss - 3.0 * std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_ids() {
        let mut rng = RngStream::new(1, 0);
        let m = BprModel::<f32>::new(2, 3, 4, 0.0, &mut rng);
        assert!(m.loss(&[(2, 1, 2)]).is_err());
        assert!(m.loss(&[(0, 0, 2)]).is_err());
        assert!(m.loss(&[(0, 1, 4)]).is_err());
        assert!(m.score_all_items(5).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(2, 0);
        let mut m = BprModel::<f64>::new(2, 2, 3, 0.05, &mut rng);
        for g in m.params_mut().groups_mut() {
            g.weights = g.weights.map(|v| v * 50.0);
        }
        let batch = [(0, 1, 2), (1, 2, 1), (0, 2, 1)];
        let (_, grads) = m.loss_and_grads(&batch).unwrap();
        let report = grad_check(
            |p| BprModel::from_params(p.clone(), 0.05)?.loss(&batch),
            m.params(),
            &grads,
            usize::MAX,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn scores_are_dot_products() {
        let mut rng = RngStream::new(0, 0);
        let mut m = BprModel::<f64>::new(1, 3, 2, 0.0, &mut rng);
        m.params_mut().groups_mut()[USER_EMB].weights = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        m.params_mut().groups_mut()[ITEM_EMB].weights =
            Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, -1.0], vec![-2.0, 3.0]]).unwrap();
        assert_eq!(m.score_all_items(0).unwrap(), vec![1.0, -1.5, 4.0]);

        m.params_mut().groups_mut()[USER_EMB].weights = Matrix::zeros(1, 2);
        assert_eq!(m.score_all_items(0).unwrap(), vec![0.0; 3]);
    }
}
