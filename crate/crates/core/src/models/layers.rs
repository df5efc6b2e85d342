//! Forward/backward building blocks shared by the models.

use crate::numerics::{dot, matmul, matmul_nt, matmul_tn, Matrix, RngStream, Scalar};
use crate::params::{LayerGroup, LayerKind, LayerRole, NormParams};

pub const LN_EPS: f64 = 1e-8;

pub fn uniform_matrix<T: Scalar>(rng: &mut RngStream, rows: usize, cols: usize, bound: f64) -> Matrix<T> {
    let data = (0..rows * cols)
        .map(|_| T::of(rng.uniform_range(-bound, bound)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

pub fn xavier<T: Scalar>(rng: &mut RngStream, fan_in: usize, fan_out: usize) -> Matrix<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform_matrix(rng, fan_in, fan_out, bound)
}

/// `rows x d` embedding table, uniform in ±0.01, optional zero padding row 0.
pub fn embedding<T: Scalar>(
    name: &str,
    rng: &mut RngStream,
    rows: usize,
    d: usize,
    zero_pad_row: bool,
) -> LayerGroup<T> {
    let mut w = uniform_matrix(rng, rows, d, 0.01);
    if zero_pad_row {
        w.row_mut(0).iter_mut().for_each(|v| *v = T::zero());
    }
    LayerGroup::new(name, LayerRole::Embedding, LayerKind::Embedding, w)
}

pub fn dense<T: Scalar>(
    name: &str,
    role: LayerRole,
    rng: &mut RngStream,
    fan_in: usize,
    fan_out: usize,
) -> LayerGroup<T> {
    LayerGroup::new(name, role, LayerKind::Dense, xavier(rng, fan_in, fan_out)).with_bias(vec![T::zero(); fan_out])
}

/// `x W + b`.
pub fn linear<T: Scalar>(x: &Matrix<T>, g: &LayerGroup<T>) -> Matrix<T> {
    let mut y = matmul(x, &g.weights).expect("linear shapes");
    if let Some(b) = &g.bias {
        for r in 0..y.rows() {
            for (v, &bv) in y.row_mut(r).iter_mut().zip(b) {
                *v += bv;
            }
        }
    }
    y
}

/// Accumulates `W`/`b` gradients into `grad` and returns `dx`.
pub fn linear_backward<T: Scalar>(
    x: &Matrix<T>,
    dy: &Matrix<T>,
    g: &LayerGroup<T>,
    grad: &mut LayerGroup<T>,
) -> Matrix<T> {
    let dw = matmul_tn(x, dy).expect("linear backward shapes");
    grad.weights.add_assign(&dw).expect("same shape");
    if let Some(db) = &mut grad.bias {
        for r in 0..dy.rows() {
            for (acc, &v) in db.iter_mut().zip(dy.row(r)) {
                *acc += v;
            }
        }
    }
    matmul_nt(dy, &g.weights).expect("linear backward shapes")
}

pub fn relu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Zeroes `dy` where the pre-activation was not positive.
pub fn relu_backward<T: Scalar>(pre: &Matrix<T>, dy: &mut Matrix<T>) {
    for (d, &p) in dy.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= T::zero() {
            *d = T::zero();
        }
    }
}

pub struct NormCache<T> {
    pub xhat: Matrix<T>,
    pub inv_std: Vec<T>,
}

/// Row-wise layer normalization.
pub fn layer_norm<T: Scalar>(x: &Matrix<T>, norm: &NormParams<T>) -> (Matrix<T>, NormCache<T>) {
    let d = x.cols();
    let dt = T::of(d as f64);
    let eps = T::of(LN_EPS);
    let mut y = Matrix::zeros(x.rows(), d);
    let mut xhat = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / dt;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(r);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * is;
        }
        let yr = y.row_mut(r);
        for (c, out) in yr.iter_mut().enumerate().take(d) {
            *out = norm.gain[c] * xhat.get(r, c) + norm.shift[c];
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub fn layer_norm_backward<T: Scalar>(
    dy: &Matrix<T>,
    cache: &NormCache<T>,
    norm: &NormParams<T>,
    grad: &mut NormParams<T>,
) -> Matrix<T> {
    let d = dy.cols();
    let dt = T::of(d as f64);
    let mut dx = Matrix::zeros(dy.rows(), d);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..dy.rows() {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for c in 0..d {
            grad.gain[c] += dyr[c] * xh[c];
            grad.shift[c] += dyr[c];
            dxhat[c] = dyr[c] * norm.gain[c];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / dt;
        let mean_dx = dot(&dxhat, xh) / dt;
        let is = cache.inv_std[r];
        let out = dx.row_mut(r);
        for c in 0..d {
            out[c] = is * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

/// Inverted-dropout keep mask scaled by `1/(1-p)`; `None` when `p == 0`.
pub fn dropout_mask<T: Scalar>(rng: &mut RngStream, rows: usize, cols: usize, p: f64) -> Option<Matrix<T>> {
    if p <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - p));
    let data = (0..rows * cols)
        .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
        .collect();
    Some(Matrix::from_vec(rows, cols, data).expect("sized"))
}

pub fn apply_mask<T: Scalar>(x: &mut Matrix<T>, mask: Option<&Matrix<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *v *= k;
        }
    }
}

/// Adds `λ‖W‖²` for every weight matrix to the loss and `2λW` to the gradient.
pub fn l2_penalty<T: Scalar>(
    params: &crate::params::ParameterSet<T>,
    grads: &mut crate::params::ParameterSet<T>,
    l2: f64,
) -> T {
    if l2 == 0.0 {
        return T::zero();
    }
    let lam = T::of(l2);
    let two_lam = T::of(2.0 * l2);
    let mut total = T::zero();
    for (g, dg) in params.groups().iter().zip(grads.groups_mut()) {
        if g.kind == LayerKind::Norm {
            continue;
        }
        for (w, dw) in g.weights.as_slice().iter().zip(dg.weights.as_mut_slice()) {
            total += *w * *w;
            *dw += two_lam * *w;
        }
    }
    lam * total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_backward_matches_finite_difference() {
        let mut rng = RngStream::new(4, 0);
        let x: Matrix<f64> = uniform_matrix(&mut rng, 3, 5, 1.0);
        let norm = NormParams {
            gain: (0..5).map(|_| rng.uniform_range(0.5, 1.5)).collect(),
            shift: (0..5).map(|_| rng.uniform_range(-0.5, 0.5)).collect(),
        };
        let w: Matrix<f64> = uniform_matrix(&mut rng, 3, 5, 1.0);
        let loss = |x: &Matrix<f64>| {
            let (y, _) = layer_norm(x, &norm);
            dot(y.as_slice(), w.as_slice())
        };
        let (_, cache) = layer_norm(&x, &norm);
        let mut g = NormParams {
            gain: vec![0.0; 5],
            shift: vec![0.0; 5],
        };
        let dx = layer_norm_backward(&w, &cache, &norm, &mut g);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let num = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((num - dx.as_slice()[i]).abs() < 1e-7, "{num} vs {}", dx.as_slice()[i]);
        }
    }
}
