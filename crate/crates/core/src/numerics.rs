//! Dense matrices, seeded random streams, Adam, and a finite-difference
//! gradient checker.
//!
//! Training runs in `f32`; every model is generic over [`Scalar`] so the
//! same code path can be instantiated in `f64` for gradient checking.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, Error, Result};
use crate::params::ParameterSet;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("scalar conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return config_err(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return config_err("ragged rows");
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, c: T) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return config_err(format!("shape mismatch: {:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// `a * b`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return config_err(format!(
            "matmul dimension mismatch: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == T::zero() {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// `aᵀ * b`.
pub fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return config_err(format!(
            "matmul_tn dimension mismatch: ({}x{})ᵀ * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == T::zero() {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aki * bv;
            }
        }
    }
    Ok(out)
}

/// `a * bᵀ`.
pub fn matmul_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return config_err(format!(
            "matmul_nt dimension mismatch: {}x{} * ({}x{})ᵀ",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(a_row, b.row(j));
        }
    }
    Ok(out)
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y += c * x`.
#[inline]
pub fn axpy<T: Scalar>(c: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += c * xv;
    }
}

/// Overflow-free logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln σ(x)` without underflow for large negative `x`.
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Seeded random stream.
///
/// Backed by ChaCha8 with the 64-bit stream selector set to `stream_id`, so
/// every `(seed, stream_id)` pair names a fixed, platform-independent
/// sequence and distinct stream ids never overlap.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn normal(&mut self, std: f64) -> f64 {
        Normal::new(0.0, std).expect("finite std").sample(&mut self.rng)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

/// Adam hyperparameters shared by every tensor of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    first_moment: Vec<T>,
    second_moment: Vec<T>,
    step_count: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, name: &str, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return config_err(format!(
                "adam shape mismatch for `{name}`: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                layer: name.to_string(),
                what: "gradient",
            });
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Adam step for a single matrix.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    name: &str,
    params: &mut Matrix<T>,
    grads: &Matrix<T>,
) -> Result<()> {
    params.check_same_shape(grads)?;
    state.step(name, params.as_mut_slice(), grads.as_slice())
}

/// Adam over every tensor of a [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct Optimizer<T = f32> {
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(params: &ParameterSet<T>, config: AdamConfig) -> Self {
        Self {
            states: params
                .tensors()
                .into_iter()
                .map(|(_, t)| AdamState::new(t.len(), config))
                .collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.states.first().map_or(0.0, |s| s.config.learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.states.first().map_or(0, AdamState::step_count)
    }

    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &ParameterSet<T>) -> Result<()> {
        params.check_same_structure(grads)?;
        let grad_tensors = grads.tensors();
        let param_tensors = params.tensors_mut();
        if param_tensors.len() != self.states.len() {
            return config_err("optimizer state does not match parameter set");
        }
        for ((state, (name, p)), (_, g)) in self.states.iter_mut().zip(param_tensors).zip(grad_tensors) {
            state.step(&name, p, g)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: usize,
    pub worst_tensor: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Central-difference check of `analytic` against `loss` on randomly chosen
/// coordinates. When `probe_count` covers the whole parameter set every
/// coordinate is checked.
///
/// Relative error is `max(|a - n| - noise, 0) / max(|a|, |n|, floor)`.
/// `noise = 10 ε max(|L|, 1) / h` bounds the rounding error of the central
/// difference, and `floor` keeps coordinates with vanishing gradient from
/// dominating.
pub fn grad_check<T, F>(
    loss: F,
    params: &ParameterSet<T>,
    analytic: &ParameterSet<T>,
    probe_count: usize,
    h: T,
    rng: &mut RngStream,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&ParameterSet<T>) -> Result<T>,
{
    let floor = if std::mem::size_of::<T>() == 4 { 1e-3 } else { 1e-7 };
    check_against(loss, params, analytic, probe_count, h, floor, rng)
}

/// Checks single-precision gradients against central differences of the
/// same loss evaluated in double precision at the single-precision point.
///
/// Differences taken in single precision need a step large enough to beat
/// rounding, and with ReLU units such a step crosses kinks, so the numeric
/// side is computed in double precision. The floor is the single-precision
/// one, matching the resolution of the gradients under test.
pub fn grad_check_single<F>(
    loss64: F,
    params: &ParameterSet<f32>,
    analytic: &ParameterSet<f32>,
    probe_count: usize,
    h: f64,
    rng: &mut RngStream,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterSet<f64>) -> Result<f64>,
{
    check_against(loss64, &params.cast(), &analytic.cast(), probe_count, h, 1e-3, rng)
}

fn check_against<T, F>(
    mut loss: F,
    params: &ParameterSet<T>,
    analytic: &ParameterSet<T>,
    probe_count: usize,
    h: T,
    floor: f64,
    rng: &mut RngStream,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&ParameterSet<T>) -> Result<T>,
{
    if h <= T::zero() {
        return config_err("grad_check step must be positive");
    }
    params.check_same_structure(analytic)?;
    let base = loss(params)?;
    let again = loss(params)?;
    if base != again {
        return Err(Error::GradCheck(format!(
            "loss is not deterministic: {base} vs {again}"
        )));
    }

    let total = params.param_count();
    let coords: Vec<usize> = if probe_count >= total {
        (0..total).collect()
    } else {
        (0..probe_count).map(|_| rng.below(total)).collect()
    };
    let noise = 10.0 * T::epsilon().f64() * base.f64().abs().max(1.0) / h.f64();

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: coords.len(),
        worst_tensor: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for idx in coords {
        let orig = work.flat_get(idx);
        work.flat_set(idx, orig + h);
        let plus = loss(&work)?;
        work.flat_set(idx, orig - h);
        let minus = loss(&work)?;
        work.flat_set(idx, orig);
        let numeric = ((plus - minus) / (h + h)).f64();
        let a = analytic.flat_get(idx).f64();
        let denom = a.abs().max(numeric.abs()).max(floor);
        let rel = ((a - numeric).abs() - noise).max(0.0) / denom;
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = rel;
            report.worst_tensor = params.flat_name(idx);
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
