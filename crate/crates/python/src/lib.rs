//! Python bindings for the peercollab library.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use peercollab::cooperation::{self, LwConfig, PwConfig};
use peercollab::criteria::{self, Criterion, EntropyConfig};
use peercollab::data::{InteractionDataset, ItemId, Split};
use peercollab::eval::{self, EvalResult};
use peercollab::harness::{self, output::CHECKPOINT_DIR, output::MODEL_CHECKPOINT, RunConfig};
use peercollab::models::{checkpoint, Model};
use peercollab::synthetic::{self, SyntheticConfig};
use peercollab::{Error, LayerGroup, LayerKind, LayerRole, Matrix, ParameterSet, Scope};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } | Error::NonFinite { .. } | Error::GradCheck(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(PyValueError::new_err("weight matrix must be non-empty"));
    }
    Matrix::from_rows(&rows).map_err(to_py)
}

fn rows_of(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn layer(rows: Vec<Vec<f64>>) -> PyResult<ParameterSet<f64>> {
    ParameterSet::new(vec![LayerGroup::new(
        "w",
        LayerRole::Middle,
        LayerKind::Dense,
        matrix(rows)?,
    )])
    .map_err(to_py)
}

fn criterion(name: &str) -> PyResult<Criterion> {
    name.parse().map_err(to_py)
}

fn split(name: &str) -> PyResult<Split> {
    name.parse().map_err(to_py)
}

/// Blend coefficient `sigmoid(alpha * (h_self - h_peer))`.
#[pyfunction]
fn coefficient(h_self: f64, h_peer: f64, alpha: f64) -> f64 {
    cooperation::coefficient(h_self, h_peer, alpha)
}

/// Histogram entropy (nats) of a weight matrix.
#[pyfunction]
#[pyo3(signature = (weights, bins = 100))]
fn entropy(weights: Vec<Vec<f64>>, bins: usize) -> PyResult<f64> {
    let cfg = EntropyConfig::new(bins).map_err(to_py)?;
    Ok(criteria::entropy(&matrix(weights)?, cfg))
}

type Rows = Vec<Vec<f64>>;

/// Layer-wise cooperation of two single-layer weight matrices.
/// Returns `(blended_self, blended_peer, mu_self)`.
#[pyfunction]
#[pyo3(signature = (w_self, w_peer, alpha = 30.0, criterion = "entropy", bins = 100))]
fn lw_cooperate(
    w_self: Vec<Vec<f64>>,
    w_peer: Vec<Vec<f64>>,
    alpha: f64,
    criterion: &str,
    bins: usize,
) -> PyResult<(Rows, Rows, f64)> {
    let cfg = LwConfig::new(alpha, self::criterion(criterion)?).map_err(to_py)?;
    let (mut a, mut b) = (layer(w_self)?, layer(w_peer)?);
    let report =
        cooperation::lw_cooperate(&mut a, &mut b, &cfg, EntropyConfig::new(bins).map_err(to_py)?).map_err(to_py)?;
    let mu = report.layers[0].mu_self.unwrap_or(0.5);
    Ok((rows_of(&a.groups()[0].weights), rows_of(&b.groups()[0].weights), mu))
}

/// Parameter-wise cooperation: entries with `|w| < gamma` take the peer's value.
#[pyfunction]
fn pw_cooperate(w_self: Vec<Vec<f64>>, w_peer: Vec<Vec<f64>>, gamma: f64) -> PyResult<(Rows, Rows)> {
    let cfg = PwConfig::new(gamma).map_err(to_py)?;
    let (mut a, mut b) = (layer(w_self)?, layer(w_peer)?);
    cooperation::pw_cooperate(&mut a, &mut b, &cfg).map_err(to_py)?;
    Ok((rows_of(&a.groups()[0].weights), rows_of(&b.groups()[0].weights)))
}

/// Zeroes the smallest-magnitude `floor(fraction * n)` entries.
#[pyfunction]
fn magnitude_prune(weights: Vec<Vec<f64>>, fraction: f64) -> PyResult<Vec<Vec<f64>>> {
    let mut p = layer(weights)?;
    cooperation::magnitude_prune(&mut p, fraction, Scope::ALL).map_err(to_py)?;
    Ok(rows_of(&p.groups()[0].weights))
}

/// Rank of `target` (1-based item id) among non-excluded items; ties count against it.
#[pyfunction]
#[pyo3(signature = (scores, target, excluded = Vec::new()))]
fn rank_of_target(scores: Vec<f64>, target: ItemId, excluded: Vec<ItemId>) -> PyResult<usize> {
    eval::rank_of_target(&scores, target, &excluded).map_err(to_py)
}

/// `{"MRR": .., "HIT": .., "NDCG": ..}` at cutoff `n` for 1-based ranks.
#[pyfunction]
fn metrics_at_n<'py>(py: Python<'py>, ranks: Vec<usize>, n: usize) -> PyResult<Bound<'py, PyDict>> {
    let m = eval::metrics_at_n(&ranks, n).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("MRR", m.mrr)?;
    d.set_item("HIT", m.hit)?;
    d.set_item("NDCG", m.ndcg)?;
    Ok(d)
}

fn result_dict<'py>(py: Python<'py>, r: &EvalResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("model", &r.model)?;
    d.set_item("split", r.split.as_str())?;
    d.set_item("users", r.users)?;
    for (n, m) in &r.at {
        d.set_item(format!("MRR@{n}"), m.mrr)?;
        d.set_item(format!("HIT@{n}"), m.hit)?;
        d.set_item(format!("NDCG@{n}"), m.ndcg)?;
    }
    if let Some(ratio) = r.invalid_layer_ratio {
        d.set_item("invalid_layer_ratio", ratio)?;
    }
    Ok(d)
}

/// A leave-one-out interaction dataset.
#[pyclass(module = "peercollab_py")]
struct Dataset {
    inner: InteractionDataset,
}

#[pymethods]
impl Dataset {
    /// The bundled synthetic dataset with planted topic structure.
    #[staticmethod]
    #[pyo3(signature = (seed = 2024, users = 1000, items = 500))]
    fn synthetic(seed: u64, users: usize, items: usize) -> PyResult<Self> {
        let cfg = SyntheticConfig {
            seed,
            users,
            items,
            ..SyntheticConfig::default()
        };
        Ok(Self {
            inner: synthetic::dataset(&cfg).map_err(to_py)?,
        })
    }

    /// Reads, 5-core filters, and densifies a `user item timestamp` file.
    #[staticmethod]
    fn ingest(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: peercollab::data::ingest(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.n_items()
    }

    /// Item ids of one user in time order.
    fn sequence(&self, user: usize) -> PyResult<Vec<ItemId>> {
        if user >= self.inner.n_users() {
            return Err(PyValueError::new_err(format!("user {user} out of range")));
        }
        Ok(self.inner.sequence(user).to_vec())
    }

    fn __len__(&self) -> usize {
        self.inner.n_users()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(users={}, items={}, interactions={})",
            self.inner.n_users(),
            self.inner.n_items(),
            self.inner.n_interactions()
        )
    }
}

/// A trained model restored from a run directory or checkpoint.
#[pyclass(module = "peercollab_py")]
struct TrainedModel {
    model: Model,
    config: RunConfig,
}

#[pymethods]
impl TrainedModel {
    /// Loads the reported model of a finished run, or an explicit checkpoint
    /// directory when `checkpoint` is given.
    #[staticmethod]
    #[pyo3(signature = (run_dir, checkpoint = None))]
    fn load(run_dir: PathBuf, checkpoint: Option<PathBuf>) -> PyResult<Self> {
        let config = harness::load_run_config(&run_dir).map_err(to_py)?;
        let dir = checkpoint.unwrap_or_else(|| run_dir.join(CHECKPOINT_DIR).join(MODEL_CHECKPOINT));
        let ckpt = checkpoint::load(&dir).map_err(to_py)?;
        let model = Model::from_params(config.model, ckpt.params, &config.hyper_params()).map_err(to_py)?;
        Ok(Self { model, config })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.model.kind().as_str()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.model.params().param_count()
    }

    /// Parameter checksum (changes whenever any weight changes).
    fn checksum(&self) -> u64 {
        self.model.params().checksum()
    }

    /// Scores of items `1..=n_items` for `user` when predicting `split`.
    #[pyo3(signature = (dataset, user, split = "test"))]
    fn scores(&self, dataset: &Dataset, user: usize, split: &str) -> PyResult<Vec<f32>> {
        if user >= dataset.inner.n_users() {
            return Err(PyValueError::new_err(format!("user {user} out of range")));
        }
        let seq_len = self.config.eval_config().seq_len;
        let ctx = self.model.context(&dataset.inner, user, self::split(split)?, seq_len);
        self.model.score_all_items(&ctx).map_err(to_py)
    }

    /// MRR/HIT/NDCG at the configured cutoffs.
    #[pyo3(signature = (dataset, split = "test"))]
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &Dataset, split: &str) -> PyResult<Bound<'py, PyDict>> {
        let split = self::split(split)?;
        let cfg = self.config.eval_config();
        let r = py
            .detach(|| eval::evaluate(&self.model, &dataset.inner, split, &cfg))
            .map_err(to_py)?;
        result_dict(py, &r)
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainedModel(kind={}, params={})",
            self.model.kind(),
            self.model.params().param_count()
        )
    }
}

/// Runs one configuration (TOML text) and writes its outputs to the
/// configured `out` directory. Returns the reported valid and test metrics.
#[pyfunction]
fn train<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = RunConfig::from_toml(config_toml).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    let (_, outcome) = py.detach(|| harness::run_to_dir(&cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("run_id", &outcome.run_id)?;
    d.set_item("out", cfg.out.to_string_lossy().into_owned())?;
    d.set_item("selected_peer", outcome.selected + 1)?;
    d.set_item("valid", result_dict(py, &outcome.valid)?)?;
    d.set_item("test", result_dict(py, &outcome.test)?)?;
    Ok(d)
}

#[pymodule]
pub fn peercollab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(lw_cooperate, m)?)?;
    m.add_function(wrap_pyfunction!(pw_cooperate, m)?)?;
    m.add_function(wrap_pyfunction!(magnitude_prune, m)?)?;
    m.add_function(wrap_pyfunction!(rank_of_target, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_at_n, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Dataset>()?;
    m.add_class::<TrainedModel>()?;
    Ok(())
}
