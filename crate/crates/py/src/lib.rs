//! Python bindings for the federated-learning simulator.
//!
//! The module mirrors the Rust crate's main types and operations: parameter
//! vectors, the model, the robust aggregation rules, the attack crafts, and
//! the experiment runner. Vectors cross the boundary as `ParamVector`
//! instances; datasets as `(features, labels)` lists.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use fedcap::aggregation::{self, AggFn, ClientUpdate};
use fedcap::attack::{self, BenignView};
use fedcap::config::parse_ini;
use fedcap::model::{self, Batch, ModelArch};
use fedcap::{runner, ExperimentConfig, ParamVector};

fn to_py_err(err: fedcap::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// Flat `f64` parameter vector with the simulator's exact arithmetic.
#[pyclass(name = "ParamVector", module = "fedcap_py", from_py_object)]
#[derive(Clone)]
struct PyParamVector {
    inner: ParamVector,
}

#[pymethods]
impl PyParamVector {
    #[new]
    fn new(values: Vec<f64>) -> Self {
        Self {
            inner: ParamVector::new(values),
        }
    }

    /// All-zero vector of the given dimension.
    #[staticmethod]
    fn zeros(dim: usize) -> Self {
        Self {
            inner: ParamVector::zeros(dim),
        }
    }

    /// Number of coordinates.
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Euclidean norm.
    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    /// Dot product with another vector of the same dimension.
    fn dot(&self, other: PyParamVector) -> f64 {
        self.inner.dot(&other.inner)
    }

    /// Euclidean distance to another vector.
    fn dist(&self, other: PyParamVector) -> f64 {
        self.inner.dist(&other.inner)
    }

    /// Cosine similarity, or None when either vector has zero norm.
    fn cosine(&self, other: PyParamVector) -> Option<f64> {
        model::cosine(&self.inner, &other.inner)
    }

    /// Coordinate-wise sum.
    fn add(&self, other: PyParamVector) -> Self {
        Self {
            inner: self.inner.add(&other.inner),
        }
    }

    /// Coordinate-wise difference.
    fn sub(&self, other: PyParamVector) -> Self {
        Self {
            inner: self.inner.sub(&other.inner),
        }
    }

    /// Coordinate-wise scaling.
    fn scale(&self, factor: f64) -> Self {
        Self {
            inner: self.inner.scale(factor),
        }
    }

    /// The coordinates as a plain list.
    fn values(&self) -> Vec<f64> {
        self.inner.as_slice().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("ParamVector(dim={}, norm={:.6})", self.inner.dim(), self.inner.norm())
    }
}

fn wrap(inner: ParamVector) -> PyParamVector {
    PyParamVector { inner }
}

fn batch_from(features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Batch> {
    let input_dim = features.first().map_or(0, Vec::len);
    for row in &features {
        if row.len() != input_dim {
            return Err(PyValueError::new_err("feature rows differ in length"));
        }
    }
    let flat: Vec<f64> = features.into_iter().flatten().collect();
    Batch::new(input_dim, flat, labels).map_err(to_py_err)
}

/// One-hidden-layer softplus network over flat parameters.
#[pyclass(name = "ModelArch", module = "fedcap_py", from_py_object)]
#[derive(Clone)]
struct PyModelArch {
    inner: ModelArch,
}

#[pymethods]
impl PyModelArch {
    #[new]
    fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> PyResult<Self> {
        ModelArch::new(input_dim, hidden_dim, num_classes)
            .map(|inner| Self { inner })
            .map_err(to_py_err)
    }

    /// Total number of flat parameters.
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Deterministic initial parameters for the given seed.
    fn init_params(&self, seed: u64) -> PyParamVector {
        wrap(self.inner.init_params(seed))
    }

    /// Mean cross-entropy loss on `(features, labels)`.
    fn loss(
        &self,
        params: PyParamVector,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> PyResult<f64> {
        let batch = batch_from(features, labels)?;
        model::forward_loss(&self.inner, &params.inner, &batch).map_err(to_py_err)
    }

    /// Mean gradient of the loss with respect to the flat parameters.
    fn gradient(
        &self,
        params: PyParamVector,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> PyResult<PyParamVector> {
        let batch = batch_from(features, labels)?;
        model::gradient(&self.inner, &params.inner, &batch)
            .map(wrap)
            .map_err(to_py_err)
    }

    /// Fraction of correctly classified rows.
    fn accuracy(
        &self,
        params: PyParamVector,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> PyResult<f64> {
        let batch = batch_from(features, labels)?;
        model::accuracy(&self.inner, &params.inner, &batch).map_err(to_py_err)
    }
}

type RawUpdates = Vec<(usize, PyParamVector, usize)>;

fn updates_from(raw: RawUpdates) -> Vec<ClientUpdate> {
    raw.into_iter()
        .map(|(id, params, num_samples)| ClientUpdate {
            id,
            params: params.inner,
            num_samples,
        })
        .collect()
}

fn inner_agg(name: &str, trim_q: Option<usize>, assumed_malicious: Option<usize>) -> PyResult<Box<AggFn<'static>>> {
    match name {
        "mean" => Ok(Box::new(|u: &[ClientUpdate]| {
            aggregation::agg_mean(u, &aggregation::sample_weights(u))
        })),
        "median" => Ok(Box::new(aggregation::agg_median)),
        "trimmed_mean" => {
            let q = trim_q.unwrap_or(1);
            Ok(Box::new(move |u: &[ClientUpdate]| {
                aggregation::agg_trimmed_mean(u, q)
            }))
        }
        "multikrum" => {
            let m = assumed_malicious.unwrap_or(0);
            Ok(Box::new(move |u: &[ClientUpdate]| {
                let q = u.len().saturating_sub(m).max(1);
                aggregation::agg_multikrum(u, m, q)
            }))
        }
        "rfa" => Ok(Box::new(|u: &[ClientUpdate]| {
            aggregation::agg_rfa(u, &aggregation::sample_weights(u))
        })),
        other => Err(PyValueError::new_err(format!(
            "unknown inner aggregator '{other}'"
        ))),
    }
}

/// Weighted coordinate-wise mean; weights default to sample counts.
#[pyfunction]
#[pyo3(signature = (updates, weights=None))]
fn agg_mean(updates: RawUpdates, weights: Option<Vec<f64>>) -> PyResult<PyParamVector> {
    let u = updates_from(updates);
    let w = weights.unwrap_or_else(|| aggregation::sample_weights(&u));
    aggregation::agg_mean(&u, &w).map(wrap).map_err(to_py_err)
}

/// Coordinate-wise median.
#[pyfunction]
fn agg_median(updates: RawUpdates) -> PyResult<PyParamVector> {
    aggregation::agg_median(&updates_from(updates))
        .map(wrap)
        .map_err(to_py_err)
}

/// Coordinate-wise trimmed mean dropping the `q` lowest and highest values.
#[pyfunction]
fn agg_trimmed_mean(updates: RawUpdates, q: usize) -> PyResult<PyParamVector> {
    aggregation::agg_trimmed_mean(&updates_from(updates), q)
        .map(wrap)
        .map_err(to_py_err)
}

/// Multi-Krum with `m` assumed malicious, averaging the `q` best-scored
/// updates (default `n − m`).
#[pyfunction]
#[pyo3(signature = (updates, m, q=None))]
fn agg_multikrum(updates: RawUpdates, m: usize, q: Option<usize>) -> PyResult<PyParamVector> {
    let u = updates_from(updates);
    let q = q.unwrap_or_else(|| u.len().saturating_sub(m).max(1));
    aggregation::agg_multikrum(&u, m, q)
        .map(wrap)
        .map_err(to_py_err)
}

/// Weighted geometric median (Weiszfeld); weights default to sample counts.
#[pyfunction]
#[pyo3(signature = (updates, weights=None))]
fn agg_rfa(updates: RawUpdates, weights: Option<Vec<f64>>) -> PyResult<PyParamVector> {
    let u = updates_from(updates);
    let w = weights.unwrap_or_else(|| aggregation::sample_weights(&u));
    aggregation::agg_rfa(&u, &w).map(wrap).map_err(to_py_err)
}

/// Cosine clustering into two groups; returns the mean over the kept group
/// and the flagged client ids.
#[pyfunction]
fn agg_clusteredfl(updates: RawUpdates) -> PyResult<(PyParamVector, Vec<usize>)> {
    let (params, flagged) =
        aggregation::agg_clusteredfl(&updates_from(updates)).map_err(to_py_err)?;
    Ok((wrap(params), flagged.into_iter().collect()))
}

/// Trust-score aggregation against a server root update.
#[pyfunction]
fn agg_fltrust(updates: RawUpdates, server_update: PyParamVector) -> PyResult<PyParamVector> {
    aggregation::agg_fltrust(&updates_from(updates), &server_update.inner)
        .map(wrap)
        .map_err(to_py_err)
}

/// Bucketing wrapper: seeded shuffle into buckets of `s`, inner rule over
/// the bucket means.
#[pyfunction]
#[pyo3(signature = (updates, s, seed, inner="mean", trim_q=None, assumed_malicious=None))]
fn wrap_bucketing(
    updates: RawUpdates,
    s: usize,
    seed: u64,
    inner: &str,
    trim_q: Option<usize>,
    assumed_malicious: Option<usize>,
) -> PyResult<PyParamVector> {
    let rule = inner_agg(inner, trim_q, assumed_malicious)?;
    aggregation::wrap_bucketing(&updates_from(updates), s, &rule, seed)
        .map(wrap)
        .map_err(to_py_err)
}

/// Gradient-splitting wrapper: score clients over `p` coordinate chunks and
/// average the better half.
#[pyfunction]
#[pyo3(signature = (updates, p, inner="mean", trim_q=None, assumed_malicious=None))]
fn wrap_gas(
    updates: RawUpdates,
    p: usize,
    inner: &str,
    trim_q: Option<usize>,
    assumed_malicious: Option<usize>,
) -> PyResult<PyParamVector> {
    let rule = inner_agg(inner, trim_q, assumed_malicious)?;
    aggregation::wrap_gas(&updates_from(updates), p, &rule)
        .map(wrap)
        .map_err(to_py_err)
}

fn view_from(
    updates: Vec<(usize, PyParamVector)>,
    num_participants: usize,
    malicious_ids: Vec<usize>,
) -> BenignView {
    BenignView {
        updates: updates
            .into_iter()
            .map(|(id, params)| (id, params.inner))
            .collect(),
        num_participants,
        malicious_ids: malicious_ids.into_iter().collect::<BTreeSet<_>>(),
    }
}

/// Label flipping `y ← (y+1) mod C`; features pass through unchanged.
#[pyfunction]
fn poison_labels(
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let batch = batch_from(features, labels)?;
    let flipped = attack::poison_labels(&batch, num_classes);
    let rows = (0..flipped.len())
        .map(|i| flipped.feature_row(i).to_vec())
        .collect();
    Ok((rows, flipped.labels().to_vec()))
}

/// Sign flipping: `−d`.
#[pyfunction]
fn poison_sign_flip(d: PyParamVector) -> PyParamVector {
    wrap(attack::poison_sign_flip(&d.inner))
}

/// Model replacement: `scale · d`.
#[pyfunction]
fn poison_model_replacement(d: PyParamVector, scale: f64) -> PyParamVector {
    wrap(attack::poison_model_replacement(&d.inner, scale))
}

/// The LIE attack's `z_max` for `n` participants and `m` malicious.
#[pyfunction]
fn lie_z_max(n: usize, m: usize) -> f64 {
    attack::lie_z_max(n, m)
}

/// LIE craft `μ − z_max·δ` over the visible `(id, update)` pairs.
#[pyfunction]
fn poison_lie(
    updates: Vec<(usize, PyParamVector)>,
    num_participants: usize,
    malicious_ids: Vec<usize>,
) -> PyResult<PyParamVector> {
    attack::poison_lie(&view_from(updates, num_participants, malicious_ids))
        .map(wrap)
        .map_err(to_py_err)
}

/// Min-Max craft over the visible `(id, update)` pairs.
#[pyfunction]
fn poison_min_max(
    updates: Vec<(usize, PyParamVector)>,
    num_participants: usize,
    malicious_ids: Vec<usize>,
) -> PyResult<PyParamVector> {
    attack::poison_min_max(&view_from(updates, num_participants, malicious_ids))
        .map(wrap)
        .map_err(to_py_err)
}

/// Min-Sum craft over the visible `(id, update)` pairs.
#[pyfunction]
fn poison_min_sum(
    updates: Vec<(usize, PyParamVector)>,
    num_participants: usize,
    malicious_ids: Vec<usize>,
) -> PyResult<PyParamVector> {
    attack::poison_min_sum(&view_from(updates, num_participants, malicious_ids))
        .map(wrap)
        .map_err(to_py_err)
}

/// Inner-product manipulation craft; requires the full-knowledge view.
#[pyfunction]
fn poison_ipm(
    updates: Vec<(usize, PyParamVector)>,
    num_participants: usize,
    malicious_ids: Vec<usize>,
    epsilon: f64,
) -> PyResult<PyParamVector> {
    let num_malicious = malicious_ids.len();
    attack::poison_ipm(
        &view_from(updates, num_participants, malicious_ids),
        num_participants,
        num_malicious,
        epsilon,
    )
    .map(wrap)
    .map_err(to_py_err)
}

/// Runs a full experiment from config text and returns the summary as a dict.
///
/// With `out_dir` the run also writes its artifacts there; `seed` overrides
/// the config's run seed.
#[pyfunction]
#[pyo3(signature = (config_text, out_dir=None, seed=None, force=false, export_shards=false))]
fn run_experiment(
    py: Python<'_>,
    config_text: &str,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    force: bool,
    export_shards: bool,
) -> PyResult<Py<PyAny>> {
    let mut map = parse_ini(config_text).map_err(to_py_err)?;
    if let Some(seed) = seed {
        map.entry("run".to_string())
            .or_default()
            .insert("seed".to_string(), seed.to_string());
    }
    let cfg = ExperimentConfig::from_map(&map).map_err(to_py_err)?;
    let artifacts = match out_dir {
        Some(dir) => runner::run_to_dir(&cfg, &dir, force, export_shards).map_err(to_py_err)?,
        None => runner::execute(&cfg).map_err(to_py_err)?,
    };
    let text = serde_json::to_string(&artifacts.summary)
        .map_err(|err| PyValueError::new_err(err.to_string()))?;
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

#[pymodule]
fn fedcap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParamVector>()?;
    m.add_class::<PyModelArch>()?;
    m.add_function(wrap_pyfunction!(agg_mean, m)?)?;
    m.add_function(wrap_pyfunction!(agg_median, m)?)?;
    m.add_function(wrap_pyfunction!(agg_trimmed_mean, m)?)?;
    m.add_function(wrap_pyfunction!(agg_multikrum, m)?)?;
    m.add_function(wrap_pyfunction!(agg_rfa, m)?)?;
    m.add_function(wrap_pyfunction!(agg_clusteredfl, m)?)?;
    m.add_function(wrap_pyfunction!(agg_fltrust, m)?)?;
    m.add_function(wrap_pyfunction!(wrap_bucketing, m)?)?;
    m.add_function(wrap_pyfunction!(wrap_gas, m)?)?;
    m.add_function(wrap_pyfunction!(poison_labels, m)?)?;
    m.add_function(wrap_pyfunction!(poison_sign_flip, m)?)?;
    m.add_function(wrap_pyfunction!(poison_model_replacement, m)?)?;
    m.add_function(wrap_pyfunction!(lie_z_max, m)?)?;
    m.add_function(wrap_pyfunction!(poison_lie, m)?)?;
    m.add_function(wrap_pyfunction!(poison_min_max, m)?)?;
    m.add_function(wrap_pyfunction!(poison_min_sum, m)?)?;
    m.add_function(wrap_pyfunction!(poison_ipm, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
