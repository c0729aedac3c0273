//! Python bindings: grid cases and power flow, datasets, surrogate models,
//! adaptive-neighbor graphs and semi-supervised fault labeling.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dpfaga_core::bench::{self, NamedPerturbation};
use dpfaga_core::can::{self as core_can, Metric};
use dpfaga_core::datagen::{self, derive_seed, Role};
use dpfaga_core::models::{self, Checkpoint, ModelKind};
use dpfaga_core::nn::{Activation, LossCurves, TrainConfig};
use dpfaga_core::powerflow::{solve_pf, LoadVector, PfOptions};
use dpfaga_core::sscrf;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_activation(s: &str) -> PyResult<Activation> {
    match s.to_ascii_lowercase().as_str() {
        "identity" => Ok(Activation::Identity),
        "sigmoid" => Ok(Activation::Sigmoid),
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => Err(value_err(format!("unknown activation '{other}'"))),
    }
}

fn parse_role(s: &str) -> PyResult<Role> {
    match s {
        "train" => Ok(Role::Train),
        "val" => Ok(Role::Val),
        "test" => Ok(Role::Test),
        other => Err(value_err(format!("unknown role '{other}' (expected train, val or test)"))),
    }
}

/// A power network in per-unit.
#[pyclass(name = "GridCase", module = "dpfaga", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGridCase {
    inner: dpfaga_core::GridCase,
}

#[pymethods]
impl PyGridCase {
    /// The bundled IEEE 14-bus case.
    #[staticmethod]
    fn ieee14() -> Self {
        PyGridCase {
            inner: dpfaga_core::GridCase::ieee14(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyGridCase {
            inner: dpfaga_core::GridCase::load(path).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyGridCase {
            inner: dpfaga_core::GridCase::from_json(text).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn n_buses(&self) -> usize {
        self.inner.n_buses()
    }

    /// Base-case loads as `(p, q)` lists.
    fn base_loads(&self) -> (Vec<f64>, Vec<f64>) {
        let l = LoadVector::base(&self.inner);
        (l.p, l.q)
    }

    /// Newton-Raphson power flow; base loads when `p` and `q` are omitted.
    #[pyo3(signature = (p=None, q=None, tol=1e-10, max_iter=20))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        p: Option<Vec<f64>>,
        q: Option<Vec<f64>>,
        tol: f64,
        max_iter: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let base = LoadVector::base(&self.inner);
        let loads = LoadVector {
            p: p.unwrap_or(base.p),
            q: q.unwrap_or(base.q),
        };
        let sol = solve_pf(&self.inner, &loads, &PfOptions { tol, max_iter }).map_err(runtime_err)?;
        let d = PyDict::new(py);
        d.set_item("v_mag", sol.v_mag)?;
        d.set_item("v_ang", sol.v_ang)?;
        d.set_item("p_inj", sol.p_inj)?;
        d.set_item("q_inj", sol.q_inj)?;
        d.set_item("iterations", sol.iterations)?;
        d.set_item("max_mismatch", sol.max_mismatch)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("GridCase(name={:?}, n_buses={})", self.inner.name, self.inner.n_buses())
    }
}

/// Operating points: measured loads `x` and solved voltages `y`.
#[pyclass(name = "Dataset", module = "dpfaga", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: datagen::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (case, steps=2000, load_variation=0.5, seed=0, role="train"))]
    fn generate(py: Python<'_>, case: &PyGridCase, steps: usize, load_variation: f64, seed: u64, role: &str) -> PyResult<Self> {
        let role = parse_role(role)?;
        let case = case.inner.clone();
        let inner = py
            .detach(move || datagen::generate_dataset(&case, role, steps, load_variation, seed))
            .map_err(runtime_err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: datagen::Dataset::load(path).map_err(io_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(io_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_buses(&self) -> usize {
        self.inner.n_buses()
    }

    #[getter]
    fn role(&self) -> String {
        self.inner.role.to_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Inputs as one list per sample.
    fn x(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.x.clone()).collect()
    }

    fn x_clean(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.x_clean.clone()).collect()
    }

    /// Targets as one list per sample.
    fn y(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.y.clone()).collect()
    }

    /// A corrupted copy: noise, then bus drops, then random entry loss.
    #[pyo3(signature = (snr_db=None, drop_buses=None, loss_prob=None, seed=0))]
    fn perturb(&self, snr_db: Option<f64>, drop_buses: Option<usize>, loss_prob: Option<f64>, seed: u64) -> PyResult<Self> {
        let p = NamedPerturbation {
            name: "py".into(),
            snr_db,
            n_drop_buses: drop_buses,
            loss_prob,
        };
        Ok(PyDataset {
            inner: p.apply(&self.inner, seed).map_err(value_err)?,
        })
    }

    /// Subset of `⌈fraction·len⌉` samples in original order.
    fn subsample(&self, fraction: f64, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: bench::subsample_training(&self.inner, fraction, seed).map_err(value_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(case={:?}, role={}, samples={})",
            self.inner.case_name,
            self.inner.role,
            self.inner.len()
        )
    }
}

/// A trained FCNN, GNN or GAT regressor.
#[pyclass(name = "Model", module = "dpfaga", frozen)]
struct PyModel {
    inner: models::Model,
    curves: Option<LossCurves>,
}

#[pymethods]
impl PyModel {
    /// Builds and trains a model with Adam on the full batch.
    #[staticmethod]
    #[pyo3(signature = (kind, case, train, val=None, epochs=None, learning_rate=1e-3, activation="tanh", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        kind: &str,
        case: &PyGridCase,
        train: &PyDataset,
        val: Option<&PyDataset>,
        epochs: Option<usize>,
        learning_rate: f64,
        activation: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(value_err)?;
        let cfg = TrainConfig {
            epochs: epochs.unwrap_or(bench::EpochBudgets::default().get(kind)),
            learning_rate,
            activation: parse_activation(activation)?,
            seed: derive_seed(seed, 1),
            ..TrainConfig::default()
        };
        let (case, train, val) = (&case.inner, &train.inner, val.map(|v| &v.inner));
        let (inner, curves) = py
            .detach(|| models::fit(kind, case, train, val, &cfg))
            .map_err(runtime_err)?;
        Ok(PyModel {
            inner,
            curves: Some(curves),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf, case: &PyGridCase) -> PyResult<Self> {
        let ck = Checkpoint::load(path).map_err(io_err)?;
        Ok(PyModel {
            inner: models::Model::from_checkpoint(&ck, &case.inner).map_err(value_err)?,
            curves: None,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner
            .checkpoint(None, self.curves.as_ref())
            .save(path)
            .map_err(io_err)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.spec().kind.to_string()
    }

    #[getter]
    fn train_loss(&self) -> Option<Vec<f64>> {
        self.curves.as_ref().map(|c| c.train.clone())
    }

    #[getter]
    fn val_loss(&self) -> Option<Vec<f64>> {
        self.curves.as_ref().map(|c| c.val.clone())
    }

    /// Predicted `[v_mag.., v_ang..]` for each input row.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let width = 2 * self.inner.n_buses();
        if let Some(r) = x.iter().find(|r| r.len() != width) {
            return Err(value_err(format!("rows must have {width} entries, got {}", r.len())));
        }
        let flat: Vec<f64> = x.into_iter().flatten().collect();
        let out = self.inner.predict(&flat).map_err(runtime_err)?;
        Ok(out.chunks(width).map(<[f64]>::to_vec).collect())
    }

    /// Dataset-level MSE and NRMSE in physical units.
    fn evaluate<'py>(&self, py: Python<'py>, ds: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let p = models::predict_dataset(&self.inner, &ds.inner).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("mse", p.mse)?;
        d.set_item("nrmse", p.nrmse)?;
        d.set_item("per_sample_mse", p.per_sample_mse)?;
        Ok(d)
    }

    /// Dense `N x N` GAT attention per layer for one input row; row `i`
    /// holds the weights bus `i` gives its neighbors and itself.
    fn attention(&self, x: Vec<f64>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let Some(graph) = self.inner.graph() else {
            return Ok(Vec::new());
        };
        let adj = graph.attention_edges();
        let n = graph.n_nodes();
        let layers = self.inner.attention(&x).map_err(value_err)?;
        Ok(layers
            .into_iter()
            .map(|coef| {
                let mut dense = vec![vec![0.0; n]; n];
                for (i, row) in dense.iter_mut().enumerate() {
                    for e in adj.edge_range(i) {
                        row[adj.source(e)] = coef[e];
                    }
                }
                dense
            })
            .collect())
    }
}

/// Adaptive-neighbor graph with `clusters` connected components.
///
/// `k=None` selects the neighbor count automatically from 2..=min(n-1, 20).
#[pyfunction]
#[pyo3(signature = (features, clusters, k=None, max_outer=30))]
fn can_graph<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    clusters: usize,
    k: Option<usize>,
    max_outer: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let n = features.len();
    let cols = features.first().map_or(0, Vec::len);
    if n == 0 || cols == 0 || features.iter().any(|r| r.len() != cols) {
        return Err(value_err("features must be a non-empty rectangular list of rows"));
    }
    let z = DMatrix::from_fn(n, cols, |r, c| features[r][c]);
    let d = core_can::pairwise_distances(&z, Metric::Euclidean);
    let k = match k {
        Some(k) => k,
        None => {
            let candidates: Vec<usize> = (2..=20.min(n.saturating_sub(1))).collect();
            core_can::adaptive_k_select(&d, &candidates).map_err(value_err)?
        }
    };
    let g = py
        .detach(|| core_can::enforce_rank_constraint(&d, clusters, k, max_outer))
        .map_err(runtime_err)?;
    let out = PyDict::new(py);
    out.set_item("n", n)?;
    out.set_item("k", k)?;
    out.set_item("c_requested", clusters)?;
    out.set_item("c_achieved", g.n_components)?;
    out.set_item("labels", g.labels.clone())?;
    out.set_item("edges", g.edges())?;
    out.set_item("gamma", g.gamma.clone())?;
    out.set_item("s", (0..n).map(|i| g.s.row(i).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())?;
    Ok(out)
}

/// Semi-supervised fault labeling on simulated scenarios. Returns the report
/// of every EM round as a JSON string.
#[pyfunction]
#[pyo3(signature = (case, scenarios=200, label_frac=0.2, rounds=3, graph="topology", epochs=200, seed=0))]
fn fault_em(
    py: Python<'_>,
    case: &PyGridCase,
    scenarios: usize,
    label_frac: f64,
    rounds: usize,
    graph: &str,
    epochs: usize,
    seed: u64,
) -> PyResult<String> {
    let source: sscrf::GraphSource = graph.parse().map_err(value_err)?;
    let case = &case.inner;
    let report = py
        .detach(|| -> Result<sscrf::EmReport, sscrf::SscrfError> {
            let sc = sscrf::generate_fault_scenarios(
                case,
                scenarios,
                &sscrf::FaultConfig::default(),
                &mut datagen::rng_from_seed(derive_seed(seed, 0)),
            )?;
            let (g, truth) = sscrf::fault_graph(
                case,
                &sc,
                source,
                10,
                label_frac,
                &mut datagen::rng_from_seed(derive_seed(seed, 1)),
            )?;
            let t = TrainConfig {
                epochs,
                learning_rate: 1e-2,
                seed: derive_seed(seed, 3),
                ..TrainConfig::default()
            };
            let cfg = sscrf::EmConfig {
                q: t.clone(),
                p: t,
                n_rounds: rounds,
                ..sscrf::EmConfig::default()
            };
            let mut model = sscrf::CrfModel::new(&g, sscrf::CrfSpec::default(), derive_seed(seed, 2))?;
            sscrf::em_train(&mut model, &g, &cfg, Some(&truth))
        })
        .map_err(runtime_err)?;
    serde_json::to_string(&report.rounds).map_err(runtime_err)
}

/// Equal-width histogram CSV with rows `bin_lo,bin_hi,count`.
#[pyfunction]
#[pyo3(signature = (values, n_bins=20))]
fn emit_histogram(values: Vec<f64>, n_bins: usize) -> PyResult<String> {
    bench::emit_histogram(&values, n_bins).map_err(value_err)
}

#[pymodule]
fn dpfaga(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridCase>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(can_graph, m)?)?;
    m.add_function(wrap_pyfunction!(fault_em, m)?)?;
    m.add_function(wrap_pyfunction!(emit_histogram, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
