//! FCNN, GNN and GAT regressors from bus loads to bus voltages.
//!
//! Inputs are the flat `[p.., q..]` demand vectors of a [`Dataset`]; outputs
//! are `[v_mag.., v_ang..]`. Both are standardized per dimension with
//! statistics stored as frozen parameters, so a bus keeps its own scale under
//! node relabeling. Graph models see each bus as a node with features
//! `(p, q)` plus static descriptors of the bus (type one-hot and voltage
//! setpoint).

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::grid::{BusKind, GridCase};
use crate::nn::{
    self, nrmse_varying, Activation, Adjacency, Gradients, LossCurves, NnError, Objective, ParamId, ParamStore,
    Tape, Tensor, TrainConfig, Var,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("width mismatch: model expects {expected}, data has {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Fcnn,
    Gnn,
    Gat,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Fcnn, ModelKind::Gnn, ModelKind::Gat];

    pub fn is_graph(self) -> bool {
        self != ModelKind::Fcnn
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "fcnn" => Ok(ModelKind::Fcnn),
            "gnn" => Ok(ModelKind::Gnn),
            "gat" => Ok(ModelKind::Gat),
            other => Err(format!("unknown model kind '{other}'")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Fcnn => "fcnn",
            ModelKind::Gnn => "gnn",
            ModelKind::Gat => "gat",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Width of hidden layer `l` is `hidden_dims[min(l, len - 1)]`.
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub attention_activation: Activation,
    pub n_layers: usize,
    /// Append bus-type one-hot and voltage setpoint to graph node features.
    #[serde(default = "default_true")]
    pub static_node_features: bool,
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            hidden_dims: vec![32, 32],
            activation: Activation::Tanh,
            attention_activation: Activation::Tanh,
            n_layers: 2,
            static_node_features: true,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(ModelError::InvalidSpec("hidden_dims must be non-empty and positive".into()));
        }
        if self.n_layers == 0 {
            return Err(ModelError::InvalidSpec("n_layers must be at least 1".into()));
        }
        Ok(())
    }

    fn width(&self, layer: usize) -> usize {
        self.hidden_dims[layer.min(self.hidden_dims.len() - 1)]
    }
}

/// Bus adjacency with self-loops, in the two forms the graph layers use.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyGraph {
    neighbors: Vec<Vec<usize>>,
    /// `D^{-1/2}(A+I)D^{-1/2}`.
    a_hat: Adjacency,
    /// Unit-weight edges over `nbrs(i) ∪ {i}`, self edge first.
    attention: Adjacency,
}

impl TopologyGraph {
    pub fn from_case(case: &GridCase) -> Self {
        Self::from_neighbors(case.neighbors())
    }

    /// Parallel and self edges in `neighbors` are ignored.
    pub fn from_neighbors(mut neighbors: Vec<Vec<usize>>) -> Self {
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.retain(|&j| j != i);
            list.sort_unstable();
            list.dedup();
        }
        let deg: Vec<f64> = neighbors.iter().map(|l| (l.len() + 1) as f64).collect();
        let mut hat = Vec::with_capacity(neighbors.len());
        let mut att = Vec::with_capacity(neighbors.len());
        for (i, list) in neighbors.iter().enumerate() {
            let mut h = vec![(i, 1.0 / deg[i])];
            let mut a = vec![(i, 1.0)];
            for &j in list {
                h.push((j, 1.0 / (deg[i] * deg[j]).sqrt()));
                a.push((j, 1.0));
            }
            hat.push(h);
            att.push(a);
        }
        TopologyGraph {
            a_hat: Adjacency::from_lists(&hat),
            attention: Adjacency::from_lists(&att),
            neighbors,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn a_hat(&self) -> &Adjacency {
        &self.a_hat
    }

    pub fn attention_edges(&self) -> &Adjacency {
        &self.attention
    }

    pub fn a_hat_dense(&self) -> Tensor {
        let n = self.n_nodes();
        let mut t = Tensor::zeros(n, n);
        for (i, j) in self.a_hat.edges() {
            let e = self.a_hat.edge_range(i).find(|&e| self.a_hat.source(e) == j).unwrap();
            t[(i, j)] = self.a_hat.weight(e);
        }
        t
    }

    /// Node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut nbrs = vec![Vec::new(); self.n_nodes()];
        for (i, list) in self.neighbors.iter().enumerate() {
            nbrs[perm[i]] = list.iter().map(|&j| perm[j]).collect();
        }
        Self::from_neighbors(nbrs)
    }
}

fn column_stats<'r>(rows: impl Iterator<Item = &'r [f64]> + Clone, width: usize) -> (Vec<f64>, Vec<f64>) {
    let m = rows.clone().count().max(1) as f64;
    // Shifted by the first row so constant columns reproduce their value exactly.
    let shift = rows.clone().next().map_or(vec![0.0; width], <[f64]>::to_vec);
    let mut mean = vec![0.0; width];
    for r in rows.clone() {
        for ((acc, v), s) in mean.iter_mut().zip(r).zip(&shift) {
            *acc += (v - s) / m;
        }
    }
    for (mu, s) in mean.iter_mut().zip(&shift) {
        *mu += s;
    }
    let mut var = vec![0.0; width];
    for r in rows {
        for ((acc, v), mu) in var.iter_mut().zip(r).zip(&mean) {
            *acc += (v - mu) * (v - mu) / m;
        }
    }
    let std = var
        .iter()
        .map(|v: &f64| if v.sqrt() > 1e-9 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, std)
}

const STATIC_WIDTH: usize = 4;

fn static_features(case: &GridCase) -> Tensor {
    let mut t = Tensor::zeros(case.n_buses(), STATIC_WIDTH);
    for b in &case.buses {
        let slot = match b.kind {
            BusKind::Slack => 0,
            BusKind::PV => 1,
            BusKind::PQ => 2,
        };
        t[(b.id, slot)] = 1.0;
        t[(b.id, 3)] = case.v_set(b.id).map_or(0.0, |v| v - 1.0);
    }
    t
}

#[derive(Debug, Clone)]
struct Layer {
    w: ParamId,
    b: ParamId,
    att: Option<ParamId>,
}

/// A regressor with its weights and normalization statistics.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    n_buses: usize,
    graph: Option<TopologyGraph>,
    params: ParamStore,
    layers: Vec<Layer>,
    head: Layer,
    x_mean: ParamId,
    x_std: ParamId,
    y_mean: ParamId,
    y_std: ParamId,
    node_static: Option<ParamId>,
}

impl Model {
    pub fn new(spec: ModelSpec, case: &GridCase, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let n = case.n_buses();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let x_mean = params.add_frozen("x_mean", Tensor::zeros(1, 2 * n));
        let x_std = params.add_frozen("x_std", Tensor::filled(1, 2 * n, 1.0));
        let y_mean = params.add_frozen("y_mean", Tensor::zeros(1, 2 * n));
        let y_std = params.add_frozen("y_std", Tensor::filled(1, 2 * n, 1.0));
        let (graph, node_static, mut width, out_width) = if spec.kind.is_graph() {
            let st = spec
                .static_node_features
                .then(|| params.add_frozen("node_static", static_features(case)));
            let f = 2 + if st.is_some() { STATIC_WIDTH } else { 0 };
            (Some(TopologyGraph::from_case(case)), st, f, 2)
        } else {
            (None, None, 2 * n, 2 * n)
        };
        let mut layers = Vec::with_capacity(spec.n_layers);
        for l in 0..spec.n_layers {
            let d = spec.width(l);
            let w = params.add(&format!("layer{l}.w"), Tensor::glorot(width, d, &mut rng));
            let b = params.add(&format!("layer{l}.b"), Tensor::zeros(1, d));
            let att = (spec.kind == ModelKind::Gat)
                .then(|| params.add(&format!("layer{l}.att"), Tensor::glorot(d, 2, &mut rng)));
            layers.push(Layer { w, b, att });
            width = d;
        }
        let head = Layer {
            w: params.add("head.w", Tensor::glorot(width, out_width, &mut rng)),
            b: params.add("head.b", Tensor::zeros(1, out_width)),
            att: None,
        };
        Ok(Model {
            spec,
            n_buses: n,
            graph,
            params,
            layers,
            head,
            x_mean,
            x_std,
            y_mean,
            y_std,
            node_static,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn graph(&self) -> Option<&TopologyGraph> {
        self.graph.as_ref()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Sets normalization statistics from a training set. Constant dimensions
    /// get unit scale.
    pub fn fit_normalization(&mut self, ds: &Dataset) -> Result<(), ModelError> {
        self.check_width(ds)?;
        let width = 2 * self.n_buses;
        let (xm, xs) = column_stats(ds.samples.iter().map(|s| s.x.as_slice()), width);
        let (ym, ys) = column_stats(ds.samples.iter().map(|s| s.y.as_slice()), width);
        for (id, v) in [(self.x_mean, xm), (self.x_std, xs), (self.y_mean, ym), (self.y_std, ys)] {
            self.params.value_mut(id).data_mut().copy_from_slice(&v);
        }
        Ok(())
    }

    fn check_width(&self, ds: &Dataset) -> Result<(), ModelError> {
        let got = ds.samples.first().map_or(0, |s| s.x.len());
        if got != 2 * self.n_buses {
            return Err(ModelError::WidthMismatch {
                expected: 2 * self.n_buses,
                got,
            });
        }
        Ok(())
    }

    /// Normalized network input for a row-major `batch × 2N` buffer:
    /// `batch × 2N` for FCNN, `(batch·N) × F` node rows for graph models.
    pub fn encode_inputs(&self, x: &[f64]) -> Tensor {
        let n = self.n_buses;
        let (mean, std) = (self.params.value(self.x_mean).data(), self.params.value(self.x_std).data());
        let z: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(k, v)| (v - mean[k % (2 * n)]) / std[k % (2 * n)])
            .collect();
        let batch = x.len() / (2 * n);
        if !self.spec.kind.is_graph() {
            return Tensor::from_vec(batch, 2 * n, z).expect("whole rows");
        }
        let st = self.node_static.map(|id| self.params.value(id));
        let f = 2 + st.map_or(0, Tensor::cols);
        let mut out = Tensor::zeros(batch * n, f);
        for b in 0..batch {
            for i in 0..n {
                let row = out.row_mut(b * n + i);
                row[0] = z[b * 2 * n + i];
                row[1] = z[b * 2 * n + n + i];
                if let Some(st) = st {
                    row[2..].copy_from_slice(st.row(i));
                }
            }
        }
        out
    }

    /// Normalized targets in the layout of the network output.
    pub fn encode_targets(&self, y: &[f64]) -> Tensor {
        let n = self.n_buses;
        let (mean, std) = (self.params.value(self.y_mean).data(), self.params.value(self.y_std).data());
        let batch = y.len() / (2 * n);
        if !self.spec.kind.is_graph() {
            let z = y
                .iter()
                .enumerate()
                .map(|(k, v)| (v - mean[k % (2 * n)]) / std[k % (2 * n)])
                .collect();
            return Tensor::from_vec(batch, 2 * n, z).expect("whole rows");
        }
        let mut out = Tensor::zeros(batch * n, 2);
        for b in 0..batch {
            for i in 0..n {
                for c in 0..2 {
                    let k = c * n + i;
                    out[(b * n + i, c)] = (y[b * 2 * n + k] - mean[k]) / std[k];
                }
            }
        }
        out
    }

    /// Physical `batch × 2N` predictions from a network output.
    pub fn decode_outputs(&self, out: &Tensor) -> Vec<f64> {
        let n = self.n_buses;
        let (mean, std) = (self.params.value(self.y_mean).data(), self.params.value(self.y_std).data());
        if !self.spec.kind.is_graph() {
            return out
                .data()
                .iter()
                .enumerate()
                .map(|(k, v)| v * std[k % (2 * n)] + mean[k % (2 * n)])
                .collect();
        }
        let batch = out.rows() / n;
        let mut y = vec![0.0; batch * 2 * n];
        for b in 0..batch {
            for i in 0..n {
                for c in 0..2 {
                    let k = c * n + i;
                    y[b * 2 * n + k] = out[(b * n + i, c)] * std[k] + mean[k];
                }
            }
        }
        y
    }

    /// Records the network on `tape`, reading weights through `tape`'s store.
    /// Returns the normalized output and, for GAT, the per-layer attention
    /// coefficients (`batch × edges`).
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<(Var, Vec<Var>), NnError> {
        let act = self.spec.activation;
        let mut h = x;
        let mut attention = Vec::new();
        for layer in &self.layers {
            let w = tape.param(layer.w);
            let b = tape.param(layer.b);
            let z = tape.matmul(h, w)?;
            let pre = match (self.spec.kind, &self.graph) {
                (ModelKind::Fcnn, _) => z,
                (ModelKind::Gnn, Some(g)) => tape.propagate(z, g.a_hat())?,
                (ModelKind::Gat, Some(g)) => {
                    let a = tape.param(layer.att.expect("gat layer"));
                    let scores = tape.matmul(z, a)?;
                    let e = tape.edge_scores(scores, g.attention_edges())?;
                    let e = tape.activation(e, self.spec.attention_activation);
                    let lambda = tape.edge_softmax(e, g.attention_edges())?;
                    attention.push(lambda);
                    tape.edge_aggregate(lambda, z, g.attention_edges())?
                }
                _ => unreachable!("graph models always carry a topology"),
            };
            let pre = tape.add_bias(pre, b)?;
            h = tape.activation(pre, act);
        }
        let w = tape.param(self.head.w);
        let b = tape.param(self.head.b);
        let z = tape.matmul(h, w)?;
        Ok((tape.add_bias(z, b)?, attention))
    }

    /// Normalized-space MSE and its gradients with weights taken from `params`.
    pub fn loss_and_grads(&self, params: &ParamStore, x: &Tensor, y: &Tensor) -> Result<(f64, Gradients), NnError> {
        let mut tape = Tape::new(params);
        let xv = tape.input_ref(x);
        let (out, _) = self.forward(&mut tape, xv)?;
        let l = tape.mse_loss(out, y)?;
        Ok((tape.scalar(l), tape.backward(l)?))
    }

    fn loss_only(&self, params: &ParamStore, x: &Tensor, y: &Tensor) -> Result<f64, NnError> {
        let mut tape = Tape::new(params);
        let xv = tape.input_ref(x);
        let (out, _) = self.forward(&mut tape, xv)?;
        let l = tape.mse_loss(out, y)?;
        Ok(tape.scalar(l))
    }

    /// Physical predictions for a row-major `batch × 2N` input buffer.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() % (2 * self.n_buses) != 0 {
            return Err(ModelError::WidthMismatch {
                expected: 2 * self.n_buses,
                got: x.len(),
            });
        }
        let mut y = Vec::with_capacity(x.len());
        for chunk in x.chunks(EVAL_CHUNK * 2 * self.n_buses) {
            let mut tape = Tape::new(&self.params);
            let xv = tape.input(self.encode_inputs(chunk));
            let (out, _) = self.forward(&mut tape, xv)?;
            y.extend(self.decode_outputs(tape.value(out)));
        }
        Ok(y)
    }

    /// GAT attention coefficients for one input vector, per layer, aligned
    /// with [`TopologyGraph::attention_edges`]. Empty for other kinds.
    pub fn attention(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        let input = self.encode_inputs(x);
        let mut tape = Tape::new(&self.params);
        let xv = tape.input(input);
        let (_, att) = self.forward(&mut tape, xv)?;
        Ok(att.into_iter().map(|v| tape.value(v).row(0).to_vec()).collect())
    }

    /// The same model with buses relabeled so that bus `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Model {
        let n = self.n_buses;
        let mut m = self.clone();
        for id in [self.x_mean, self.x_std, self.y_mean, self.y_std] {
            let src = self.params.value(id).data();
            let dst = m.params.value_mut(id).data_mut();
            for c in 0..2 {
                for i in 0..n {
                    dst[c * n + perm[i]] = src[c * n + i];
                }
            }
        }
        if let Some(id) = self.node_static {
            let src = self.params.value(id).clone();
            let dst = m.params.value_mut(id);
            for i in 0..n {
                dst.row_mut(perm[i]).copy_from_slice(src.row(i));
            }
        }
        m.graph = self.graph.as_ref().map(|g| g.permuted(perm));
        m
    }

    pub fn checkpoint(&self, cfg: Option<&TrainConfig>, curves: Option<&LossCurves>) -> Checkpoint {
        Checkpoint {
            model_spec: self.spec.clone(),
            n_buses: self.n_buses,
            params: self.params.to_named(),
            train_config: cfg.cloned(),
            final_losses: FinalLosses {
                train: curves.and_then(LossCurves::final_train),
                val: curves.and_then(|c| c.val.last().copied()),
                best_val: curves.and_then(LossCurves::best_val),
                best_epoch: curves.map(|c| c.best_epoch),
            },
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, case: &GridCase) -> Result<Model, ModelError> {
        if ck.n_buses != case.n_buses() {
            return Err(ModelError::WidthMismatch {
                expected: ck.n_buses,
                got: case.n_buses(),
            });
        }
        let mut m = Model::new(ck.model_spec.clone(), case, 0)?;
        m.params.load_named(&ck.params)?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalLosses {
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub best_val: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model_spec: ModelSpec,
    pub n_buses: usize,
    pub params: BTreeMap<String, Vec<Vec<f64>>>,
    pub train_config: Option<TrainConfig>,
    pub final_losses: FinalLosses,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Samples per forward pass when evaluating; keeps intermediates in cache.
const EVAL_CHUNK: usize = 200;

struct RegressionObjective<'m> {
    model: &'m Model,
    x: Tensor,
    y: Tensor,
    /// Validation batches of at most `EVAL_CHUNK` samples with their sizes.
    val: Vec<(Tensor, Tensor, usize)>,
}

impl Objective for RegressionObjective<'_> {
    fn train_loss(&self, params: &ParamStore) -> Result<(f64, Gradients), NnError> {
        self.model.loss_and_grads(params, &self.x, &self.y)
    }

    fn val_loss(&self, params: &ParamStore) -> Result<Option<f64>, NnError> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let mut total = 0.0;
        let mut count = 0;
        for (x, y, n) in &self.val {
            total += self.model.loss_only(params, x, y)? * *n as f64;
            count += n;
        }
        Ok(Some(total / count as f64))
    }
}

/// Fits normalization on `train`, then trains full batch. The model ends at
/// its validation-best state. Losses are normalized-space MSE.
pub fn train_model(
    model: &mut Model,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<LossCurves, ModelError> {
    if train.is_empty() {
        return Err(ModelError::InvalidSpec("training set is empty".into()));
    }
    model.fit_normalization(train)?;
    if let Some(v) = val {
        model.check_width(v)?;
    }
    let objective = RegressionObjective {
        model,
        x: model.encode_inputs(&train.x_rows()),
        y: model.encode_targets(&train.y_rows()),
        val: val.map_or_else(Vec::new, |v| {
            let width = 2 * model.n_buses;
            let (xs, ys) = (v.x_rows(), v.y_rows());
            xs.chunks(EVAL_CHUNK * width)
                .zip(ys.chunks(EVAL_CHUNK * width))
                .map(|(x, y)| (model.encode_inputs(x), model.encode_targets(y), x.len() / width))
                .collect()
        }),
    };
    let mut params = model.params.clone();
    let curves = nn::train(&mut params, cfg, &objective)?;
    model.params = params;
    Ok(curves)
}

/// Builds a model of `kind` with `cfg`'s activation and seed and trains it.
/// For GAT the activation also scores attention edges.
pub fn fit(
    kind: ModelKind,
    case: &GridCase,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(Model, LossCurves), ModelError> {
    let mut spec = ModelSpec::new(kind).with_activation(cfg.activation);
    if kind == ModelKind::Gat {
        spec.attention_activation = cfg.activation;
    }
    let mut model = Model::new(spec, case, cfg.seed)?;
    let curves = train_model(&mut model, train, val, cfg)?;
    Ok((model, curves))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// MSE over the 2N outputs of each sample.
    pub per_sample_mse: Vec<f64>,
    /// Mean of `per_sample_mse`.
    pub mse: f64,
    /// NRMSE averaged over output dimensions whose truth varies; `None` when
    /// no dimension varies.
    pub nrmse: Option<f64>,
    pub nrmse_dims: Vec<usize>,
    /// Row-major `len × 2N` predictions.
    pub predictions: Vec<f64>,
}

/// Evaluates every sample of `ds` in physical units. Output dimensions that
/// are constant in the truth (the slack angle and regulated magnitudes) carry
/// no range and are excluded from the NRMSE average.
pub fn predict_dataset(model: &Model, ds: &Dataset) -> Result<Prediction, ModelError> {
    model.check_width(ds)?;
    let width = 2 * model.n_buses;
    let predictions = model.predict(&ds.x_rows())?;
    let truth = ds.y_rows();
    let per_sample_mse: Vec<f64> = predictions
        .chunks(width)
        .zip(truth.chunks(width))
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / width as f64)
        .collect();
    let mse = per_sample_mse.iter().sum::<f64>() / per_sample_mse.len() as f64;
    let pt = Tensor::from_vec(ds.len(), width, predictions.clone())?;
    let tt = Tensor::from_vec(ds.len(), width, truth)?;
    let (nrmse, nrmse_dims) = match nrmse_varying(&pt, &tt) {
        Ok((v, dims)) => (Some(v), dims),
        Err(NnError::DegenerateRange { .. }) => (None, Vec::new()),
        Err(e) => return Err(e.into()),
    };
    Ok(Prediction {
        per_sample_mse,
        mse,
        nrmse,
        nrmse_dims,
        predictions,
    })
}
