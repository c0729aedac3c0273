//! Semi-supervised node classification with a pseudo-likelihood CRF whose
//! potentials are parameterized by graph attention, trained by variational EM.
//!
//! Two networks share one graph. `q_net` maps node attributes to a class
//! distribution and serves as the approximate posterior. `p_net` reads the
//! labels of each node's neighbors (never its own) through attention computed
//! from the attributes, so its output is the CRF conditional `p(y_i | y_nbrs, x)`.
//! The global partition function is never formed; training uses the
//! pseudo-likelihood `Σ_i log p(y_i | y_nbrs(i), x)`.

use std::fmt;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::can::{self, CanError, Metric};
use crate::datagen::{derive_seed, noise_sigma, rng_from_seed, sample_loads, DataError, MAX_REJECTIONS};
use crate::grid::{build_ybus, GridCase};
use crate::models::TopologyGraph;
use crate::nn::{self, Activation, Adjacency, Gradients, LossCurves, NnError, Objective, ParamId, ParamStore, Tape, Tensor, TrainConfig, Var};
use crate::powerflow::{solve_pf_with_ybus, LoadVector, PfOptions};

#[derive(Debug, thiserror::Error)]
pub enum SscrfError {
    #[error("invalid labeled graph: {0}")]
    InvalidGraph(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Can(#[from] CanError),
}

pub type Result<T, E = SscrfError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultClass {
    Normal,
    Faulted,
    Affected,
}

impl FaultClass {
    pub const ALL: [FaultClass; 3] = [FaultClass::Normal, FaultClass::Faulted, FaultClass::Affected];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FaultClass::Normal => "normal",
            FaultClass::Faulted => "faulted",
            FaultClass::Affected => "affected",
        };
        f.write_str(s)
    }
}

/// Synthetic voltage-depression faults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub load_variation: f64,
    /// Range of the relative magnitude drop at the faulted bus; neighbors drop by half.
    pub depression: (f64, f64),
    /// Measurement noise; `None` keeps the measurements clean.
    pub snr_db: Option<f64>,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            load_variation: 0.5,
            depression: (0.3, 0.7),
            snr_db: Some(45.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub fault_bus: usize,
    pub depression: f64,
    pub labels: Vec<FaultClass>,
    pub loads: LoadVector,
    /// Measured magnitudes and angles after the fault and noise.
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
}

/// Attribute columns of one scenario bus: magnitude, angle, `p_load`, `q_load`.
pub const FAULT_FEATURES: usize = 4;

impl FaultScenario {
    pub fn features(&self, bus: usize) -> [f64; FAULT_FEATURES] {
        [self.v_mag[bus], self.v_ang[bus], self.loads.p[bus], self.loads.q[bus]]
    }
}

/// Draws `n_scenarios` operating points, solves each, and applies one fault.
///
/// Scenario `s` uses its own RNG stream derived from a master seed drawn from
/// `rng`, so results do not depend on thread scheduling.
pub fn generate_fault_scenarios(
    case: &GridCase,
    n_scenarios: usize,
    cfg: &FaultConfig,
    rng: &mut impl Rng,
) -> Result<Vec<FaultScenario>> {
    if n_scenarios == 0 {
        return Err(SscrfError::InvalidConfig("n_scenarios must be at least 1".into()));
    }
    let (lo, hi) = cfg.depression;
    if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
        return Err(SscrfError::InvalidConfig(format!("depression range ({lo}, {hi}) must lie in [0, 1]")));
    }
    let master: u64 = rng.random();
    let ybus = build_ybus(case);
    let neighbors = case.neighbors();
    let opts = PfOptions::default();
    let sigma = cfg.snr_db.map(noise_sigma);
    (0..n_scenarios)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng_from_seed(derive_seed(master, s as u64));
            let mut rejected = 0;
            let (loads, sol) = loop {
                let loads = sample_loads(case, cfg.load_variation, &mut rng)?;
                match solve_pf_with_ybus(case, &ybus, &loads, &opts) {
                    Ok(sol) => break (loads, sol),
                    Err(source) if rejected >= MAX_REJECTIONS => {
                        return Err(DataError::Solver {
                            step: s,
                            attempts: rejected + 1,
                            source,
                        }
                        .into())
                    }
                    Err(_) => rejected += 1,
                }
            };
            let fault_bus = rng.random_range(0..case.n_buses());
            let depression = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let mut labels = vec![FaultClass::Normal; case.n_buses()];
            let mut v_mag = sol.v_mag.clone();
            labels[fault_bus] = FaultClass::Faulted;
            v_mag[fault_bus] *= 1.0 - depression;
            for &j in &neighbors[fault_bus] {
                labels[j] = FaultClass::Affected;
                v_mag[j] *= 1.0 - depression / 2.0;
            }
            let mut v_ang = sol.v_ang.clone();
            let mut loads = loads;
            if let Some(sigma) = sigma {
                for v in v_mag.iter_mut().chain(&mut v_ang).chain(&mut loads.p).chain(&mut loads.q) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += sigma * z;
                }
            }
            Ok(FaultScenario {
                fault_bus,
                depression,
                labels,
                loads,
                v_mag,
                v_ang,
            })
        })
        .collect()
}

/// Nodes, attributes and (possibly partial) labels for semi-supervised classification.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    topology: TopologyGraph,
    /// Unit-weight edges over `nbrs(i)` only, for label messages.
    neighbor_edges: Adjacency,
    x: Tensor,
    labels: Vec<Option<usize>>,
    n_classes: usize,
}

impl LabeledGraph {
    /// `neighbors` is symmetrized; self loops and duplicates are dropped.
    pub fn new(neighbors: Vec<Vec<usize>>, x: Tensor, labels: Vec<Option<usize>>, n_classes: usize) -> Result<Self> {
        let n = neighbors.len();
        if n == 0 || x.rows() != n || labels.len() != n {
            return Err(SscrfError::InvalidGraph(format!(
                "{n} nodes, {} attribute rows and {} labels must agree and be non-zero",
                x.rows(),
                labels.len()
            )));
        }
        if x.cols() == 0 || !x.all_finite() {
            return Err(SscrfError::InvalidGraph("attributes must be finite with at least one column".into()));
        }
        if n_classes < 2 {
            return Err(SscrfError::InvalidGraph("need at least two classes".into()));
        }
        let mut sym = neighbors;
        for i in 0..n {
            for k in 0..sym[i].len() {
                let j = sym[i][k];
                if j >= n {
                    return Err(SscrfError::InvalidGraph(format!("edge {i}-{j} leaves the graph")));
                }
                if !sym[j].contains(&i) {
                    sym[j].push(i);
                }
            }
        }
        let mut seen = vec![false; n_classes];
        for l in labels.iter().flatten() {
            if *l >= n_classes {
                return Err(SscrfError::InvalidGraph(format!("label {l} outside 0..{n_classes}")));
            }
            seen[*l] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(SscrfError::InvalidGraph(format!("class {c} has no labeled node")));
        }
        let topology = TopologyGraph::from_neighbors(sym);
        let neighbor_edges = Adjacency::from_lists(
            &topology
                .neighbors()
                .iter()
                .map(|l| l.iter().map(|&j| (j, 1.0)).collect())
                .collect::<Vec<_>>(),
        );
        Ok(LabeledGraph {
            topology,
            neighbor_edges,
            x,
            labels,
            n_classes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn neighbors(&self) -> &[Vec<usize>] {
        self.topology.neighbors()
    }

    pub fn labeled(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.labels[i].is_some()).collect()
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.labels[i].is_none()).collect()
    }

    /// The same graph with node `i` renamed `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n_nodes();
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let mut nbrs = vec![Vec::new(); n];
        for (i, list) in self.neighbors().iter().enumerate() {
            nbrs[perm[i]] = list.iter().map(|&j| perm[j]).collect();
        }
        let labels = (0..n).map(|p| self.labels[inv[p]]).collect();
        LabeledGraph::new(nbrs, self.x.select_rows(&inv), labels, self.n_classes).expect("relabeling keeps validity")
    }

    /// Copy with every label hidden except on `keep`.
    pub fn with_labeled(&self, truth: &[usize], keep: &[usize]) -> Result<Self> {
        let mut labels = vec![None; self.n_nodes()];
        for &i in keep {
            labels[i] = Some(truth[i]);
        }
        LabeledGraph::new(self.neighbors().to_vec(), self.x.clone(), labels, self.n_classes)
    }
}

/// Reveals the labels of `⌈fraction · n⌉` nodes chosen uniformly without replacement.
pub fn mask_labels(truth: &[usize], fraction: f64, rng: &mut impl Rng) -> Result<Vec<Option<usize>>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SscrfError::InvalidConfig(format!("label fraction must lie in (0, 1], got {fraction}")));
    }
    let n = truth.len();
    let m = ((fraction * n as f64).ceil() as usize).min(n);
    let mut labels = vec![None; n];
    for i in index::sample(rng, n, m) {
        labels[i] = Some(truth[i]);
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphSource {
    /// Bus topology, one copy per scenario.
    Topology,
    /// Adaptive-neighbor graph over standardized node attributes.
    Can,
}

impl std::str::FromStr for GraphSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "topology" => Ok(GraphSource::Topology),
            "can" => Ok(GraphSource::Can),
            other => Err(format!("unknown graph source '{other}' (expected topology or can)")),
        }
    }
}

/// One node per (scenario, bus) with [`FAULT_FEATURES`] attributes, and its true class.
pub fn scenario_nodes(scenarios: &[FaultScenario]) -> (Tensor, Vec<usize>) {
    let rows: Vec<Vec<f64>> = scenarios
        .iter()
        .flat_map(|s| (0..s.labels.len()).map(move |b| s.features(b).to_vec()))
        .collect();
    let truth = scenarios.iter().flat_map(|s| s.labels.iter().map(|l| l.index())).collect();
    (Tensor::from_rows(&rows).expect("fixed width"), truth)
}

/// Block-diagonal copies of a bus topology, one per scenario.
pub fn replicate_topology(neighbors: &[Vec<usize>], copies: usize) -> Vec<Vec<usize>> {
    let n = neighbors.len();
    (0..copies)
        .flat_map(|s| neighbors.iter().map(move |l| l.iter().map(|&j| s * n + j).collect()))
        .collect()
}

/// Adaptive-neighbor graph over the column-standardized rows of `x`.
///
/// Tries `max_outer` rounds of the rank constraint for `c` components; if that
/// fails, keeps the unconstrained `k`-neighbor graph. Returns the neighbor
/// lists and the number of components actually obtained.
pub fn can_neighbors(x: &Tensor, c: usize, k: usize, max_outer: usize) -> Result<(Vec<Vec<usize>>, usize)> {
    let (mean, std) = column_moments(x);
    let z = DMatrix::from_fn(x.rows(), x.cols(), |r, col| (x[(r, col)] - mean[col]) / std[col]);
    let d = can::pairwise_distances(&z, Metric::Euclidean);
    match can::enforce_rank_constraint(&d, c, k, max_outer) {
        Ok(g) => Ok((g.neighbors(), g.n_components)),
        Err(CanError::RankNotAchieved { achieved_c }) => {
            log::warn!("adaptive-neighbor graph reached {achieved_c} components instead of {c}; using the unconstrained graph");
            let (s, _) = can::assign_neighbors(&d, k)?;
            let (n_components, _) = can::components(&s);
            let n = x.rows();
            let neighbors = (0..n)
                .map(|i| (0..n).filter(|&j| j != i && s[(i, j)] + s[(j, i)] > can::EDGE_EPS).collect())
                .collect();
            Ok((neighbors, n_components))
        }
        Err(e) => Err(e.into()),
    }
}

fn column_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let std = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    (mean, std)
}

/// Fault scenarios as a labeled graph: returns the graph and the full truth.
pub fn fault_graph(
    case: &GridCase,
    scenarios: &[FaultScenario],
    source: GraphSource,
    can_k: usize,
    label_fraction: f64,
    rng: &mut impl Rng,
) -> Result<(LabeledGraph, Vec<usize>)> {
    let (x, truth) = scenario_nodes(scenarios);
    let neighbors = match source {
        GraphSource::Topology => replicate_topology(&case.neighbors(), scenarios.len()),
        GraphSource::Can => can_neighbors(&x, FaultClass::ALL.len(), can_k, 10)?.0,
    };
    let labels = mask_labels(&truth, label_fraction, rng)?;
    Ok((LabeledGraph::new(neighbors, x, labels, FaultClass::ALL.len())?, truth))
}

/// Blob benchmark for homophilous classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomophilousConfig {
    pub n_classes: usize,
    pub per_class: usize,
    /// Distance of blob centers from the origin, in units of the blob spread.
    pub separation: f64,
    /// Standard deviation of the attribute noise, in units of the blob spread.
    pub attribute_noise: f64,
    pub k: usize,
    pub label_fraction: f64,
}

impl Default for HomophilousConfig {
    fn default() -> Self {
        HomophilousConfig {
            n_classes: 3,
            per_class: 40,
            separation: 12.0,
            attribute_noise: 40.0,
            k: 6,
            label_fraction: 0.2,
        }
    }
}

/// Gaussian blobs whose adaptive-neighbor graph has `n_classes` components.
/// Labels are the component ids; attributes are the positions plus heavy
/// noise, so attributes alone classify poorly while the graph is pure.
pub fn homophilous_benchmark(cfg: &HomophilousConfig, seed: u64) -> Result<(LabeledGraph, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_classes * cfg.per_class;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut z = DMatrix::zeros(n, 2);
    for c in 0..cfg.n_classes {
        let t = std::f64::consts::TAU * c as f64 / cfg.n_classes as f64;
        for p in 0..cfg.per_class {
            let r = c * cfg.per_class + p;
            z[(r, 0)] = cfg.separation * t.cos() + unit.sample(&mut rng);
            z[(r, 1)] = cfg.separation * t.sin() + unit.sample(&mut rng);
        }
    }
    let graph = can::enforce_rank_constraint(&can::pairwise_distances(&z, Metric::Euclidean), cfg.n_classes, cfg.k, 50)?;
    let truth = graph.labels.clone();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|r| (0..2).map(|c| z[(r, c)] + cfg.attribute_noise * unit.sample(&mut rng)).collect())
        .collect();
    let labels = mask_labels(&truth, cfg.label_fraction, &mut rng)?;
    let g = LabeledGraph::new(graph.neighbors(), Tensor::from_rows(&rows)?, labels, cfg.n_classes)?;
    Ok((g, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfSpec {
    pub hidden: usize,
    pub n_layers: usize,
    pub activation: Activation,
    pub attention_activation: Activation,
}

impl Default for CrfSpec {
    fn default() -> Self {
        CrfSpec {
            hidden: 16,
            n_layers: 2,
            activation: Activation::Tanh,
            attention_activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone)]
struct GatLayer {
    w: ParamId,
    b: ParamId,
    att: ParamId,
}

/// GAT node classifier.
///
/// Without labels, logits are a linear head over the attention layers. With
/// labels, logits are a class bias plus `Σ_j α_ij y_j W` over the neighbors
/// `j` of `i`, where the attention `α` is computed from the hidden attribute
/// embedding. Attributes then shape which neighbors count but cannot predict
/// a node's class directly, which keeps the potential network from copying
/// the inference network's annotations.
#[derive(Debug, Clone)]
pub struct GatNet {
    params: ParamStore,
    layers: Vec<GatLayer>,
    /// Absent on the potential network, whose logits come from labels only.
    head_w: Option<ParamId>,
    head_b: ParamId,
    /// `(attention d×2, label weights C×C)`.
    label: Option<(ParamId, ParamId)>,
    x_mean: ParamId,
    x_std: ParamId,
    activation: Activation,
    attention_activation: Activation,
}

impl GatNet {
    fn new(g: &LabeledGraph, spec: &CrfSpec, with_labels: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (mean, std) = column_moments(&g.x);
        let f = g.x.cols();
        let x_mean = params.add_frozen("x_mean", Tensor::from_vec(1, f, mean).expect("width"));
        let x_std = params.add_frozen("x_std", Tensor::from_vec(1, f, std).expect("width"));
        let mut width = f;
        let mut layers = Vec::with_capacity(spec.n_layers);
        for l in 0..spec.n_layers {
            let d = spec.hidden;
            layers.push(GatLayer {
                w: params.add(&format!("layer{l}.w"), Tensor::glorot(width, d, &mut rng)),
                b: params.add(&format!("layer{l}.b"), Tensor::zeros(1, d)),
                att: params.add(&format!("layer{l}.att"), Tensor::glorot(d, 2, &mut rng)),
            });
            width = d;
        }
        let c = g.n_classes;
        let head_w = (!with_labels).then(|| params.add("head.w", Tensor::glorot(width, c, &mut rng)));
        let head_b = params.add("head.b", Tensor::zeros(1, c));
        let label = with_labels.then(|| {
            (
                params.add("label.att", Tensor::glorot(width, 2, &mut rng)),
                params.add("label.w", Tensor::glorot(c, c, &mut rng)),
            )
        });
        GatNet {
            params,
            layers,
            head_w,
            head_b,
            label,
            x_mean,
            x_std,
            activation: spec.activation,
            attention_activation: spec.attention_activation,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn reads_labels(&self) -> bool {
        self.label.is_some()
    }

    fn encode(&self, x: &Tensor) -> Tensor {
        let (mean, std) = (self.params.value(self.x_mean), self.params.value(self.x_std));
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean.data()[c]) / std.data()[c];
            }
        }
        out
    }

    /// Class logits for every node. `labels` (one-hot rows) is required
    /// exactly when the net reads neighbor labels.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, g: &'a LabeledGraph, x: Var, labels: Option<Var>) -> Result<Var> {
        let edges = g.topology.attention_edges();
        let mut h = x;
        for layer in &self.layers {
            let w = tape.param(layer.w);
            let z = tape.matmul(h, w)?;
            let a = tape.param(layer.att);
            let s = tape.matmul(z, a)?;
            let e = tape.edge_scores(s, edges)?;
            let e = tape.activation(e, self.attention_activation);
            let coef = tape.edge_softmax(e, edges)?;
            let agg = tape.edge_aggregate(coef, z, edges)?;
            let b = tape.param(layer.b);
            let pre = tape.add_bias(agg, b)?;
            h = tape.activation(pre, self.activation);
        }
        let b = tape.param(self.head_b);
        let mut logits = match self.head_w {
            Some(w) => {
                let w = tape.param(w);
                let z = tape.matmul(h, w)?;
                tape.add_bias(z, b)?
            }
            None => {
                let zero = tape.input(Tensor::zeros(g.n_nodes(), g.n_classes));
                tape.add_bias(zero, b)?
            }
        };
        match (self.label, labels) {
            (Some((att, lw)), Some(y)) => {
                let a = tape.param(att);
                let s = tape.matmul(h, a)?;
                let e = tape.edge_scores(s, &g.neighbor_edges)?;
                let e = tape.activation(e, self.attention_activation);
                let coef = tape.edge_softmax(e, &g.neighbor_edges)?;
                let msg = tape.edge_aggregate(coef, y, &g.neighbor_edges)?;
                let lw = tape.param(lw);
                let m = tape.matmul(msg, lw)?;
                logits = tape.add(logits, m)?;
            }
            (None, None) => {}
            (Some(_), None) => return Err(NnError::InvalidShape("p_net needs neighbor labels".into()).into()),
            (None, Some(_)) => return Err(NnError::InvalidShape("q_net takes no labels".into()).into()),
        }
        Ok(logits)
    }

    /// Row-normalized class probabilities with the stored weights.
    pub fn probabilities(&self, g: &LabeledGraph, labels: Option<&[usize]>) -> Result<Tensor> {
        let x = self.encode(&g.x);
        let y = labels.map(|l| one_hot(l, g.n_classes));
        let mut tape = Tape::new(&self.params);
        let xv = tape.input(x);
        let yv = y.map(|t| tape.input(t));
        let logits = self.forward(&mut tape, g, xv, yv)?;
        let p = tape.softmax_rows(logits);
        Ok(tape.value(p).clone())
    }
}

/// Conditional class distribution of every node given its neighbors' labels.
pub trait ConditionalModel {
    fn conditionals(&self, g: &LabeledGraph, labels_full: &[usize]) -> Result<Tensor>;
}

impl ConditionalModel for GatNet {
    fn conditionals(&self, g: &LabeledGraph, labels_full: &[usize]) -> Result<Tensor> {
        self.probabilities(g, self.reads_labels().then_some(labels_full))
    }
}

/// `Σ_i log p(y_i | x, y_nbrs(i))`.
pub fn crf_pseudo_likelihood(p_net: &impl ConditionalModel, g: &LabeledGraph, labels_full: &[usize]) -> Result<f64> {
    if labels_full.len() != g.n_nodes() || labels_full.iter().any(|&l| l >= g.n_classes) {
        return Err(SscrfError::InvalidGraph("labels_full must assign a valid class to every node".into()));
    }
    let p = p_net.conditionals(g, labels_full)?;
    Ok(labels_full.iter().enumerate().map(|(i, &y)| p[(i, y)].ln()).sum())
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Tensor {
    let mut t = Tensor::zeros(labels.len(), n_classes);
    for (i, &l) in labels.iter().enumerate() {
        t[(i, l)] = 1.0;
    }
    t
}

#[derive(Debug, Clone)]
pub struct CrfModel {
    pub spec: CrfSpec,
    /// Inference network over attributes.
    pub q_net: GatNet,
    /// Potential network over attributes and neighbor labels.
    pub p_net: GatNet,
}

impl CrfModel {
    pub fn new(g: &LabeledGraph, spec: CrfSpec, seed: u64) -> Result<Self> {
        if spec.n_layers == 0 || spec.hidden == 0 {
            return Err(SscrfError::InvalidConfig("need at least one hidden layer of non-zero width".into()));
        }
        Ok(CrfModel {
            spec,
            q_net: GatNet::new(g, &spec, false, derive_seed(seed, 0)),
            p_net: GatNet::new(g, &spec, true, derive_seed(seed, 1)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Annotation {
    /// Most probable `q_net` class.
    #[default]
    Argmax,
    /// A draw from the `q_net` distribution.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Budget of every `q_net` fit, including the supervised warm start.
    pub q: TrainConfig,
    /// Budget of every `p_net` fit.
    pub p: TrainConfig,
    pub n_rounds: usize,
    pub annotation: Annotation,
    /// Weight of unlabeled nodes relative to labeled ones.
    pub unlabeled_weight: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        EmConfig {
            q: cfg.clone(),
            p: cfg,
            n_rounds: 3,
            annotation: Annotation::Argmax,
            unlabeled_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 0 is the supervised warm start.
    pub round: usize,
    pub q_loss: f64,
    pub p_loss: Option<f64>,
    pub accuracy_labeled: f64,
    pub accuracy_unlabeled: Option<f64>,
    /// Accuracy on `V_U` of the `p_net` conditionals that served as E-step targets.
    pub p_accuracy_unlabeled: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmReport {
    pub rounds: Vec<RoundReport>,
    /// Training losses of every `q_net` fit, concatenated.
    pub q_losses: Vec<f64>,
    /// Training losses of every `p_net` fit, concatenated.
    pub p_losses: Vec<f64>,
}

/// Inverse-frequency class weights over the labeled nodes, normalized to mean 1
/// under the labeled distribution. Only rows with true labels are weighted;
/// pseudo-labeled rows use [`EmConfig::unlabeled_weight`].
pub fn class_weights(g: &LabeledGraph) -> Vec<f64> {
    let mut counts = vec![0usize; g.n_classes];
    for l in g.labels.iter().flatten() {
        counts[*l] += 1;
    }
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { total as f64 / (g.n_classes * c) as f64 })
        .collect()
}

struct ClassObjective<'g> {
    net: &'g GatNet,
    g: &'g LabeledGraph,
    x: Tensor,
    labels_in: Option<Tensor>,
    targets: Tensor,
    weights: Vec<f64>,
}

impl Objective for ClassObjective<'_> {
    fn train_loss(&self, params: &ParamStore) -> Result<(f64, Gradients), NnError> {
        let mut tape = Tape::new(params);
        let x = tape.input_ref(&self.x);
        let y = self.labels_in.as_ref().map(|t| tape.input_ref(t));
        let logits = self.net.forward(&mut tape, self.g, x, y).map_err(nn_error)?;
        let loss = tape.cross_entropy(logits, &self.targets, &self.weights)?;
        Ok((tape.scalar(loss), tape.backward(loss)?))
    }

    fn val_loss(&self, _: &ParamStore) -> Result<Option<f64>, NnError> {
        Ok(None)
    }
}

fn nn_error(e: SscrfError) -> NnError {
    match e {
        SscrfError::Nn(e) => e,
        other => NnError::InvalidConfig(other.to_string()),
    }
}

fn fit_net(
    net: &mut GatNet,
    g: &LabeledGraph,
    labels_in: Option<Tensor>,
    targets: Tensor,
    weights: Vec<f64>,
    cfg: &TrainConfig,
) -> Result<LossCurves> {
    let objective = ClassObjective {
        net,
        g,
        x: net.encode(&g.x),
        labels_in,
        targets,
        weights,
    };
    let mut params = net.params.clone();
    let curves = nn::train(&mut params, cfg, &objective)?;
    net.params = params;
    Ok(curves)
}

/// Targets and weights of the labeled nodes; unlabeled rows are zero.
fn labeled_targets(g: &LabeledGraph) -> (Tensor, Vec<f64>) {
    let cw = class_weights(g);
    let mut t = Tensor::zeros(g.n_nodes(), g.n_classes);
    let mut w = vec![0.0; g.n_nodes()];
    for (i, l) in g.labels.iter().enumerate() {
        if let Some(l) = *l {
            t[(i, l)] = 1.0;
            w[i] = cw[l];
        }
    }
    (t, w)
}

/// Cross-entropy training of `q_net` on the labeled nodes only.
pub fn train_supervised(q_net: &mut GatNet, g: &LabeledGraph, cfg: &TrainConfig) -> Result<LossCurves> {
    let (t, w) = labeled_targets(g);
    fit_net(q_net, g, None, t, w, cfg)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn accuracy(pred: &[usize], truth: &[usize], nodes: &[usize]) -> Option<f64> {
    (!nodes.is_empty()).then(|| nodes.iter().filter(|&&i| pred[i] == truth[i]).count() as f64 / nodes.len() as f64)
}

/// Variational EM.
///
/// A supervised warm start fits `q_net` to the labeled nodes. Each of the
/// `n_rounds` rounds then runs an M-step, fitting `p_net` by pseudo-likelihood
/// on labels that are true on `V_L` and annotated by `q_net` on `V_U`, and an
/// E-step, fitting `q_net` to the true labels on `V_L` and to `p_net`'s
/// conditionals on `V_U`. With `n_rounds = 0` nothing is trained.
///
/// `truth`, when given, only feeds the unlabeled accuracy in the report.
pub fn em_train(model: &mut CrfModel, g: &LabeledGraph, cfg: &EmConfig, truth: Option<&[usize]>) -> Result<EmReport> {
    if !(cfg.unlabeled_weight >= 0.0 && cfg.unlabeled_weight.is_finite()) {
        return Err(SscrfError::InvalidConfig("unlabeled_weight must be finite and non-negative".into()));
    }
    if truth.is_some_and(|t| t.len() != g.n_nodes()) {
        return Err(SscrfError::InvalidConfig("truth must cover every node".into()));
    }
    let mut report = EmReport::default();
    if cfg.n_rounds == 0 {
        return Ok(report);
    }
    let labeled = g.labeled();
    let unlabeled = g.unlabeled();
    let cw = class_weights(g);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.q.seed, 0xE5));
    let record = |model: &CrfModel, round, q_loss, p_loss, p_pred: Option<&[usize]>| -> Result<RoundReport> {
        let pred = predict_labels(model, g)?.labels;
        let truth_or_labels: Vec<usize> = match truth {
            Some(t) => t.to_vec(),
            None => g.labels.iter().map(|l| l.unwrap_or(usize::MAX)).collect(),
        };
        Ok(RoundReport {
            round,
            q_loss,
            p_loss,
            accuracy_labeled: accuracy(&pred, &truth_or_labels, &labeled).unwrap_or(0.0),
            accuracy_unlabeled: truth.and_then(|t| accuracy(&pred, t, &unlabeled)),
            p_accuracy_unlabeled: truth.zip(p_pred).and_then(|(t, p)| accuracy(p, t, &unlabeled)),
        })
    };

    let curves = train_supervised(&mut model.q_net, g, &cfg.q)?;
    report.q_losses.extend(&curves.train);
    report.rounds.push(record(model, 0, curves.final_train().unwrap_or(f64::NAN), None, None)?);

    for round in 1..=cfg.n_rounds {
        let q = model.q_net.probabilities(g, None)?;
        let annotated: Vec<usize> = (0..g.n_nodes())
            .map(|i| match (g.labels[i], cfg.annotation) {
                (Some(l), _) => l,
                (None, Annotation::Argmax) => argmax(q.row(i)),
                (None, Annotation::Sample) => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    q.row(i).iter().position(|&p| {
                        acc += p;
                        u < acc
                    })
                    .unwrap_or(g.n_classes - 1)
                }
            })
            .collect();
        let y = one_hot(&annotated, g.n_classes);
        let pw: Vec<f64> = (0..g.n_nodes())
            .map(|i| match g.labels[i] {
                Some(l) => cw[l],
                None => cfg.unlabeled_weight,
            })
            .collect();
        let p_curves = fit_net(&mut model.p_net, g, Some(y.clone()), y, pw, &cfg.p)?;
        report.p_losses.extend(&p_curves.train);

        let p = model.p_net.probabilities(g, Some(&annotated))?;
        let (mut t, mut w) = labeled_targets(g);
        for &i in &unlabeled {
            t.row_mut(i).copy_from_slice(p.row(i));
            w[i] = cfg.unlabeled_weight;
        }
        let q_curves = fit_net(&mut model.q_net, g, None, t, w, &cfg.q)?;
        report.q_losses.extend(&q_curves.train);
        let p_pred: Vec<usize> = (0..g.n_nodes()).map(|i| argmax(p.row(i))).collect();
        report.rounds.push(record(
            model,
            round,
            q_curves.final_train().unwrap_or(f64::NAN),
            p_curves.final_train(),
            Some(&p_pred),
        )?);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelPrediction {
    pub probabilities: Tensor,
    pub labels: Vec<usize>,
}

/// `q_net` class distribution and its argmax for every node.
pub fn predict_labels(model: &CrfModel, g: &LabeledGraph) -> Result<LabelPrediction> {
    let probabilities = model.q_net.probabilities(g, None)?;
    let labels = (0..g.n_nodes()).map(|i| argmax(probabilities.row(i))).collect();
    Ok(LabelPrediction { probabilities, labels })
}

/// `m[t][p]` counts nodes of true class `t` predicted as `p`, over `nodes`.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], nodes: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n_classes]; n_classes];
    for &i in nodes {
        m[truth[i]][pred[i]] += 1;
    }
    m
}
