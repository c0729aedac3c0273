//! Similarity graphs by clustering with adaptive neighbors.
//!
//! Each sample `i` gets a probability vector `s_i` over the other samples
//! that solves `min Σ_j d_ij s_ij + γ_i s_ij²` on the simplex, which has a
//! closed form with exactly `k` nonzeros. A spectral penalty with weight `λ`
//! then pulls the graph toward exactly `c` connected components.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::grid::UnionFind;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CanError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("rank constraint not met: reached {achieved_c} components")]
    RankNotAchieved { achieved_c: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
}

/// Edges with `s_ij + s_ji` above this count as connected.
pub const EDGE_EPS: f64 = 1e-10;

/// Squared distances between the rows of `z` (`n` samples × `m` features).
pub fn pairwise_distances(z: &DMatrix<f64>, metric: Metric) -> DMatrix<f64> {
    let n = z.nrows();
    let mut d = DMatrix::zeros(n, n);
    match metric {
        Metric::Euclidean => {
            for i in 0..n {
                for j in i + 1..n {
                    let v: f64 = z.row(i).iter().zip(z.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    d[(i, j)] = v;
                    d[(j, i)] = v;
                }
            }
        }
    }
    d
}

fn check_distances(d: &DMatrix<f64>) -> Result<usize, CanError> {
    let n = d.nrows();
    if n < 2 || d.ncols() != n {
        return Err(CanError::InvalidInput(format!(
            "need a square distance matrix with n >= 2, got {}x{}",
            d.nrows(),
            d.ncols()
        )));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(CanError::InvalidInput("distances must be finite".into()));
    }
    Ok(n)
}

/// Off-diagonal indices of row `i` in order of increasing distance, ties by index.
fn sorted_row(d: &DMatrix<f64>, i: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d.nrows()).filter(|&j| j != i).collect();
    idx.sort_by(|&a, &b| d[(i, a)].total_cmp(&d[(i, b)]).then(a.cmp(&b)));
    idx
}

/// Closed-form neighbor weights with `k` nonzeros per row, and the per-row
/// regularizers `γ_i` that produce them.
///
/// A row whose `k + 1` smallest distances coincide has no unique solution;
/// it spreads its weight uniformly over every sample at that distance and
/// gets `γ_i = 0`. With `k = n − 1` every row is uniform, also with `γ_i = 0`.
pub fn assign_neighbors(d: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Vec<f64>), CanError> {
    let n = check_distances(d)?;
    if k == 0 || k >= n {
        return Err(CanError::InvalidInput(format!("k must be in 1..={}, got {k}", n - 1)));
    }
    let mut s = DMatrix::zeros(n, n);
    let mut gamma = vec![0.0; n];
    for i in 0..n {
        let idx = sorted_row(d, i);
        if k == n - 1 {
            // No excluded sample to calibrate against: the limit γ → ∞ is uniform.
            idx.iter().for_each(|&j| s[(i, j)] = 1.0 / k as f64);
            continue;
        }
        let dk1 = d[(i, idx[k])];
        let head: f64 = idx[..k].iter().map(|&j| d[(i, j)]).sum();
        let denom = k as f64 * dk1 - head;
        if denom <= 1e-12 * dk1.abs().max(f64::MIN_POSITIVE) {
            let tied: Vec<usize> = idx.iter().copied().filter(|&j| d[(i, j)] == dk1).collect();
            let w = 1.0 / tied.len() as f64;
            for j in tied {
                s[(i, j)] = w;
            }
            continue;
        }
        for &j in &idx[..k] {
            s[(i, j)] = (dk1 - d[(i, j)]) / denom;
        }
        gamma[i] = denom / 2.0;
    }
    Ok((s, gamma))
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (r, &ur) in u.iter().enumerate() {
        cum += ur;
        let t = (cum - 1.0) / (r + 1) as f64;
        if ur - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `D − (S + Sᵀ)/2` with `D` the degrees of the symmetrized graph.
pub fn laplacian(s: &DMatrix<f64>) -> DMatrix<f64> {
    let w = (s + s.transpose()) * 0.5;
    let mut l = -w.clone();
    for i in 0..s.nrows() {
        l[(i, i)] += w.row(i).sum();
    }
    l
}

/// Connected components of the symmetrized graph: count and per-node labels
/// numbered in order of first appearance.
pub fn components(s: &DMatrix<f64>) -> (usize, Vec<usize>) {
    let n = s.nrows();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if s[(i, j)] + s[(j, i)] > EDGE_EPS {
                uf.union(i, j);
            }
        }
    }
    (uf.count(), uf.labels())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanGraph {
    /// Row-stochastic similarities, zero diagonal.
    pub s: DMatrix<f64>,
    pub gamma: Vec<f64>,
    pub laplacian: DMatrix<f64>,
    pub n_components: usize,
    pub labels: Vec<usize>,
    /// Spectral weight when the loop stopped.
    pub lambda: f64,
    pub outer_iterations: usize,
}

impl CanGraph {
    fn from_parts(s: DMatrix<f64>, gamma: Vec<f64>, lambda: f64, outer_iterations: usize) -> Self {
        let (n_components, labels) = components(&s);
        CanGraph {
            laplacian: laplacian(&s),
            s,
            gamma,
            n_components,
            labels,
            lambda,
            outer_iterations,
        }
    }

    /// Symmetrized edges `(i, j, s_ij)` with `i < j` and `s_ij + s_ji > EDGE_EPS`;
    /// the weight reported is `(s_ij + s_ji) / 2`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.s.nrows();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = self.s[(i, j)] + self.s[(j, i)];
                if w > EDGE_EPS {
                    out.push((i, j, w / 2.0));
                }
            }
        }
        out
    }

    /// Neighbor lists of the symmetrized graph.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.s.nrows()];
        for (i, j, _) in self.edges() {
            nb[i].push(j);
            nb[j].push(i);
        }
        nb
    }
}

fn smallest_eigenvectors(l: &DMatrix<f64>, c: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(l.clone());
    let mut order: Vec<usize> = (0..l.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    DMatrix::from_fn(l.nrows(), c, |r, col| eig.eigenvectors[(r, order[col])])
}

/// Drives the neighbor graph to exactly `c` connected components.
///
/// Each outer iteration re-solves every row on its `k` nearest neighbors with
/// distances `d_ij + λ‖f_i − f_j‖²`, where the rows of `F` are the `c`
/// smallest Laplacian eigenvectors, using the mean of the initial `γ_i`.
/// `λ` starts at that mean, doubles while there are too few components and
/// halves (keeping the previous `F`) while there are too many.
pub fn enforce_rank_constraint(
    d: &DMatrix<f64>,
    c: usize,
    k: usize,
    max_outer: usize,
) -> Result<CanGraph, CanError> {
    let n = check_distances(d)?;
    if c == 0 || c > n {
        return Err(CanError::InvalidInput(format!("c must be in 1..={n}, got {c}")));
    }
    let (mut s, gamma) = assign_neighbors(d, k)?;
    let (mut comps, _) = components(&s);
    if comps == c {
        return Ok(CanGraph::from_parts(s, gamma, 0.0, 0));
    }
    let r = {
        let mean = gamma.iter().sum::<f64>() / n as f64;
        if mean > 0.0 {
            mean
        } else {
            1.0
        }
    };
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| sorted_row(d, i)[..k].to_vec()).collect();
    let mut lambda = r;
    let mut f = smallest_eigenvectors(&laplacian(&s), c);
    for iter in 1..=max_outer {
        for i in 0..n {
            let v: Vec<f64> = neighbors[i]
                .iter()
                .map(|&j| {
                    let df: f64 = (0..c).map(|col| (f[(i, col)] - f[(j, col)]).powi(2)).sum();
                    -(d[(i, j)] + lambda * df) / (2.0 * r)
                })
                .collect();
            let p = project_simplex(&v);
            s.row_mut(i).fill(0.0);
            for (&j, w) in neighbors[i].iter().zip(p) {
                s[(i, j)] = w;
            }
        }
        comps = components(&s).0;
        log::debug!("can outer {iter}: lambda {lambda:.3e}, {comps} components");
        if comps == c {
            return Ok(CanGraph::from_parts(s, gamma, lambda, iter));
        }
        if comps < c {
            lambda *= 2.0;
            f = smallest_eigenvectors(&laplacian(&s), c);
        } else {
            lambda /= 2.0;
        }
    }
    Err(CanError::RankNotAchieved { achieved_c: comps })
}

/// Picks the neighborhood size whose local densities agree best.
///
/// With `ρ_k(i)` the inverse mean distance to the `k` nearest neighbors and
/// `r_k(i) = ρ_k(i) / mean_{j ∈ kNN(i)} ρ_k(j)`, the score of `k` is the mean
/// over samples of `min(r, 1/r)`, which is 1 when every neighborhood is as
/// dense as its members' neighborhoods. The largest score wins; near-ties
/// (relative 1e-9) go to the smaller `k`.
pub fn adaptive_k_select(d: &DMatrix<f64>, candidates: &[usize]) -> Result<usize, CanError> {
    let (best, _) = adaptive_k_scores(d, candidates)?;
    Ok(best)
}

/// Like [`adaptive_k_select`], also returning every `(k, score)`.
pub fn adaptive_k_scores(d: &DMatrix<f64>, candidates: &[usize]) -> Result<(usize, Vec<(usize, f64)>), CanError> {
    let n = check_distances(d)?;
    if candidates.is_empty() {
        return Err(CanError::InvalidInput("no candidate k".into()));
    }
    if let Some(&k) = candidates.iter().find(|&&k| k == 0 || k >= n) {
        return Err(CanError::InvalidInput(format!("candidate k = {k} outside 1..={}", n - 1)));
    }
    let sorted: Vec<Vec<usize>> = (0..n).map(|i| sorted_row(d, i)).collect();
    let mut scores = Vec::with_capacity(candidates.len());
    for &k in candidates {
        let density: Vec<f64> = (0..n)
            .map(|i| {
                let mean = sorted[i][..k].iter().map(|&j| d[(i, j)].sqrt()).sum::<f64>() / k as f64;
                if mean > 0.0 {
                    1.0 / mean
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let score = (0..n)
            .map(|i| {
                let nb = sorted[i][..k].iter().map(|&j| density[j]).sum::<f64>() / k as f64;
                if density[i].is_infinite() && nb.is_infinite() {
                    1.0
                } else {
                    let r = density[i] / nb;
                    r.min(1.0 / r)
                }
            })
            .sum::<f64>()
            / n as f64;
        scores.push((k, score));
    }
    let mut best = scores[0];
    for &(k, sc) in &scores[1..] {
        let tol = 1e-9 * best.1.abs().max(sc.abs());
        if sc > best.1 + tol || ((sc - best.1).abs() <= tol && k < best.0) {
            best = (k, sc);
        }
    }
    Ok((best.0, scores))
}
