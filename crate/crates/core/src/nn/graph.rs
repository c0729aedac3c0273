/// Weighted edge lists grouped by target node (CSR layout).
///
/// Edge `e` in `offsets[i]..offsets[i + 1]` carries a message from
/// `sources[e]` into node `i` with weight `weights[e]`. Graph operators on a
/// [`Tape`](super::Tape) apply the same adjacency to every sample of a batch
/// whose rows are laid out as `sample * n + node`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    n: usize,
    offsets: Vec<usize>,
    sources: Vec<usize>,
    weights: Vec<f64>,
}

impl Adjacency {
    /// Builds from per-target `(source, weight)` lists.
    pub fn from_lists(lists: &[Vec<(usize, f64)>]) -> Self {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut sources = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for list in lists {
            for &(j, w) in list {
                assert!(j < n, "edge source {j} out of range for {n} nodes");
                sources.push(j);
                weights.push(w);
            }
            offsets.push(sources.len());
        }
        Adjacency {
            n,
            offsets,
            sources,
            weights,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.sources.len()
    }

    pub fn edge_range(&self, target: usize) -> std::ops::Range<usize> {
        self.offsets[target]..self.offsets[target + 1]
    }

    pub fn source(&self, edge: usize) -> usize {
        self.sources[edge]
    }

    pub fn weight(&self, edge: usize) -> f64 {
        self.weights[edge]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(target, source)` of every edge, in storage order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.edge_range(i).map(move |e| (i, self.sources[e])))
    }

    /// Relabels nodes: node `i` becomes `perm[i]`. Edge order within each
    /// target follows the original order.
    pub fn permuted(&self, perm: &[usize]) -> Adjacency {
        let mut lists = vec![Vec::new(); self.n];
        for i in 0..self.n {
            lists[perm[i]] = self
                .edge_range(i)
                .map(|e| (perm[self.sources[e]], self.weights[e]))
                .collect();
        }
        Adjacency::from_lists(&lists)
    }
}
