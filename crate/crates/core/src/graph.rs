//! Area adjacency structure and precision-matrix algebra for the spatial
//! priors: Q(tau, lambda) = tau I + lambda W*, its log-determinant and trace
//! terms, and the scale-weighted Q*(tau, S) for the Laplace hierarchy.
//!
//! Graphs are stored sparsely (edge list plus neighbor lists); factorizations
//! at desk scale (m up to a couple thousand) are dense Cholesky.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node id {id} out of range for {m} areas")]
    NodeOutOfRange { id: usize, m: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {0}-{1}")]
    DuplicateEdge(usize, usize),
    #[error("tau must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error("edge scale {index} must be positive, got {value}")]
    NonPositiveScale { index: usize, value: f64 },
    #[error("expected {expected} edge scales, got {got}")]
    ScaleCount { expected: usize, got: usize },
    #[error("factorization failed (graph corruption?)")]
    FactorizationFailed,
}

/// Symmetric binary adjacency over m areas. Edges are unordered pairs with
/// w_ij = 1; W* = diag(w_1..w_m) - W has zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    m: usize,
    edges: Vec<(usize, usize)>,
    /// Per node: (neighbor, index into `edges`).
    neighbors: Vec<Vec<(usize, usize)>>,
    degrees: Vec<usize>,
}

impl AdjacencyGraph {
    pub fn new(m: usize, raw_edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut edges = Vec::with_capacity(raw_edges.len());
        for &(a, b) in raw_edges {
            if a >= m {
                return Err(GraphError::NodeOutOfRange { id: a, m });
            }
            if b >= m {
                return Err(GraphError::NodeOutOfRange { id: b, m });
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
            }
        }
        let mut neighbors = vec![Vec::new(); m];
        let mut degrees = vec![0usize; m];
        for (idx, &(i, j)) in edges.iter().enumerate() {
            neighbors[i].push((j, idx));
            neighbors[j].push((i, idx));
            degrees[i] += 1;
            degrees[j] += 1;
        }
        Ok(AdjacencyGraph {
            m,
            edges,
            neighbors,
            degrees,
        })
    }

    pub fn empty(m: usize) -> Self {
        AdjacencyGraph::new(m, &[]).unwrap()
    }

    /// Path graph 0-1-2-...-(m-1); small-instance test fixture.
    pub fn path(m: usize) -> Self {
        let edges: Vec<_> = (1..m).map(|i| (i - 1, i)).collect();
        AdjacencyGraph::new(m, &edges).unwrap()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// delta = number of unordered adjacent pairs.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors of node i as (neighbor id, edge index) pairs.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i]
    }

    pub fn mean_degree(&self) -> f64 {
        if self.m == 0 {
            return 0.0;
        }
        2.0 * self.edges.len() as f64 / self.m as f64
    }

    /// Dense W* = diag(w_1..w_m) - W.
    pub fn wstar_dense(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.m, self.m);
        for i in 0..self.m {
            w[(i, i)] = self.degrees[i] as f64;
        }
        for &(i, j) in &self.edges {
            w[(i, j)] = -1.0;
            w[(j, i)] = -1.0;
        }
        w
    }

    /// Q(tau, lambda) = tau I + lambda W*, positive definite for tau > 0.
    pub fn precision_q(&self, tau: f64, lambda: f64) -> Result<DMatrix<f64>, GraphError> {
        if tau <= 0.0 || tau.is_nan() {
            return Err(GraphError::NonPositiveTau(tau));
        }
        if lambda < 0.0 || lambda.is_nan() {
            return Err(GraphError::NegativeLambda(lambda));
        }
        let mut q = DMatrix::zeros(self.m, self.m);
        for i in 0..self.m {
            q[(i, i)] = tau + lambda * self.degrees[i] as f64;
        }
        for &(i, j) in &self.edges {
            q[(i, j)] = -lambda;
            q[(j, i)] = -lambda;
        }
        Ok(q)
    }

    /// log |Q(tau, lambda)|.
    pub fn logdet_q(&self, tau: f64, lambda: f64) -> Result<f64, GraphError> {
        let q = self.precision_q(tau, lambda)?;
        logdet_spd(q)
    }

    /// (tr Q^-1, tr Q^-1 W*). Self-check identity:
    /// tau tr Q^-1 + lambda tr Q^-1 W* = m.
    pub fn trace_terms(&self, tau: f64, lambda: f64) -> Result<(f64, f64), GraphError> {
        let q = self.precision_q(tau, lambda)?;
        let inv = q.cholesky().ok_or(GraphError::FactorizationFailed)?.inverse();
        let tr_inv = inv.trace();
        let mut tr_inv_w = 0.0;
        for i in 0..self.m {
            tr_inv_w += self.degrees[i] as f64 * inv[(i, i)];
        }
        for &(i, j) in &self.edges {
            tr_inv_w -= 2.0 * inv[(i, j)];
        }
        Ok((tr_inv, tr_inv_w))
    }

    /// (log |Q|, tr Q^-1, tr Q^-1 W*) from a single factorization; the MALA
    /// update needs all three per evaluation.
    pub fn logdet_and_traces(&self, tau: f64, lambda: f64) -> Result<(f64, f64, f64), GraphError> {
        let q = self.precision_q(tau, lambda)?;
        let ch = q.cholesky().ok_or(GraphError::FactorizationFailed)?;
        let mut ld = 0.0;
        for i in 0..self.m {
            ld += ch.l_dirty()[(i, i)].ln();
        }
        let inv = ch.inverse();
        let tr_inv = inv.trace();
        let mut tr_inv_w = 0.0;
        for i in 0..self.m {
            tr_inv_w += self.degrees[i] as f64 * inv[(i, i)];
        }
        for &(i, j) in &self.edges {
            tr_inv_w -= 2.0 * inv[(i, j)];
        }
        Ok((2.0 * ld, tr_inv, tr_inv_w))
    }

    /// Q*(tau, S) = tau I + diag(s~_1..s~_m) - S~ with s~_ij = 1/s_ij on
    /// edges. With all s_ij = 1/lambda this reproduces Q(tau, lambda).
    pub fn precision_qstar(
        &self,
        tau: f64,
        scales: &EdgeScales,
    ) -> Result<DMatrix<f64>, GraphError> {
        if tau <= 0.0 || tau.is_nan() {
            return Err(GraphError::NonPositiveTau(tau));
        }
        scales.check(self)?;
        let mut q = DMatrix::zeros(self.m, self.m);
        for i in 0..self.m {
            q[(i, i)] = tau;
        }
        for (idx, &(i, j)) in self.edges.iter().enumerate() {
            let w = 1.0 / scales.s[idx];
            q[(i, i)] += w;
            q[(j, j)] += w;
            q[(i, j)] -= w;
            q[(j, i)] -= w;
        }
        Ok(q)
    }

    pub fn logdet_qstar(&self, tau: f64, scales: &EdgeScales) -> Result<f64, GraphError> {
        let q = self.precision_qstar(tau, scales)?;
        logdet_spd(q)
    }
}

/// One positive latent scale per edge, aligned with `AdjacencyGraph::edges`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScales {
    pub s: Vec<f64>,
}

impl EdgeScales {
    pub fn new(s: Vec<f64>) -> Result<Self, GraphError> {
        for (index, &value) in s.iter().enumerate() {
            if value <= 0.0 || !value.is_finite() {
                return Err(GraphError::NonPositiveScale { index, value });
            }
        }
        Ok(EdgeScales { s })
    }

    pub fn constant(graph: &AdjacencyGraph, value: f64) -> Result<Self, GraphError> {
        EdgeScales::new(vec![value; graph.edge_count()])
    }

    pub fn delta(&self) -> usize {
        self.s.len()
    }

    fn check(&self, graph: &AdjacencyGraph) -> Result<(), GraphError> {
        if self.s.len() != graph.edge_count() {
            return Err(GraphError::ScaleCount {
                expected: graph.edge_count(),
                got: self.s.len(),
            });
        }
        for (index, &value) in self.s.iter().enumerate() {
            if value <= 0.0 || !value.is_finite() {
                return Err(GraphError::NonPositiveScale { index, value });
            }
        }
        Ok(())
    }
}

/// log-determinant of a symmetric positive definite matrix via Cholesky.
pub fn logdet_spd(mat: DMatrix<f64>) -> Result<f64, GraphError> {
    let ch = mat.cholesky().ok_or(GraphError::FactorizationFailed)?;
    let l = ch.l_dirty();
    let mut ld = 0.0;
    for i in 0..l.nrows() {
        ld += l[(i, i)].ln();
    }
    Ok(2.0 * ld)
}
