//! Latent model components and their prior precision blocks.

use crate::error::{LgocvError, Result};

/// Undirected neighbourhood graph for ICAR (besag) components.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph on `n` nodes from 0-indexed edges. Self-loops are
    /// rejected; duplicate edges collapse.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(LgocvError::InvalidModel(format!(
                    "graph edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(LgocvError::InvalidModel(format!("graph self-loop at node {a}")));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { neighbors })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    /// Connected components as sorted node lists, ordered by smallest node.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut comp = Vec::new();
            seen[start] = true;
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &w in &self.neighbors[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Component type. `usize` fields index the hyperparameter table
/// (precisions on log scale, AR(1) correlation on atanh scale).
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentKind {
    /// Fixed effects with an independent `N(0, 1/precision)` prior.
    Fixed {
        precision: f64,
    },
    Iid {
        log_precision: usize,
    },
    /// Stationary AR(1) with marginal precision `τ` and lag-one correlation `ρ`.
    Ar1 {
        log_precision: usize,
        rho: usize,
    },
    Rw1 {
        log_precision: usize,
        cyclic: bool,
    },
    Rw2 {
        log_precision: usize,
    },
    /// Unscaled ICAR: node degree on the diagonal, -1 between neighbours.
    Besag {
        log_precision: usize,
        graph: Graph,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentComponent {
    pub name: String,
    pub kind: ComponentKind,
    pub size: usize,
    /// Register sum-to-zero constraints for intrinsic kinds.
    pub sum_to_zero: bool,
}

impl LatentComponent {
    pub fn new(name: impl Into<String>, kind: ComponentKind, size: usize) -> Self {
        let sum_to_zero =
            matches!(kind, ComponentKind::Rw1 { .. } | ComponentKind::Rw2 { .. } | ComponentKind::Besag { .. });
        Self { name: name.into(), kind, size, sum_to_zero }
    }

    pub fn without_constraint(mut self) -> Self {
        self.sum_to_zero = false;
        self
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ComponentKind::Fixed { .. } => "fixed",
            ComponentKind::Iid { .. } => "iid",
            ComponentKind::Ar1 { .. } => "ar1",
            ComponentKind::Rw1 { .. } => "rw1",
            ComponentKind::Rw2 { .. } => "rw2",
            ComponentKind::Besag { .. } => "besag",
        }
    }

    pub fn is_intrinsic(&self) -> bool {
        self.null_space_dim() > 0
    }

    /// Dimension of the prior precision's null space.
    pub fn null_space_dim(&self) -> usize {
        match &self.kind {
            ComponentKind::Rw1 { .. } => 1,
            ComponentKind::Rw2 { .. } => 2,
            ComponentKind::Besag { graph, .. } => graph.connected_components().len(),
            _ => 0,
        }
    }

    /// Hyperparameter index of the log precision scaling the whole block, if any.
    pub fn log_precision_index(&self) -> Option<usize> {
        match self.kind {
            ComponentKind::Fixed { .. } => None,
            ComponentKind::Iid { log_precision }
            | ComponentKind::Ar1 { log_precision, .. }
            | ComponentKind::Rw1 { log_precision, .. }
            | ComponentKind::Rw2 { log_precision }
            | ComponentKind::Besag { log_precision, .. } => Some(log_precision),
        }
    }

    /// Index sets (local to the component) that receive a sum-to-zero row.
    pub fn sum_to_zero_sets(&self) -> Vec<Vec<usize>> {
        if !self.sum_to_zero {
            return Vec::new();
        }
        match &self.kind {
            ComponentKind::Rw1 { .. } | ComponentKind::Rw2 { .. } => vec![(0..self.size).collect()],
            ComponentKind::Besag { graph, .. } => graph.connected_components(),
            _ => Vec::new(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(LgocvError::InvalidModel(format!("component `{}`: {m}", self.name)));
        if self.size == 0 {
            return fail("size must be positive".into());
        }
        match &self.kind {
            ComponentKind::Fixed { precision } if !(*precision > 0.0) => {
                fail(format!("fixed-effect prior precision must be positive, got {precision}"))
            }
            ComponentKind::Rw1 { cyclic: true, .. } if self.size < 3 => {
                fail("cyclic rw1 needs at least 3 nodes".into())
            }
            ComponentKind::Rw1 { .. } if self.size < 2 => fail("rw1 needs at least 2 nodes".into()),
            ComponentKind::Rw2 { .. } if self.size < 3 => fail("rw2 needs at least 3 nodes".into()),
            ComponentKind::Besag { graph, .. } if graph.len() != self.size => {
                fail(format!("graph has {} nodes, component size is {}", graph.len(), self.size))
            }
            _ => Ok(()),
        }
    }

    /// Appends the upper-triangle entries of this component's precision
    /// block, shifted by `offset`. The emitted pattern does not depend on the
    /// hyperparameter values.
    pub fn precision_entries(&self, hypers: &[f64], offset: usize, out: &mut Vec<(usize, usize, f64)>) -> Result<()> {
        let start = out.len();
        let n = self.size;
        match &self.kind {
            ComponentKind::Fixed { precision } => {
                out.extend((0..n).map(|i| (offset + i, offset + i, *precision)));
            }
            ComponentKind::Iid { log_precision } => {
                let tau = hypers[*log_precision].exp();
                out.extend((0..n).map(|i| (offset + i, offset + i, tau)));
            }
            ComponentKind::Ar1 { log_precision, rho } => {
                let tau = hypers[*log_precision].exp();
                let rho = hypers[*rho].tanh();
                let scale = tau / (1.0 - rho * rho);
                for i in 0..n {
                    let interior = i > 0 && i + 1 < n;
                    let d = if n == 1 {
                        tau
                    } else if interior {
                        scale * (1.0 + rho * rho)
                    } else {
                        scale
                    };
                    out.push((offset + i, offset + i, d));
                    if i + 1 < n {
                        out.push((offset + i, offset + i + 1, -scale * rho));
                    }
                }
            }
            ComponentKind::Rw1 { log_precision, cyclic } => {
                let tau = hypers[*log_precision].exp();
                let mut diffs: Vec<Vec<(usize, f64)>> = (0..n - 1).map(|i| vec![(i, -1.0), (i + 1, 1.0)]).collect();
                if *cyclic {
                    diffs.push(vec![(n - 1, -1.0), (0, 1.0)]);
                }
                expand_difference_form(&diffs, tau, offset, out);
            }
            ComponentKind::Rw2 { log_precision } => {
                let tau = hypers[*log_precision].exp();
                let diffs: Vec<Vec<(usize, f64)>> =
                    (0..n - 2).map(|i| vec![(i, 1.0), (i + 1, -2.0), (i + 2, 1.0)]).collect();
                expand_difference_form(&diffs, tau, offset, out);
            }
            ComponentKind::Besag { log_precision, graph } => {
                let tau = hypers[*log_precision].exp();
                for i in 0..n {
                    let nb = graph.neighbors(i);
                    out.push((offset + i, offset + i, tau * nb.len() as f64));
                    for &j in nb.iter().filter(|&&j| j > i) {
                        out.push((offset + i, offset + j, -tau));
                    }
                }
            }
        }
        if out[start..].iter().any(|e| !e.2.is_finite()) {
            return Err(LgocvError::NonFinitePrecision { component: self.name.clone() });
        }
        Ok(())
    }
}

/// Accumulates `τ Σ_r d_r d_rᵀ` for sparse difference rows `d_r`. Every diagonal
/// entry is emitted, even when it is zero, so the block is structurally full-rank.
fn expand_difference_form(diffs: &[Vec<(usize, f64)>], tau: f64, offset: usize, out: &mut Vec<(usize, usize, f64)>) {
    for row in diffs {
        for &(a, va) in row {
            for &(b, vb) in row {
                if a <= b {
                    out.push((offset + a, offset + b, tau * va * vb));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SymmetricMatrix;

    fn dense(c: &LatentComponent, hypers: &[f64]) -> nalgebra::DMatrix<f64> {
        let mut e = Vec::new();
        c.precision_entries(hypers, 0, &mut e).unwrap();
        SymmetricMatrix::from_triplets(c.size, &e).to_dense()
    }

    #[test]
    fn rw1_tridiagonal() {
        let c = LatentComponent::new("r", ComponentKind::Rw1 { log_precision: 0, cyclic: false }, 3);
        let m = dense(&c, &[0.0]);
        let expected = nalgebra::DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(m, expected);
    }

    #[test]
    fn ar1_zero_correlation_is_diagonal() {
        let c = LatentComponent::new("u", ComponentKind::Ar1 { log_precision: 0, rho: 1 }, 4);
        let m = dense(&c, &[2.0f64.ln(), 0.0]);
        assert_eq!(m, nalgebra::DMatrix::identity(4, 4) * 2.0);
    }

    #[test]
    fn ar1_covariance_is_geometric() {
        let rho = 0.6f64;
        let c = LatentComponent::new("u", ComponentKind::Ar1 { log_precision: 0, rho: 1 }, 6);
        let cov = dense(&c, &[0.0, rho.atanh()]).try_inverse().unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expected = rho.powi((i as i32 - j as i32).abs());
                assert!((cov[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn intrinsic_null_spaces() {
        let graph = Graph::from_edges(5, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        let kinds = [
            ComponentKind::Rw1 { log_precision: 0, cyclic: false },
            ComponentKind::Rw1 { log_precision: 0, cyclic: true },
            ComponentKind::Rw2 { log_precision: 0 },
            ComponentKind::Besag { log_precision: 0, graph },
        ];
        for kind in kinds {
            let c = LatentComponent::new("x", kind, 5);
            let m = dense(&c, &[0.7]);
            for set in c.sum_to_zero_sets() {
                let mut v = nalgebra::DVector::zeros(5);
                for i in set {
                    v[i] = 1.0;
                }
                assert!((&m * v).amax() < 1e-12, "{}", c.kind_name());
            }
        }
    }

    #[test]
    fn rw2_kills_linear_trend() {
        let c = LatentComponent::new("x", ComponentKind::Rw2 { log_precision: 0 }, 6);
        let m = dense(&c, &[0.0]);
        let v = nalgebra::DVector::from_fn(6, |i, _| i as f64);
        assert!((&m * v).amax() < 1e-12);
        assert_eq!(c.null_space_dim(), 2);
    }

    #[test]
    fn graph_components() {
        let g = Graph::from_edges(5, &[(0, 1), (3, 4)]).unwrap();
        assert_eq!(g.connected_components(), vec![vec![0, 1], vec![2], vec![3, 4]]);
        assert!(Graph::from_edges(2, &[(0, 2)]).is_err());
        assert!(Graph::from_edges(2, &[(1, 1)]).is_err());
    }
}
