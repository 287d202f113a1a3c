//! Graphs and the node operators built from them: the combinatorial
//! Laplacian, the self-loop normalized GCN operator, the teleporting directed
//! transition matrix, its Pagerank vector and the symmetrized directed
//! Laplacian.

use ndarray::{Array2, ArrayView2, Axis};
use sha2::{Digest, Sha256};

use crate::error::{GdrError, Result};
use crate::sparse::CsrMatrix;

/// Teleportation parameter used when none is configured.
pub const DEFAULT_ALPHA: f64 = 0.85;

const PAGERANK_TOL: f64 = 1e-12;
const PAGERANK_MAX_ITER: usize = 100_000;

/// A weighted edge `src -> dst`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Weighted adjacency matrix of a directed or undirected graph.
///
/// Edges are kept sorted by `(src, dst)` with duplicates summed. An
/// undirected graph stores both orientations of every edge and its
/// adjacency matrix is exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n_nodes: usize,
    edges: Vec<Edge>,
    directed: bool,
}

impl SparseGraph {
    pub fn new(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        directed: bool,
    ) -> Result<Self> {
        let mut raw: Vec<(usize, usize, f64)> = Vec::new();
        for (src, dst, weight) in edges {
            if src >= n_nodes || dst >= n_nodes {
                return Err(GdrError::Input(format!(
                    "edge ({src}, {dst}) references a node outside [0, {n_nodes})"
                )));
            }
            if !weight.is_finite() || weight < 0.0 {
                return Err(GdrError::Input(format!(
                    "edge ({src}, {dst}) has invalid weight {weight}"
                )));
            }
            raw.push((src, dst, weight));
        }
        raw.sort_by_key(|e| (e.0, e.1));
        let mut edges: Vec<Edge> = Vec::with_capacity(raw.len());
        for (src, dst, weight) in raw {
            match edges.last_mut() {
                Some(last) if last.src == src && last.dst == dst => last.weight += weight,
                _ => edges.push(Edge { src, dst, weight }),
            }
        }
        let graph = SparseGraph {
            n_nodes,
            edges,
            directed,
        };
        if !directed && graph.adjacency().asymmetry() != 0.0 {
            return Err(GdrError::Input(
                "undirected graph must list both orientations of every edge with equal weights".into(),
            ));
        }
        Ok(graph)
    }

    /// Undirected graph from a list of unordered pairs; both orientations are
    /// inserted for every pair.
    pub fn undirected_from_pairs(
        n_nodes: usize,
        pairs: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut edges = Vec::new();
        for (a, b, w) in pairs {
            edges.push((a, b, w));
            if a != b {
                edges.push((b, a, w));
            }
        }
        SparseGraph::new(n_nodes, edges, false)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Edge count `M`: stored arcs for directed graphs, unordered pairs
    /// (self-loops included once) for undirected graphs.
    pub fn n_edges(&self) -> usize {
        if self.directed {
            self.edges.len()
        } else {
            self.edges.iter().filter(|e| e.src <= e.dst).count()
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn adjacency(&self) -> CsrMatrix {
        let triplets: Vec<_> = self.edges.iter().map(|e| (e.src, e.dst, e.weight)).collect();
        CsrMatrix::from_triplets(self.n_nodes, self.n_nodes, &triplets)
    }

    /// Weighted out-degrees `A·1`.
    pub fn out_degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_nodes];
        for e in &self.edges {
            d[e.src] += e.weight;
        }
        d
    }

    /// Graph with every edge reversed. The directed flag is preserved.
    pub fn transpose(&self) -> SparseGraph {
        let edges = self.edges.iter().map(|e| (e.dst, e.src, e.weight));
        SparseGraph::new(self.n_nodes, edges, self.directed).expect("transpose of a valid graph")
    }

    /// Undirected graph with weight `max(A_ij, A_ji)` on every pair.
    pub fn symmetrized(&self) -> SparseGraph {
        if !self.directed {
            return self.clone();
        }
        let mut pairs = std::collections::BTreeMap::new();
        for e in &self.edges {
            for key in [(e.src, e.dst), (e.dst, e.src)] {
                let w = pairs.entry(key).or_insert(0.0f64);
                *w = w.max(e.weight);
            }
        }
        SparseGraph::new(
            self.n_nodes,
            pairs.into_iter().map(|((i, j), v)| (i, j, v)),
            false,
        )
        .expect("symmetrized graph is symmetric")
    }

    /// Same edges with the directed flag set, for use with directed operators.
    pub fn as_directed(&self) -> SparseGraph {
        SparseGraph {
            directed: true,
            ..self.clone()
        }
    }

    /// Short content hash of the canonical edge list.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.n_nodes.to_le_bytes());
        hasher.update([self.directed as u8]);
        for e in &self.edges {
            hasher.update(e.src.to_le_bytes());
            hasher.update(e.dst.to_le_bytes());
            hasher.update(e.weight.to_bits().to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Laplacian,
    GcnHat,
    Pdir,
    Ldir,
    LdirTranspose,
}

/// Rank-one term `u vᵀ`.
#[derive(Debug, Clone, PartialEq)]
struct RankOne {
    u: Vec<f64>,
    v: Vec<f64>,
}

/// An `N × N` operator on node-indexed matrices, stored as a sparse matrix plus
/// a small number of rank-one corrections (teleportation makes `P_dir` and
/// `L_dir` dense, but only through rank-one terms).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearNodeOperator {
    kind: OperatorKind,
    sparse: CsrMatrix,
    low_rank: Vec<RankOne>,
    alpha: Option<f64>,
    source_digest: String,
}

impl LinearNodeOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.sparse.nrows()
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn sparse_part(&self) -> &CsrMatrix {
        &self.sparse
    }

    pub fn has_low_rank(&self) -> bool {
        !self.low_rank.is_empty()
    }

    /// Operators whose kind guarantees symmetry when built from an undirected
    /// graph (or always, for the directed Laplacians).
    pub fn is_symmetric(&self) -> bool {
        match self.kind {
            OperatorKind::Ldir | OperatorKind::LdirTranspose => true,
            OperatorKind::Laplacian => true,
            OperatorKind::GcnHat | OperatorKind::Pdir => {
                !self.has_low_rank() && self.sparse.asymmetry() == 0.0
            }
        }
    }

    /// `self · b`.
    pub fn apply(&self, b: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = self.sparse.mul_dense(b);
        for term in &self.low_rank {
            add_rank_one(&mut out, &term.u, &term.v, b);
        }
        out
    }

    /// `selfᵀ · b`.
    pub fn apply_transpose(&self, b: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = self.sparse.transpose_mul_dense(b);
        for term in &self.low_rank {
            add_rank_one(&mut out, &term.v, &term.u, b);
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = self.sparse.to_dense();
        for term in &self.low_rank {
            for (i, &ui) in term.u.iter().enumerate() {
                for (j, &vj) in term.v.iter().enumerate() {
                    dense[(i, j)] += ui * vj;
                }
            }
        }
        dense
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = self.sparse.row_sums();
        for term in &self.low_rank {
            let vsum: f64 = term.v.iter().sum();
            for (s, &ui) in sums.iter_mut().zip(&term.u) {
                *s += ui * vsum;
            }
        }
        sums
    }

    /// Upper bound on the spectral radius (largest absolute row sum).
    pub fn norm_bound(&self) -> f64 {
        let n = self.n();
        let mut rows: Vec<f64> = (0..n)
            .map(|i| self.sparse.row(i).1.iter().map(|v| v.abs()).sum())
            .collect();
        for term in &self.low_rank {
            let vnorm: f64 = term.v.iter().map(|v| v.abs()).sum();
            for (r, &ui) in rows.iter_mut().zip(&term.u) {
                *r += ui.abs() * vnorm;
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    /// Trace of the operator.
    pub fn trace(&self) -> f64 {
        let mut tr: f64 = self.sparse.diagonal().iter().sum();
        for term in &self.low_rank {
            tr += term.u.iter().zip(&term.v).map(|(a, b)| a * b).sum::<f64>();
        }
        tr
    }

    /// The same operator multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> LinearNodeOperator {
        let mut out = self.clone();
        out.sparse = self.sparse.map_values(|v| v * factor);
        for term in &mut out.low_rank {
            term.u.iter_mut().for_each(|x| *x *= factor);
        }
        out
    }
}

fn add_rank_one(out: &mut Array2<f64>, u: &[f64], v: &[f64], b: &ArrayView2<f64>) {
    // u (vᵀ b)
    let v = ndarray::ArrayView1::from(v);
    let vb = v.dot(b);
    for (mut row, &ui) in out.axis_iter_mut(Axis(0)).zip(u) {
        if ui != 0.0 {
            row.scaled_add(ui, &vb);
        }
    }
}

/// Combinatorial Laplacian `L = D − A`.
pub fn build_laplacian(g: &SparseGraph) -> Result<LinearNodeOperator> {
    if g.is_directed() {
        return Err(GdrError::LaplacianRequiresUndirected);
    }
    let a = g.adjacency();
    let d = CsrMatrix::diagonal_matrix(&g.out_degrees());
    Ok(LinearNodeOperator {
        kind: OperatorKind::Laplacian,
        sparse: d.linear_combination(1.0, &a, -1.0),
        low_rank: Vec::new(),
        alpha: None,
        source_digest: g.digest(),
    })
}

/// `Â = D̄^{-1/2} (I + A) D̄^{-1/2}` with `D̄ = diag((I + A)·1)`.
///
/// For a directed graph the row sums are out-degrees, so applying this to `Aᵀ`
/// gives the backward operator of the bidirectional model.
pub fn build_gcn_operator(g: &SparseGraph) -> LinearNodeOperator {
    let a_bar = g
        .adjacency()
        .linear_combination(1.0, &CsrMatrix::identity(g.n_nodes()), 1.0);
    let inv_sqrt: Vec<f64> = a_bar.row_sums().iter().map(|d| 1.0 / d.sqrt()).collect();
    LinearNodeOperator {
        kind: OperatorKind::GcnHat,
        sparse: a_bar.scale(&inv_sqrt, &inv_sqrt),
        low_rank: Vec::new(),
        alpha: None,
        source_digest: g.digest(),
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(GdrError::Parameter(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )))
    }
}

/// Teleporting random-walk transition matrix
/// `P_dir = α D_out⁺ A + ((1−α) I + α diag(𝟙₀(A·1))) 𝟙𝟙ᵀ/N`.
///
/// A node is dangling iff its weighted out-degree is exactly zero; its mass is
/// redistributed uniformly at every step.
pub fn build_pdir(g: &SparseGraph, alpha: f64) -> Result<LinearNodeOperator> {
    check_alpha(alpha)?;
    let n = g.n_nodes();
    let out = g.out_degrees();
    let inv: Vec<f64> = out
        .iter()
        .map(|&d| if d > 0.0 { alpha / d } else { 0.0 })
        .collect();
    let sparse = g.adjacency().scale(&inv, &vec![1.0; n]);
    let teleport: Vec<f64> = out
        .iter()
        .map(|&d| {
            let dangling = if d == 0.0 { alpha } else { 0.0 };
            ((1.0 - alpha) + dangling) / n as f64
        })
        .collect();
    let low_rank = if teleport.iter().any(|&x| x != 0.0) {
        vec![RankOne {
            u: teleport,
            v: vec![1.0; n],
        }]
    } else {
        Vec::new()
    };
    Ok(LinearNodeOperator {
        kind: OperatorKind::Pdir,
        sparse,
        low_rank,
        alpha: Some(alpha),
        source_digest: g.digest(),
    })
}

/// Stationary distribution of a transition operator together with its
/// teleportation parameter and final residual `‖φᵀP − φᵀ‖₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct PagerankVector {
    pub values: Vec<f64>,
    pub alpha: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn left_step(p: &LinearNodeOperator, phi: &[f64]) -> Vec<f64> {
    let col = ndarray::Array2::from_shape_vec((phi.len(), 1), phi.to_vec()).unwrap();
    p.apply_transpose(&col.view()).into_raw_vec_and_offset().0
}

/// Perron left eigenvector of `P_dir` by power iteration from the uniform
/// vector, normalized to sum 1.
///
/// Without teleportation (`α = 1`) the chain may be periodic, so the lazy
/// chain `(I + P)/2`, which has the same fixed point, is iterated instead.
pub fn pagerank(p: &LinearNodeOperator) -> Result<PagerankVector> {
    if p.kind() != OperatorKind::Pdir {
        return Err(GdrError::Parameter("pagerank requires a pdir operator".into()));
    }
    let alpha = p.alpha().unwrap_or(DEFAULT_ALPHA);
    let lazy = alpha >= 1.0;
    let n = p.n();
    let mut phi = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for iteration in 0..PAGERANK_MAX_ITER {
        let next = left_step(p, &phi);
        residual = next.iter().zip(&phi).map(|(a, b)| (a - b).abs()).sum();
        if residual < PAGERANK_TOL {
            return Ok(PagerankVector {
                values: phi,
                alpha,
                residual,
                iterations: iteration,
            });
        }
        let mut updated: Vec<f64> = if lazy {
            next.iter().zip(&phi).map(|(a, b)| 0.5 * (a + b)).collect()
        } else {
            next
        };
        let total: f64 = updated.iter().sum();
        updated.iter_mut().for_each(|x| *x /= total);
        phi = updated;
    }
    Err(GdrError::PagerankNotConverged {
        iterations: PAGERANK_MAX_ITER,
        residual,
    })
}

/// Symmetric part of the directed Laplacian,
/// `L_dir = Φ − (Φ P_dir + P_dirᵀ Φ)/2` with `Φ = diag(φ)`.
pub fn build_ldir(g: &SparseGraph, alpha: f64) -> Result<LinearNodeOperator> {
    let p = build_pdir(g, alpha)?;
    let phi = pagerank(&p)?.values;
    let n = g.n_nodes();
    let ones = vec![1.0; n];
    let phi_s = p.sparse.scale(&phi, &ones);
    let sym = phi_s.linear_combination(0.5, &phi_s.transpose(), 0.5);
    let sparse = CsrMatrix::diagonal_matrix(&phi).linear_combination(1.0, &sym, -1.0);
    let mut low_rank = Vec::new();
    for term in &p.low_rank {
        let weighted: Vec<f64> = term.u.iter().zip(&phi).map(|(u, f)| -0.5 * u * f).collect();
        low_rank.push(RankOne {
            u: weighted.clone(),
            v: term.v.clone(),
        });
        low_rank.push(RankOne {
            u: term.v.clone(),
            v: weighted,
        });
    }
    Ok(LinearNodeOperator {
        kind: OperatorKind::Ldir,
        sparse,
        low_rank,
        alpha: Some(alpha),
        source_digest: g.digest(),
    })
}

/// `L_dir(Aᵀ, α)`, the directed Laplacian of the reversed graph.
pub fn build_ldir_transpose(g: &SparseGraph, alpha: f64) -> Result<LinearNodeOperator> {
    let mut op = build_ldir(&g.transpose(), alpha)?;
    op.kind = OperatorKind::LdirTranspose;
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn two_nodes() -> SparseGraph {
        SparseGraph::undirected_from_pairs(2, [(0, 1, 1.0)]).unwrap()
    }

    #[test]
    fn laplacian_two_nodes() {
        let l = build_laplacian(&two_nodes()).unwrap();
        assert_eq!(l.to_dense(), array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn laplacian_triangle() {
        let g = SparseGraph::undirected_from_pairs(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        let l = build_laplacian(&g).unwrap().to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(l[(i, j)], if i == j { 2.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn laplacian_rejects_directed() {
        let g = SparseGraph::new(2, [(0, 1, 1.0)], true).unwrap();
        let err = build_laplacian(&g).unwrap_err();
        assert_eq!(err.to_string(), "laplacian-requires-undirected");
    }

    #[test]
    fn undirected_graph_must_be_symmetric() {
        assert!(SparseGraph::new(2, [(0, 1, 1.0)], false).is_err());
        assert!(SparseGraph::new(2, [(0, 2, 1.0)], true).is_err());
        assert!(SparseGraph::new(2, [(0, 1, -1.0)], true).is_err());
    }

    #[test]
    fn duplicate_edges_are_summed_and_self_loops_kept() {
        let g = SparseGraph::new(2, [(0, 1, 1.0), (0, 1, 2.0), (1, 1, 1.0)], true).unwrap();
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.out_degrees(), vec![3.0, 1.0]);
    }

    #[test]
    fn gcn_operator_small_cases() {
        let single = SparseGraph::new(1, [], false).unwrap();
        assert_eq!(build_gcn_operator(&single).to_dense(), array![[1.0]]);
        let hat = build_gcn_operator(&two_nodes()).to_dense();
        for v in hat.iter() {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn pdir_two_cycle_without_teleport() {
        let g = SparseGraph::new(2, [(0, 1, 1.0), (1, 0, 1.0)], true).unwrap();
        let p = build_pdir(&g, 1.0).unwrap();
        assert_eq!(p.to_dense(), array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn pdir_single_dangling_node() {
        let g = SparseGraph::new(1, [], true).unwrap();
        for alpha in [0.1, 0.85, 1.0] {
            let p = build_pdir(&g, alpha).unwrap().to_dense();
            assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn pdir_dangling_target() {
        // Hand evaluation: row a = 0.85·[0,1] + 0.15·[0.5,0.5]; row b = [0.5,0.5]
        // because b is dangling and reinjects with probability 1.
        let g = SparseGraph::new(2, [(0, 1, 1.0)], true).unwrap();
        let p = build_pdir(&g, 0.85).unwrap().to_dense();
        assert_abs_diff_eq!(p[(0, 0)], 0.075, epsilon = 1e-15);
        assert_abs_diff_eq!(p[(0, 1)], 0.925, epsilon = 1e-15);
        assert_abs_diff_eq!(p[(1, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[(1, 1)], 0.5, epsilon = 1e-15);
        for s in p.sum_axis(Axis(1)) {
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn pdir_rejects_bad_alpha() {
        let g = two_nodes();
        assert!(matches!(build_pdir(&g, 0.0), Err(GdrError::Parameter(_))));
        assert!(matches!(build_pdir(&g, 1.5), Err(GdrError::Parameter(_))));
    }

    #[test]
    fn pagerank_two_cycle_is_uniform() {
        let g = SparseGraph::new(2, [(0, 1, 1.0), (1, 0, 1.0)], true).unwrap();
        let pr = pagerank(&build_pdir(&g, 0.85).unwrap()).unwrap();
        assert_abs_diff_eq!(pr.values[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(pr.values[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn pagerank_of_undirected_walk_is_degree_proportional() {
        // A path is bipartite, so the plain walk is periodic; the lazy
        // iteration must still converge to d / 2M.
        let g = SparseGraph::undirected_from_pairs(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)])
            .unwrap()
            .as_directed();
        let pr = pagerank(&build_pdir(&g, 1.0).unwrap()).unwrap();
        let expected = [1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0];
        for (a, b) in pr.values.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-11);
        }
    }

    #[test]
    fn ldir_of_single_node_is_zero() {
        let g = SparseGraph::new(1, [], true).unwrap();
        let l = build_ldir(&g, 0.85).unwrap().to_dense();
        assert_abs_diff_eq!(l[(0, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn scaled_operator() {
        let l = build_laplacian(&two_nodes()).unwrap().scaled(2.0);
        assert_eq!(l.to_dense(), array![[2.0, -2.0], [-2.0, 2.0]]);
        assert_eq!(l.trace(), 4.0);
        assert_eq!(l.norm_bound(), 4.0);
    }
}
