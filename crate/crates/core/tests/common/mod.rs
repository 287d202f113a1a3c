#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gdr_core::graph::SparseGraph;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected undirected graph: a random spanning tree plus extra edges with
/// weights in [0.5, 2).
pub fn random_connected(n: usize, extra: usize, seed: u64) -> SparseGraph {
    let mut r = rng(seed);
    let mut pairs = Vec::new();
    for v in 1..n {
        let u = r.gen_range(0..v);
        pairs.push((u, v, r.gen_range(0.5..2.0)));
    }
    for _ in 0..extra {
        let u = r.gen_range(0..n);
        let v = r.gen_range(0..n);
        if u != v {
            pairs.push((u.min(v), u.max(v), r.gen_range(0.5..2.0)));
        }
    }
    pairs.sort_by_key(|e| (e.0, e.1));
    pairs.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1));
    SparseGraph::undirected_from_pairs(n, pairs).unwrap()
}

/// Random directed graph with unit weights; some nodes may be dangling.
pub fn random_directed(n: usize, arcs: usize, seed: u64) -> SparseGraph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for _ in 0..arcs {
        let u = r.gen_range(0..n);
        let v = r.gen_range(0..n);
        if u != v && !edges.iter().any(|&(a, b, _)| (a, b) == (u, v)) {
            edges.push((u, v, 1.0));
        }
    }
    SparseGraph::new(n, edges, true).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.gen_range(-1.0..1.0))
}

pub fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// `e^{-tL} B` from an independent dense eigendecomposition.
pub fn dense_expm(l: &Array2<f64>, b: &Array2<f64>, t: f64) -> Array2<f64> {
    let eig = to_na(l).symmetric_eigen();
    let v = &eig.eigenvectors;
    let mut coeffs = v.transpose() * to_na(b);
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        let f = (-t * lam).exp();
        for j in 0..coeffs.ncols() {
            coeffs[(k, j)] *= f;
        }
    }
    from_na(&(v * coeffs))
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Two `k`-cliques joined by a single edge between node `k-1` and node `k`.
pub fn barbell(k: usize) -> SparseGraph {
    let mut pairs = Vec::new();
    for offset in [0, k] {
        for i in 0..k {
            for j in i + 1..k {
                pairs.push((offset + i, offset + j, 1.0));
            }
        }
    }
    pairs.push((k - 1, k, 1.0));
    SparseGraph::undirected_from_pairs(2 * k, pairs).unwrap()
}
