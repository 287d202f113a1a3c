mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use ndarray::{array, Array2};
use proptest::prelude::*;

use common::*;
use gdr_core::diffusion::{DiffusionEngine, ExpmMethod};
use gdr_core::graph::*;
use gdr_core::GdrError;

/// `P_dir` evaluated entry by entry from its defining formula.
fn pdir_oracle(g: &SparseGraph, alpha: f64) -> Array2<f64> {
    let n = g.n_nodes();
    let a = g.adjacency().to_dense();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let d: f64 = a.row(i).sum();
        for j in 0..n {
            let walk = if d > 0.0 { alpha * a[(i, j)] / d } else { 0.0 };
            let dangling = if d == 0.0 { alpha } else { 0.0 };
            p[(i, j)] = walk + ((1.0 - alpha) + dangling) / n as f64;
        }
    }
    p
}

/// Left Perron vector by solving `(Pᵀ − I) φ = 0` with the last equation
/// replaced by `Σ φ = 1`.
fn pagerank_oracle(p: &Array2<f64>) -> Vec<f64> {
    let n = p.nrows();
    let mut m = DMatrix::from_fn(n, n, |i, j| p[(j, i)] - if i == j { 1.0 } else { 0.0 });
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    m.lu().solve(&rhs).unwrap().iter().copied().collect()
}

fn ldir_oracle(g: &SparseGraph, alpha: f64) -> Array2<f64> {
    let p = pdir_oracle(g, alpha);
    let phi = pagerank_oracle(&p);
    let n = p.nrows();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let diag = if i == j { phi[i] } else { 0.0 };
            l[(i, j)] = diag - 0.5 * (phi[i] * p[(i, j)] + p[(j, i)] * phi[j]);
        }
    }
    l
}

#[test]
fn laplacian_of_triangle() {
    let g = SparseGraph::undirected_from_pairs(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
    let l = build_laplacian(&g).unwrap().to_dense();
    assert_eq!(l, array![[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]]);
}

#[test]
fn laplacian_rejects_directed_graphs() {
    let g = SparseGraph::new(2, vec![(0, 1, 1.0)], true).unwrap();
    let err = build_laplacian(&g).unwrap_err();
    assert!(matches!(err, GdrError::LaplacianRequiresUndirected));
    assert_eq!(err.to_string(), "laplacian-requires-undirected");
}

#[test]
fn gcn_operator_of_isolated_node_and_regular_graph() {
    let single = SparseGraph::new(1, vec![], false).unwrap();
    assert_eq!(build_gcn_operator(&single).to_dense(), array![[1.0]]);
    // 4-cycle is 2-regular.
    let cycle =
        SparseGraph::undirected_from_pairs(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0)]).unwrap();
    for s in build_gcn_operator(&cycle).row_sums() {
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-15);
    }
}

#[test]
fn pdir_small_cases() {
    let two_cycle = SparseGraph::new(2, vec![(0, 1, 1.0), (1, 0, 1.0)], true).unwrap();
    assert_eq!(
        build_pdir(&two_cycle, 1.0).unwrap().to_dense(),
        array![[0.0, 1.0], [1.0, 0.0]]
    );
    // a -> b with b dangling: row a = α + (1-α)/2 on b, row b teleports.
    let pair = SparseGraph::new(2, vec![(0, 1, 1.0)], true).unwrap();
    let p = build_pdir(&pair, 0.85).unwrap().to_dense();
    assert_abs_diff_eq!(p[(0, 0)], 0.075, epsilon = 1e-15);
    assert_abs_diff_eq!(p[(0, 1)], 0.925, epsilon = 1e-15);
    assert_abs_diff_eq!(p[(1, 0)], 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(p[(1, 1)], 0.5, epsilon = 1e-15);
    let lone = SparseGraph::new(1, vec![], true).unwrap();
    assert_eq!(build_pdir(&lone, 0.3).unwrap().to_dense(), array![[1.0]]);
    for alpha in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(matches!(build_pdir(&lone, alpha), Err(GdrError::Parameter(_))));
    }
}

#[test]
fn pagerank_of_dangling_pair_matches_dense_solve() {
    let g = SparseGraph::new(2, vec![(0, 1, 1.0)], true).unwrap();
    let p = build_pdir(&g, 0.85).unwrap();
    let pr = pagerank(&p).unwrap();
    let oracle = pagerank_oracle(&pdir_oracle(&g, 0.85));
    for (a, b) in pr.values.iter().zip(&oracle) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    assert!(pr.residual < 1e-10);
    assert_abs_diff_eq!(pr.values.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
}

#[test]
fn pagerank_of_two_cycle_is_uniform() {
    let g = SparseGraph::new(2, vec![(0, 1, 1.0), (1, 0, 1.0)], true).unwrap();
    let pr = pagerank(&build_pdir(&g, 0.85).unwrap()).unwrap();
    assert_abs_diff_eq!(pr.values[0], 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(pr.values[1], 0.5, epsilon = 1e-15);
}

#[test]
fn ldir_of_directed_chain_matches_dense_oracle() {
    let g = SparseGraph::new(3, vec![(0, 1, 1.0), (1, 2, 1.0)], true).unwrap();
    let l = build_ldir(&g, 0.85).unwrap().to_dense();
    let oracle = ldir_oracle(&g, 0.85);
    assert!(max_abs_diff(&l, &oracle) < 1e-12);
    assert!(max_abs_diff(&l, &l.t().to_owned()) < 1e-12);
}

#[test]
fn ldir_of_single_node_is_zero() {
    let g = SparseGraph::new(1, vec![], true).unwrap();
    assert_eq!(build_ldir(&g, 0.85).unwrap().to_dense(), array![[0.0]]);
}

#[test]
fn ldir_transpose_is_ldir_of_reversed_graph() {
    let g = random_directed(12, 30, 5);
    let a = build_ldir_transpose(&g, 0.85).unwrap().to_dense();
    let b = ldir_oracle(&g.transpose(), 0.85);
    assert!(max_abs_diff(&a, &b) < 1e-12);
    assert!(max_abs_diff(&a, &build_ldir(&g, 0.85).unwrap().to_dense()) > 1e-6);
}

#[test]
fn two_node_heat_kernel_closed_form() {
    let g = SparseGraph::undirected_from_pairs(2, [(0, 1, 1.0)]).unwrap();
    for method in [
        ExpmMethod::DenseEig,
        ExpmMethod::TaylorStepping,
        ExpmMethod::ChebyshevStepping,
    ] {
        let engine = DiffusionEngine::new(build_laplacian(&g).unwrap(), method, 1e-8).unwrap();
        for t in [0.0, 0.3, 1.0, 5.0] {
            let out = engine.expm_action(&array![[1.0], [0.0]].view(), t).unwrap();
            let e = (-2.0 * t).exp();
            assert_abs_diff_eq!(out[(0, 0)], (1.0 + e) / 2.0, epsilon = 1e-14);
            assert_abs_diff_eq!(out[(1, 0)], (1.0 - e) / 2.0, epsilon = 1e-14);
        }
    }
}

#[test]
fn expm_action_input_errors() {
    let g = random_connected(5, 3, 1);
    let engine = DiffusionEngine::auto(build_laplacian(&g).unwrap()).unwrap();
    let b = random_matrix(5, 2, 2);
    assert!(matches!(
        engine.expm_action(&b.view(), -1.0),
        Err(GdrError::Parameter(_))
    ));
    let mut bad = b.clone();
    bad[(3, 1)] = f64::NAN;
    assert!(matches!(
        engine.expm_action(&bad.view(), 1.0),
        Err(GdrError::Input(_))
    ));
    assert_eq!(engine.expm_action(&b.view(), 0.0).unwrap(), b);
}

#[test]
fn taylor_matches_dense_on_fifty_nodes() {
    let g = random_connected(50, 60, 11);
    let l = build_laplacian(&g).unwrap();
    let dense_l = l.to_dense();
    let taylor = DiffusionEngine::new(l, ExpmMethod::TaylorStepping, 1e-8).unwrap();
    let b = random_matrix(50, 3, 12);
    for t in [0.1, 1.0, 10.0] {
        let reference = dense_expm(&dense_l, &b, t);
        let got = taylor.expm_action(&b.view(), t).unwrap();
        assert!(
            max_abs_diff(&got, &reference) / max_abs(&reference) < 1e-8,
            "t = {t}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pdir_is_row_stochastic(n in 1usize..25, arcs in 0usize..80, seed in any::<u64>(), alpha in 0.05f64..=1.0) {
        let g = random_directed(n, arcs, seed);
        let p = build_pdir(&g, alpha).unwrap();
        let dense = p.to_dense();
        prop_assert!(max_abs_diff(&dense, &pdir_oracle(&g, alpha)) < 1e-15);
        for s in p.row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(dense.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ldir_is_symmetric_with_constant_kernel(n in 2usize..25, arcs in 0usize..80, seed in any::<u64>()) {
        let g = random_directed(n, arcs, seed);
        let l = build_ldir(&g, 0.85).unwrap();
        let dense = l.to_dense();
        prop_assert!(max_abs_diff(&dense, &dense.t().to_owned()) < 1e-12);
        let ones = Array2::ones((n, 1));
        prop_assert!(max_abs(&l.apply(&ones.view())) < 1e-10);
    }

    #[test]
    fn ldir_without_teleport_is_proportional_to_laplacian(n in 2usize..20, extra in 0usize..30, seed in any::<u64>()) {
        let g = random_connected(n, extra, seed);
        let ldir = build_ldir(&g.as_directed(), 1.0).unwrap().to_dense();
        let l = build_laplacian(&g).unwrap().to_dense();
        let ratios: Vec<f64> = l
            .iter()
            .zip(ldir.iter())
            .filter(|(a, _)| a.abs() > 0.0)
            .map(|(a, b)| b / a)
            .collect();
        let first = ratios[0];
        for r in &ratios {
            prop_assert!((r - first).abs() <= 1e-10 * first.abs());
        }
        // The constant is 1/W with W the total arc weight.
        prop_assert!((first * g.total_weight() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn laplacian_rows_sum_to_zero_and_is_psd(n in 1usize..30, extra in 0usize..40, seed in any::<u64>()) {
        let g = random_connected(n, extra, seed);
        let l = build_laplacian(&g).unwrap();
        for s in l.row_sums() {
            prop_assert!(s.abs() < 1e-12);
        }
        let x = random_matrix(n, 4, seed ^ 1);
        let lx = l.apply(&x.view());
        for j in 0..4 {
            let q: f64 = x.column(j).dot(&lx.column(j));
            prop_assert!(q >= -1e-12);
        }
    }

    #[test]
    fn gcn_operator_is_symmetric_with_bounded_spectrum(n in 1usize..30, extra in 0usize..40, seed in any::<u64>()) {
        let g = random_connected(n, extra, seed);
        let a = build_gcn_operator(&g).to_dense();
        prop_assert!(max_abs_diff(&a, &a.t().to_owned()) < 1e-15);
        let eig = to_na(&a).symmetric_eigen();
        for &v in eig.eigenvalues.iter() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn heat_kernel_conserves_mass_and_positivity(n in 2usize..60, extra in 0usize..80, seed in any::<u64>(), t in 0.0f64..20.0) {
        let g = random_connected(n, extra, seed);
        let engine = DiffusionEngine::auto(build_laplacian(&g).unwrap()).unwrap();
        let b = random_matrix(n, 3, seed ^ 7).mapv(f64::abs);
        let out = engine.expm_action(&b.view(), t).unwrap();
        for j in 0..3 {
            prop_assert!((out.column(j).sum() - b.column(j).sum()).abs() < 1e-10);
        }
        prop_assert!(out.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn stepping_methods_match_dense_oracle(n in 2usize..=200, extra in 0usize..300, seed in any::<u64>(), t in prop::sample::select(vec![0.1, 1.0, 10.0])) {
        let g = random_connected(n, extra, seed);
        let l = build_laplacian(&g).unwrap();
        let b = random_matrix(n, 2, seed ^ 3);
        let reference = dense_expm(&l.to_dense(), &b, t);
        for method in [ExpmMethod::TaylorStepping, ExpmMethod::ChebyshevStepping] {
            let engine = DiffusionEngine::new(l.clone(), method, 1e-8).unwrap();
            let got = engine.expm_action(&b.view(), t).unwrap();
            prop_assert!(max_abs_diff(&got, &reference) / max_abs(&reference) < 1e-8, "{:?}", method);
        }
    }
}
