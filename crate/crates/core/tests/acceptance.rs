//! Acceptance checks. Each criterion prints one `[PASS]`/`[FAIL]` line
//! (with its sub-checks indented below it) and then asserts.
//!
//! The property criterion runs on synthetic graphs and is always executed.
//! The accuracy criteria need the converted benchmark datasets under
//! `$GDR_DATA_ROOT` (`cora/`, `citeseer/`, `pubmed/`, `cora-directed/`) and
//! are `#[ignore]`d; run them with
//!
//! ```text
//! GDR_DATA_ROOT=/path/to/data cargo test --release -p gdr-core --test acceptance -- --include-ignored --nocapture
//! ```

mod common;

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{s, Array2, Axis};

use common::*;
use gdr_core::classifiers::{
    hard_assign, stack_with_training, uniform_prior, AssignmentKind, AssignmentMatrix,
};
use gdr_core::data_io::{load_dataset, SplitTag, DATA_ROOT_ENV};
use gdr_core::diffusion::*;
use gdr_core::experiment::*;
use gdr_core::graph::*;
use gdr_core::neural::*;
use gdr_core::sparse::CsrMatrix;
use gdr_core::synthetic::PlantedPartition;

/// One measured quantity against its target.
struct Check {
    label: String,
    measured: f64,
    pass: bool,
    detail: String,
}

impl Check {
    /// `measured` must not exceed `tol`.
    fn at_most(label: impl Into<String>, measured: f64, tol: f64) -> Self {
        Check {
            label: label.into(),
            measured,
            pass: measured <= tol,
            detail: format!("{measured:.3e} (tol {tol:.0e})"),
        }
    }

    /// `measured` must be within `tol` of `target`.
    fn near(label: impl Into<String>, measured: f64, target: f64, tol: f64) -> Self {
        Check {
            label: label.into(),
            measured,
            pass: (measured - target).abs() <= tol + 1e-9,
            detail: format!("{measured:.1} (reference {target:.1} ± {tol})"),
        }
    }

    fn below(label: impl Into<String>, measured: f64, limit: f64, unit: &str) -> Self {
        Check {
            label: label.into(),
            measured,
            pass: measured < limit,
            detail: format!("{measured:.1}{unit} (limit {limit}{unit})"),
        }
    }
}

fn report(criterion: &str, checks: &[Check]) {
    let ok = checks.iter().all(|c| c.pass);
    println!("[{}] {criterion}", if ok { "PASS" } else { "FAIL" });
    for c in checks {
        println!(
            "    [{}] {}: {}",
            if c.pass { "ok" } else { "FAIL" },
            c.label,
            c.detail
        );
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} = {}", c.label, c.measured))
        .collect();
    assert!(ok, "{criterion} failed: {}", failed.join("; "));
}

// ---------------------------------------------------------------------------
// Property suites

fn mass_conservation() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let n = 2 + (seed as usize * 7) % 100;
        let g = random_connected(n, n, seed);
        let engine = DiffusionEngine::auto(build_laplacian(&g).unwrap()).unwrap();
        let b = random_matrix(n, 3, seed + 100).mapv(f64::abs);
        for t in [0.1, 1.0, 10.0, 100.0] {
            let out = engine.expm_action(&b.view(), t).unwrap();
            let diff = &out.sum_axis(Axis(0)) - &b.sum_axis(Axis(0));
            worst = worst.max(diff.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    worst
}

fn stepping_vs_dense(method: ExpmMethod) -> f64 {
    let mut worst = 0.0f64;
    for (k, n) in [10usize, 50, 120, 200].into_iter().enumerate() {
        let g = random_connected(n, 2 * n, 40 + k as u64);
        let l = build_laplacian(&g).unwrap();
        let dense = l.to_dense();
        let engine = DiffusionEngine::new(l, method, 1e-8).unwrap();
        let b = random_matrix(n, 3, 50 + k as u64);
        for t in [0.1, 1.0, 10.0] {
            let reference = dense_expm(&dense, &b, t);
            let got = engine.expm_action(&b.view(), t).unwrap();
            worst = worst.max(max_abs_diff(&got, &reference) / max_abs(&reference));
        }
    }
    worst
}

fn omega_of_stationary_priors() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let n = 30 + 10 * seed as usize;
        let g = random_connected(n, n, 60 + seed);
        let engine = DiffusionEngine::auto(build_laplacian(&g).unwrap()).unwrap();
        let constant = Array2::from_shape_fn((n, 3), |(_, j)| [0.2, 0.5, 0.3][j]);
        for h in [uniform_prior(n, 4).unwrap().into_values(), constant] {
            let res = overshoot_sweep(&engine, &h.view(), &[0.0, 1.0, 16.0], &GridConfig::default()).unwrap();
            for r in res {
                worst = worst.max(max_abs(&r.omega));
            }
        }
    }
    worst
}

/// Number of training nodes whose GDR label differs from the ground truth.
fn training_rows_changed() -> f64 {
    let mut changed = 0usize;
    for seed in 0..3 {
        let d = PlantedPartition {
            seed,
            homophily: 0.5,
            ..Default::default()
        }
        .generate()
        .unwrap();
        let n = d.n_nodes();
        let mask = d.split.mask(SplitTag::Train);
        // A deliberately wrong prior: everyone in the last class.
        let mut wrong = Array2::zeros((n, d.n_classes));
        wrong.column_mut(d.n_classes - 1).fill(1.0);
        let prior = AssignmentMatrix::new(wrong, AssignmentKind::PriorExternal).unwrap();
        let stacked = stack_with_training(&prior, &mask, &d.labels).unwrap();
        let hard = hard_assign(&prior).with_training(&mask, &d.labels).unwrap();
        let engines =
            diffusion_engines(&d.graph, Direction::Undirected, 0.85, ExpmMethod::Auto, 1e-8).unwrap();
        let sel = gdr_select(
            &engines,
            &stacked,
            &hard,
            &d.labels,
            &d.split.nodes(SplitTag::Val),
            &[0.0, 0.5, 2.0],
            &GridConfig::default(),
        )
        .unwrap();
        for i in d.split.nodes(SplitTag::Train) {
            if Some(sel.labels.labels[i]) != d.labels[i] {
                changed += 1;
            }
        }
    }
    changed as f64
}

const MODELS: [(ModelKind, Direction); 5] = [
    (ModelKind::Mlp, Direction::Undirected),
    (ModelKind::Gcn, Direction::Undirected),
    (ModelKind::DiffGcn, Direction::Undirected),
    (ModelKind::AugGcn, Direction::Augmented),
    (ModelKind::AugDiffGcn, Direction::Augmented),
];

/// Largest `|analytic − numeric| / max(|numeric|, 1e-3)` over all parameters
/// of all model kinds, with central differences of step 1e-5.
fn gradient_error() -> f64 {
    let g = random_directed(12, 30, 70);
    let x = CsrMatrix::from_dense(&random_matrix(12, 5, 71).view());
    let sup = Supervision::new(vec![0, 1, 3, 6, 8, 10], vec![2, 0, 1, 1, 2, 0]).unwrap();
    let mut worst = 0.0f64;
    for (model, direction) in MODELS {
        let spec = propagation_for(model, &g, direction, 0.85, ExpmMethod::DenseEig, 1e-12).unwrap();
        let w = LayerWeights::glorot(&spec, 5, 4, 3, 0.8, &mut rng(72));
        let (_, grads) = backward(&spec, &w, &x, &sup, 5e-4).unwrap();
        let analytic = grads.to_flat();
        let flat = w.to_flat();
        for k in 0..flat.len() {
            let mut p = flat.clone();
            p[k] += 1e-5;
            let fp = objective(&spec, &w.from_flat(&p), &x, &sup, 5e-4).unwrap();
            p[k] -= 2e-5;
            let fm = objective(&spec, &w.from_flat(&p), &x, &sup, 5e-4).unwrap();
            let numeric = (fp - fm) / 2e-5;
            worst = worst.max((analytic[k] - numeric).abs() / numeric.abs().max(1e-3));
        }
    }
    worst
}

fn pdir_row_sum_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let n = 1 + seed as usize * 3;
        let g = random_directed(n, 3 * n, 80 + seed);
        for alpha in [0.5, 0.85, 1.0] {
            for s in build_pdir(&g, alpha).unwrap().row_sums() {
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    worst
}

fn ldir_symmetry_and_kernel() -> (f64, f64) {
    let (mut asym, mut kernel) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let n = 2 + seed as usize * 3;
        let g = random_directed(n, 3 * n, 90 + seed);
        let l = build_ldir(&g, 0.85).unwrap();
        let dense = l.to_dense();
        asym = asym.max(max_abs_diff(&dense, &dense.t().to_owned()));
        kernel = kernel.max(max_abs(&l.apply(&Array2::ones((n, 1)).view())));
    }
    (asym, kernel)
}

/// Relative spread of the entry-wise ratio `L_dir / L` over the nonzero
/// entries of `L`, for symmetric graphs and no teleportation.
fn ldir_ratio_spread() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let n = 3 + seed as usize * 4;
        let g = random_connected(n, n, 100 + seed);
        let ldir = build_ldir(&g.as_directed(), 1.0).unwrap().to_dense();
        let l = build_laplacian(&g).unwrap().to_dense();
        let ratios: Vec<f64> = l
            .iter()
            .zip(ldir.iter())
            .filter(|(a, _)| **a != 0.0)
            .map(|(a, b)| b / a)
            .collect();
        let r0 = ratios[0];
        for r in ratios {
            worst = worst.max((r - r0).abs() / r0.abs());
        }
    }
    worst
}

fn diffusion_at_zero_vs_mlp() -> f64 {
    let g = random_connected(20, 20, 110);
    let x = CsrMatrix::from_dense(&random_matrix(20, 6, 111).view());
    let spec = propagation_for(
        ModelKind::DiffGcn,
        &g,
        Direction::Undirected,
        0.85,
        ExpmMethod::Auto,
        1e-8,
    )
    .unwrap();
    let mut w = LayerWeights::glorot(&spec, 6, 8, 3, 0.0, &mut rng(112));
    let a = forward(&spec, &w, &x, Mode::Eval, 0).unwrap();
    w.t = None;
    let b = forward(&PropagationSpec::identity(), &w, &x, Mode::Eval, 0).unwrap();
    max_abs_diff(&a, &b)
}

fn kronecker_vs_block() -> f64 {
    let g = random_directed(6, 12, 120);
    let xd = random_matrix(6, 3, 121);
    let x = CsrMatrix::from_dense(&xd.view());
    let kron = |m: &Array2<f64>| {
        let (r, c) = m.dim();
        let mut out = Array2::zeros((2 * r, 2 * c));
        out.slice_mut(s![..r, ..c]).assign(m);
        out.slice_mut(s![r.., c..]).assign(m);
        out
    };
    let cat =
        |axis, a: &Array2<f64>, b: &Array2<f64>| ndarray::concatenate(axis, &[a.view(), b.view()]).unwrap();
    let mut worst = 0.0f64;
    for model in [ModelKind::AugGcn, ModelKind::AugDiffGcn] {
        let spec =
            propagation_for(model, &g, Direction::Augmented, 0.85, ExpmMethod::DenseEig, 1e-12).unwrap();
        let w = LayerWeights::glorot(&spec, 3, 4, 2, 0.5, &mut rng(122));
        let t = w.t.unwrap_or(0.0);
        let aug = cat(
            Axis(1),
            &spec.channel_dense(0, t, 6).unwrap(),
            &spec.channel_dense(1, t, 6).unwrap(),
        );
        let w0 = cat(Axis(0), &w.w0[0], &w.w0[1]);
        let w1 = cat(Axis(0), &w.w1[0], &w.w1[1]);
        let hidden = aug.dot(&kron(&xd)).dot(&w0).mapv(|v| v.max(0.0));
        let mut z = aug.dot(&kron(&hidden)).dot(&w1);
        for mut row in z.outer_iter_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let total = row.sum();
            row /= total;
        }
        worst = worst.max(max_abs_diff(&forward(&spec, &w, &x, Mode::Eval, 0).unwrap(), &z));
    }
    worst
}

#[test]
fn property_suites() {
    let (asym, kernel) = ldir_symmetry_and_kernel();
    let checks = vec![
        Check::at_most("heat kernel mass conservation", mass_conservation(), 1e-10),
        Check::at_most(
            "taylor-stepping vs dense-eig (relative, n <= 200)",
            stepping_vs_dense(ExpmMethod::TaylorStepping),
            1e-8,
        ),
        Check::at_most(
            "chebyshev-stepping vs dense-eig (relative, n <= 200)",
            stepping_vs_dense(ExpmMethod::ChebyshevStepping),
            1e-8,
        ),
        Check::at_most(
            "max omega for stationary priors",
            omega_of_stationary_priors(),
            0.0,
        ),
        Check::at_most("training labels changed by GDR", training_rows_changed(), 0.0),
        Check::at_most(
            "gradient check, all five model kinds (relative)",
            gradient_error(),
            1e-4,
        ),
        Check::at_most("P_dir row sums", pdir_row_sum_error(), 1e-12),
        Check::at_most("L_dir asymmetry", asym, 1e-12),
        Check::at_most("L_dir applied to the ones vector", kernel, 1e-10),
        Check::at_most("L_dir(A, 1) / L entry-ratio spread", ldir_ratio_spread(), 1e-10),
        Check::at_most("diff-GCN at t = 0 vs MLP", diffusion_at_zero_vs_mlp(), 1e-12),
        Check::at_most(
            "Kronecker vs block augmented forward",
            kronecker_vs_block(),
            1e-10,
        ),
    ];
    report("property suites on synthetic graphs", &checks);
}

// ---------------------------------------------------------------------------
// Benchmark accuracy criteria

const GDR_TOL: f64 = 3.0;
const PRIOR_TOL: f64 = 1.5;
const TRAINED_TOL: f64 = 2.0;
const DIRECTED_WIDE_TOL: f64 = 3.0;
const SMALL_RUNTIME_LIMIT_S: f64 = 120.0;
const PUBMED_RUNTIME_LIMIT_S: f64 = 900.0;

fn dataset(name: &str) -> PathBuf {
    let root = std::env::var_os(DATA_ROOT_ENV).unwrap_or_else(|| {
        println!("[FAIL] ${DATA_ROOT_ENV} is not set; the benchmark datasets are required");
        panic!("${DATA_ROOT_ENV} is not set");
    });
    let dir = PathBuf::from(root).join(name);
    if !dir.join("manifest.txt").exists() {
        println!("[FAIL] dataset {} not found", dir.display());
        panic!("dataset {} not found", dir.display());
    }
    dir
}

fn base_config(name: &str, prior: &str, direction: Direction, out: &tempfile::TempDir) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_dataset(dataset(name));
    cfg.model.prior = prior.parse().unwrap();
    cfg.model.direction = direction;
    cfg.run.output_dir = out.path().join(format!("{name}-{prior}-{direction}"));
    cfg
}

/// Single GDR row, its prior accuracy and the wall time of the run.
fn gdr_once(name: &str, prior: &str, direction: Direction) -> (ReportRow, f64) {
    let out = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let run = run_gdr(&base_config(name, prior, direction, &out)).unwrap();
    (run.report.rows[0].clone(), start.elapsed().as_secs_f64())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean test accuracy of a trained model over the default five seeds.
fn trained_mean(name: &str, model: &str, direction: Direction) -> f64 {
    let out = tempfile::tempdir().unwrap();
    let run = run_train(&base_config(name, model, direction, &out)).unwrap();
    mean(run.report.rows.iter().map(|r| r.accuracy))
}

#[test]
#[ignore = "needs the citation benchmarks under $GDR_DATA_ROOT"]
fn gdr_accuracy_on_citation_benchmarks() {
    let mut checks = Vec::new();
    for (name, uniform, projection, limit) in [
        ("cora", 71.8, 79.7, SMALL_RUNTIME_LIMIT_S),
        ("citeseer", 50.6, 70.4, SMALL_RUNTIME_LIMIT_S),
        ("pubmed", 73.2, 75.8, PUBMED_RUNTIME_LIMIT_S),
    ] {
        for (prior, target) in [("uniform", uniform), ("projection", projection)] {
            let (row, secs) = gdr_once(name, prior, Direction::Undirected);
            checks.push(Check::near(
                format!("{name} gdr({prior}) accuracy"),
                row.accuracy,
                target,
                GDR_TOL,
            ));
            checks.push(Check::below(
                format!("{name} gdr({prior}) runtime"),
                secs,
                limit,
                " s",
            ));
            if prior == "uniform" {
                checks.push(Check {
                    label: format!("{name} gdr(uniform) delta is positive"),
                    measured: row.delta.unwrap(),
                    pass: row.delta.unwrap() > 0.0,
                    detail: format!("{:+.1}", row.delta.unwrap()),
                });
            }
        }
    }
    report("GDR accuracy with uniform and projection priors", &checks);
}

#[test]
#[ignore = "needs the citation benchmarks under $GDR_DATA_ROOT"]
fn projection_prior_baselines() {
    let mut checks = Vec::new();
    for (name, target) in [("cora", 59.0), ("citeseer", 61.8), ("pubmed", 72.0)] {
        let (row, _) = gdr_once(name, "projection", Direction::Undirected);
        checks.push(Check::near(
            format!("{name} projection prior accuracy"),
            row.prior_accuracy.unwrap(),
            target,
            PRIOR_TOL,
        ));
    }
    report("projection prior baselines", &checks);
}

#[test]
#[ignore = "needs the citation benchmarks under $GDR_DATA_ROOT; trains 20 models"]
fn trained_model_accuracy() {
    let mut checks = vec![
        Check::near(
            "cora gcn (5-seed mean)",
            trained_mean("cora", "gcn", Direction::Undirected),
            81.1,
            TRAINED_TOL,
        ),
        Check::near(
            "cora diff-gcn (5-seed mean)",
            trained_mean("cora", "diff-gcn", Direction::Undirected),
            82.3,
            TRAINED_TOL,
        ),
        Check::near(
            "citeseer diff-gcn (5-seed mean)",
            trained_mean("citeseer", "diff-gcn", Direction::Undirected),
            71.9,
            TRAINED_TOL,
        ),
    ];
    let out = tempfile::tempdir().unwrap();
    let run = run_gdr(&base_config("cora", "gcn", Direction::Undirected, &out)).unwrap();
    checks.push(Check::near(
        "cora gdr(gcn) (5-seed mean)",
        mean(run.report.rows.iter().map(|r| r.accuracy)),
        82.2,
        TRAINED_TOL,
    ));
    report("trained model accuracy", &checks);
}

#[test]
#[ignore = "needs the directed Cora edge list under $GDR_DATA_ROOT/cora-directed"]
fn directed_cora_accuracy() {
    let name = "cora-directed";
    let checks = vec![
        Check::near(
            "gcn forward (5-seed mean)",
            trained_mean(name, "gcn", Direction::Forward),
            67.4,
            DIRECTED_WIDE_TOL,
        ),
        Check::near(
            "gcn backward (5-seed mean)",
            trained_mean(name, "gcn", Direction::Backward),
            79.8,
            TRAINED_TOL,
        ),
        Check::near(
            "diff-gcn augmented (5-seed mean)",
            trained_mean(name, "aug-diff-gcn", Direction::Augmented),
            83.0,
            TRAINED_TOL,
        ),
        Check::near(
            "gdr(projection) forward",
            gdr_once(name, "projection", Direction::Forward).0.accuracy,
            62.1,
            DIRECTED_WIDE_TOL,
        ),
    ];
    report("directed Cora accuracy", &checks);
}

#[test]
#[ignore = "long-running: trains diff-GCN on Pubmed five times"]
fn pubmed_diff_gcn() {
    let start = Instant::now();
    let acc = trained_mean("pubmed", "diff-gcn", Direction::Undirected);
    let secs = start.elapsed().as_secs_f64();
    println!("    pubmed diff-gcn: {secs:.0} s for five seeds");
    report(
        "pubmed diff-GCN (optional)",
        &[Check::near(
            "pubmed diff-gcn (5-seed mean)",
            acc,
            79.3,
            TRAINED_TOL,
        )],
    );
}

#[test]
#[ignore = "needs the citation benchmarks under $GDR_DATA_ROOT"]
fn dataset_statistics() {
    let mut checks = Vec::new();
    for (name, nodes, edges, classes, features) in [
        ("cora", 2708, 5429, 7, 1433),
        ("citeseer", 3327, 4732, 6, 3703),
        ("pubmed", 19717, 44338, 3, 500),
    ] {
        let (_, m) = load_dataset(&dataset(name)).unwrap();
        let got = [m.n_nodes, m.n_edges, m.n_classes, m.n_features];
        let want = [nodes, edges, classes, features];
        checks.push(Check {
            label: format!("{name} (nodes, edges, classes, features)"),
            measured: 0.0,
            pass: got == want,
            detail: format!("{got:?} (reference {want:?})"),
        });
    }
    report("dataset statistics", &checks);
}

/// Quick end-to-end sanity check of the accuracy harness on a synthetic
/// dataset, so the code paths above stay exercised without the benchmarks.
#[test]
fn harness_runs_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = PlantedPartition {
        n_nodes: 240,
        seed: 7,
        ..Default::default()
    }
    .generate()
    .unwrap();
    gdr_core::data_io::write_dataset(&dir.path().join("planted"), &d).unwrap();
    let mut cfg = ExperimentConfig::for_dataset(dir.path().join("planted"));
    cfg.model.prior = PriorSpec::Projection;
    cfg.run.output_dir = dir.path().join("out");
    let run = run_gdr(&cfg).unwrap();
    let row = &run.report.rows[0];
    report(
        "synthetic harness sanity (not a benchmark criterion)",
        &[Check {
            label: "gdr(projection) does not lose accuracy on a homophilous graph".into(),
            measured: row.delta.unwrap(),
            pass: row.delta.unwrap() >= 0.0,
            detail: format!(
                "prior {:.1} -> gdr {:.1}",
                row.prior_accuracy.unwrap(),
                row.accuracy
            ),
        }],
    );
}
