//! Heat-kernel diffusion `e^{-tL}` on node-indexed matrices and the overshoot
//! scan that turns a class-assignment matrix into the `Ω` matrix.
//!
//! Three ways of applying the matrix exponential are provided:
//!
//! * dense eigendecomposition, exact and reusable across many times, for
//!   small graphs;
//! * truncated Taylor series with scaling and a diagonal shift;
//! * Chebyshev expansion on the Gershgorin interval, whose cost grows with
//!   `sqrt(t‖L‖)` rather than `t‖L‖` and is therefore used for large graphs
//!   and long horizons.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GdrError, Result};
use crate::graph::{LinearNodeOperator, OperatorKind};

/// Graphs up to this many nodes use the dense eigendecomposition by default.
pub const DENSE_THRESHOLD: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpmMethod {
    /// Dense eigendecomposition when `n ≤ DENSE_THRESHOLD`, Chebyshev otherwise.
    Auto,
    DenseEig,
    TaylorStepping,
    ChebyshevStepping,
}

impl ExpmMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpmMethod::Auto => "auto",
            ExpmMethod::DenseEig => "dense-eig",
            ExpmMethod::TaylorStepping => "taylor-stepping",
            ExpmMethod::ChebyshevStepping => "chebyshev-stepping",
        }
    }

    /// The concrete method used for an `n`-node operator.
    pub fn resolve(self, n: usize) -> ExpmMethod {
        match self {
            ExpmMethod::Auto if n <= DENSE_THRESHOLD => ExpmMethod::DenseEig,
            ExpmMethod::Auto => ExpmMethod::ChebyshevStepping,
            m => m,
        }
    }
}

impl std::str::FromStr for ExpmMethod {
    type Err = GdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(ExpmMethod::Auto),
            "dense-eig" => Ok(ExpmMethod::DenseEig),
            "taylor-stepping" => Ok(ExpmMethod::TaylorStepping),
            "chebyshev-stepping" => Ok(ExpmMethod::ChebyshevStepping),
            other => Err(GdrError::Parameter(format!("unknown expm method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
struct Spectral {
    values: Vec<f64>,
    vectors: Array2<f64>,
}

/// Applies `e^{-tL}` for a fixed symmetric operator `L`.
#[derive(Debug, Clone)]
pub struct DiffusionEngine {
    operator: LinearNodeOperator,
    method: ExpmMethod,
    tol: f64,
    spectral: Option<Spectral>,
    /// Gershgorin bound on the largest eigenvalue.
    lambda_bound: f64,
    /// Diagonal shift used by the Taylor series.
    shift: f64,
    components: Vec<usize>,
    n_components: usize,
}

impl DiffusionEngine {
    pub fn new(operator: LinearNodeOperator, method: ExpmMethod, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(GdrError::Parameter(format!(
                "tolerance must be positive, got {tol}"
            )));
        }
        if !matches!(
            operator.kind(),
            OperatorKind::Laplacian | OperatorKind::Ldir | OperatorKind::LdirTranspose
        ) {
            return Err(GdrError::Parameter(
                "diffusion requires a laplacian or directed-laplacian operator".into(),
            ));
        }
        let n = operator.n();
        let method = method.resolve(n);
        let spectral = if method == ExpmMethod::DenseEig {
            Some(eigendecompose(&operator.to_dense()))
        } else {
            None
        };
        let lambda_bound = operator.norm_bound();
        let shift = if n > 0 { operator.trace() / n as f64 } else { 0.0 };
        let (components, n_components) = connected_components(&operator);
        Ok(DiffusionEngine {
            operator,
            method,
            tol,
            spectral,
            lambda_bound,
            shift,
            components,
            n_components,
        })
    }

    pub fn auto(operator: LinearNodeOperator) -> Result<Self> {
        DiffusionEngine::new(operator, ExpmMethod::Auto, 1e-8)
    }

    pub fn operator(&self) -> &LinearNodeOperator {
        &self.operator
    }

    pub fn method(&self) -> ExpmMethod {
        self.method
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn n(&self) -> usize {
        self.operator.n()
    }

    /// Eigenvalues in ascending order, when the dense path is in use.
    pub fn eigenvalues(&self) -> Option<&[f64]> {
        self.spectral.as_ref().map(|s| s.values.as_slice())
    }

    /// `L · b`.
    pub fn apply_operator(&self, b: &ArrayView2<f64>) -> Array2<f64> {
        self.operator.apply(b)
    }

    /// `e^{-tL} b`.
    pub fn expm_action(&self, b: &ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(GdrError::Parameter(format!(
                "diffusion time must be finite and >= 0, got {t}"
            )));
        }
        if b.nrows() != self.n() {
            return Err(GdrError::Input(format!(
                "matrix has {} rows, operator has {} nodes",
                b.nrows(),
                self.n()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(GdrError::Input("non-finite entries in diffusion input".into()));
        }
        if t == 0.0 {
            return Ok(b.to_owned());
        }
        Ok(match self.method {
            ExpmMethod::DenseEig => {
                let s = self.spectral.as_ref().expect("dense engine has a spectrum");
                let coeffs = s.vectors.t().dot(b);
                s.spectral_eval(&coeffs.view(), t)
            }
            ExpmMethod::TaylorStepping => self.taylor(b, t),
            ExpmMethod::ChebyshevStepping | ExpmMethod::Auto => self.chebyshev(b, t),
        })
    }

    fn taylor(&self, b: &ArrayView2<f64>, t: f64) -> Array2<f64> {
        let mu = self.shift;
        let radius = self.lambda_bound + mu.abs();
        let steps = (t * radius).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let decay = (-h * mu).exp();
        let mut x = b.to_owned();
        for _ in 0..steps {
            let mut acc = x.clone();
            let mut term = x.clone();
            let mut prev_norm = f64::INFINITY;
            for k in 1..=120 {
                let lt = self.operator.apply(&term.view());
                term = (&lt - &(&term * mu)) * (-h / k as f64);
                acc += &term;
                let term_norm = max_abs(&term.view());
                let acc_norm = max_abs(&acc.view()).max(f64::MIN_POSITIVE);
                if term_norm + prev_norm <= f64::EPSILON * 0.5 * acc_norm {
                    break;
                }
                prev_norm = term_norm;
            }
            x = acc * decay;
        }
        x
    }

    fn chebyshev(&self, b: &ArrayView2<f64>, t: f64) -> Array2<f64> {
        let lambda = self.lambda_bound;
        if lambda == 0.0 {
            return b.to_owned();
        }
        let coeffs = scaled_bessel_coefficients(0.5 * t * lambda);
        // Y = (2/λ) L − I maps the spectrum [0, λ] onto [−1, 1].
        let apply_y = |v: &Array2<f64>| -> Array2<f64> {
            let mut lv = self.operator.apply(&v.view());
            lv *= 2.0 / lambda;
            lv - v
        };
        let mut prev = b.to_owned();
        let mut acc = &prev * coeffs[0];
        if coeffs.len() == 1 {
            return acc;
        }
        let mut cur = apply_y(&prev);
        acc.scaled_add(-2.0 * coeffs[1], &cur);
        for (k, &c) in coeffs.iter().enumerate().skip(2) {
            let mut next = apply_y(&cur);
            next *= 2.0;
            next -= &prev;
            let sign = if k % 2 == 0 { 2.0 } else { -2.0 };
            acc.scaled_add(sign * c, &next);
            prev = cur;
            cur = next;
        }
        acc
    }

    /// Limit of `e^{-tL} h` as `t → ∞`: the projection onto the kernel of `L`,
    /// i.e. per-component column means.
    pub fn stationary_limit(&self, h: &ArrayView2<f64>) -> Array2<f64> {
        let c = h.ncols();
        let mut sums = Array2::<f64>::zeros((self.n_components, c));
        let mut counts = vec![0usize; self.n_components];
        for (i, row) in h.outer_iter().enumerate() {
            let comp = self.components[i];
            counts[comp] += 1;
            let mut target = sums.row_mut(comp);
            target += &row;
        }
        let mut out = Array2::<f64>::zeros(h.raw_dim());
        for (i, mut row) in out.outer_iter_mut().enumerate() {
            let comp = self.components[i];
            row.assign(&(&sums.row(comp) / counts[comp] as f64));
        }
        out
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    /// Estimate of the smallest nonzero eigenvalue.
    ///
    /// Exact on the dense path. Otherwise power iteration on `λ̄I − L` with the
    /// kernel deflated; the Rayleigh quotient never overshoots the true top
    /// eigenvalue, so the estimate errs towards larger values.
    pub fn smallest_nonzero_eigenvalue(&self) -> f64 {
        if let Some(s) = &self.spectral {
            let top = s.values.last().copied().unwrap_or(0.0).abs();
            let cutoff = 1e-9 * top.max(1e-300);
            return s
                .values
                .iter()
                .copied()
                .find(|&v| v > cutoff)
                .unwrap_or(f64::INFINITY);
        }
        let n = self.n();
        if n <= self.n_components {
            return f64::INFINITY;
        }
        let lambda = self.lambda_bound;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut x = Array2::from_shape_fn((n, 1), |_| rng.gen::<f64>() - 0.5);
        let deflate = |v: &mut Array2<f64>| {
            let mean = self.stationary_limit(&v.view());
            *v -= &mean;
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                *v /= norm;
            }
        };
        deflate(&mut x);
        let mut rq = 0.0;
        for _ in 0..3000 {
            let lx = self.operator.apply(&x.view());
            let mut y = &x * lambda - &lx;
            let next_rq: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            deflate(&mut y);
            x = y;
            if (next_rq - rq).abs() <= 1e-10 * next_rq.abs() {
                rq = next_rq;
                break;
            }
            rq = next_rq;
        }
        (lambda - rq).max(f64::MIN_POSITIVE)
    }
}

impl Spectral {
    fn spectral_eval(&self, coeffs: &ArrayView2<f64>, t: f64) -> Array2<f64> {
        let mut scaled = coeffs.to_owned();
        for (mut row, &lam) in scaled.outer_iter_mut().zip(&self.values) {
            row *= (-t * lam).exp();
        }
        self.vectors.dot(&scaled)
    }
}

fn eigendecompose(dense: &Array2<f64>) -> Spectral {
    let n = dense.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (dense[(i, j)] + dense[(j, i)]));
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(i, k)| eig.eigenvectors[(i, order[k])]);
    Spectral { values, vectors }
}

/// `c_k = e^{-a} I_k(a)` for `k = 0..K`, truncated once the tail is below
/// double precision. Computed by Miller's backward recurrence normalized with
/// `I_0 + 2 Σ I_k = e^{a}`.
pub(crate) fn scaled_bessel_coefficients(a: f64) -> Vec<f64> {
    if a == 0.0 {
        return vec![1.0];
    }
    let start = (13.6 * a.sqrt() + 2.0 * a.min(40.0) + 40.0).ceil() as usize;
    let mut vals = vec![0.0f64; start + 2];
    vals[start] = 1e-300;
    for k in (1..=start).rev() {
        vals[k - 1] = vals[k + 1] + (2.0 * k as f64 / a) * vals[k];
        if vals[k - 1] > 1e250 {
            for v in vals.iter_mut().skip(k - 1) {
                *v *= 1e-250;
            }
        }
    }
    let total = vals[0] + 2.0 * vals[1..].iter().sum::<f64>();
    let mut coeffs: Vec<f64> = vals.iter().map(|v| v / total).collect();
    let keep = coeffs
        .iter()
        .rposition(|&c| c > 1e-18)
        .map(|k| k + 1)
        .unwrap_or(1);
    coeffs.truncate(keep);
    coeffs
}

fn connected_components(op: &LinearNodeOperator) -> (Vec<usize>, usize) {
    let n = op.n();
    if op.has_low_rank() {
        return (vec![0; n], usize::from(n > 0));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let sparse = op.sparse_part();
    for i in 0..n {
        let (cols, vals) = sparse.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i && v != 0.0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut comp = vec![0usize; n];
    let mut count = 0;
    for i in 0..n {
        let root = find(&mut parent, i);
        if labels[root] == usize::MAX {
            labels[root] = count;
            count += 1;
        }
        comp[i] = labels[root];
    }
    (comp, count)
}

fn max_abs(a: &ArrayView2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Column means `(𝟙ᵀH)/N`: the stationary value of each class under diffusion
/// on a connected graph.
pub fn stationary_profile(h: &ArrayView2<f64>) -> Vec<f64> {
    let n = h.nrows().max(1) as f64;
    h.sum_axis(Axis(0)).iter().map(|s| s / n).collect()
}

/// Settings for building the time grid of an overshoot scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    /// Number of log-spaced points.
    pub points: usize,
    /// Smallest log-spaced time.
    pub t0: f64,
    /// The scan stops once every entry is this close to its limit.
    pub stationarity_eps: f64,
    /// Entries of `Ω` at or below this value are treated as zero.
    pub overshoot_eps: f64,
    /// The horizon is this multiple of `1/λ̂`.
    pub horizon_factor: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            points: 200,
            t0: 1e-3,
            stationarity_eps: 1e-8,
            overshoot_eps: 1e-10,
            horizon_factor: 100.0,
        }
    }
}

/// Increasing list of scan times starting at `t_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    stationarity_eps: f64,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>, stationarity_eps: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(GdrError::Parameter("time grid must not be empty".into()));
        }
        if !(points[0] >= 0.0) || points.iter().any(|t| !t.is_finite()) {
            return Err(GdrError::Parameter(
                "time grid must start at a finite t_min >= 0".into(),
            ));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GdrError::Parameter(
                "time grid must be strictly increasing".into(),
            ));
        }
        Ok(TimeGrid {
            points,
            stationarity_eps,
        })
    }

    /// `t_min` followed by `cfg.points` log-spaced times from
    /// `max(t_min, t0)` to `t_max`.
    pub fn log_spaced(t_min: f64, t_max: f64, cfg: &GridConfig) -> Result<Self> {
        if !(t_min >= 0.0) {
            return Err(GdrError::Parameter(format!("t_min must be >= 0, got {t_min}")));
        }
        let mut points = vec![t_min];
        let lo = t_min.max(cfg.t0);
        if t_max > lo && cfg.points > 0 {
            points.extend(log_space(lo, t_max, cfg.points));
        }
        points.dedup_by(|b, a| *b <= *a);
        TimeGrid::new(points, cfg.stationarity_eps)
    }

    /// Grid from `t_min` up to the engine's adaptive horizon
    /// `horizon_factor / λ̂`.
    pub fn adaptive(engine: &DiffusionEngine, t_min: f64, cfg: &GridConfig) -> Result<Self> {
        let t_max = adaptive_horizon(engine, cfg);
        TimeGrid::log_spaced(t_min, t_max.max(t_min), cfg)
    }

    pub fn t_min(&self) -> f64 {
        self.points[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn stationarity_eps(&self) -> f64 {
        self.stationarity_eps
    }
}

/// `horizon_factor / λ̂`, capped to keep the grid finite on graphs without a
/// nonzero eigenvalue.
pub fn adaptive_horizon(engine: &DiffusionEngine, cfg: &GridConfig) -> f64 {
    let lam = engine.smallest_nonzero_eigenvalue();
    if lam.is_finite() {
        (cfg.horizon_factor / lam).max(cfg.t0)
    } else {
        cfg.t0
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| {
            if k + 1 == n {
                hi
            } else {
                (a + (b - a) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// `Ω` together with the row-wise class of the largest overshoot.
#[derive(Debug, Clone, PartialEq)]
pub struct OvershootResult {
    pub omega: Array2<f64>,
    /// `None` marks nodes without any overshoot.
    pub kappa_omega: Vec<Option<usize>>,
}

impl OvershootResult {
    /// Derive the row-wise argmax from a clipped overshoot matrix.
    pub fn from_omega(omega: Array2<f64>) -> Self {
        let kappa_omega = omega
            .outer_iter()
            .map(|row| {
                let mut best: Option<(usize, f64)> = None;
                for (j, &v) in row.iter().enumerate() {
                    if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                        best = Some((j, v));
                    }
                }
                best.map(|(j, _)| j)
            })
            .collect();
        OvershootResult { omega, kappa_omega }
    }

    /// Classes as `1..=c` with `0` for non-overshooting nodes.
    pub fn kappa_with_zero_marker(&self) -> Vec<usize> {
        self.kappa_omega.iter().map(|k| k.map_or(0, |j| j + 1)).collect()
    }

    pub fn n_overshooting(&self) -> usize {
        self.kappa_omega.iter().filter(|k| k.is_some()).count()
    }
}

/// Scan one class column over `points`, returning the running maximum of the
/// trajectory restricted to each segment `[checkpoints[s], checkpoints[s+1])`.
fn scan_column(
    engine: &DiffusionEngine,
    column: ArrayView1<f64>,
    limit: ArrayView1<f64>,
    points: &[f64],
    segment: &[usize],
    n_segments: usize,
    stationarity_eps: f64,
) -> Result<Vec<Array1<f64>>> {
    let n = column.len();
    let mut seg_max = vec![Array1::from_elem(n, f64::NEG_INFINITY); n_segments];
    let b = column.to_owned().insert_axis(Axis(1));
    let dense_coeffs = engine.spectral.as_ref().map(|s| s.vectors.t().dot(&b));
    let mut state = b.clone();
    let mut t_cur = 0.0;
    for (k, &t) in points.iter().enumerate() {
        state = match (&dense_coeffs, engine.spectral.as_ref()) {
            (Some(c), Some(s)) => {
                if t == 0.0 {
                    b.clone()
                } else {
                    s.spectral_eval(&c.view(), t)
                }
            }
            _ => engine.expm_action(&state.view(), t - t_cur)?,
        };
        t_cur = t;
        let current = state.column(0);
        if current.iter().any(|v| !v.is_finite()) {
            return Err(GdrError::NonFinite {
                layer: "diffusion scan".into(),
            });
        }
        let seg = segment[k];
        seg_max[seg].zip_mut_with(&current, |m, &v| *m = m.max(v));
        let deviation = current
            .iter()
            .zip(limit.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if deviation < stationarity_eps {
            // Every later time is within eps of the limit, so later
            // segments see the limit itself.
            for later in seg_max.iter_mut().skip(seg + 1) {
                later.zip_mut_with(&limit, |m, &v| *m = m.max(v));
            }
            break;
        }
    }
    Ok(seg_max)
}

fn omega_from_max(max: &Array2<f64>, pi: &[f64], overshoot_eps: f64) -> OvershootResult {
    let mut omega = max.clone();
    for mut row in omega.outer_iter_mut() {
        for (v, &p) in row.iter_mut().zip(pi) {
            let over = *v - p;
            *v = if over > overshoot_eps { over } else { 0.0 };
        }
    }
    OvershootResult::from_omega(omega)
}

/// `Ω = ReLU(max_{t ∈ grid} (e^{-tL} H − 𝟙 πᵀ))` with `π` the column means of
/// `H`, and its row-wise argmax.
///
/// The maximum is taken over the grid points; the scan of a column ends as soon
/// as its trajectory is within `grid.stationarity_eps()` of its limit.
pub fn overshoot_matrix(
    engine: &DiffusionEngine,
    h: &ArrayView2<f64>,
    grid: &TimeGrid,
    overshoot_eps: f64,
) -> Result<OvershootResult> {
    let mut sweep = overshoot_sweep_on_points(
        engine,
        h,
        &[grid.t_min()],
        grid.points(),
        grid.stationarity_eps(),
        overshoot_eps,
    )?;
    Ok(sweep.pop().unwrap())
}

/// `Ω` for several burn-in times at once.
///
/// A single scan runs over the union of `t_mins` and the log-spaced grid from
/// `t0` to the adaptive horizon; the result for each `t_min` uses the grid
/// points at or after it.
pub fn overshoot_sweep(
    engine: &DiffusionEngine,
    h: &ArrayView2<f64>,
    t_mins: &[f64],
    cfg: &GridConfig,
) -> Result<Vec<OvershootResult>> {
    if t_mins.is_empty() {
        return Err(GdrError::Parameter("t_min grid must not be empty".into()));
    }
    if t_mins.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(GdrError::Parameter("t_min values must be finite and >= 0".into()));
    }
    let mut sorted: Vec<f64> = t_mins.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let horizon = adaptive_horizon(engine, cfg);
    let mut points = sorted.clone();
    let lo = sorted[0].max(cfg.t0);
    if horizon > lo {
        points.extend(log_space(lo, horizon, cfg.points));
    }
    points.sort_by(f64::total_cmp);
    points.dedup();
    let results = overshoot_sweep_on_points(
        engine,
        h,
        &sorted,
        &points,
        cfg.stationarity_eps,
        cfg.overshoot_eps,
    )?;
    Ok(t_mins
        .iter()
        .map(|t| {
            let idx = sorted.iter().position(|s| s == t).unwrap();
            results[idx].clone()
        })
        .collect())
}

fn overshoot_sweep_on_points(
    engine: &DiffusionEngine,
    h: &ArrayView2<f64>,
    checkpoints: &[f64],
    points: &[f64],
    stationarity_eps: f64,
    overshoot_eps: f64,
) -> Result<Vec<OvershootResult>> {
    if h.nrows() != engine.n() {
        return Err(GdrError::Input(format!(
            "assignment matrix has {} rows, graph has {} nodes",
            h.nrows(),
            engine.n()
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(GdrError::Input("non-finite entries in assignment matrix".into()));
    }
    // Points before the first checkpoint never contribute.
    let points: Vec<f64> = points.iter().copied().filter(|&t| t >= checkpoints[0]).collect();
    let segment: Vec<usize> = points
        .iter()
        .map(|&t| checkpoints.iter().rposition(|&c| c <= t).unwrap())
        .collect();
    let n_seg = checkpoints.len();
    let pi = stationary_profile(h);
    let limit = engine.stationary_limit(h);
    let columns: Vec<Vec<Array1<f64>>> = (0..h.ncols())
        .into_par_iter()
        .map(|j| {
            scan_column(
                engine,
                h.column(j),
                limit.column(j),
                &points,
                &segment,
                n_seg,
                stationarity_eps,
            )
        })
        .collect::<Result<_>>()?;
    let n = h.nrows();
    let c = h.ncols();
    let mut out = Vec::with_capacity(n_seg);
    let mut suffix = Array2::from_elem((n, c), f64::NEG_INFINITY);
    for s in (0..n_seg).rev() {
        for (j, col) in columns.iter().enumerate() {
            suffix.column_mut(j).zip_mut_with(&col[s], |m, &v| *m = m.max(v));
        }
        out.push(omega_from_max(&suffix, &pi, overshoot_eps));
    }
    out.reverse();
    Ok(out)
}
