//! Python module `gdr`: graphs, diffusion operators, overshoot and the
//! experiment runners of `gdr-core`.
//!
//! Matrices cross the boundary as lists of rows. Anything indexable as a
//! sequence of float sequences (including 2-D numpy arrays) is accepted.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError};
use pyo3::prelude::*;

use gdr_core::data_io::{self, SplitTag};
use gdr_core::diffusion::{self, DiffusionEngine, ExpmMethod, GridConfig};
use gdr_core::experiment::{self, ExperimentConfig, ReportRow, ResultReport, RunOutput};
use gdr_core::graph::{self, LinearNodeOperator, SparseGraph};
use gdr_core::synthetic::PlantedPartition;
use gdr_core::GdrError;

create_exception!(
    gdr,
    GdrException,
    PyException,
    "Base class of errors raised by gdr."
);
create_exception!(
    gdr,
    ParameterError,
    GdrException,
    "Invalid parameter or configuration."
);
create_exception!(
    gdr,
    DataError,
    GdrException,
    "Malformed or inconsistent input data."
);
create_exception!(
    gdr,
    NumericalError,
    GdrException,
    "Non-finite values or failed convergence."
);

fn to_py(err: GdrError) -> PyErr {
    let msg = err.to_string();
    match err.root() {
        GdrError::Config(_) | GdrError::Parameter(_) => ParameterError::new_err(msg),
        GdrError::NonFinite { .. } | GdrError::Diverged { .. } | GdrError::PagerankNotConverged { .. } => {
            NumericalError::new_err(msg)
        }
        GdrError::Io { .. } => PyOSError::new_err(msg),
        _ => DataError::new_err(msg),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ParameterError::new_err(
            "matrix rows must all have the same length",
        ));
    }
    let nrows = rows.len();
    Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect())
        .map_err(|e| ParameterError::new_err(e.to_string()))
}

type Rows = Vec<Vec<f64>>;

fn to_rows(a: &Array2<f64>) -> Rows {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// A weighted graph on nodes `0..n`.
#[pyclass(name = "Graph", frozen, module = "gdr")]
struct PyGraph {
    inner: SparseGraph,
}

#[pymethods]
impl PyGraph {
    /// `edges` holds `(src, dst, weight)` triples. Undirected graphs list both
    /// orientations of every edge.
    #[new]
    #[pyo3(signature = (n, edges, directed = false))]
    fn new(n: usize, edges: Vec<(usize, usize, f64)>, directed: bool) -> PyResult<Self> {
        let inner = SparseGraph::new(n, edges, directed).map_err(to_py)?;
        Ok(PyGraph { inner })
    }

    /// Undirected graph from one `(u, v, weight)` triple per edge.
    #[staticmethod]
    fn undirected(n: usize, pairs: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        let inner = SparseGraph::undirected_from_pairs(n, pairs).map_err(to_py)?;
        Ok(PyGraph { inner })
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    #[getter]
    fn directed(&self) -> bool {
        self.inner.is_directed()
    }

    #[getter]
    fn total_weight(&self) -> f64 {
        self.inner.total_weight()
    }

    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.inner
            .edges()
            .iter()
            .map(|e| (e.src, e.dst, e.weight))
            .collect()
    }

    fn transpose(&self) -> Self {
        PyGraph {
            inner: self.inner.transpose(),
        }
    }

    fn laplacian(&self) -> PyResult<PyOperator> {
        graph::build_laplacian(&self.inner)
            .map(PyOperator::from)
            .map_err(to_py)
    }

    fn gcn_operator(&self) -> PyOperator {
        graph::build_gcn_operator(&self.inner).into()
    }

    #[pyo3(signature = (alpha = graph::DEFAULT_ALPHA))]
    fn pdir(&self, alpha: f64) -> PyResult<PyOperator> {
        graph::build_pdir(&self.inner, alpha)
            .map(PyOperator::from)
            .map_err(to_py)
    }

    #[pyo3(signature = (alpha = graph::DEFAULT_ALPHA))]
    fn ldir(&self, alpha: f64) -> PyResult<PyOperator> {
        graph::build_ldir(&self.inner, alpha)
            .map(PyOperator::from)
            .map_err(to_py)
    }

    #[pyo3(signature = (alpha = graph::DEFAULT_ALPHA))]
    fn ldir_transpose(&self, alpha: f64) -> PyResult<PyOperator> {
        graph::build_ldir_transpose(&self.inner, alpha)
            .map(PyOperator::from)
            .map_err(to_py)
    }

    /// Stationary distribution of the teleporting random walk.
    #[pyo3(signature = (alpha = graph::DEFAULT_ALPHA))]
    fn pagerank(&self, alpha: f64) -> PyResult<Vec<f64>> {
        let p = graph::build_pdir(&self.inner, alpha).map_err(to_py)?;
        graph::pagerank(&p).map(|pr| pr.values).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(n_nodes={}, n_edges={}, directed={})",
            self.inner.n_nodes(),
            self.inner.n_edges(),
            if self.inner.is_directed() { "True" } else { "False" }
        )
    }
}

/// A linear operator on node signals (Laplacian, GCN, walk or directed Laplacian).
#[pyclass(name = "Operator", frozen, module = "gdr")]
struct PyOperator {
    inner: LinearNodeOperator,
}

impl From<LinearNodeOperator> for PyOperator {
    fn from(inner: LinearNodeOperator) -> Self {
        PyOperator { inner }
    }
}

#[pymethods]
impl PyOperator {
    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.inner.kind()).to_lowercase()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn alpha(&self) -> Option<f64> {
        self.inner.alpha()
    }

    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.to_dense())
    }

    fn apply(&self, b: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let b = to_array(b)?;
        if b.nrows() != self.inner.n() {
            return Err(ParameterError::new_err(format!(
                "expected {} rows, got {}",
                self.inner.n(),
                b.nrows()
            )));
        }
        Ok(to_rows(&self.inner.apply(&b.view())))
    }

    fn __repr__(&self) -> String {
        format!("Operator(kind={}, n={})", self.kind(), self.inner.n())
    }
}

/// Heat-kernel actions `e^{-tL} B` and overshoot scans for one operator.
#[pyclass(name = "Diffusion", frozen, module = "gdr")]
struct PyDiffusion {
    inner: DiffusionEngine,
}

#[pymethods]
impl PyDiffusion {
    /// `method` is one of `auto`, `dense-eig`, `taylor-stepping` or
    /// `chebyshev-stepping`.
    #[new]
    #[pyo3(signature = (operator, method = "auto", tol = 1e-8))]
    fn new(operator: &PyOperator, method: &str, tol: f64) -> PyResult<Self> {
        let method: ExpmMethod = method.parse().map_err(to_py)?;
        let inner = DiffusionEngine::new(operator.inner.clone(), method, tol).map_err(to_py)?;
        Ok(PyDiffusion { inner })
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method().as_str()
    }

    fn expm(&self, py: Python<'_>, b: Vec<Vec<f64>>, t: f64) -> PyResult<Vec<Vec<f64>>> {
        let b = to_array(b)?;
        let out = py
            .detach(|| self.inner.expm_action(&b.view(), t))
            .map_err(to_py)?;
        Ok(to_rows(&out))
    }

    /// Clipped overshoot `Ω` of the class columns of `h` over times `>= t_min`,
    /// and for each node the class of its largest overshoot (`None` if none).
    #[pyo3(signature = (h, t_min = 0.0, points = 200))]
    fn overshoot(
        &self,
        py: Python<'_>,
        h: Vec<Vec<f64>>,
        t_min: f64,
        points: usize,
    ) -> PyResult<(Rows, Vec<Option<usize>>)> {
        let h = to_array(h)?;
        let cfg = GridConfig {
            points,
            ..GridConfig::default()
        };
        let mut res = py
            .detach(|| diffusion::overshoot_sweep(&self.inner, &h.view(), &[t_min], &cfg))
            .map_err(to_py)?;
        let res = res.pop().expect("one result per t_min");
        Ok((to_rows(&res.omega), res.kappa_omega))
    }
}

/// A dataset directory loaded and checked against its manifest.
#[pyclass(name = "Dataset", frozen, module = "gdr")]
struct PyDataset {
    inner: data_io::Dataset,
    #[pyo3(get)]
    digest: String,
}

#[pymethods]
impl PyDataset {
    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.features.ncols()
    }

    #[getter]
    fn graph(&self) -> PyGraph {
        PyGraph {
            inner: self.inner.graph.clone(),
        }
    }

    #[getter]
    fn labels(&self) -> Vec<Option<usize>> {
        self.inner.labels.clone()
    }

    /// Split tag of every node: `train`, `val`, `test` or `unlabeled`.
    #[getter]
    fn split(&self) -> Vec<&'static str> {
        self.inner.split.tags().iter().map(|t| t.as_str()).collect()
    }

    fn nodes(&self, tag: &str) -> PyResult<Vec<usize>> {
        let tag = match tag {
            "train" => SplitTag::Train,
            "val" => SplitTag::Val,
            "test" => SplitTag::Test,
            "unlabeled" => SplitTag::Unlabeled,
            other => return Err(ParameterError::new_err(format!("unknown split tag '{other}'"))),
        };
        Ok(self.inner.split.nodes(tag))
    }

    /// Non-zero features as `(node, feature, value)` triples.
    fn feature_triplets(&self) -> Vec<(usize, usize, f64)> {
        self.inner.features.triplets().collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(name={:?}, n_nodes={}, n_classes={}, digest={})",
            self.inner.name,
            self.inner.n_nodes(),
            self.inner.n_classes,
            self.digest
        )
    }
}

/// Load a dataset directory. Relative paths resolve against `$GDR_DATA_ROOT`.
#[pyfunction]
fn load_dataset(path: PathBuf) -> PyResult<PyDataset> {
    let (inner, manifest) = data_io::load_dataset(&data_io::resolve_dataset_path(&path)).map_err(to_py)?;
    Ok(PyDataset {
        inner,
        digest: manifest.combined_digest(),
    })
}

/// Write a seeded planted-partition dataset and return its digest.
#[pyfunction]
#[pyo3(signature = (
    path, nodes = 300, classes = 3, mean_degree = 4.0, homophily = 0.8, features = 60,
    train_per_class = 10, val = 60, test = 120, directed = false, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn synth(
    path: PathBuf,
    nodes: usize,
    classes: usize,
    mean_degree: f64,
    homophily: f64,
    features: usize,
    train_per_class: usize,
    val: usize,
    test: usize,
    directed: bool,
    seed: u64,
) -> PyResult<String> {
    let params = PlantedPartition {
        n_nodes: nodes,
        n_classes: classes,
        mean_degree,
        homophily,
        n_features: features,
        train_per_class,
        n_val: val,
        n_test: test,
        directed,
        seed,
        ..PlantedPartition::default()
    };
    let d = params.generate().map_err(to_py)?;
    let manifest = data_io::write_dataset(&path, &d).map_err(to_py)?;
    Ok(manifest.combined_digest())
}

/// A complete experiment configuration, as TOML text, with defaults for
/// everything not given here.
#[pyfunction]
#[pyo3(signature = (dataset, prior = None, output_dir = None))]
fn default_config(dataset: PathBuf, prior: Option<&str>, output_dir: Option<PathBuf>) -> PyResult<String> {
    let mut cfg = ExperimentConfig::for_dataset(dataset);
    if let Some(prior) = prior {
        cfg.model.prior = prior.parse().map_err(to_py)?;
    }
    if let Some(dir) = output_dir {
        cfg.run.output_dir = dir;
    }
    Ok(cfg.to_toml_string())
}

#[derive(IntoPyObject)]
struct PyReportRow {
    dataset: String,
    digest: String,
    method: String,
    direction: String,
    seed: u64,
    t_min: Option<f64>,
    accuracy: f64,
    prior_accuracy: Option<f64>,
    delta: Option<f64>,
}

impl From<ReportRow> for PyReportRow {
    fn from(r: ReportRow) -> Self {
        PyReportRow {
            dataset: r.dataset,
            digest: r.digest,
            method: r.method,
            direction: r.direction,
            seed: r.seed,
            t_min: r.t_min,
            accuracy: r.accuracy,
            prior_accuracy: r.prior_accuracy,
            delta: r.delta,
        }
    }
}

#[derive(IntoPyObject)]
struct PyRun {
    output_dir: PathBuf,
    rows: Vec<PyReportRow>,
    priors: Vec<PathBuf>,
    traces: Vec<PathBuf>,
}

impl From<RunOutput> for PyRun {
    fn from(out: RunOutput) -> Self {
        PyRun {
            output_dir: out.output_dir,
            rows: out.report.rows.into_iter().map(Into::into).collect(),
            priors: out.priors,
            traces: out.traces,
        }
    }
}

fn run_with(
    py: Python<'_>,
    config: &str,
    runner: fn(&ExperimentConfig) -> gdr_core::Result<RunOutput>,
) -> PyResult<PyRun> {
    let cfg = ExperimentConfig::from_toml_str(config).map_err(to_py)?;
    py.detach(|| runner(&cfg)).map(PyRun::from).map_err(to_py)
}

/// Run graph diffusion reclassification from a TOML configuration. Returns a
/// dict with the output directory, report rows and written prior files.
#[pyfunction]
fn run_gdr(py: Python<'_>, config: &str) -> PyResult<PyRun> {
    run_with(py, config, experiment::run_gdr)
}

/// Train the configured model once per seed.
#[pyfunction]
fn run_train(py: Python<'_>, config: &str) -> PyResult<PyRun> {
    run_with(py, config, experiment::run_train)
}

/// Merge report CSV files and return the merged CSV text.
#[pyfunction]
fn report_merge(paths: Vec<PathBuf>) -> PyResult<String> {
    let reports = paths
        .iter()
        .map(|p| ResultReport::read_csv(p))
        .collect::<gdr_core::Result<Vec<_>>>()
        .map_err(to_py)?;
    experiment::report_merge(&reports)
        .map(|r| r.to_csv_string())
        .map_err(to_py)
}

#[pymodule]
fn gdr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("GdrError", py.get_type::<GdrException>())?;
    m.add("ParameterError", py.get_type::<ParameterError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyDiffusion>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_gdr, m)?)?;
    m.add_function(wrap_pyfunction!(run_train, m)?)?;
    m.add_function(wrap_pyfunction!(report_merge, m)?)?;
    Ok(())
}
