//! Config-driven experiment pipelines: GDR with a validated burn-in time,
//! neural training runs, and merging of result reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::{
    self, accuracy, centroids, gdr_update, hard_assign, import_external_prior, project, stack_with_training,
    uniform_prior, write_external_prior, AssignmentMatrix, HardAssignment,
};
use crate::data_io::{load_dataset, resolve_dataset_path, Dataset, DatasetManifest, SplitTag};
use crate::diffusion::{overshoot_sweep, DiffusionEngine, ExpmMethod, GridConfig, OvershootResult};
use crate::error::{GdrError, Result};
use crate::graph::{
    build_gcn_operator, build_laplacian, build_ldir, build_ldir_transpose, SparseGraph, DEFAULT_ALPHA,
};
use crate::neural::{self, PropagationSpec, TrainConfig, TrainData, TrainOutcome};
use crate::sparse::CsrMatrix;

pub const REPORT_FILE: &str = "report.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.txt";
pub const TIMINGS_FILE: &str = "timings.csv";

/// Which orientation of the graph drives propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Undirected,
    Forward,
    Backward,
    Augmented,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Undirected => "undirected",
            Direction::Forward => "forward",
            Direction::Backward => "backward",
            Direction::Augmented => "augmented",
        }
    }
}

impl FromStr for Direction {
    type Err = GdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "undirected" => Ok(Direction::Undirected),
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            "augmented" => Ok(Direction::Augmented),
            other => Err(GdrError::Config(format!("unknown graph direction '{other}'"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    Gcn,
    DiffGcn,
    AugGcn,
    AugDiffGcn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Gcn => "gcn",
            ModelKind::DiffGcn => "diff-gcn",
            ModelKind::AugGcn => "aug-gcn",
            ModelKind::AugDiffGcn => "aug-diff-gcn",
        }
    }

    pub fn is_augmented(self) -> bool {
        matches!(self, ModelKind::AugGcn | ModelKind::AugDiffGcn)
    }
}

/// Source of the prior class assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PriorSpec {
    Uniform,
    Projection,
    External(PathBuf),
    Neural(ModelKind),
}

impl PriorSpec {
    pub fn model(&self) -> Option<ModelKind> {
        match self {
            PriorSpec::Neural(m) => Some(*m),
            _ => None,
        }
    }

    /// Short name used in report rows.
    pub fn label(&self) -> &str {
        match self {
            PriorSpec::Uniform => "uniform",
            PriorSpec::Projection => "projection",
            PriorSpec::External(_) => "external",
            PriorSpec::Neural(m) => m.as_str(),
        }
    }
}

impl FromStr for PriorSpec {
    type Err = GdrError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "uniform" => PriorSpec::Uniform,
            "projection" => PriorSpec::Projection,
            "mlp" => PriorSpec::Neural(ModelKind::Mlp),
            "gcn" => PriorSpec::Neural(ModelKind::Gcn),
            "diff-gcn" => PriorSpec::Neural(ModelKind::DiffGcn),
            "aug-gcn" => PriorSpec::Neural(ModelKind::AugGcn),
            "aug-diff-gcn" => PriorSpec::Neural(ModelKind::AugDiffGcn),
            other => match other.strip_prefix("external:") {
                Some(path) if !path.is_empty() => PriorSpec::External(PathBuf::from(path)),
                _ => return Err(GdrError::Config(format!("unknown prior '{other}'"))),
            },
        })
    }
}

impl fmt::Display for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSpec::External(p) => write!(f, "external:{}", p.display()),
            other => f.write_str(other.label()),
        }
    }
}

impl TryFrom<String> for PriorSpec {
    type Error = GdrError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PriorSpec> for String {
    fn from(p: PriorSpec) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub prior: PriorSpec,
    pub direction: Direction,
    /// Teleportation parameter of the directed operators.
    pub alpha: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            prior: PriorSpec::Uniform,
            direction: Direction::Undirected,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdrSection {
    pub t_min_grid: Vec<f64>,
    pub grid_points: usize,
    pub t0: f64,
    pub horizon_factor: f64,
    pub stationarity_eps: f64,
    pub overshoot_eps: f64,
    pub expm_method: String,
    pub expm_tol: f64,
}

impl Default for GdrSection {
    fn default() -> Self {
        let g = GridConfig::default();
        GdrSection {
            t_min_grid: vec![0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
            grid_points: g.points,
            t0: g.t0,
            horizon_factor: g.horizon_factor,
            stationarity_eps: g.stationarity_eps,
            overshoot_eps: g.overshoot_eps,
            expm_method: ExpmMethod::Auto.as_str().into(),
            expm_tol: 1e-8,
        }
    }
}

impl GdrSection {
    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            points: self.grid_points,
            t0: self.t0,
            stationarity_eps: self.stationarity_eps,
            overshoot_eps: self.overshoot_eps,
            horizon_factor: self.horizon_factor,
        }
    }

    pub fn method(&self) -> Result<ExpmMethod> {
        self.expm_method
            .parse()
            .map_err(|e: GdrError| GdrError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub hidden_units: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub early_stopping: Option<usize>,
    pub t_init: f64,
    /// Scale feature rows to unit sum before training.
    pub normalize_features: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            hidden_units: d.hidden_units,
            dropout: d.dropout,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            weight_decay: d.weight_decay,
            early_stopping: d.early_stopping,
            t_init: d.t_init,
            normalize_features: true,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden_units: self.hidden_units,
            dropout: self.dropout,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed,
            early_stopping: self.early_stopping,
            t_init: self.t_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Trained models are run once per seed; deterministic priors use the
    /// first seed only.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("gdr-output"),
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub gdr: GdrSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub run: RunSection,
}

impl ExperimentConfig {
    /// Defaults everywhere except the dataset path.
    pub fn for_dataset(path: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            dataset: DatasetSection { path: path.into() },
            model: ModelSection::default(),
            gdr: GdrSection::default(),
            train: TrainSection::default(),
            run: RunSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| GdrError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GdrError::io(path, e))?;
        ExperimentConfig::from_toml_str(&text)
            .map_err(|e| GdrError::Config(format!("{}: {}", path.display(), e.root())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GdrError::Config(msg));
        let g = &self.gdr;
        if g.t_min_grid.is_empty() {
            return bad("gdr.t_min_grid must not be empty".into());
        }
        if g.t_min_grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return bad("gdr.t_min_grid values must be finite and >= 0".into());
        }
        if !(g.t0 > 0.0) || !(g.horizon_factor > 0.0) {
            return bad("gdr.t0 and gdr.horizon_factor must be positive".into());
        }
        if !(g.stationarity_eps > 0.0) || !(g.overshoot_eps >= 0.0) || !(g.expm_tol > 0.0) {
            return bad("gdr tolerances must be positive".into());
        }
        g.method()?;
        if !(self.model.alpha > 0.0 && self.model.alpha <= 1.0) {
            return bad(format!(
                "model.alpha must lie in (0, 1], got {}",
                self.model.alpha
            ));
        }
        if self.run.seeds.is_empty() {
            return bad("run.seeds must not be empty".into());
        }
        self.train
            .train_config(0)
            .validate()
            .map_err(|e| GdrError::Config(format!("train: {e}")))?;
        if let Some(model) = self.model.prior.model() {
            let augmented = self.model.direction == Direction::Augmented;
            if model.is_augmented() != augmented {
                return bad(format!(
                    "model {} cannot be used with direction {}",
                    model.as_str(),
                    self.model.direction
                ));
            }
        }
        Ok(())
    }
}

/// Percentage rounded to one decimal.
pub fn percent(fraction: f64) -> f64 {
    (fraction * 1000.0).round() / 10.0
}

/// One line of a result report. Accuracies are percentages with one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub digest: String,
    pub method: String,
    pub direction: String,
    pub seed: u64,
    pub t_min: Option<f64>,
    pub accuracy: f64,
    pub prior_accuracy: Option<f64>,
    /// `accuracy − prior_accuracy` for GDR rows.
    pub delta: Option<f64>,
}

const REPORT_COLUMNS: [&str; 9] = [
    "dataset",
    "digest",
    "method",
    "direction",
    "seed",
    "t_min",
    "accuracy",
    "prior_accuracy",
    "delta",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultReport {
    pub rows: Vec<ReportRow>,
}

impl ResultReport {
    /// The report as CSV text with a header line.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(REPORT_COLUMNS).expect("writing to memory");
        }
        for row in &self.rows {
            w.serialize(row).expect("report rows always serialize");
        }
        String::from_utf8(w.into_inner().expect("writing to memory")).expect("csv output is UTF-8")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| GdrError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut rows = Vec::new();
        for row in r.deserialize() {
            rows.push(row.map_err(|e| csv_error(path, e))?);
        }
        Ok(ResultReport { rows })
    }

    /// Mean accuracy over the rows with the given method and direction.
    pub fn mean_accuracy(&self, method: &str, direction: &str) -> Option<f64> {
        let accs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.direction == direction)
            .map(|r| r.accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> GdrError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GdrError::io(path, io),
        other => GdrError::data(path, line, format!("{other:?}")),
    }
}

/// Concatenate reports of the same dataset and sort the rows by method,
/// direction, seed and burn-in time.
pub fn report_merge(reports: &[ResultReport]) -> Result<ResultReport> {
    let mut rows: Vec<ReportRow> = reports.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    if let Some(first) = rows.first() {
        if let Some(other) = rows.iter().find(|r| r.digest != first.digest) {
            return Err(GdrError::Validation(format!(
                "reports come from different datasets ({} {} vs {} {})",
                first.dataset, first.digest, other.dataset, other.digest
            )));
        }
    }
    rows.sort_by(|a, b| {
        (&a.method, &a.direction, a.seed)
            .cmp(&(&b.method, &b.direction, b.seed))
            .then(a.t_min.unwrap_or(-1.0).total_cmp(&b.t_min.unwrap_or(-1.0)))
            .then(a.accuracy.total_cmp(&b.accuracy))
    });
    Ok(ResultReport { rows })
}

/// The graph seen by undirected operators: symmetrized if stored directed.
fn undirected_view(g: &SparseGraph) -> SparseGraph {
    if g.is_directed() {
        g.symmetrized()
    } else {
        g.clone()
    }
}

/// `L_dir` rescaled by the total edge weight so that diffusion times are
/// comparable with the combinatorial Laplacian: for a symmetric graph and
/// `α = 1` the result equals `L`.
fn scaled_ldir(g: &SparseGraph, alpha: f64, backward: bool) -> Result<crate::graph::LinearNodeOperator> {
    let directed = g.as_directed();
    let op = if backward {
        build_ldir_transpose(&directed, alpha)?
    } else {
        build_ldir(&directed, alpha)?
    };
    let w = directed.total_weight();
    Ok(if w > 0.0 { op.scaled(w) } else { op })
}

/// Diffusion engines for the configured direction: one, or two for the
/// augmented case.
pub fn diffusion_engines(
    g: &SparseGraph,
    direction: Direction,
    alpha: f64,
    method: ExpmMethod,
    tol: f64,
) -> Result<Vec<Arc<DiffusionEngine>>> {
    let ops = match direction {
        Direction::Undirected => vec![build_laplacian(&undirected_view(g))?],
        Direction::Forward => vec![scaled_ldir(g, alpha, false)?],
        Direction::Backward => vec![scaled_ldir(g, alpha, true)?],
        Direction::Augmented => vec![scaled_ldir(g, alpha, false)?, scaled_ldir(g, alpha, true)?],
    };
    ops.into_iter()
        .map(|op| DiffusionEngine::new(op, method, tol).map(Arc::new))
        .collect()
}

/// Propagation for a neural model on the configured direction.
pub fn propagation_for(
    model: ModelKind,
    g: &SparseGraph,
    direction: Direction,
    alpha: f64,
    method: ExpmMethod,
    tol: f64,
) -> Result<PropagationSpec> {
    let gcn_op = |graph: &SparseGraph| build_gcn_operator(graph);
    match model {
        ModelKind::Mlp => Ok(PropagationSpec::identity()),
        ModelKind::Gcn => {
            let graph = match direction {
                Direction::Undirected => undirected_view(g),
                Direction::Forward => g.as_directed(),
                Direction::Backward => g.as_directed().transpose(),
                Direction::Augmented => {
                    return Err(GdrError::Config(
                        "gcn needs a single direction; use aug-gcn".into(),
                    ))
                }
            };
            PropagationSpec::gcn(gcn_op(&graph))
        }
        ModelKind::AugGcn => {
            let fw = g.as_directed();
            PropagationSpec::aug_gcn(gcn_op(&fw), gcn_op(&fw.transpose()))
        }
        ModelKind::DiffGcn => {
            let mut engines = diffusion_engines(g, direction, alpha, method, tol)?;
            if engines.len() != 1 {
                return Err(GdrError::Config(
                    "diff-gcn needs a single direction; use aug-diff-gcn".into(),
                ));
            }
            Ok(PropagationSpec::diffusion(engines.remove(0)))
        }
        ModelKind::AugDiffGcn => {
            let mut engines = diffusion_engines(g, Direction::Augmented, alpha, method, tol)?;
            let bw = engines.pop().unwrap();
            let fw = engines.pop().unwrap();
            PropagationSpec::aug_diffusion(fw, bw)
        }
    }
}

/// Result of GDR with the burn-in time chosen on the validation nodes.
#[derive(Debug, Clone)]
pub struct GdrSelection {
    pub t_min: f64,
    pub val_accuracy: f64,
    pub labels: HardAssignment,
    pub overshoot: OvershootResult,
}

/// Run GDR for every `t_min` in the grid and keep the one with the best
/// validation accuracy (the smallest `t_min` on ties).
///
/// With several engines (the bidirectional case) `Ω` is the element-wise
/// maximum of the per-operator overshoot matrices.
pub fn gdr_select(
    engines: &[Arc<DiffusionEngine>],
    stacked: &AssignmentMatrix,
    prior: &HardAssignment,
    truth: &[Option<usize>],
    val: &[usize],
    t_mins: &[f64],
    cfg: &GridConfig,
) -> Result<GdrSelection> {
    let mut per_engine = Vec::with_capacity(engines.len());
    for engine in engines {
        per_engine.push(overshoot_sweep(engine, &stacked.view(), t_mins, cfg)?);
    }
    let mut best: Option<GdrSelection> = None;
    for (k, &t_min) in t_mins.iter().enumerate() {
        let overshoot = if per_engine.len() == 1 {
            per_engine[0][k].clone()
        } else {
            let mut omega = per_engine[0][k].omega.clone();
            for other in &per_engine[1..] {
                omega.zip_mut_with(&other[k].omega, |a, &b| *a = a.max(b));
            }
            OvershootResult::from_omega(omega)
        };
        let labels = gdr_update(prior, &overshoot)?;
        let val_accuracy = accuracy(&labels.labels, truth, val);
        let better = match &best {
            None => true,
            Some(b) => val_accuracy > b.val_accuracy || (val_accuracy == b.val_accuracy && t_min < b.t_min),
        };
        if better {
            best = Some(GdrSelection {
                t_min,
                val_accuracy,
                labels,
                overshoot,
            });
        }
    }
    best.ok_or_else(|| GdrError::Parameter("t_min grid must not be empty".into()))
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ResultReport,
    pub output_dir: PathBuf,
    /// Exported prior files of trained models.
    pub priors: Vec<PathBuf>,
    /// Training traces of trained models.
    pub traces: Vec<PathBuf>,
}

struct Context {
    dataset: Dataset,
    manifest: DatasetManifest,
    digest: String,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    train_mask: Vec<bool>,
    out_dir: PathBuf,
    timings: Vec<(String, f64)>,
}

impl Context {
    fn open(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let start = Instant::now();
        let dir = resolve_dataset_path(&config.dataset.path);
        let (dataset, manifest) = load_dataset(&dir).map_err(|e| e.in_stage("load-dataset"))?;
        let split = &dataset.split;
        let out_dir = config.run.output_dir.clone();
        fs::create_dir_all(&out_dir).map_err(|e| GdrError::io(&out_dir, e))?;
        Ok(Context {
            digest: manifest.combined_digest(),
            train: split.nodes(SplitTag::Train),
            val: split.nodes(SplitTag::Val),
            test: split.nodes(SplitTag::Test),
            train_mask: split.mask(SplitTag::Train),
            dataset,
            manifest,
            out_dir,
            timings: vec![("load-dataset".into(), start.elapsed().as_secs_f64())],
        })
    }

    fn features(&self, normalize: bool) -> CsrMatrix {
        if normalize {
            neural::row_normalize(&self.dataset.features)
        } else {
            self.dataset.features.clone()
        }
    }

    fn row(&self, method: String, direction: Direction, seed: u64) -> ReportRow {
        ReportRow {
            dataset: self.dataset.name.clone(),
            digest: self.digest.clone(),
            method,
            direction: direction.as_str().into(),
            seed,
            t_min: None,
            accuracy: 0.0,
            prior_accuracy: None,
            delta: None,
        }
    }

    fn time(&mut self, stage: String, start: Instant) {
        self.timings.push((stage, start.elapsed().as_secs_f64()));
    }

    /// Train one model and export its trace and eval-mode prior.
    fn train_model(
        &mut self,
        config: &ExperimentConfig,
        model: ModelKind,
        seed: u64,
        spec: &PropagationSpec,
        features: &CsrMatrix,
    ) -> Result<(TrainOutcome, PathBuf, PathBuf)> {
        let start = Instant::now();
        let tag = format!("{}_{}_seed{seed}", model.as_str(), config.model.direction);
        let trace_path = self.out_dir.join(format!("trace_{tag}.csv"));
        let data = TrainData {
            features,
            labels: &self.dataset.labels,
            train: &self.train,
            val: &self.val,
            n_classes: self.dataset.n_classes,
        };
        let mut trace = Vec::new();
        let result = neural::train_recording(spec, &config.train.train_config(seed), data, &mut trace);
        neural::write_trace(&trace_path, &trace)?;
        let outcome = result.map_err(|e| GdrError::Training {
            trace: trace_path.clone(),
            source: Box::new(e),
        })?;
        let prior_path = self.out_dir.join(format!("prior_{tag}.tsv"));
        let all: Vec<usize> = (0..self.dataset.n_nodes()).collect();
        write_external_prior(&prior_path, &outcome.prior.view(), &all)?;
        self.time(format!("train-{tag}"), start);
        Ok((outcome, prior_path, trace_path))
    }

    fn finish(
        &self,
        config: &ExperimentConfig,
        command: &str,
        method: ExpmMethod,
        report: &ResultReport,
    ) -> Result<()> {
        report.write_csv(&self.out_dir.join(REPORT_FILE))?;
        let resolved = config.to_toml_string();
        let path = self.out_dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, &resolved).map_err(|e| GdrError::io(&path, e))?;

        let mut manifest = BTreeMap::new();
        manifest.insert("command".to_string(), command.to_string());
        manifest.insert("tool_version".to_string(), env!("CARGO_PKG_VERSION").to_string());
        manifest.insert(
            "config_sha256".to_string(),
            hex::encode(Sha256::digest(resolved.as_bytes())),
        );
        manifest.insert("dataset".to_string(), self.manifest.name.clone());
        manifest.insert("dataset_digest".to_string(), self.digest.clone());
        for (file, digest) in &self.manifest.digests {
            manifest.insert(format!("digest.{file}"), digest.clone());
        }
        manifest.insert("expm_method".to_string(), method.as_str().to_string());
        manifest.insert("threads".to_string(), rayon::current_num_threads().to_string());
        let text: String = manifest.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let path = self.out_dir.join(RUN_MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| GdrError::io(&path, e))?;

        let mut timings = String::from("stage,seconds\n");
        for (stage, secs) in &self.timings {
            timings.push_str(&format!("{stage},{secs:.3}\n"));
        }
        let path = self.out_dir.join(TIMINGS_FILE);
        fs::write(&path, timings).map_err(|e| GdrError::io(&path, e))
    }
}

/// Build the prior, run GDR with the validated burn-in time, and write the
/// report, resolved config and run manifest to the output directory.
///
/// Trained priors are run once per seed; the other priors once.
pub fn run_gdr(config: &ExperimentConfig) -> Result<RunOutput> {
    let mut ctx = Context::open(config)?;
    let method = config.gdr.method()?;
    let direction = config.model.direction;
    let alpha = config.model.alpha;
    let n = ctx.dataset.n_nodes();
    let c = ctx.dataset.n_classes;

    let start = Instant::now();
    let engines = diffusion_engines(&ctx.dataset.graph, direction, alpha, method, config.gdr.expm_tol)
        .map_err(|e| e.in_stage("build-operator"))?;
    let resolved_method = engines[0].method();
    ctx.time("build-operator".into(), start);

    let seeds: Vec<u64> = match config.model.prior {
        PriorSpec::Neural(_) => config.run.seeds.clone(),
        _ => vec![config.run.seeds[0]],
    };
    let mut report = ResultReport::default();
    let mut priors = Vec::new();
    let mut traces = Vec::new();
    for seed in seeds {
        let start = Instant::now();
        let prior = match &config.model.prior {
            PriorSpec::Uniform => uniform_prior(n, c),
            PriorSpec::Projection => {
                let labels = ctx.dataset.labels_of(&ctx.train)?;
                let train_x = ctx.dataset.feature_rows(&ctx.train);
                centroids(&train_x, &labels, c).and_then(|pi| project(&ctx.dataset.features, &pi))
            }
            PriorSpec::External(path) => {
                let required = ctx.dataset.split.non_training();
                import_external_prior(&resolve_prior_path(path), n, c, &required)
            }
            PriorSpec::Neural(model) => {
                let spec = propagation_for(
                    *model,
                    &ctx.dataset.graph,
                    direction,
                    alpha,
                    method,
                    config.gdr.expm_tol,
                )
                .map_err(|e| e.in_stage("build-operator"))?;
                let features = ctx.features(config.train.normalize_features);
                let (outcome, prior_path, trace_path) =
                    ctx.train_model(config, *model, seed, &spec, &features)?;
                priors.push(prior_path);
                traces.push(trace_path);
                Ok(outcome.prior)
            }
        }
        .map_err(|e| e.in_stage("prior"))?;
        ctx.time(format!("prior-seed{seed}"), start);

        let start = Instant::now();
        let truth = &ctx.dataset.labels.clone();
        let prior_hard = hard_assign(&prior)
            .with_training(&ctx.train_mask, truth)
            .map_err(|e| e.in_stage("prior"))?;
        let stacked = stack_with_training(&prior, &ctx.train_mask, truth).map_err(|e| e.in_stage("prior"))?;
        let selection = gdr_select(
            &engines,
            &stacked,
            &prior_hard,
            truth,
            &ctx.val,
            &config.gdr.t_min_grid,
            &config.gdr.grid_config(),
        )
        .map_err(|e| e.in_stage("gdr"))?;
        ctx.time(format!("gdr-seed{seed}"), start);

        let prior_acc = percent(accuracy(&prior_hard.labels, truth, &ctx.test));
        let gdr_acc = percent(accuracy(&selection.labels.labels, truth, &ctx.test));
        let mut row = ctx.row(format!("gdr({})", config.model.prior.label()), direction, seed);
        row.t_min = Some(selection.t_min);
        row.accuracy = gdr_acc;
        row.prior_accuracy = Some(prior_acc);
        row.delta = Some(((gdr_acc - prior_acc) * 10.0).round() / 10.0);
        log::info!(
            "{} {}: prior {prior_acc:.1} gdr {gdr_acc:.1} (t_min {})",
            ctx.dataset.name,
            row.method,
            selection.t_min
        );
        report.rows.push(row);
    }
    ctx.finish(config, "run-gdr", resolved_method, &report)?;
    Ok(RunOutput {
        report,
        output_dir: ctx.out_dir,
        priors,
        traces,
    })
}

fn resolve_prior_path(path: &Path) -> PathBuf {
    if path.exists() {
        path.to_path_buf()
    } else {
        resolve_dataset_path(path)
    }
}

/// Train the configured model once per seed, report test accuracies and
/// export each model's eval-mode predictions as an external prior file.
pub fn run_train(config: &ExperimentConfig) -> Result<RunOutput> {
    let model = config.model.prior.model().ok_or_else(|| {
        GdrError::Config(format!(
            "run-train needs a neural prior, got '{}'",
            config.model.prior
        ))
    })?;
    let mut ctx = Context::open(config)?;
    let method = config.gdr.method()?;
    let direction = config.model.direction;
    let start = Instant::now();
    let spec = propagation_for(
        model,
        &ctx.dataset.graph,
        direction,
        config.model.alpha,
        method,
        config.gdr.expm_tol,
    )
    .map_err(|e| e.in_stage("build-operator"))?;
    ctx.time("build-operator".into(), start);
    let features = ctx.features(config.train.normalize_features);

    let mut report = ResultReport::default();
    let mut priors = Vec::new();
    let mut traces = Vec::new();
    for &seed in &config.run.seeds {
        let (outcome, prior_path, trace_path) = ctx.train_model(config, model, seed, &spec, &features)?;
        let predicted = classifiers::hard_assign(&outcome.prior).labels;
        let mut row = ctx.row(model.as_str().into(), direction, seed);
        row.accuracy = percent(accuracy(&predicted, &ctx.dataset.labels, &ctx.test));
        log::info!(
            "{} {} seed {seed}: test {:.1}",
            ctx.dataset.name,
            row.method,
            row.accuracy
        );
        report.rows.push(row);
        priors.push(prior_path);
        traces.push(trace_path);
    }
    ctx.finish(
        config,
        "run-train",
        method.resolve(ctx.dataset.n_nodes()),
        &report,
    )?;
    Ok(RunOutput {
        report,
        output_dir: ctx.out_dir,
        priors,
        traces,
    })
}
