//! Prior class assignments (uniform, centroid projection, imported from a
//! file), hard assignments, and the reclassification update driven by the
//! overshoot matrix.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::data_io::format_float;
use crate::diffusion::OvershootResult;
use crate::error::{GdrError, Result};
use crate::sparse::CsrMatrix;

const ROW_SUM_TOL: f64 = 1e-9;
const IMPORT_ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentKind {
    PriorUniform,
    PriorProjection,
    PriorExternal,
    FullStacked,
}

/// Row-stochastic class-probability matrix, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    values: Array2<f64>,
    kind: AssignmentKind,
}

impl AssignmentMatrix {
    pub fn new(values: Array2<f64>, kind: AssignmentKind) -> Result<Self> {
        validate_stochastic(&values.view())?;
        Ok(AssignmentMatrix { values, kind })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn kind(&self) -> AssignmentKind {
        self.kind
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.values.ncols()
    }
}

/// Check that every entry lies in `[0, 1]` and every row sums to one.
pub fn validate_stochastic(values: &ArrayView2<f64>) -> Result<()> {
    for (i, row) in values.outer_iter().enumerate() {
        if row
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0 + ROW_SUM_TOL)
        {
            return Err(GdrError::Input(format!("row {i} has entries outside [0, 1]")));
        }
        let s: f64 = row.sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(GdrError::Input(format!("row {i} sums to {s}, expected 1")));
        }
    }
    Ok(())
}

/// `(1/c) 𝟙𝟙ᵀ`.
pub fn uniform_prior(n: usize, c: usize) -> Result<AssignmentMatrix> {
    if n == 0 || c == 0 {
        return Err(GdrError::Parameter(format!(
            "uniform prior needs n >= 1 and c >= 1, got n={n}, c={c}"
        )));
    }
    AssignmentMatrix::new(
        Array2::from_elem((n, c), 1.0 / c as f64),
        AssignmentKind::PriorUniform,
    )
}

/// Class centroids in feature space, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidMatrix {
    pub values: Array2<f64>,
}

/// Mean feature vector of the training samples of each class.
///
/// Equal to `(H̃ᵀH̃)⁻¹H̃ᵀX̃` for one-hot `H̃`, without forming the inverse.
pub fn centroids(features: &CsrMatrix, labels: &[usize], n_classes: usize) -> Result<CentroidMatrix> {
    if features.nrows() != labels.len() {
        return Err(GdrError::Input(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    let mut sums = Array2::<f64>::zeros((n_classes, features.ncols()));
    let mut counts = vec![0usize; n_classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(GdrError::Input(format!(
                "label {label} out of range for {n_classes} classes"
            )));
        }
        counts[label] += 1;
        let (cols, vals) = features.row(i);
        for (&f, &v) in cols.iter().zip(vals) {
            sums[(label, f)] += v;
        }
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(GdrError::SingularClassCounts { class });
    }
    for (mut row, &count) in sums.outer_iter_mut().zip(&counts) {
        row /= count as f64;
    }
    Ok(CentroidMatrix { values: sums })
}

/// `L1norm(ReLU(X Πᵀ))`, with rows that have no positive score mapped to the
/// uniform distribution.
pub fn project(features: &CsrMatrix, pi: &CentroidMatrix) -> Result<AssignmentMatrix> {
    if features.ncols() != pi.values.ncols() {
        return Err(GdrError::Input(format!(
            "features have dimension {}, centroids have {}",
            features.ncols(),
            pi.values.ncols()
        )));
    }
    let c = pi.values.nrows();
    let pt = pi.values.t();
    let mut scores = features.mul_dense(&pt);
    for mut row in scores.outer_iter_mut() {
        row.mapv_inplace(|v| v.max(0.0));
        let s: f64 = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.fill(1.0 / c as f64);
        }
    }
    AssignmentMatrix::new(scores, AssignmentKind::PriorProjection)
}

/// Read a class-probability file: one row per node, `node<TAB>p_1<TAB>...<TAB>p_c`,
/// `#` comments.
///
/// Every node in `required` must appear. Rows within `1e-6` of summing to one
/// are renormalized; any other row is rejected. The returned matrix has one
/// row per graph node; rows for nodes absent from the file are uniform.
pub fn import_external_prior(
    path: &Path,
    n_nodes: usize,
    n_classes: usize,
    required: &[usize],
) -> Result<AssignmentMatrix> {
    let text = fs::read_to_string(path).map_err(|e| GdrError::io(path, e))?;
    let mut values = Array2::from_elem((n_nodes, n_classes), 1.0 / n_classes.max(1) as f64);
    let mut seen = vec![false; n_nodes];
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != n_classes + 1 {
            return Err(GdrError::data(
                path,
                lineno,
                format!("expected {} fields, found {}", n_classes + 1, fields.len()),
            ));
        }
        let node: usize = fields[0]
            .parse()
            .map_err(|_| GdrError::data(path, lineno, format!("bad node id '{}'", fields[0])))?;
        if node >= n_nodes {
            return Err(GdrError::data(path, lineno, format!("node {node} out of range")));
        }
        if seen[node] {
            return Err(GdrError::data(
                path,
                lineno,
                format!("duplicate row for node {node}"),
            ));
        }
        seen[node] = true;
        let mut row = Vec::with_capacity(n_classes);
        for field in &fields[1..] {
            let v: f64 = field
                .parse()
                .map_err(|_| GdrError::data(path, lineno, format!("bad probability '{field}'")))?;
            if !v.is_finite() {
                return Err(GdrError::data(
                    path,
                    lineno,
                    format!("non-finite value for node {node}"),
                ));
            }
            if v < 0.0 {
                return Err(GdrError::data(
                    path,
                    lineno,
                    format!("negative probability for node {node}"),
                ));
            }
            row.push(v);
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > IMPORT_ROW_SUM_TOL {
            return Err(GdrError::data(
                path,
                lineno,
                format!("row for node {node} sums to {s}, not within 1e-6 of 1"),
            ));
        }
        for (j, v) in row.into_iter().enumerate() {
            values[(node, j)] = v / s;
        }
    }
    if let Some(&missing) = required.iter().find(|&&i| i >= n_nodes || !seen[i]) {
        return Err(GdrError::data(path, 0, format!("missing row for node {missing}")));
    }
    AssignmentMatrix::new(values, AssignmentKind::PriorExternal)
}

/// Write rows `nodes` of `h` in the external-prior format.
pub fn write_external_prior(path: &Path, h: &ArrayView2<f64>, nodes: &[usize]) -> Result<()> {
    let mut out = String::from("# node\tclass probabilities\n");
    for &i in nodes {
        out.push_str(&i.to_string());
        for &v in h.row(i) {
            out.push('\t');
            out.push_str(&format_float(v));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| GdrError::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| GdrError::io(path, e))
}

/// Hard class labels, with the rows whose label is known marked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardAssignment {
    pub labels: Vec<usize>,
    pub masked_training: Vec<bool>,
}

impl HardAssignment {
    /// Overwrite the labels of training rows with their ground truth and mark
    /// them as fixed.
    pub fn with_training(mut self, train: &[bool], truth: &[Option<usize>]) -> Result<Self> {
        if train.len() != self.labels.len() || truth.len() != self.labels.len() {
            return Err(GdrError::Input(
                "training mask length does not match assignment".into(),
            ));
        }
        for (i, &is_train) in train.iter().enumerate() {
            if is_train {
                self.labels[i] = truth[i]
                    .ok_or_else(|| GdrError::Input(format!("training node {i} has no ground-truth label")))?;
                self.masked_training[i] = true;
            }
        }
        Ok(self)
    }
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn hard_assign(h: &AssignmentMatrix) -> HardAssignment {
    let labels = h
        .values
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect::<Vec<_>>();
    let n = labels.len();
    HardAssignment {
        labels,
        masked_training: vec![false; n],
    }
}

/// Reclassify every non-training node that overshoots to the class of its
/// largest overshoot; all other nodes keep their prior label.
pub fn gdr_update(prior: &HardAssignment, over: &OvershootResult) -> Result<HardAssignment> {
    if prior.labels.len() != over.kappa_omega.len() {
        return Err(GdrError::Input(format!(
            "prior has {} nodes, overshoot result has {}",
            prior.labels.len(),
            over.kappa_omega.len()
        )));
    }
    let labels = prior
        .labels
        .iter()
        .zip(&prior.masked_training)
        .zip(&over.kappa_omega)
        .map(|((&label, &fixed), kappa)| match kappa {
            Some(j) if !fixed => *j,
            _ => label,
        })
        .collect();
    Ok(HardAssignment {
        labels,
        masked_training: prior.masked_training.clone(),
    })
}

/// Fraction of `nodes` whose predicted label equals the ground truth. Nodes
/// without a known label count as misclassified.
pub fn accuracy(predicted: &[usize], truth: &[Option<usize>], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let hits = nodes.iter().filter(|&&i| truth[i] == Some(predicted[i])).count();
    hits as f64 / nodes.len() as f64
}

/// `ℋ`: training rows replaced by their one-hot ground truth, every other row
/// taken from the prior. Node order is unchanged.
pub fn stack_with_training(
    prior: &AssignmentMatrix,
    train: &[bool],
    truth: &[Option<usize>],
) -> Result<AssignmentMatrix> {
    let mut values = prior.values.clone();
    if train.len() != values.nrows() || truth.len() != values.nrows() {
        return Err(GdrError::Input(
            "training mask length does not match prior".into(),
        ));
    }
    for (i, &is_train) in train.iter().enumerate() {
        if is_train {
            let label = truth[i].ok_or_else(|| GdrError::Input(format!("training node {i} has no label")))?;
            let mut row = values.row_mut(i);
            row.fill(0.0);
            row[label] = 1.0;
        }
    }
    AssignmentMatrix::new(values, AssignmentKind::FullStacked)
}
