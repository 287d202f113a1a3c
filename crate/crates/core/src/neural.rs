//! Two-layer graph neural classifiers trained by backpropagation.
//!
//! Every model has the form
//!
//! ```text
//! H = ReLU( Σ_c  P_c · X  · W0_c )
//! Z =       Σ_c  P_c · H  · W1_c
//! S = softmax(Z)
//! ```
//!
//! where the channel propagators `P_c` are: the identity (MLP), the GCN
//! operator `Â`, the heat kernel `e^{-tL}` with a learned time `t`, or a pair of
//! forward and backward operators for the bidirectional models. The channel sum
//! is the block form of the Kronecker-product notation `Â (I₂ ⊗ X) [W_fw; W_bw]`
//! with `Â = [Â_fw Â_bw]`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifiers::{AssignmentKind, AssignmentMatrix};
use crate::data_io::format_float;
use crate::diffusion::DiffusionEngine;
use crate::error::{GdrError, Result};
use crate::graph::{LinearNodeOperator, OperatorKind};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationKind {
    Identity,
    GcnHat,
    Diffusion,
    AugGcn,
    AugDiffusion,
}

impl PropagationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PropagationKind::Identity => "identity",
            PropagationKind::GcnHat => "gcn-hat",
            PropagationKind::Diffusion => "diffusion",
            PropagationKind::AugGcn => "aug-gcn",
            PropagationKind::AugDiffusion => "aug-diffusion",
        }
    }

    pub fn uses_time(self) -> bool {
        matches!(self, PropagationKind::Diffusion | PropagationKind::AugDiffusion)
    }

    pub fn n_channels(self) -> usize {
        match self {
            PropagationKind::AugGcn | PropagationKind::AugDiffusion => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for PropagationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
enum Channel {
    Identity,
    Linear(Arc<LinearNodeOperator>),
    Diffusion(Arc<DiffusionEngine>),
}

impl Channel {
    fn apply(&self, v: &ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        match self {
            Channel::Identity => Ok(v.to_owned()),
            Channel::Linear(op) => Ok(op.apply(v)),
            Channel::Diffusion(engine) => engine.expm_action(v, t),
        }
    }

    fn apply_transpose(&self, v: &ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        match self {
            Channel::Identity => Ok(v.to_owned()),
            Channel::Linear(op) => Ok(op.apply_transpose(v)),
            // L is symmetric, and so is its heat kernel.
            Channel::Diffusion(engine) => engine.expm_action(v, t),
        }
    }

    fn n(&self) -> Option<usize> {
        match self {
            Channel::Identity => None,
            Channel::Linear(op) => Some(op.n()),
            Channel::Diffusion(engine) => Some(engine.n()),
        }
    }
}

/// Which propagator each layer applies, with the operators it needs.
#[derive(Debug, Clone)]
pub struct PropagationSpec {
    kind: PropagationKind,
    channels: Vec<Channel>,
}

fn require_kind(op: &LinearNodeOperator, kind: OperatorKind) -> Result<()> {
    if op.kind() == kind {
        Ok(())
    } else {
        Err(GdrError::Parameter(format!(
            "expected a {kind:?} operator, got {:?}",
            op.kind()
        )))
    }
}

impl PropagationSpec {
    /// Two-layer perceptron: no propagation.
    pub fn identity() -> Self {
        PropagationSpec {
            kind: PropagationKind::Identity,
            channels: vec![Channel::Identity],
        }
    }

    pub fn gcn(op: LinearNodeOperator) -> Result<Self> {
        require_kind(&op, OperatorKind::GcnHat)?;
        Ok(PropagationSpec {
            kind: PropagationKind::GcnHat,
            channels: vec![Channel::Linear(Arc::new(op))],
        })
    }

    pub fn diffusion(engine: Arc<DiffusionEngine>) -> Self {
        PropagationSpec {
            kind: PropagationKind::Diffusion,
            channels: vec![Channel::Diffusion(engine)],
        }
    }

    /// Bidirectional GCN: `forward` built from `A`, `backward` from `Aᵀ`.
    pub fn aug_gcn(forward: LinearNodeOperator, backward: LinearNodeOperator) -> Result<Self> {
        require_kind(&forward, OperatorKind::GcnHat)?;
        require_kind(&backward, OperatorKind::GcnHat)?;
        let spec = PropagationSpec {
            kind: PropagationKind::AugGcn,
            channels: vec![
                Channel::Linear(Arc::new(forward)),
                Channel::Linear(Arc::new(backward)),
            ],
        };
        spec.check_sizes()?;
        Ok(spec)
    }

    /// Bidirectional diffusion with one shared time.
    pub fn aug_diffusion(forward: Arc<DiffusionEngine>, backward: Arc<DiffusionEngine>) -> Result<Self> {
        let spec = PropagationSpec {
            kind: PropagationKind::AugDiffusion,
            channels: vec![Channel::Diffusion(forward), Channel::Diffusion(backward)],
        };
        spec.check_sizes()?;
        Ok(spec)
    }

    fn check_sizes(&self) -> Result<()> {
        let sizes: Vec<usize> = self.channels.iter().filter_map(Channel::n).collect();
        if sizes.windows(2).any(|w| w[0] != w[1]) {
            return Err(GdrError::Parameter("channel operators differ in size".into()));
        }
        Ok(())
    }

    pub fn kind(&self) -> PropagationKind {
        self.kind
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Node count fixed by the operators, if any.
    pub fn n_nodes(&self) -> Option<usize> {
        self.channels.iter().find_map(Channel::n)
    }

    /// The dense `N × N` propagator of channel `c` at time `t`.
    pub fn channel_dense(&self, c: usize, t: f64, n: usize) -> Result<Array2<f64>> {
        self.channels[c].apply(&Array2::eye(n).view(), t)
    }
}

/// Trainable parameters: one `W0`/`W1` block per channel and, for the
/// diffusion kinds, the diffusion time.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w0: Vec<Array2<f64>>,
    pub w1: Vec<Array2<f64>>,
    pub t: Option<f64>,
}

impl LayerWeights {
    /// Glorot-uniform initialization.
    pub fn glorot(
        spec: &PropagationSpec,
        n_features: usize,
        hidden: usize,
        n_classes: usize,
        t_init: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut init = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
        };
        let channels = spec.n_channels();
        let w0 = (0..channels).map(|_| init(n_features, hidden)).collect();
        let w1 = (0..channels).map(|_| init(hidden, n_classes)).collect();
        LayerWeights {
            w0,
            w1,
            t: spec.kind.uses_time().then_some(t_init),
        }
    }

    pub fn n_features(&self) -> usize {
        self.w0[0].nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.w0[0].ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.w1[0].ncols()
    }

    /// All parameters in a fixed order: `W0` blocks, `W1` blocks, then `t`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in self.w0.iter().chain(&self.w1) {
            out.extend(m.iter());
        }
        out.extend(self.t);
        out
    }

    /// Inverse of [`LayerWeights::to_flat`], using `self` for the shapes.
    pub fn from_flat(&self, flat: &[f64]) -> LayerWeights {
        let mut out = self.clone();
        let mut k = 0;
        for m in out.w0.iter_mut().chain(out.w1.iter_mut()) {
            for v in m.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        if let Some(t) = out.t.as_mut() {
            *t = flat[k];
        }
        out
    }

    fn all_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Gradients with the same layout as [`LayerWeights`].
pub type Gradients = LayerWeights;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    /// Dropout with the given rate on the input and hidden layers.
    Train {
        dropout: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty `λ/2 ‖W0‖²` on the first layer.
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop once validation accuracy has not improved for this many epochs.
    pub early_stopping: Option<usize>,
    pub t_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_units: 16,
            dropout: 0.5,
            epochs: 200,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            seed: 0,
            early_stopping: None,
            t_init: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GdrError::Parameter(msg));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if self.hidden_units == 0 {
            return bad("hidden_units must be positive".into());
        }
        if !(self.t_init >= 0.0) || !self.t_init.is_finite() {
            return bad(format!(
                "initial diffusion time must be >= 0, got {}",
                self.t_init
            ));
        }
        if self.early_stopping == Some(0) {
            return bad("early-stopping window must be positive".into());
        }
        Ok(())
    }
}

/// Training nodes and their labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Supervision {
    pub nodes: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Supervision {
    pub fn new(nodes: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(GdrError::Input("loss mask is empty".into()));
        }
        if nodes.len() != labels.len() {
            return Err(GdrError::Input("mask and label lengths differ".into()));
        }
        Ok(Supervision { nodes, labels })
    }

    pub fn from_truth(nodes: &[usize], truth: &[Option<usize>]) -> Result<Self> {
        let labels = nodes
            .iter()
            .map(|&i| truth[i].ok_or_else(|| GdrError::Input(format!("node {i} has no label"))))
            .collect::<Result<Vec<_>>>()?;
        Supervision::new(nodes.to_vec(), labels)
    }
}

/// Scale each row of `x` to unit sum; all-zero rows are left alone.
pub fn row_normalize(x: &CsrMatrix) -> CsrMatrix {
    let sums = x.row_sums();
    let triplets: Vec<_> = x
        .triplets()
        .map(|(i, j, v)| (i, j, if sums[i] != 0.0 { v / sums[i] } else { v }))
        .collect();
    CsrMatrix::from_triplets(x.nrows(), x.ncols(), &triplets)
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut s = z.clone();
    for mut row in s.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let total = row.sum();
        row /= total;
    }
    s
}

fn log_softmax_at(row: ndarray::ArrayView1<f64>, j: usize) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row[j] - lse
}

/// Intermediate values kept for the backward pass.
struct Tape {
    x: CsrMatrix,
    /// `P_c · X W0_c` per channel.
    p1_parts: Vec<Array2<f64>>,
    p1: Array2<f64>,
    /// Hidden activations after ReLU and dropout.
    h: Array2<f64>,
    /// Dropout scale factors of the hidden layer.
    h_mask: Option<Array2<f64>>,
    /// `P_c · H W1_c` per channel.
    z_parts: Vec<Array2<f64>>,
    z: Array2<f64>,
}

fn check_shapes(spec: &PropagationSpec, w: &LayerWeights, x: &CsrMatrix) -> Result<()> {
    let c = spec.n_channels();
    if w.w0.len() != c || w.w1.len() != c {
        return Err(GdrError::Input(format!(
            "{} model needs {c} weight blocks per layer",
            spec.kind
        )));
    }
    if spec.kind.uses_time() != w.t.is_some() {
        return Err(GdrError::Input(
            "diffusion time present iff the model diffuses".into(),
        ));
    }
    let (f, d, k) = (w.n_features(), w.n_hidden(), w.n_classes());
    for (a, b) in w.w0.iter().zip(&w.w1) {
        if a.dim() != (f, d) || b.dim() != (d, k) {
            return Err(GdrError::Input("weight blocks have inconsistent shapes".into()));
        }
    }
    if x.ncols() != f {
        return Err(GdrError::Input(format!(
            "features have {} columns, weights expect {f}",
            x.ncols()
        )));
    }
    if let Some(n) = spec.n_nodes() {
        if x.nrows() != n {
            return Err(GdrError::Input(format!(
                "features have {} rows, operators have {n} nodes",
                x.nrows()
            )));
        }
    }
    if let Some(t) = w.t {
        if !(t >= 0.0) {
            return Err(GdrError::Parameter(format!(
                "diffusion time must be >= 0, got {t}"
            )));
        }
    }
    Ok(())
}

fn finite_or(layer: &str, m: &Array2<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GdrError::NonFinite {
            layer: layer.to_string(),
        })
    }
}

fn run_forward(
    spec: &PropagationSpec,
    w: &LayerWeights,
    x: &CsrMatrix,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Tape> {
    check_shapes(spec, w, x)?;
    let t = w.t.unwrap_or(0.0);
    let (x, h_mask, rate) = match dropout {
        Some((p, rng)) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mut xd = x.clone();
            for v in xd.values_mut() {
                *v = if rng.gen::<f64>() < p { 0.0 } else { *v * keep };
            }
            let n = x.nrows();
            let d = w.n_hidden();
            let mask = Array2::from_shape_fn((n, d), |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
            (xd, Some(mask), p)
        }
        _ => (x.clone(), None, 0.0),
    };
    debug_assert!(rate < 1.0);

    let mut p1_parts = Vec::with_capacity(spec.n_channels());
    for (ch, w0) in spec.channels.iter().zip(&w.w0) {
        let xw = x.mul_dense(&w0.view());
        p1_parts.push(ch.apply(&xw.view(), t)?);
    }
    let p1 = sum_parts(&p1_parts);
    finite_or("hidden layer", &p1)?;
    let mut h = p1.mapv(|v| v.max(0.0));
    if let Some(mask) = &h_mask {
        h *= mask;
    }
    let mut z_parts = Vec::with_capacity(spec.n_channels());
    for (ch, w1) in spec.channels.iter().zip(&w.w1) {
        let y = h.dot(w1);
        z_parts.push(ch.apply(&y.view(), t)?);
    }
    let z = sum_parts(&z_parts);
    finite_or("output layer", &z)?;
    Ok(Tape {
        x,
        p1_parts,
        p1,
        h,
        h_mask,
        z_parts,
        z,
    })
}

fn sum_parts(parts: &[Array2<f64>]) -> Array2<f64> {
    let mut total = parts[0].clone();
    for p in &parts[1..] {
        total += p;
    }
    total
}

/// Class probabilities `softmax(Z)`, one row per node.
///
/// In train mode the dropout masks are drawn from a generator seeded with
/// `seed`; eval mode applies no dropout and ignores the seed.
pub fn forward(
    spec: &PropagationSpec,
    w: &LayerWeights,
    x: &CsrMatrix,
    mode: Mode,
    seed: u64,
) -> Result<Array2<f64>> {
    let tape = match mode {
        Mode::Eval => run_forward(spec, w, x, None)?,
        Mode::Train { dropout } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_forward(spec, w, x, Some((dropout, &mut rng)))?
        }
    };
    Ok(softmax_rows(&tape.z))
}

fn decay_penalty(w: &LayerWeights, weight_decay: f64) -> f64 {
    let sq: f64 = w.w0.iter().map(|m| m.iter().map(|v| v * v).sum::<f64>()).sum();
    0.5 * weight_decay * sq
}

/// Mean cross-entropy of `pred` over the supervised rows plus the first-layer
/// weight-decay penalty.
pub fn loss(pred: &ArrayView2<f64>, sup: &Supervision, w: &LayerWeights, weight_decay: f64) -> Result<f64> {
    if sup.nodes.is_empty() {
        return Err(GdrError::Input("loss mask is empty".into()));
    }
    let ce: f64 = sup
        .nodes
        .iter()
        .zip(&sup.labels)
        .map(|(&i, &y)| -pred[(i, y)].ln())
        .sum::<f64>();
    Ok(ce / sup.nodes.len() as f64 + decay_penalty(w, weight_decay))
}

fn loss_from_logits(z: &Array2<f64>, sup: &Supervision, w: &LayerWeights, weight_decay: f64) -> f64 {
    let ce: f64 = sup
        .nodes
        .iter()
        .zip(&sup.labels)
        .map(|(&i, &y)| -log_softmax_at(z.row(i), y))
        .sum();
    ce / sup.nodes.len() as f64 + decay_penalty(w, weight_decay)
}

/// Training objective evaluated in eval mode (no dropout).
pub fn objective(
    spec: &PropagationSpec,
    w: &LayerWeights,
    x: &CsrMatrix,
    sup: &Supervision,
    weight_decay: f64,
) -> Result<f64> {
    let tape = run_forward(spec, w, x, None)?;
    Ok(loss_from_logits(&tape.z, sup, w, weight_decay))
}

fn inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y)
}

fn run_backward(
    spec: &PropagationSpec,
    w: &LayerWeights,
    tape: &Tape,
    sup: &Supervision,
    weight_decay: f64,
) -> Result<(f64, Gradients)> {
    let t = w.t.unwrap_or(0.0);
    let m = sup.nodes.len() as f64;
    let loss = loss_from_logits(&tape.z, sup, w, weight_decay);

    let s = softmax_rows(&tape.z);
    let mut dz = Array2::<f64>::zeros(tape.z.raw_dim());
    for (&i, &y) in sup.nodes.iter().zip(&sup.labels) {
        let mut row = dz.row_mut(i);
        row += &s.row(i);
        row[y] -= 1.0;
    }
    dz /= m;

    let mut dt = 0.0;
    let mut dw1 = Vec::with_capacity(spec.n_channels());
    let mut dh = Array2::<f64>::zeros(tape.h.raw_dim());
    for (c, ch) in spec.channels.iter().enumerate() {
        let dy = ch.apply_transpose(&dz.view(), t)?;
        dw1.push(tape.h.t().dot(&dy));
        dh += &dy.dot(&w.w1[c].t());
        if let Channel::Diffusion(engine) = ch {
            // d/dt e^{-tL} V = -L e^{-tL} V
            dt -= inner(&dz, &engine.apply_operator(&tape.z_parts[c].view()));
        }
    }
    if let Some(mask) = &tape.h_mask {
        dh *= mask;
    }
    let dp1 = Zip::from(&dh)
        .and(&tape.p1)
        .map_collect(|&g, &p| if p > 0.0 { g } else { 0.0 });

    let mut dw0 = Vec::with_capacity(spec.n_channels());
    for (c, ch) in spec.channels.iter().enumerate() {
        let dxw = ch.apply_transpose(&dp1.view(), t)?;
        let mut g = tape.x.transpose_mul_dense(&dxw.view());
        g.scaled_add(weight_decay, &w.w0[c]);
        dw0.push(g);
        if let Channel::Diffusion(engine) = ch {
            dt -= inner(&dp1, &engine.apply_operator(&tape.p1_parts[c].view()));
        }
    }
    let grads = LayerWeights {
        w0: dw0,
        w1: dw1,
        t: w.t.map(|_| dt),
    };
    Ok((loss, grads))
}

/// Objective value and its exact gradient in eval mode.
pub fn backward(
    spec: &PropagationSpec,
    w: &LayerWeights,
    x: &CsrMatrix,
    sup: &Supervision,
    weight_decay: f64,
) -> Result<(f64, Gradients)> {
    let tape = run_forward(spec, w, x, None)?;
    run_backward(spec, w, &tape, sup, weight_decay)
}

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[k] / c1;
            let vhat = self.v[k] / c2;
            params[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Inputs to [`train`].
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub features: &'a CsrMatrix,
    pub labels: &'a [Option<usize>],
    pub train: &'a [usize],
    pub val: &'a [usize],
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: f64,
    pub t_param: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the epoch with the best validation accuracy.
    pub weights: LayerWeights,
    /// Eval-mode class probabilities of those weights for every node.
    pub prior: AssignmentMatrix,
    pub trace: Vec<TraceRow>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

fn argmax_rows(s: &Array2<f64>) -> Vec<usize> {
    s.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Train with Adam, keeping the weights of the epoch with the highest
/// validation accuracy (the earliest such epoch on ties).
pub fn train(spec: &PropagationSpec, config: &TrainConfig, data: TrainData<'_>) -> Result<TrainOutcome> {
    let mut trace = Vec::with_capacity(config.epochs);
    train_recording(spec, config, data, &mut trace)
}

/// [`train`], appending one row per completed epoch to `trace` so that the
/// history up to a failure is still available.
pub fn train_recording(
    spec: &PropagationSpec,
    config: &TrainConfig,
    data: TrainData<'_>,
    trace: &mut Vec<TraceRow>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let sup = Supervision::from_truth(data.train, data.labels)?;
    if let Some(&y) = sup.labels.iter().find(|&&y| y >= data.n_classes) {
        return Err(GdrError::Input(format!(
            "label {y} out of range for {} classes",
            data.n_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = LayerWeights::glorot(
        spec,
        data.features.ncols(),
        config.hidden_units,
        data.n_classes,
        config.t_init,
        &mut rng,
    );
    let mut flat = weights.to_flat();
    let mut adam = Adam::new(flat.len(), config.learning_rate);
    let diverged = |epoch: usize| {
        move |e: GdrError| match e {
            GdrError::NonFinite { .. } => GdrError::Diverged { epoch },
            other => other,
        }
    };

    let mut best: Option<(usize, f64, LayerWeights)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let tape = run_forward(spec, &weights, data.features, Some((config.dropout, &mut rng)))
            .map_err(diverged(epoch))?;
        let (loss, grads) = run_backward(spec, &weights, &tape, &sup, config.weight_decay)?;
        if !loss.is_finite() {
            return Err(GdrError::Diverged { epoch });
        }
        adam.step(&mut flat, &grads.to_flat());
        if weights.t.is_some() {
            let last = flat.len() - 1;
            flat[last] = flat[last].max(0.0);
        }
        weights = weights.from_flat(&flat);
        if !weights.all_finite() {
            return Err(GdrError::Diverged { epoch });
        }

        let eval = run_forward(spec, &weights, data.features, None).map_err(diverged(epoch))?;
        let predicted = argmax_rows(&eval.z);
        let val_acc = crate::classifiers::accuracy(&predicted, data.labels, data.val);
        trace.push(TraceRow {
            epoch,
            loss,
            val_acc,
            t_param: weights.t,
        });
        log::debug!("epoch {epoch}: loss {loss:.5} val_acc {val_acc:.4}");

        let improved = match &best {
            None => true,
            Some((_, acc, _)) => val_acc > *acc || data.val.is_empty(),
        };
        if improved {
            best = Some((epoch, val_acc, weights.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stopping.is_some_and(|w| since_best >= w) {
                break;
            }
        }
    }
    let (best_epoch, best_val_acc, weights) = best.expect("at least one epoch");
    let probs = forward(spec, &weights, data.features, Mode::Eval, 0)?;
    let prior = AssignmentMatrix::new(probs, AssignmentKind::PriorExternal)?;
    Ok(TrainOutcome {
        weights,
        prior,
        trace: trace.clone(),
        best_epoch,
        best_val_acc,
    })
}

/// Write the training trace as CSV with header `epoch,loss,val_acc,t_param`.
/// Models without a diffusion time leave the last column empty.
pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut out = String::from("epoch,loss,val_acc,t_param\n");
    for row in trace {
        let t = row.t_param.map(format_float).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch,
            format_float(row.loss),
            format_float(row.val_acc),
            t
        ));
    }
    fs::write(path, out).map_err(|e| GdrError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_gcn_operator, build_laplacian, SparseGraph};

    fn path3() -> SparseGraph {
        SparseGraph::undirected_from_pairs(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    fn features() -> CsrMatrix {
        CsrMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 1.0), (2, 0, 0.5), (2, 1, 0.5)])
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let spec = PropagationSpec::gcn(build_gcn_operator(&path3())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = LayerWeights::glorot(&spec, 2, 4, 3, 1.0, &mut rng);
        let s = forward(&spec, &w, &features(), Mode::Eval, 0).unwrap();
        for row in s.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_prediction_loss_is_log_c() {
        let pred = Array2::from_elem((3, 4), 0.25);
        let sup = Supervision::new(vec![0, 2], vec![1, 3]).unwrap();
        let spec = PropagationSpec::identity();
        let w = LayerWeights::glorot(&spec, 2, 2, 4, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        let l = loss(&pred.view(), &sup, &w, 0.0).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_is_rejected() {
        assert!(Supervision::new(vec![], vec![]).is_err());
    }

    #[test]
    fn diffusion_at_zero_time_is_the_mlp() {
        let engine = Arc::new(DiffusionEngine::auto(build_laplacian(&path3()).unwrap()).unwrap());
        let diff = PropagationSpec::diffusion(engine);
        let mlp = PropagationSpec::identity();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut w = LayerWeights::glorot(&diff, 2, 4, 3, 0.0, &mut rng);
        let a = forward(&diff, &w, &features(), Mode::Eval, 0).unwrap();
        w.t = None;
        let b = forward(&mlp, &w, &features(), Mode::Eval, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_is_seeded() {
        let spec = PropagationSpec::identity();
        let w = LayerWeights::glorot(&spec, 2, 8, 3, 0.0, &mut ChaCha8Rng::seed_from_u64(1));
        let mode = Mode::Train { dropout: 0.5 };
        let a = forward(&spec, &w, &features(), mode, 7).unwrap();
        let b = forward(&spec, &w, &features(), mode, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn row_normalize_keeps_empty_rows() {
        let x = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 3.0)]);
        let n = row_normalize(&x);
        assert_eq!(n.get(0, 1), 0.75);
        assert_eq!(n.row_sums()[1], 0.0);
    }
}
