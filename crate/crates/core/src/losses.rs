//! ℓ2-regularized logistic and ridge losses over vertically partitioned models.
//!
//! Per-sample objectives:
//!
//! * logistic: `log(1 + exp(-y w·x)) + λ/2 ‖w‖²`
//! * ridge:    `(w·x + b - y)² + λ/2 (‖w‖² + b²)`
//!
//! The ridge bias `b` belongs to the active worker and never enters the aggregated
//! score; it is added by whoever holds the labels.

use ndarray::ArrayView1;

use crate::data::{PartitionedData, Task, VerticalPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Logistic,
    Ridge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub lambda: f64,
    pub has_bias: bool,
}

impl LossSpec {
    pub fn logistic(lambda: f64) -> Self {
        LossSpec {
            kind: LossKind::Logistic,
            lambda,
            has_bias: false,
        }
    }

    pub fn ridge(lambda: f64, has_bias: bool) -> Self {
        LossSpec {
            kind: LossKind::Ridge,
            lambda,
            has_bias,
        }
    }

    /// Logistic for classification, ridge with bias for regression.
    pub fn for_task(task: Task, lambda: f64) -> Self {
        match task {
            Task::Classification => LossSpec::logistic(lambda),
            Task::Regression => LossSpec::ridge(lambda, true),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda >= 0.0) {
            return Err(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.has_bias && self.kind != LossKind::Ridge {
            return Err("only ridge regression carries a bias".into());
        }
        Ok(())
    }

    /// Upper bound on the second derivative of the loss in the score.
    pub fn curvature_bound(&self) -> f64 {
        match self.kind {
            LossKind::Logistic => 0.25,
            LossKind::Ridge => 2.0,
        }
    }
}

/// Per-worker weight blocks plus the optional ridge bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelView {
    pub blocks: Vec<Vec<f64>>,
    pub bias: Option<f64>,
}

impl ModelView {
    pub fn zeros(partition: &VerticalPartition, spec: &LossSpec) -> Self {
        ModelView {
            blocks: partition.groups().iter().map(|g| vec![0.0; g.len()]).collect(),
            bias: spec.has_bias.then_some(0.0),
        }
    }

    /// Scatters a full weight vector into blocks.
    pub fn from_full(full: &[f64], bias: Option<f64>, partition: &VerticalPartition) -> Self {
        ModelView {
            blocks: partition
                .groups()
                .iter()
                .map(|g| g.iter().map(|&j| full[j]).collect())
                .collect(),
            bias,
        }
    }

    pub fn to_full(&self, partition: &VerticalPartition) -> Vec<f64> {
        let mut full = vec![0.0; partition.n_features()];
        for (block, group) in self.blocks.iter().zip(partition.groups()) {
            for (v, &j) in block.iter().zip(group) {
                full[j] = *v;
            }
        }
        full
    }

    pub fn block(&self, worker: usize) -> &[f64] {
        &self.blocks[worker - 1]
    }

    pub fn squared_norm(&self) -> f64 {
        let w: f64 = self.blocks.iter().flatten().map(|v| v * v).sum();
        w + self.bias.map_or(0.0, |b| b * b)
    }

    pub fn conforms_to(&self, partition: &VerticalPartition) -> bool {
        self.blocks.len() == partition.n_workers()
            && self
                .blocks
                .iter()
                .zip(partition.groups())
                .all(|(b, g)| b.len() == g.len())
    }
}

/// One worker's contribution `w_G · x_G` to the full inner product.
pub fn local_product(w_block: &[f64], x_block: ArrayView1<'_, f64>) -> f64 {
    assert_eq!(
        w_block.len(),
        x_block.len(),
        "local_product: weight block and feature block differ in length"
    );
    w_block.iter().zip(x_block.iter()).map(|(w, x)| w * x).sum()
}

/// `log(1 + exp(z))` without overflow.
pub fn log1p_exp(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-sample loss (no regularizer) at the full score `w·x + b`.
pub fn sample_loss(kind: LossKind, score: f64, y: f64) -> f64 {
    match kind {
        LossKind::Logistic => log1p_exp(-y * score),
        LossKind::Ridge => {
            let r = score - y;
            r * r
        }
    }
}

/// Derivative of the per-sample loss with respect to the full score `w·x + b`.
///
/// This scalar is what the label holder hands back to the requesting worker; the
/// block gradient is then `residual · x_G + λ w_G`.
pub fn score_derivative(kind: LossKind, score: f64, y: f64) -> f64 {
    match kind {
        LossKind::Logistic => -y * sigmoid(-y * score),
        LossKind::Ridge => 2.0 * (score - y),
    }
}

/// Gradient of a single sample's objective with respect to one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGradient {
    pub weights: Vec<f64>,
    /// Present only for the active worker of a ridge model with bias.
    pub bias: Option<f64>,
}

impl BlockGradient {
    /// Weights followed by the bias entry, if any.
    pub fn into_flat(self) -> Vec<f64> {
        let mut v = self.weights;
        v.extend(self.bias);
        v
    }
}

/// Block gradient assembled from the score derivative.
///
/// `params` is the worker's parameter vector; when `with_bias` is set its last entry
/// is the bias and the gradient gains a trailing `residual + λ b` entry.
pub fn block_gradient_from_residual(
    residual: f64,
    x_block: ArrayView1<'_, f64>,
    params: &[f64],
    lambda: f64,
    with_bias: bool,
) -> Vec<f64> {
    let d = x_block.len();
    assert_eq!(params.len(), d + usize::from(with_bias));
    let mut g: Vec<f64> = x_block
        .iter()
        .zip(params)
        .map(|(x, w)| residual * x + lambda * w)
        .collect();
    if with_bias {
        g.push(residual + lambda * params[d]);
    }
    g
}

fn score_at(model: &ModelView, data: &PartitionedData, i: usize) -> f64 {
    (1..=data.n_workers())
        .map(|w| local_product(model.block(w), data.block(w).row(i)))
        .sum()
}

/// Full regularized objective `f(w)`.
pub fn objective_value(spec: &LossSpec, model: &ModelView, data: &PartitionedData) -> f64 {
    let n = data.n_samples();
    let bias = model.bias.unwrap_or(0.0);
    let loss: f64 = (0..n)
        .map(|i| sample_loss(spec.kind, score_at(model, data, i) + bias, data.labels()[i]))
        .sum();
    loss / n as f64 + 0.5 * spec.lambda * model.squared_norm()
}

/// `∇_{G_ℓ} f_i` evaluated with a caller-supplied (possibly stale) aggregated score.
/// The regularizer and the bias use the model's own current values for block `worker`.
pub fn sample_block_gradient(
    spec: &LossSpec,
    model: &ModelView,
    data: &PartitionedData,
    i: usize,
    worker: usize,
    score: f64,
) -> BlockGradient {
    let bias = model.bias.unwrap_or(0.0);
    let residual = score_derivative(spec.kind, score + bias, data.labels()[i]);
    let weights = data
        .block(worker)
        .row(i)
        .iter()
        .zip(model.block(worker))
        .map(|(x, w)| residual * x + spec.lambda * w)
        .collect();
    let owns_bias = spec.has_bias && worker == data.partition().active_worker();
    BlockGradient {
        weights,
        bias: owns_bias.then(|| residual + spec.lambda * bias),
    }
}

/// `∇_{G_ℓ} f = (1/l) Σ_i ∇_{G_ℓ} f_i` at a single consistent model.
pub fn full_block_gradient(
    spec: &LossSpec,
    model: &ModelView,
    data: &PartitionedData,
    worker: usize,
) -> BlockGradient {
    let n = data.n_samples();
    let mut acc: Option<BlockGradient> = None;
    for i in 0..n {
        let g = sample_block_gradient(spec, model, data, i, worker, score_at(model, data, i));
        match acc.as_mut() {
            None => acc = Some(g),
            Some(a) => {
                a.weights.iter_mut().zip(&g.weights).for_each(|(a, b)| *a += b);
                if let (Some(ab), Some(gb)) = (a.bias.as_mut(), g.bias) {
                    *ab += gb;
                }
            }
        }
    }
    let mut g = acc.expect("dataset has at least one sample");
    let inv = 1.0 / n as f64;
    g.weights.iter_mut().for_each(|v| *v *= inv);
    if let Some(b) = g.bias.as_mut() {
        *b *= inv;
    }
    g
}

/// All scores `w·x_i` (without bias) at a consistent model.
pub fn all_scores(model: &ModelView, data: &PartitionedData) -> Vec<f64> {
    (0..data.n_samples()).map(|i| score_at(model, data, i)).collect()
}

/// Full gradient over every block, bias last when present.
pub fn full_gradient(spec: &LossSpec, model: &ModelView, data: &PartitionedData) -> ModelView {
    let grads: Vec<BlockGradient> = (1..=data.n_workers())
        .map(|w| full_block_gradient(spec, model, data, w))
        .collect();
    let bias = grads.iter().find_map(|g| g.bias);
    ModelView {
        blocks: grads.into_iter().map(|g| g.weights).collect(),
        bias,
    }
}
