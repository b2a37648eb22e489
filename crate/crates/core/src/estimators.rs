//! Unbiased stochastic estimates of one worker's block gradient.
//!
//! All three estimators take `∇_{G_ℓ} f_i` evaluated at the (possibly stale)
//! aggregated score and differ only in the control variate they add:
//!
//! * SGD:  `g_i(ŵ)`
//! * SVRG: `g_i(ŵ) - g_i(w̃) + ∇f(w̃)` with a frozen snapshot `w̃`
//! * SAGA: `g_i(ŵ) - α_i + mean(α)` with a table of past per-sample gradients

use thiserror::Error;

use crate::losses::ModelView;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("SAGA table is not initialized")]
    Uninitialized,
    #[error("sample index {index} outside table of {len} entries")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
}

fn same_len(a: &[f64], b: &[f64]) -> Result<(), EstimatorError> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(EstimatorError::DimensionMismatch(a.len(), b.len()))
    }
}

pub fn sgd_estimate(grad_i_stale: &[f64]) -> Vec<f64> {
    grad_i_stale.to_vec()
}

pub fn svrg_estimate(
    grad_i_stale: &[f64],
    grad_i_snapshot: &[f64],
    snapshot_full_block: &[f64],
) -> Result<Vec<f64>, EstimatorError> {
    same_len(grad_i_stale, grad_i_snapshot)?;
    same_len(grad_i_stale, snapshot_full_block)?;
    Ok(grad_i_stale
        .iter()
        .zip(grad_i_snapshot)
        .zip(snapshot_full_block)
        .map(|((g, s), f)| g - s + f)
        .collect())
}

/// Frozen outer-loop state for SVRG.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrgSnapshot {
    pub snapshot_model: ModelView,
    /// `∇_{G_ℓ} f(w̃)` per worker, bias entry last for the bias owner.
    pub full_block_gradients: Vec<Vec<f64>>,
}

/// Per-sample table of the latest block gradients, with an incrementally
/// maintained mean that is recomputed exactly every `len` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct SagaTable {
    dim: usize,
    entries: Vec<f64>,
    running_mean: Vec<f64>,
    initialized: bool,
    updates_since_recompute: usize,
}

impl SagaTable {
    /// A zero-filled table that refuses to estimate until [`SagaTable::fill`] runs.
    pub fn uninitialized(len: usize, dim: usize) -> Self {
        SagaTable {
            dim,
            entries: vec![0.0; len * dim],
            running_mean: vec![0.0; dim],
            initialized: false,
            updates_since_recompute: 0,
        }
    }

    /// Table holding `entries[i]` for every sample.
    pub fn from_entries(entries: Vec<Vec<f64>>) -> Result<Self, EstimatorError> {
        let dim = entries.first().map_or(0, Vec::len);
        let mut table = SagaTable::uninitialized(entries.len(), dim);
        table.fill(|i| entries[i].clone())?;
        Ok(table)
    }

    /// Sets every entry from `f(i)` and marks the table ready.
    pub fn fill(&mut self, mut f: impl FnMut(usize) -> Vec<f64>) -> Result<(), EstimatorError> {
        for i in 0..self.len() {
            let g = f(i);
            if g.len() != self.dim {
                return Err(EstimatorError::DimensionMismatch(g.len(), self.dim));
            }
            self.entries[i * self.dim..(i + 1) * self.dim].copy_from_slice(&g);
        }
        self.initialized = true;
        self.recompute_mean();
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.entries.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    /// Mean of the entries computed from scratch.
    pub fn exact_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (m, v) in mean.iter_mut().zip(self.entry(i)) {
                *m += v;
            }
        }
        let inv = 1.0 / self.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }

    fn recompute_mean(&mut self) {
        self.running_mean = self.exact_mean();
        self.updates_since_recompute = 0;
    }

    fn check_index(&self, i: usize) -> Result<(), EstimatorError> {
        if i < self.len() {
            Ok(())
        } else {
            Err(EstimatorError::IndexOutOfRange {
                index: i,
                len: self.len(),
            })
        }
    }

    /// `g_i(ŵ) - α_i + mean(α)`. Leaves the table untouched.
    pub fn estimate(&self, grad_i_stale: &[f64], i: usize) -> Result<Vec<f64>, EstimatorError> {
        if !self.initialized {
            return Err(EstimatorError::Uninitialized);
        }
        self.check_index(i)?;
        same_len(grad_i_stale, &self.running_mean)?;
        Ok(grad_i_stale
            .iter()
            .zip(self.entry(i))
            .zip(&self.running_mean)
            .map(|((g, a), m)| g - a + m)
            .collect())
    }

    /// Replaces `α_i` and shifts the mean by `(new - old) / l`.
    pub fn update_entry(&mut self, i: usize, new_grad: &[f64]) -> Result<(), EstimatorError> {
        self.check_index(i)?;
        same_len(new_grad, &self.running_mean)?;
        let inv = 1.0 / self.len() as f64;
        let dim = self.dim;
        let slot = &mut self.entries[i * dim..(i + 1) * dim];
        for ((old, new), m) in slot.iter_mut().zip(new_grad).zip(&mut self.running_mean) {
            *m += (new - *old) * inv;
            *old = *new;
        }
        self.updates_since_recompute += 1;
        if self.updates_since_recompute >= self.len() {
            self.recompute_mean();
        }
        Ok(())
    }
}

pub fn saga_estimate(
    grad_i_stale: &[f64],
    table: &SagaTable,
    i: usize,
) -> Result<Vec<f64>, EstimatorError> {
    table.estimate(grad_i_stale, i)
}

pub fn saga_update_entry(
    table: &mut SagaTable,
    i: usize,
    new_grad: &[f64],
) -> Result<(), EstimatorError> {
    table.update_entry(i, new_grad)
}

/// `w - γ v` on the owner's block.
pub fn apply_update(model_block: &[f64], v: &[f64], gamma: f64) -> Result<Vec<f64>, EstimatorError> {
    if !(gamma > 0.0) {
        return Err(EstimatorError::NonPositiveStep(gamma));
    }
    same_len(model_block, v)?;
    Ok(model_block.iter().zip(v).map(|(w, g)| w - gamma * g).collect())
}

/// In-place form of [`apply_update`] used on the hot path.
pub(crate) fn apply_update_in_place(model_block: &mut [f64], v: &[f64], gamma: f64) {
    debug_assert_eq!(model_block.len(), v.len());
    model_block.iter_mut().zip(v).for_each(|(w, g)| *w -= gamma * g);
}
