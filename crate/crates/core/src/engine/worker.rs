use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::estimators::{apply_update_in_place, svrg_estimate, SagaTable};
use crate::losses::block_gradient_from_residual;

use super::{Algorithm, EngineError};

/// One worker's private state. Only the owning worker mutates it.
pub(crate) struct WorkerState {
    pub(crate) id: usize,
    features: Arc<Array2<f64>>,
    pub(crate) params: Vec<f64>,
    owns_bias: bool,
    lambda: f64,
    gamma: f64,
    pub(crate) algorithm: Algorithm,
    rng: ChaCha8Rng,
    pub(crate) multiplier: f64,
    svrg: Option<(Vec<f64>, Vec<f64>)>,
    saga: Option<SagaTable>,
}

impl WorkerState {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        id: usize,
        features: Arc<Array2<f64>>,
        params: Vec<f64>,
        owns_bias: bool,
        lambda: f64,
        gamma: f64,
        algorithm: Algorithm,
        rng: ChaCha8Rng,
        multiplier: f64,
    ) -> Self {
        WorkerState {
            id,
            features,
            params,
            owns_bias,
            lambda,
            gamma,
            algorithm,
            rng,
            multiplier,
            svrg: None,
            saga: None,
        }
    }

    pub(crate) fn pick_sample(&mut self) -> usize {
        self.rng.random_range(0..self.features.nrows())
    }

    fn gradient(&self, residual: f64, i: usize, params: &[f64]) -> Vec<f64> {
        block_gradient_from_residual(
            residual,
            self.features.row(i),
            params,
            self.lambda,
            self.owns_bias,
        )
    }

    /// Forms the estimate for sample `i` from the pulled residual(s), applies it to
    /// the private block and returns it.
    pub(crate) fn step(
        &mut self,
        i: usize,
        residual: f64,
        snapshot_residual: Option<f64>,
    ) -> Result<Vec<f64>, EngineError> {
        let g = self.gradient(residual, i, &self.params);
        let v = match self.algorithm {
            Algorithm::Sgd => g,
            Algorithm::Svrg => {
                let (snap, full) = self.svrg.as_ref().ok_or(EngineError::MissingSnapshot)?;
                let r = snapshot_residual.ok_or(EngineError::MissingSnapshot)?;
                let gs = self.gradient(r, i, snap);
                svrg_estimate(&g, &gs, full)?
            }
            Algorithm::Saga => {
                let table = self.saga.as_mut().ok_or(EngineError::MissingSnapshot)?;
                let v = table.estimate(&g, i)?;
                table.update_entry(i, &g)?;
                v
            }
        };
        apply_update_in_place(&mut self.params, &v, self.gamma);
        Ok(v)
    }

    fn full_gradient(&self, residuals: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.params.len()];
        for (i, &r) in residuals.iter().enumerate() {
            let g = self.gradient(r, i, &self.params);
            acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / residuals.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }

    /// Freezes the current block as the SVRG snapshot and computes its full local
    /// gradient from the label holder's residuals.
    pub(crate) fn take_snapshot(&mut self, residuals: &[f64]) {
        let full = self.full_gradient(residuals);
        self.svrg = Some((self.params.clone(), full));
    }

    /// Fills the SAGA table with every sample's gradient at the current block.
    pub(crate) fn init_saga(&mut self, residuals: &[f64]) -> Result<(), EngineError> {
        let mut table = SagaTable::uninitialized(residuals.len(), self.params.len());
        table.fill(|i| self.gradient(residuals[i], i, &self.params))?;
        self.saga = Some(table);
        Ok(())
    }
}
