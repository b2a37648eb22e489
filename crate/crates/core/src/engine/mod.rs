//! Simulated federation runtime: asynchronous workers with demand-based product
//! pulls, lockstep synchronous baselines, and the "after communication" event log.

mod config;
mod federation;
mod log;
mod sim;
mod threaded;
mod worker;

pub use config::{inject_straggler, Algorithm, Clock, CostModel, MaskMode, Mode, RunConfig};
pub use federation::{PullOutcome, Pulled};
pub use log::{CurveSnapshot, EventLog, EventRecord, Metrics};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PartitionedData;
use crate::estimators::EstimatorError;
use crate::losses::ModelView;
use crate::treecomm::TreeError;

use federation::Federation;
use worker::WorkerState;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("variance-reduction state used before its initial full pass")]
    MissingSnapshot,
    #[error("a worker thread panicked")]
    WorkerPanicked,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: ModelView,
    pub log: EventLog,
    pub metrics: Metrics,
    /// Committed model every `record_every` updates, plus the start and end points.
    pub curve: Vec<CurveSnapshot>,
}

/// ChaCha8 generator seeded with `seed` on stream `stream`. Worker `w` samples with
/// stream `w`; stream 0 draws the masks.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `config` from the zero model, dispatching on its mode and clock.
pub fn run(config: &RunConfig, data: &PartitionedData) -> Result<RunOutput, EngineError> {
    let initial = ModelView::zeros(data.partition(), &config.loss);
    run_from(config, data, &initial)
}

pub fn run_from(
    config: &RunConfig,
    data: &PartitionedData,
    initial: &ModelView,
) -> Result<RunOutput, EngineError> {
    let (fed, workers) = setup(config, data, initial)?;
    match (config.mode, config.clock) {
        (Mode::Async, Clock::Virtual) => sim::run_async(config, fed, workers),
        (Mode::Sync, Clock::Virtual) => sim::run_sync(config, fed, workers),
        (Mode::Async, Clock::Wall) => threaded::run_async(config, fed, workers),
        (Mode::Sync, Clock::Wall) => threaded::run_sync(config, fed, workers),
    }
}

/// Asynchronous run (the mode field of `config` is ignored).
pub fn run_async(config: &RunConfig, data: &PartitionedData) -> Result<RunOutput, EngineError> {
    let mut c = config.clone();
    c.mode = Mode::Async;
    run(&c, data)
}

/// Lockstep synchronous run (the mode field of `config` is ignored).
pub fn run_sync(config: &RunConfig, data: &PartitionedData) -> Result<RunOutput, EngineError> {
    let mut c = config.clone();
    c.mode = Mode::Sync;
    run(&c, data)
}

fn setup(
    config: &RunConfig,
    data: &PartitionedData,
    initial: &ModelView,
) -> Result<(Federation, Vec<WorkerState>), EngineError> {
    let q = data.n_workers();
    config.validate(q)?;
    if config.loss.has_bias != initial.bias.is_some() || !initial.conforms_to(data.partition()) {
        return Err(EngineError::InvalidConfig(
            "initial model does not match the partition and loss".into(),
        ));
    }
    if data.n_samples() == 0 {
        return Err(EngineError::InvalidConfig("dataset has no samples".into()));
    }
    if config.mask == MaskMode::Masked && q < 2 {
        return Err(EngineError::InvalidConfig(
            "masked aggregation needs at least two workers".into(),
        ));
    }
    let fed = Federation::new(config, data, initial)?;
    let active = data.partition().active_worker();
    let workers = (1..=q)
        .map(|w| {
            WorkerState::new(
                w,
                fed.features(w),
                fed.published(w).to_vec(),
                config.loss.has_bias && w == active,
                config.loss.lambda,
                config.gamma,
                config.algorithm,
                stream_rng(config.seed, w as u64),
                config.multiplier(w),
            )
        })
        .collect();
    Ok((fed, workers))
}

/// Inner-loop length between SVRG snapshots.
fn snapshot_interval(config: &RunConfig, fed: &Federation) -> u64 {
    config
        .snapshot_interval
        .map_or((fed.n_samples() * fed.n_workers()) as u64, |m| m as u64)
}

/// The synchronous full pass at an SVRG outer-loop boundary or before SAGA starts.
/// Returns whether any work was done.
fn full_pass_barrier(
    config: &RunConfig,
    fed: &mut Federation,
    workers: &mut [WorkerState],
) -> Result<bool, EngineError> {
    match config.algorithm {
        Algorithm::Sgd => {
            fed.open_epoch(None);
            Ok(false)
        }
        Algorithm::Svrg => {
            let residuals = fed.full_pass_residuals(true)?;
            for w in workers.iter_mut() {
                w.take_snapshot(&residuals);
            }
            fed.metrics.outer_loops += 1;
            let m = snapshot_interval(config, fed);
            fed.open_epoch(Some(m));
            Ok(true)
        }
        Algorithm::Saga => {
            let residuals = fed.full_pass_residuals(false)?;
            for w in workers.iter_mut() {
                w.init_saga(&residuals)?;
            }
            fed.metrics.outer_loops = 1;
            fed.open_epoch(None);
            Ok(true)
        }
    }
}
