use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::losses::LossSpec;

use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sgd,
    Svrg,
    Saga,
}

impl Algorithm {
    /// Short name used in file names: `afsgd`, `afsvrg`, `afsaga`.
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Sgd => "afsgd",
            Algorithm::Svrg => "afsvrg",
            Algorithm::Saga => "afsaga",
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "afsgd" | "sgd" => Ok(Algorithm::Sgd),
            "afsvrg" | "svrg" => Ok(Algorithm::Svrg),
            "afsaga" | "saga" => Ok(Algorithm::Saga),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Async,
    Sync,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "async" => Ok(Mode::Async),
            "sync" => Ok(Mode::Sync),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Async => "async",
            Mode::Sync => "sync",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Plain,
    Masked,
}

impl FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(MaskMode::Plain),
            "masked" => Ok(MaskMode::Masked),
            other => Err(format!("unknown mask mode `{other}`")),
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Plain => "plain",
            MaskMode::Masked => "masked",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    /// Deterministic discrete-event scheduling on one thread.
    Virtual,
    /// One OS thread per worker; delays are real sleeps.
    Wall,
}

impl FromStr for Clock {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual" => Ok(Clock::Virtual),
            "wall" => Ok(Clock::Wall),
            other => Err(format!("unknown clock `{other}`")),
        }
    }
}

impl fmt::Display for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clock::Virtual => "virtual",
            Clock::Wall => "wall",
        })
    }
}

/// Simulated durations, in microseconds, for a worker with multiplier 1.0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// One stochastic block-gradient step.
    pub step_us: f64,
    /// One tree level of message latency.
    pub message_us: f64,
    /// Per-sample cost of a full pass (SVRG snapshot, SAGA table init).
    pub full_pass_us_per_sample: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            step_us: 1000.0,
            message_us: 50.0,
            full_pass_us_per_sample: 20.0,
        }
    }
}

impl CostModel {
    pub(crate) fn ns(us: f64) -> u64 {
        (us * 1e3).round().max(0.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub gamma: f64,
    /// Total block updates across all workers (inner-loop steps only).
    pub updates: usize,
    pub loss: LossSpec,
    pub mask: MaskMode,
    /// Mask half-width; `None` picks `1e3 · max(1, max|y|)`.
    pub mask_range: Option<f64>,
    /// Enforced bound on `t - min D(t)`; `None` only observes it.
    pub staleness_cap: Option<usize>,
    /// Compute-delay multipliers keyed by 1-based worker id; absent means 1.0.
    pub stragglers: BTreeMap<usize, f64>,
    pub seed: u64,
    /// Inner-loop length (in updates) between SVRG snapshots; `None` means `n · q`.
    pub snapshot_interval: Option<usize>,
    pub clock: Clock,
    pub cost: CostModel,
    /// Record a model snapshot for the convergence curve every this many updates.
    pub record_every: usize,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, gamma: f64, updates: usize, loss: LossSpec) -> Self {
        RunConfig {
            algorithm,
            mode: Mode::Async,
            gamma,
            updates,
            loss,
            mask: MaskMode::Plain,
            mask_range: None,
            staleness_cap: None,
            stragglers: BTreeMap::new(),
            seed: 0,
            snapshot_interval: None,
            clock: Clock::Virtual,
            cost: CostModel::default(),
            record_every: 100,
        }
    }

    pub fn multiplier(&self, worker: usize) -> f64 {
        self.stragglers.get(&worker).copied().unwrap_or(1.0)
    }

    pub fn validate(&self, q: usize) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidConfig(msg));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if let Err(e) = self.loss.validate() {
            return bad(e);
        }
        if self.record_every == 0 {
            return bad("record_every must be positive".into());
        }
        if let Some(m) = self.mask_range {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("mask_range must be positive, got {m}"));
            }
        }
        if self.snapshot_interval == Some(0) {
            return bad("snapshot_interval must be positive".into());
        }
        for (&w, &m) in &self.stragglers {
            if w == 0 || w > q {
                return bad(format!("straggler id {w} outside 1..={q}"));
            }
            if !(1.0..=10.0).contains(&m) {
                return bad(format!("straggler multiplier {m} outside [1, 10]"));
            }
        }
        let c = &self.cost;
        if [c.step_us, c.message_us, c.full_pass_us_per_sample]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return bad("cost model entries must be nonnegative".into());
        }
        Ok(())
    }
}

/// Makes `worker` compute `multiplier` times slower than the fastest worker.
pub fn inject_straggler(
    mut config: RunConfig,
    worker: usize,
    multiplier: f64,
) -> Result<RunConfig, EngineError> {
    if !(1.0..=10.0).contains(&multiplier) {
        return Err(EngineError::InvalidConfig(format!(
            "straggler multiplier {multiplier} outside [1, 10]"
        )));
    }
    if worker == 0 {
        return Err(EngineError::InvalidConfig("worker ids start at 1".into()));
    }
    if multiplier == 1.0 {
        config.stragglers.remove(&worker);
    } else {
        config.stragglers.insert(worker, multiplier);
    }
    Ok(config)
}
