//! Deterministic discrete-event scheduling on a virtual clock (nanoseconds).
//! Simultaneous events are processed in worker-id order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::federation::{Federation, PullOutcome, Status};
use super::worker::WorkerState;
use super::{full_pass_barrier, CostModel, EngineError, RunConfig, RunOutput};

fn ms(ns: u64) -> f64 {
    ns as f64 / 1e6
}

pub(super) struct Timing {
    pub comm: u64,
    pub step: Vec<u64>,
    pub pass: Vec<u64>,
}

impl Timing {
    pub(super) fn new(config: &RunConfig, fed: &Federation, workers: &[WorkerState]) -> Self {
        let n = fed.n_samples() as f64;
        Timing {
            comm: CostModel::ns(config.cost.message_us) * fed.levels() as u64,
            step: workers
                .iter()
                .map(|w| CostModel::ns(config.cost.step_us * w.multiplier))
                .collect(),
            pass: workers
                .iter()
                .map(|w| CostModel::ns(config.cost.full_pass_us_per_sample * n * w.multiplier))
                .collect(),
        }
    }

    /// Duration of a full-pass barrier: one aggregation round plus the slowest
    /// worker's local pass.
    pub(super) fn barrier(&self) -> u64 {
        self.comm + self.pass.iter().copied().max().unwrap_or(0)
    }
}

/// Runs a full pass at `now` and charges its cost; returns the time it ends.
fn barrier_at(
    config: &RunConfig,
    fed: &mut Federation,
    workers: &mut [WorkerState],
    timing: &Timing,
    now: u64,
    arrivals: &[u64],
) -> Result<u64, EngineError> {
    if !full_pass_barrier(config, fed, workers)? {
        return Ok(now);
    }
    let end = now + timing.barrier();
    for (k, &arrived) in arrivals.iter().enumerate() {
        let busy = timing.pass[k];
        fed.metrics.busy_ms[k] += ms(busy);
        fed.metrics.idle_ms[k] += ms(end - arrived - busy - timing.comm);
    }
    Ok(end)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Pull,
    Commit,
}

pub(super) fn run_async(
    config: &RunConfig,
    mut fed: Federation,
    mut workers: Vec<WorkerState>,
) -> Result<RunOutput, EngineError> {
    let q = workers.len();
    let timing = Timing::new(config, &fed, &workers);
    let start = barrier_at(config, &mut fed, &mut workers, &timing, 0, &vec![0; q])?;

    let mut heap = BinaryHeap::new();
    let mut sample: Vec<usize> = Vec::with_capacity(q);
    for (k, w) in workers.iter_mut().enumerate() {
        sample.push(w.pick_sample());
        heap.push(Reverse((start + timing.comm, k, Kind::Pull)));
    }
    let mut in_flight: Vec<Option<(u64, Vec<f64>)>> = vec![None; q];
    let mut blocked: Vec<Option<u64>> = vec![None; q];
    let mut at_barrier: Vec<Option<u64>> = vec![None; q];
    let mut last = start;

    while let Some(Reverse((now, k, kind))) = heap.pop() {
        let id = k + 1;
        match kind {
            Kind::Pull => match fed.pull_products(id, sample[k], ms(now))? {
                PullOutcome::Granted(p) => {
                    let v = workers[k].step(sample[k], p.residual, p.snapshot_residual)?;
                    in_flight[k] = Some((p.t, v));
                    fed.metrics.busy_ms[k] += ms(timing.step[k]);
                    heap.push(Reverse((now + timing.step[k], k, Kind::Commit)));
                }
                PullOutcome::Blocked => blocked[k] = Some(now),
                PullOutcome::Boundary => {
                    at_barrier[k] = Some(now);
                    if at_barrier.iter().all(Option::is_some) {
                        let arrivals: Vec<u64> = at_barrier.iter_mut().map(|a| a.take().unwrap()).collect();
                        let end = barrier_at(config, &mut fed, &mut workers, &timing, now, &arrivals)?;
                        for j in 0..q {
                            heap.push(Reverse((end + timing.comm, j, Kind::Pull)));
                        }
                    }
                }
                PullOutcome::Done => {}
            },
            Kind::Commit => {
                let (t, v) = in_flight[k].take().expect("commit without a pull");
                fed.commit(id, t, &workers[k].params, v, ms(now));
                last = now;
                sample[k] = workers[k].pick_sample();
                heap.push(Reverse((now + timing.comm, k, Kind::Pull)));
                for (j, b) in blocked.iter_mut().enumerate() {
                    if let Some(since) = b.take() {
                        fed.metrics.idle_ms[j] += ms(now - since);
                        heap.push(Reverse((now, j, Kind::Pull)));
                    }
                }
            }
        }
    }
    debug_assert!(!fed.has_pending());
    Ok(finish(fed, last))
}

pub(super) fn run_sync(
    config: &RunConfig,
    mut fed: Federation,
    mut workers: Vec<WorkerState>,
) -> Result<RunOutput, EngineError> {
    let q = workers.len();
    let timing = Timing::new(config, &fed, &workers);
    let mut now = barrier_at(config, &mut fed, &mut workers, &timing, 0, &vec![0; q])?;
    let leader = workers
        .iter()
        .position(|w| w.id == fed.active_worker())
        .unwrap_or(0);
    let round = timing.step.iter().copied().max().unwrap_or(0);

    loop {
        match fed.status() {
            Status::Done => break,
            Status::Boundary => {
                now = barrier_at(config, &mut fed, &mut workers, &timing, now, &vec![now; q])?;
                continue;
            }
            Status::Open => {}
        }
        let i = workers[leader].pick_sample();
        now += timing.comm;
        let p = fed.pull_round(i, ms(now))?;
        let end = now + round;
        for (k, w) in workers.iter_mut().enumerate() {
            let v = w.step(i, p.residual, p.snapshot_residual)?;
            fed.commit(k + 1, p.t + k as u64, &w.params, v, ms(end));
            fed.metrics.busy_ms[k] += ms(timing.step[k]);
            fed.metrics.idle_ms[k] += ms(round - timing.step[k]);
        }
        now = end;
    }
    Ok(finish(fed, now))
}

fn finish(fed: Federation, end_ns: u64) -> RunOutput {
    let (model, log, metrics, curve) = fed.finish(ms(end_ns));
    RunOutput {
        model,
        log,
        metrics,
        curve,
    }
}
