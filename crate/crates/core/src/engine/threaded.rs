//! Wall-clock runtime: one OS thread per worker. Simulated delays are real sleeps,
//! so a single core is enough to reproduce straggler effects.

use std::sync::{Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use super::federation::{Federation, PullOutcome, Pulled, Status};
use super::sim::Timing;
use super::worker::WorkerState;
use super::{full_pass_barrier, Algorithm, EngineError, RunConfig, RunOutput};

fn ns(d: u64) -> Duration {
    Duration::from_nanos(d)
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

enum RoundPlan {
    Step(usize, Pulled),
    FullPass,
    Stop,
}

struct Shared {
    fed: Federation,
    commits: u64,
    arrived: usize,
    generation: u64,
    residuals: Vec<f64>,
    round: Option<RoundPlan>,
    error: Option<EngineError>,
    busy: Vec<f64>,
    idle: Vec<f64>,
}

struct Board {
    state: Mutex<Shared>,
    cv: Condvar,
    q: usize,
    start: Instant,
}

impl Board {
    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Rendezvous of all workers. The last arrival runs `leader` while holding the
    /// lock; an aborted run releases everyone.
    fn barrier<F>(&self, leader: F)
    where
        F: FnOnce(&mut Shared),
    {
        let mut g = self.lock();
        let generation = g.generation;
        g.arrived += 1;
        if g.arrived == self.q {
            g.arrived = 0;
            leader(&mut g);
            g.generation += 1;
            self.cv.notify_all();
        } else {
            while g.generation == generation && g.error.is_none() {
                g = self.cv.wait(g).unwrap_or_else(|e| e.into_inner());
            }
        }
    }

    fn fail(&self, e: EngineError) {
        let mut g = self.lock();
        g.error.get_or_insert(e);
        self.cv.notify_all();
    }

    fn aborted(&self) -> bool {
        self.lock().error.is_some()
    }
}

/// Full pass on the shared board, run by the last worker to reach the barrier.
fn leader_pass(config: &RunConfig, g: &mut Shared) {
    let keep = config.algorithm == Algorithm::Svrg;
    match g.fed.full_pass_residuals(keep) {
        Ok(r) => {
            g.residuals = r;
            g.fed.metrics.outer_loops += 1;
            let m = super::snapshot_interval(config, &g.fed);
            g.fed.open_epoch(if keep { Some(m) } else { None });
        }
        Err(e) => {
            g.error.get_or_insert(e);
        }
    }
}

/// Every worker's share of a full pass after the leader has aggregated residuals.
fn local_pass(board: &Board, ws: &mut WorkerState, timing: &Timing, k: usize) -> Result<(), EngineError> {
    let began = Instant::now();
    let residuals = board.lock().residuals.clone();
    match ws.algorithm {
        Algorithm::Svrg => ws.take_snapshot(&residuals),
        Algorithm::Saga => ws.init_saga(&residuals)?,
        Algorithm::Sgd => {}
    }
    sleep_until(began + ns(timing.comm + timing.pass[k]));
    let busy = began.elapsed().as_secs_f64() * 1e3;
    let waited = Instant::now();
    board.barrier(|_| {});
    let mut g = board.lock();
    g.busy[k] += busy;
    g.idle[k] += waited.elapsed().as_secs_f64() * 1e3;
    Ok(())
}

fn initial_pass(
    config: &RunConfig,
    fed: &mut Federation,
    workers: &mut [WorkerState],
    timing: &Timing,
) -> Result<(), EngineError> {
    let began = Instant::now();
    if full_pass_barrier(config, fed, workers)? {
        sleep_until(began + ns(timing.barrier()));
        for (k, pass) in timing.pass.iter().enumerate() {
            fed.metrics.busy_ms[k] += *pass as f64 / 1e6;
        }
    }
    Ok(())
}

fn collect(board: Board) -> Result<RunOutput, EngineError> {
    let end = elapsed_ms(board.start);
    let mut shared = board.state.into_inner().unwrap_or_else(|e| e.into_inner());
    if let Some(e) = shared.error.take() {
        return Err(e);
    }
    for k in 0..shared.busy.len() {
        shared.fed.metrics.busy_ms[k] += shared.busy[k];
        shared.fed.metrics.idle_ms[k] += shared.idle[k];
    }
    let (model, log, metrics, curve) = shared.fed.finish(end);
    Ok(RunOutput {
        model,
        log,
        metrics,
        curve,
    })
}

fn board(fed: Federation, q: usize, start: Instant) -> Board {
    Board {
        state: Mutex::new(Shared {
            fed,
            commits: 0,
            arrived: 0,
            generation: 0,
            residuals: Vec::new(),
            round: None,
            error: None,
            busy: vec![0.0; q],
            idle: vec![0.0; q],
        }),
        cv: Condvar::new(),
        q,
        start,
    }
}

fn spawn_all<F>(workers: Vec<WorkerState>, board: &Board, body: F) -> Result<(), EngineError>
where
    F: Fn(WorkerState) -> Result<(), EngineError> + Sync,
{
    let panicked = thread::scope(|s| {
        let handles: Vec<_> = workers
            .into_iter()
            .map(|ws| {
                let body = &body;
                s.spawn(move || {
                    if let Err(e) = body(ws) {
                        board.fail(e);
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join()).any(|r| r.is_err())
    });
    if panicked {
        return Err(EngineError::WorkerPanicked);
    }
    Ok(())
}

pub(super) fn run_async(
    config: &RunConfig,
    mut fed: Federation,
    mut workers: Vec<WorkerState>,
) -> Result<RunOutput, EngineError> {
    let q = workers.len();
    let timing = Timing::new(config, &fed, &workers);
    let start = Instant::now();
    initial_pass(config, &mut fed, &mut workers, &timing)?;
    let board = board(fed, q, start);

    spawn_all(workers, &board, |mut ws| {
        let k = ws.id - 1;
        let mut sample = ws.pick_sample();
        let mut retry = false;
        loop {
            if !retry {
                thread::sleep(ns(timing.comm));
            }
            retry = false;
            let (outcome, seen) = {
                let mut g = board.lock();
                if g.error.is_some() {
                    return Ok(());
                }
                let o = g.fed.pull_products(ws.id, sample, elapsed_ms(board.start))?;
                (o, g.commits)
            };
            match outcome {
                PullOutcome::Granted(p) => {
                    let began = Instant::now();
                    let v = ws.step(sample, p.residual, p.snapshot_residual)?;
                    sleep_until(began + ns(timing.step[k]));
                    let busy = began.elapsed().as_secs_f64() * 1e3;
                    let mut g = board.lock();
                    let now = elapsed_ms(board.start);
                    g.fed.commit(ws.id, p.t, &ws.params, v, now);
                    g.commits += 1;
                    g.busy[k] += busy;
                    board.cv.notify_all();
                    drop(g);
                    sample = ws.pick_sample();
                }
                PullOutcome::Blocked => {
                    let waited = Instant::now();
                    let mut g = board.lock();
                    while g.commits == seen && g.error.is_none() {
                        g = board.cv.wait(g).unwrap_or_else(|e| e.into_inner());
                    }
                    g.idle[k] += waited.elapsed().as_secs_f64() * 1e3;
                    retry = true;
                }
                PullOutcome::Boundary => {
                    let waited = Instant::now();
                    board.barrier(|g| leader_pass(config, g));
                    board.lock().idle[k] += waited.elapsed().as_secs_f64() * 1e3;
                    if board.aborted() {
                        return Ok(());
                    }
                    local_pass(&board, &mut ws, &timing, k)?;
                }
                PullOutcome::Done => return Ok(()),
            }
        }
    })?;
    collect(board)
}

pub(super) fn run_sync(
    config: &RunConfig,
    mut fed: Federation,
    mut workers: Vec<WorkerState>,
) -> Result<RunOutput, EngineError> {
    let q = workers.len();
    let timing = Timing::new(config, &fed, &workers);
    let start = Instant::now();
    initial_pass(config, &mut fed, &mut workers, &timing)?;
    let active = fed.active_worker();
    let board = board(fed, q, start);

    spawn_all(workers, &board, |mut ws| {
        let k = ws.id - 1;
        loop {
            // The label holder plans the round: it draws the shared sample index and
            // runs the aggregation everyone steps from.
            if ws.id == active {
                let status = board.lock().fed.status();
                let plan = match status {
                    Status::Done => RoundPlan::Stop,
                    Status::Boundary => RoundPlan::FullPass,
                    Status::Open => {
                        let i = ws.pick_sample();
                        thread::sleep(ns(timing.comm));
                        let mut g = board.lock();
                        let now = elapsed_ms(board.start);
                        RoundPlan::Step(i, g.fed.pull_round(i, now)?)
                    }
                };
                board.lock().round = Some(plan);
            }
            let waited = Instant::now();
            board.barrier(|g| {
                if let Some(RoundPlan::FullPass) = g.round {
                    leader_pass(config, g);
                }
            });
            let mut g = board.lock();
            g.idle[k] += waited.elapsed().as_secs_f64() * 1e3;
            if g.error.is_some() {
                return Ok(());
            }
            let plan = match g.round.as_ref() {
                Some(RoundPlan::Step(i, p)) => Some((*i, p.t, p.residual, p.snapshot_residual)),
                Some(RoundPlan::FullPass) => None,
                Some(RoundPlan::Stop) | None => return Ok(()),
            };
            drop(g);
            match plan {
                None => local_pass(&board, &mut ws, &timing, k)?,
                Some((i, t, residual, snapshot_residual)) => {
                    let began = Instant::now();
                    let v = ws.step(i, residual, snapshot_residual)?;
                    sleep_until(began + ns(timing.step[k]));
                    let busy = began.elapsed().as_secs_f64() * 1e3;
                    let mut g = board.lock();
                    let now = elapsed_ms(board.start);
                    g.fed.commit(ws.id, t + k as u64, &ws.params, v, now);
                    g.busy[k] += busy;
                    drop(g);
                    let waited = Instant::now();
                    board.barrier(|_| {});
                    board.lock().idle[k] += waited.elapsed().as_secs_f64() * 1e3;
                }
            }
        }
    })?;
    collect(board)
}
