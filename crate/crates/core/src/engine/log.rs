use std::fmt::Write as _;

use crate::estimators::apply_update_in_place;
use crate::losses::ModelView;

/// One completed score aggregation and the block update that followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    /// Global counter, assigned when the aggregation completes.
    pub t: u64,
    pub worker: usize,
    pub sample: usize,
    pub sim_time_ms: f64,
    /// `t - min D(t)`, where `D(t)` holds the earlier-labelled updates that had not
    /// yet been committed when the products were read (0 if none).
    pub max_staleness: u64,
    /// Per worker: how many of its earlier-labelled updates were missing from the
    /// block it served.
    pub block_lags: Vec<u32>,
    /// Merge messages spent on this aggregation.
    pub messages: usize,
    /// The estimate `v` applied as `w ← w - γ v`; bias entry last for the bias owner.
    pub update: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn workers(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.worker).collect()
    }

    /// `t,worker,sample,sim_time_ms,max_staleness,messages`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,worker,sample,sim_time_ms,max_staleness,messages\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.t, r.worker, r.sample, r.sim_time_ms, r.max_staleness, r.messages
            )
            .unwrap();
        }
        out
    }

    /// Applies every logged update in counter order onto `initial`.
    pub fn replay(&self, initial: &ModelView, gamma: f64, bias_owner: usize) -> ModelView {
        let mut model = initial.clone();
        for r in &self.records {
            let block = &mut model.blocks[r.worker - 1];
            let d = block.len();
            apply_update_in_place(block, &r.update[..d], gamma);
            if r.worker == bias_owner {
                if let (Some(b), Some(v)) = (model.bias.as_mut(), r.update.get(d)) {
                    *b -= gamma * v;
                }
            }
        }
        model
    }
}

/// Counters gathered over a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    /// Merge messages spent on per-update aggregations.
    pub messages: usize,
    /// Root-to-coordinator deliveries of those aggregations.
    pub deliveries: usize,
    /// Merge messages spent on full passes (SVRG snapshots, SAGA initialization).
    pub barrier_messages: usize,
    pub aggregations: usize,
    /// Pulls deferred because the staleness cap would have been exceeded.
    pub retries: usize,
    pub updates_per_worker: Vec<usize>,
    pub busy_ms: Vec<f64>,
    pub idle_ms: Vec<f64>,
    pub total_time_ms: f64,
    pub outer_loops: usize,
}

impl Metrics {
    pub(crate) fn new(q: usize) -> Self {
        Metrics {
            updates_per_worker: vec![0; q],
            busy_ms: vec![0.0; q],
            idle_ms: vec![0.0; q],
            ..Default::default()
        }
    }
}

/// Model state recorded for the convergence curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSnapshot {
    pub time_ms: f64,
    pub updates: u64,
    pub model: ModelView,
}
