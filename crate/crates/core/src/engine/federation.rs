//! State shared by all workers: the committed model blocks that listeners answer
//! product requests from, the aggregation protocol, and the event log.
//!
//! Only the owning worker ever writes its published block ([`Federation::commit`]
//! takes the worker id and touches nothing else). Everything another worker
//! learns about a block arrives as a local product through the reduction tree.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::data::PartitionedData;
use crate::losses::{local_product, score_derivative, LossSpec, ModelView};
use crate::treecomm::{Transcript, TreePair, TreeTopology};

use super::log::{CurveSnapshot, EventLog, EventRecord, Metrics};
use super::{EngineError, MaskMode, RunConfig};

pub(crate) enum Aggregator {
    Plain(TreeTopology),
    Masked {
        pair: TreePair,
        range: f64,
        rng: ChaCha8Rng,
    },
}

impl Aggregator {
    /// Tree levels a request has to climb, both phases counted for masking.
    pub(crate) fn levels(&self) -> usize {
        match self {
            Aggregator::Plain(t) => t.depth(),
            Aggregator::Masked { pair, .. } => pair.t1().depth() + pair.t2().depth(),
        }
    }
}

/// Result of asking the coordinator for a sample's aggregated score.
#[derive(Debug, Clone, PartialEq)]
pub enum PullOutcome {
    Granted(Pulled),
    /// The staleness cap would be exceeded; retry after another worker commits.
    Blocked,
    /// The current SVRG inner loop is complete; wait for the snapshot barrier.
    Boundary,
    /// The update budget is used up.
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pulled {
    pub t: u64,
    /// `ŵ·x_i` as aggregated over the tree (bias excluded).
    pub score: f64,
    /// Loss derivative at `score + b`, computed by the label holder.
    pub residual: f64,
    /// Loss derivative at the current SVRG snapshot, if one exists.
    pub snapshot_residual: Option<f64>,
    /// Version counter of every block at read time.
    pub versions: Vec<u64>,
    pub max_staleness: u64,
    pub block_lags: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Status {
    Open,
    Boundary,
    Done,
}

pub struct Federation {
    loss: LossSpec,
    active: usize,
    features: Vec<Arc<Array2<f64>>>,
    labels: Arc<Array1<f64>>,
    dims: Vec<usize>,
    published: Vec<Vec<f64>>,
    versions: Vec<u64>,
    aggregator: Aggregator,
    transcript: Transcript,
    next_t: u64,
    total: u64,
    epoch_end: u64,
    pending: BTreeMap<u64, usize>,
    staleness_cap: Option<u64>,
    snapshot_residuals: Option<Vec<f64>>,
    committed: u64,
    record_every: u64,
    pub(crate) log: EventLog,
    pub(crate) metrics: Metrics,
    pub(crate) curve: Vec<CurveSnapshot>,
}

impl Federation {
    pub(crate) fn new(
        config: &RunConfig,
        data: &PartitionedData,
        initial: &ModelView,
    ) -> Result<Self, EngineError> {
        let q = data.n_workers();
        let active = data.partition().active_worker();
        let features: Vec<Arc<Array2<f64>>> =
            (1..=q).map(|w| Arc::new(data.block(w).clone())).collect();
        let dims: Vec<usize> = features.iter().map(|f| f.ncols()).collect();
        let published: Vec<Vec<f64>> = (1..=q)
            .map(|w| {
                let mut p = initial.block(w).to_vec();
                if w == active {
                    p.extend(initial.bias);
                }
                p
            })
            .collect();
        let aggregator = match config.mask {
            MaskMode::Plain => {
                Aggregator::Plain(crate::treecomm::build_balanced_tree(&(1..=q).collect::<Vec<_>>())?)
            }
            MaskMode::Masked => {
                let range = config.mask_range.unwrap_or_else(|| {
                    1e3 * data.labels().iter().fold(1.0f64, |m, y| m.max(y.abs()))
                });
                Aggregator::Masked {
                    pair: TreePair::generate(q, config.seed)?,
                    range,
                    rng: super::stream_rng(config.seed, 0),
                }
            }
        };
        let mut fed = Federation {
            loss: config.loss,
            active,
            features,
            labels: Arc::new(data.labels().clone()),
            dims,
            published,
            versions: vec![0; q],
            aggregator,
            transcript: Transcript::new(),
            next_t: 0,
            total: config.updates as u64,
            epoch_end: u64::MAX,
            pending: BTreeMap::new(),
            staleness_cap: config.staleness_cap.map(|c| c as u64),
            snapshot_residuals: None,
            committed: 0,
            record_every: config.record_every as u64,
            log: EventLog::default(),
            metrics: Metrics::new(q),
            curve: Vec::new(),
        };
        fed.record_snapshot(0.0);
        Ok(fed)
    }

    pub fn n_workers(&self) -> usize {
        self.published.len()
    }

    pub fn active_worker(&self) -> usize {
        self.active
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub(crate) fn levels(&self) -> usize {
        self.aggregator.levels()
    }

    pub(crate) fn features(&self, worker: usize) -> Arc<Array2<f64>> {
        Arc::clone(&self.features[worker - 1])
    }

    pub(crate) fn published(&self, worker: usize) -> &[f64] {
        &self.published[worker - 1]
    }

    pub(crate) fn status(&self) -> Status {
        if self.next_t >= self.total {
            Status::Done
        } else if self.next_t >= self.epoch_end {
            Status::Boundary
        } else {
            Status::Open
        }
    }


    /// Starts a new inner loop of `len` updates after a snapshot barrier.
    pub(crate) fn open_epoch(&mut self, len: Option<u64>) {
        self.epoch_end = len.map_or(u64::MAX, |m| self.next_t + m);
    }

    /// Current committed model.
    pub fn model_view(&self) -> ModelView {
        let blocks = self
            .published
            .iter()
            .zip(&self.dims)
            .map(|(p, &d)| p[..d].to_vec())
            .collect();
        let bias = if self.loss.has_bias {
            self.published[self.active - 1].get(self.dims[self.active - 1]).copied()
        } else {
            None
        };
        ModelView { blocks, bias }
    }

    fn bias_of(&self, params: &[Vec<f64>]) -> f64 {
        if self.loss.has_bias {
            params[self.active - 1][self.dims[self.active - 1]]
        } else {
            0.0
        }
    }

    /// Each listener contributes `w_G · x_{i,G}` from its block in `params`; the
    /// contributions are reduced over the tree. Returns the score and merge count.
    fn aggregate(&mut self, sample: usize, params: &[Vec<f64>]) -> Result<(f64, usize), EngineError> {
        let contributions: Vec<f64> = params
            .iter()
            .zip(&self.features)
            .zip(&self.dims)
            .map(|((p, x), &d)| local_product(&p[..d], x.row(sample)))
            .collect();
        self.transcript.clear();
        let score = match &mut self.aggregator {
            Aggregator::Plain(tree) => {
                crate::treecomm::tree_sum(tree, &contributions, &mut self.transcript)?
            }
            Aggregator::Masked { pair, range, rng } => {
                pair.sum(&contributions, *range, rng, &mut self.transcript)?
            }
        };
        Ok((score, self.transcript.merge_count()))
    }

    fn residual(&self, score: f64, bias: f64, sample: usize) -> f64 {
        score_derivative(self.loss.kind, score + bias, self.labels[sample])
    }

    /// Asynchronous product pull for `requester` on `sample`.
    ///
    /// Every listener answers from whatever version of its block is committed right
    /// now. On success the global counter is advanced and the event is logged; the
    /// matching [`Federation::commit`] must follow.
    pub fn pull_products(
        &mut self,
        requester: usize,
        sample: usize,
        now_ms: f64,
    ) -> Result<PullOutcome, EngineError> {
        match self.status() {
            Status::Done => return Ok(PullOutcome::Done),
            Status::Boundary => return Ok(PullOutcome::Boundary),
            Status::Open => {}
        }
        let t = self.next_t;
        let oldest = self
            .pending
            .iter()
            .find(|(_, &w)| w != requester)
            .map(|(&u, _)| u);
        let max_staleness = oldest.map_or(0, |u| t - u);
        if let Some(cap) = self.staleness_cap {
            if max_staleness > cap {
                self.metrics.retries += 1;
                return Ok(PullOutcome::Blocked);
            }
        }
        let mut block_lags = vec![0u32; self.n_workers()];
        for &w in self.pending.values() {
            block_lags[w - 1] += 1;
        }

        let params = std::mem::take(&mut self.published);
        let aggregated = self.aggregate(sample, &params);
        let bias = self.bias_of(&params);
        self.published = params;
        let (score, merges) = aggregated?;
        let residual = self.residual(score, bias, sample);

        self.metrics.messages += merges;
        self.metrics.deliveries += self.transcript.delivery_count();
        self.metrics.aggregations += 1;
        self.next_t += 1;
        self.pending.insert(t, requester);
        self.log.records.push(EventRecord {
            t,
            worker: requester,
            sample,
            sim_time_ms: now_ms,
            max_staleness,
            block_lags: block_lags.clone(),
            messages: merges,
            update: Vec::new(),
        });
        Ok(PullOutcome::Granted(Pulled {
            t,
            score,
            residual,
            snapshot_residual: self.snapshot_residuals.as_ref().map(|r| r[sample]),
            versions: self.versions.clone(),
            max_staleness,
            block_lags,
        }))
    }

    /// Lockstep pull: one consistent aggregation shared by every worker. Labels
    /// `t, t+1, …, t+q-1` are handed out in worker order.
    pub(crate) fn pull_round(&mut self, sample: usize, now_ms: f64) -> Result<Pulled, EngineError> {
        let q = self.n_workers();
        let t = self.next_t;
        let params = std::mem::take(&mut self.published);
        let aggregated = self.aggregate(sample, &params);
        let bias = self.bias_of(&params);
        self.published = params;
        let (score, merges) = aggregated?;
        let residual = self.residual(score, bias, sample);
        self.metrics.messages += merges;
        self.metrics.deliveries += self.transcript.delivery_count();
        self.metrics.aggregations += 1;
        for w in 1..=q {
            let label = self.next_t;
            self.next_t += 1;
            self.pending.insert(label, w);
            self.log.records.push(EventRecord {
                t: label,
                worker: w,
                sample,
                sim_time_ms: now_ms,
                max_staleness: 0,
                block_lags: vec![0; q],
                messages: if w == 1 { merges } else { 0 },
                update: Vec::new(),
            });
        }
        Ok(Pulled {
            t,
            score,
            residual,
            snapshot_residual: self.snapshot_residuals.as_ref().map(|r| r[sample]),
            versions: self.versions.clone(),
            max_staleness: 0,
            block_lags: vec![0; q],
        })
    }

    /// Publishes the owner's new block and completes update `t`.
    pub fn commit(&mut self, worker: usize, t: u64, params: &[f64], update: Vec<f64>, now_ms: f64) {
        let owner = self.pending.remove(&t);
        assert_eq!(owner, Some(worker), "update {t} does not belong to worker {worker}");
        let slot = &mut self.published[worker - 1];
        assert_eq!(slot.len(), params.len());
        slot.copy_from_slice(params);
        self.versions[worker - 1] += 1;
        self.log.records[t as usize].update = update;
        self.metrics.updates_per_worker[worker - 1] += 1;
        self.committed += 1;
        if self.committed.is_multiple_of(self.record_every) {
            self.record_snapshot(now_ms);
        }
    }

    pub(crate) fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    pub(crate) fn record_snapshot(&mut self, now_ms: f64) {
        if self.curve.last().is_some_and(|c| c.updates == self.committed) {
            return;
        }
        let model = self.model_view();
        self.curve.push(CurveSnapshot {
            time_ms: now_ms,
            updates: self.committed,
            model,
        });
    }

    /// Aggregates every sample's score at the current (quiescent) model and returns
    /// the label holder's residuals. With `keep` set they are cached as the SVRG
    /// snapshot residuals.
    pub(crate) fn full_pass_residuals(&mut self, keep: bool) -> Result<Vec<f64>, EngineError> {
        debug_assert!(self.pending.is_empty());
        let params = std::mem::take(&mut self.published);
        let bias = self.bias_of(&params);
        let mut residuals = Vec::with_capacity(self.n_samples());
        let mut merges_total = 0;
        let mut result = Ok(());
        for i in 0..self.n_samples() {
            match self.aggregate(i, &params) {
                Ok((score, merges)) => {
                    merges_total += merges;
                    residuals.push(self.residual(score, bias, i));
                }
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        self.published = params;
        result?;
        self.metrics.barrier_messages += merges_total;
        if keep {
            self.snapshot_residuals = Some(residuals.clone());
        }
        Ok(residuals)
    }

    pub(crate) fn finish(mut self, now_ms: f64) -> (ModelView, EventLog, Metrics, Vec<CurveSnapshot>) {
        self.record_snapshot(now_ms);
        self.metrics.total_time_ms = now_ms;
        (self.model_view(), self.log, self.metrics, self.curve)
    }
}
