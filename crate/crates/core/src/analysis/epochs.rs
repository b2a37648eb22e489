use std::ops::RangeInclusive;

use crate::engine::EventLog;

use super::AnalysisError;

/// Trace-measured quantities behind the convergence bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochStats {
    /// Number of complete windows in which every worker updated at least once.
    pub upsilon: usize,
    /// Largest recorded `t - min D(t)`.
    pub measured_tau: u64,
    /// Largest number of updates by one worker inside a single window.
    pub measured_eta1: usize,
    /// Largest number of one worker's updates missing from a single read.
    pub measured_eta2: u64,
    pub k_sizes: Vec<usize>,
}

/// Splits the worker sequence, left to right, into the shortest successive windows
/// that each contain all of `1..=q`. A trailing incomplete window is dropped.
pub fn epoch_windows(workers: &[usize], q: usize) -> Vec<RangeInclusive<usize>> {
    let mut windows = Vec::new();
    let mut seen = vec![false; q + 1];
    let mut missing = q;
    let mut start = 0;
    for (t, &w) in workers.iter().enumerate() {
        if w >= 1 && w <= q && !seen[w] {
            seen[w] = true;
            missing -= 1;
        }
        if missing == 0 {
            windows.push(start..=t);
            start = t + 1;
            seen.iter_mut().for_each(|s| *s = false);
            missing = q;
        }
    }
    windows
}

pub fn epoch_stats(log: &EventLog, q: usize) -> Result<EpochStats, AnalysisError> {
    if q == 0 {
        return Err(AnalysisError::InvalidConstants("q must be positive".into()));
    }
    let workers = log.workers();
    if let Some(&w) = workers.iter().find(|&&w| w == 0 || w > q) {
        return Err(AnalysisError::InvalidConstants(format!(
            "worker id {w} outside 1..={q}"
        )));
    }
    let missing: Vec<usize> = (1..=q).filter(|w| !workers.contains(w)).collect();
    if !missing.is_empty() {
        return Err(AnalysisError::MissingWorkers(missing));
    }
    let windows = epoch_windows(&workers, q);
    let measured_eta1 = windows
        .iter()
        .map(|r| {
            let mut counts = vec![0usize; q + 1];
            for &w in &workers[r.clone()] {
                counts[w] += 1;
            }
            counts.into_iter().max().unwrap_or(0)
        })
        .max()
        .unwrap_or(0);
    let measured_tau = log.records.iter().map(|r| r.max_staleness).max().unwrap_or(0);
    let measured_eta2 = log
        .records
        .iter()
        .flat_map(|r| r.block_lags.iter().copied())
        .max()
        .map_or(0, u64::from);
    Ok(EpochStats {
        upsilon: windows.len(),
        measured_tau,
        measured_eta1,
        measured_eta2,
        k_sizes: windows.iter().map(|r| r.end() - r.start() + 1).collect(),
    })
}
