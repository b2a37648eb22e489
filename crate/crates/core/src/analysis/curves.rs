use std::fmt::Write as _;

use crate::data::PartitionedData;
use crate::engine::CurveSnapshot;
use crate::losses::{objective_value, LossSpec};

use super::AnalysisError;

/// Tolerated rounding below `f*` before a curve is declared inconsistent.
const NEGATIVE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub time_ms: f64,
    pub updates: u64,
    pub suboptimality: f64,
}

/// `f(w) - f*` at every snapshot. Values within rounding of zero are clamped to zero.
pub fn suboptimality_curve(
    snapshots: &[CurveSnapshot],
    spec: &LossSpec,
    data: &PartitionedData,
    f_star: f64,
) -> Result<Vec<CurvePoint>, AnalysisError> {
    snapshots
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let gap = objective_value(spec, &s.model, data) - f_star;
            if gap < -NEGATIVE_SLACK {
                return Err(AnalysisError::NegativeSuboptimality { index, value: gap });
            }
            Ok(CurvePoint {
                time_ms: s.time_ms,
                updates: s.updates,
                suboptimality: gap.max(0.0),
            })
        })
        .collect()
}

/// `time_ms,updates,suboptimality`
pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("time_ms,updates,suboptimality\n");
    for p in points {
        writeln!(out, "{},{},{}", p.time_ms, p.updates, p.suboptimality).unwrap();
    }
    out
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurvePoint>, AnalysisError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "time_ms,updates,suboptimality")) => {}
        _ => {
            return Err(AnalysisError::Parse {
                line: 1,
                reason: "missing header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            let bad = |reason: String| AnalysisError::Parse { line: k + 1, reason };
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", fields.len())));
            }
            Ok(CurvePoint {
                time_ms: fields[0].parse().map_err(|e| bad(format!("{e}")))?,
                updates: fields[1].parse().map_err(|e| bad(format!("{e}")))?,
                suboptimality: fields[2].parse().map_err(|e| bad(format!("{e}")))?,
            })
        })
        .collect()
}

/// First time the curve reaches `target`, interpolating linearly between the two
/// bracketing points.
pub fn time_to_target(curve: &[CurvePoint], target: f64) -> Option<f64> {
    let k = curve.iter().position(|p| p.suboptimality <= target)?;
    if k == 0 {
        return Some(curve[0].time_ms);
    }
    let (a, b) = (&curve[k - 1], &curve[k]);
    let frac = (a.suboptimality - target) / (a.suboptimality - b.suboptimality);
    Some(a.time_ms + frac * (b.time_ms - a.time_ms))
}

/// Time-to-target of the synchronous curve over that of the asynchronous one.
pub fn speedup(
    async_curve: &[CurvePoint],
    sync_curve: &[CurvePoint],
    target: f64,
) -> Result<f64, AnalysisError> {
    let ta = time_to_target(async_curve, target)
        .ok_or_else(|| AnalysisError::TargetNotReached("async".into()))?;
    let ts = time_to_target(sync_curve, target)
        .ok_or_else(|| AnalysisError::TargetNotReached("sync".into()))?;
    if ta == ts {
        return Ok(1.0);
    }
    Ok(ts / ta)
}
