use ndarray::{Array1, Array2};

use crate::data::PartitionedData;
use crate::losses::{sample_block_gradient, all_scores, LossSpec, ModelView};

use super::{AnalysisError, EpochStats};

/// Problem and trace constants used by the step-size and feasibility calculators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    /// Smoothness of the full objective.
    pub l: f64,
    /// Largest block smoothness.
    pub l_max: f64,
    pub mu: f64,
    /// Bound on squared block-gradient norms.
    pub g: f64,
    pub q: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub tau: f64,
    pub epsilon: f64,
    /// `f(w_0) - f*`, used by the epoch-count bounds.
    pub initial_gap: f64,
}

impl TheoryConstants {
    /// Every constant set to one.
    pub fn unit() -> Self {
        TheoryConstants {
            l: 1.0,
            l_max: 1.0,
            mu: 1.0,
            g: 1.0,
            q: 1.0,
            eta1: 1.0,
            eta2: 1.0,
            tau: 1.0,
            epsilon: 1.0,
            initial_gap: 1.0,
        }
    }

    /// `L`, `L_max`, `μ`, `G`, `q`, `η1` and `ε` must be positive; `τ`, `η2` and the
    /// initial gap may be zero. Also checks `L_max ≤ L ≤ q·L_max`.
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let positive = [
            ("L", self.l),
            ("L_max", self.l_max),
            ("mu", self.mu),
            ("G", self.g),
            ("q", self.q),
            ("eta1", self.eta1),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AnalysisError::InvalidConstants(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [("eta2", self.eta2), ("tau", self.tau), ("initial_gap", self.initial_gap)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AnalysisError::InvalidConstants(format!("{name} = {v} must be nonnegative")));
            }
        }
        let slack = 1e-12 * self.l;
        if self.l_max > self.l + slack || self.l > self.q * self.l_max + slack {
            return Err(AnalysisError::InvalidConstants(format!(
                "need L_max <= L <= q L_max, got L = {}, L_max = {}, q = {}",
                self.l, self.l_max, self.q
            )));
        }
        Ok(())
    }
}

/// Step size for AFSGD and the matching lower bound on the epoch count.
pub fn stepsize_theorem1(c: &TheoryConstants) -> Result<(f64, f64), AnalysisError> {
    c.validate()?;
    let l2 = c.l * c.l;
    let delay = c.q * c.eta1 * c.eta1 + c.eta2 * c.tau;
    let root = (c.l_max * c.l_max
        + 2.0 * c.mu * c.epsilon * (l2 * c.q * c.eta1 * c.eta1 + c.eta2 * l2 * c.tau)
            / (c.g * c.eta1 * c.q))
        .sqrt();
    let lift = root - c.l_max;
    let denom = 2.0 * l2 * delay;
    if !(lift > 0.0) || !(denom > 0.0) {
        return Err(AnalysisError::InvalidConstants("step-size formula degenerates to zero".into()));
    }
    let gamma = lift / denom;
    let epochs = (2.0 / c.mu) * (denom / lift) * (2.0 * c.initial_gap / c.epsilon).ln();
    Ok((gamma, epochs))
}

/// Per-condition values for AFSVRG.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem2Report {
    pub c: f64,
    pub rho: f64,
    /// The proof needs a positive contraction factor; the displayed condition
    /// carries the opposite sign. This flag tests `ρ > 0`.
    pub rho_positive: bool,
    pub coupling_value: f64,
    /// `coupling_value ≤ 0.5` with `ρ > 0`.
    pub coupling: bool,
    pub floor_value: f64,
    /// `floor_value ≤ ε/8` with `ρ > 0`.
    pub floor: bool,
    /// `log 0.25 / log(1 - ρ)`; NaN unless `0 < ρ < 1`.
    pub min_inner_epochs: f64,
    /// `log(2 gap / ε) / log(4/3)`.
    pub min_outer_loops: f64,
}

impl Theorem2Report {
    pub fn feasible(&self) -> bool {
        self.rho_positive && self.coupling && self.floor
    }
}

pub const RHO_SIGN_NOTE: &str =
    "the displayed condition reads rho < 0, but the contraction argument needs rho > 0; rho > 0 is checked";

pub fn check_theorem2(c: &TheoryConstants, gamma: f64) -> Result<Theorem2Report, AnalysisError> {
    c.validate()?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(AnalysisError::InvalidConstants(format!("gamma = {gamma} must be positive")));
    }
    let l2 = c.l * c.l;
    let cc = (c.eta1 * gamma * l2 * c.q * c.eta1 + c.l_max) * gamma * gamma / 2.0;
    let rho = gamma * c.mu / 2.0 - 16.0 * l2 * c.eta1 * c.q * cc / c.mu;
    let rho_positive = rho > 0.0;
    let coupling_value = 8.0 * l2 * c.eta1 * c.q * cc / (rho * c.mu);
    let floor_value = gamma.powi(3)
        * ((0.5 + 2.0 * cc / gamma) * c.eta2 * c.tau + 4.0 * (cc / gamma) * c.eta1 * c.eta1 * c.q)
        * c.eta1
        * c.q
        * l2
        * c.g
        / rho;
    let min_inner_epochs = if rho > 0.0 && rho < 1.0 {
        0.25f64.ln() / (1.0 - rho).ln()
    } else {
        f64::NAN
    };
    Ok(Theorem2Report {
        c: cc,
        rho,
        rho_positive,
        coupling_value,
        coupling: rho_positive && coupling_value <= 0.5,
        floor_value,
        floor: rho_positive && floor_value <= c.epsilon / 8.0,
        min_inner_epochs,
        min_outer_loops: (2.0 * c.initial_gap / c.epsilon).ln() / (4.0f64 / 3.0).ln(),
    })
}

/// Per-condition values for AFSAGA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem3Report {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub floor_value: f64,
    /// `floor_value ≤ ε/2` with a positive denominator.
    pub floor: bool,
    /// `0 < 1 - γμ/4 < 1`.
    pub shrink_ok: bool,
    pub table_margin_value: f64,
    pub table_margin: bool,
    pub iterate_margin_value: f64,
    pub iterate_margin: bool,
    /// `None` when the logarithm's argument is not positive.
    pub min_epochs: Option<f64>,
}

impl Theorem3Report {
    pub fn feasible(&self) -> bool {
        self.floor && self.shrink_ok && self.table_margin && self.iterate_margin
    }
}

pub fn check_theorem3(
    c: &TheoryConstants,
    gamma: f64,
    rho: f64,
    l: usize,
) -> Result<Theorem3Report, AnalysisError> {
    c.validate()?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(AnalysisError::InvalidConstants(format!("gamma = {gamma} must be positive")));
    }
    if l == 0 {
        return Err(AnalysisError::InvalidConstants("l must be positive".into()));
    }
    let lo = 1.0 - 1.0 / l as f64;
    if !(rho > lo && rho < 1.0) {
        return Err(AnalysisError::RhoOutOfRange { rho, lo });
    }
    let l2 = c.l * c.l;
    let (q, e1, e2, mu) = (c.q, c.eta1, c.eta2, c.mu);
    let c0 = ((e2 / 2.0 + 3.0 * (gamma * q * e1 * e1 + c.l_max) * (e1 + 2.0 * e2)) * c.tau
        + (gamma * l2 * q * e1 * e1 + 8.0 * c.l_max) * e1 * q * e1)
        * gamma.powi(4)
        * l2
        * e1
        * q
        * c.g;
    let c1 = (gamma * l2 * q * e1 * e1 + c.l_max) * gamma * gamma * e1 * q * 2.0 * l2;
    let c2 = 4.0 * (gamma * l2 * q * e1 * e1 + c.l_max) * (l2 * e1 * e1 * q / l as f64) * gamma * gamma;
    let margin = gamma * mu * mu / 4.0 - 2.0 * c1 - c2;
    let denom = gamma * mu * (1.0 - rho) * margin;
    let floor_value = 4.0 * c0 / denom;
    let ratio = 1.0 / (1.0 - lo / rho);
    let table_margin_value = -gamma * mu * mu / 4.0 + 2.0 * c1 + c2 * (1.0 + ratio);
    let iterate_margin_value = -gamma * mu * mu / 4.0 + c2 + c1 * (2.0 + ratio);
    let shrink = 1.0 - gamma * mu / 4.0;
    let arg = 2.0 * (2.0 * rho - 1.0 + gamma * mu / 4.0) * c.initial_gap
        / (c.epsilon * (rho - 1.0 + gamma * mu / 4.0) * margin);
    Ok(Theorem3Report {
        c0,
        c1,
        c2,
        floor_value,
        floor: denom > 0.0 && floor_value <= c.epsilon / 2.0,
        shrink_ok: shrink > 0.0 && shrink < 1.0,
        table_margin_value,
        table_margin: table_margin_value <= 0.0,
        iterate_margin_value,
        iterate_margin: iterate_margin_value <= 0.0,
        min_epochs: (arg > 0.0 && arg.is_finite()).then(|| arg.ln() / (1.0 / rho).ln()),
    })
}

fn top_eigenvalue(x: &Array2<f64>) -> f64 {
    let n = x.nrows() as f64;
    let mut v = Array1::from_elem(x.ncols(), 1.0 / (x.ncols() as f64).sqrt());
    let mut value = 0.0;
    for _ in 0..1000 {
        let w = x.t().dot(&x.dot(&v)) / n;
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w.dot(&v);
        v = w / norm;
        if (next - value).abs() <= 1e-12 * next.abs() {
            return next;
        }
        value = next;
    }
    value
}

/// Conservative problem constants: `μ = λ`, smoothness from the top eigenvalue of
/// the scaled Gram matrix times the loss curvature bound (plus `λ`), and `G` as the
/// largest squared per-sample block gradient at `model`. Trace constants come from
/// `stats`.
pub fn estimate_constants(
    spec: &LossSpec,
    data: &PartitionedData,
    model: &ModelView,
    stats: &EpochStats,
    epsilon: f64,
    initial_gap: f64,
) -> TheoryConstants {
    let active = data.partition().active_worker();
    let with_bias = |w: usize| -> Array2<f64> {
        let block = data.block(w);
        if spec.has_bias && w == active {
            let mut x = Array2::ones((block.nrows(), block.ncols() + 1));
            x.slice_mut(ndarray::s![.., ..block.ncols()]).assign(block);
            x
        } else {
            block.clone()
        }
    };
    let blocks: Vec<Array2<f64>> = (1..=data.n_workers()).map(with_bias).collect();
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let full = ndarray::concatenate(ndarray::Axis(1), &views).expect("blocks share rows");
    let curvature = spec.curvature_bound();
    let l = curvature * top_eigenvalue(&full) + spec.lambda;
    let l_max = blocks
        .iter()
        .map(|b| curvature * top_eigenvalue(b) + spec.lambda)
        .fold(0.0, f64::max);
    let scores = all_scores(model, data);
    let mut g = 0.0f64;
    for (i, &s) in scores.iter().enumerate() {
        for w in 1..=data.n_workers() {
            let grad = sample_block_gradient(spec, model, data, i, w, s);
            let norm: f64 = grad.weights.iter().map(|v| v * v).sum::<f64>() + grad.bias.map_or(0.0, |b| b * b);
            g = g.max(norm);
        }
    }
    TheoryConstants {
        l,
        l_max,
        mu: spec.lambda,
        g,
        q: data.n_workers() as f64,
        eta1: stats.measured_eta1.max(1) as f64,
        eta2: stats.measured_eta2 as f64,
        tau: stats.measured_tau as f64,
        epsilon,
        initial_gap,
    }
}
