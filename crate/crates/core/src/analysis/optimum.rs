use nalgebra::{DMatrix, DVector};

use crate::data::PartitionedData;
use crate::losses::{full_gradient, objective_value, LossKind, LossSpec, ModelView};

use super::AnalysisError;

const GRAD_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub model: ModelView,
    pub value: f64,
    /// `‖∇f‖_∞` at `model`.
    pub grad_inf: f64,
    pub iterations: usize,
    /// Ridge only: largest relative coordinate gap to the normal-equations solution.
    pub closed_form_gap: Option<f64>,
}

fn flatten(m: &ModelView) -> Vec<f64> {
    let mut v: Vec<f64> = m.blocks.iter().flatten().copied().collect();
    v.extend(m.bias);
    v
}

fn unflatten(v: &[f64], like: &ModelView) -> ModelView {
    let mut blocks = Vec::with_capacity(like.blocks.len());
    let mut at = 0;
    for b in &like.blocks {
        blocks.push(v[at..at + b.len()].to_vec());
        at += b.len();
    }
    ModelView {
        blocks,
        bias: like.bias.map(|_| v[at]),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes the objective by gradient descent with Barzilai-Borwein trial steps and
/// Armijo backtracking, stopping at `‖∇f‖_∞ ≤ 1e-10`.
pub fn reference_optimum(spec: &LossSpec, data: &PartitionedData) -> Result<Optimum, AnalysisError> {
    if !(spec.lambda > 0.0) {
        return Err(AnalysisError::NonPositiveLambda(spec.lambda));
    }
    let shape = ModelView::zeros(data.partition(), spec);
    let eval = |x: &[f64]| -> (f64, Vec<f64>) {
        let m = unflatten(x, &shape);
        (objective_value(spec, &m, data), flatten(&full_gradient(spec, &m, data)))
    };
    let norm_inf = |g: &[f64]| g.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let mut x = flatten(&shape);
    let (mut f, mut g) = eval(&x);
    let mut step = 1.0 / spec.curvature_bound().max(1.0);
    let mut iterations = 0;
    while norm_inf(&g) > GRAD_TOL {
        if iterations == MAX_ITERATIONS {
            return Err(AnalysisError::NotConverged {
                iterations,
                grad_inf: norm_inf(&g),
            });
        }
        iterations += 1;
        let gg = dot(&g, &g);
        // Near the optimum the decrease drops below the rounding of f itself.
        let slack = 8.0 * f64::EPSILON * f.abs();
        let mut t = step;
        let (x_new, f_new, g_new) = loop {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let (fc, gc) = eval(&cand);
            if fc <= f - 1e-4 * t * gg + slack || t < 1e-16 {
                break (cand, fc, gc);
            }
            t *= 0.5;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { 2.0 * t };
        x = x_new;
        f = f_new;
        g = g_new;
    }
    let model = unflatten(&x, &shape);
    let closed_form_gap = if spec.kind == LossKind::Ridge {
        let exact = flatten(&ridge_closed_form(spec, data)?);
        Some(
            x.iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok(Optimum {
        model,
        value: f,
        grad_inf: norm_inf(&g),
        iterations,
        closed_form_gap,
    })
}

/// Ridge minimizer from `((2/l) X̃ᵀX̃ + λI) θ = (2/l) X̃ᵀ y`, where `X̃` carries a
/// trailing column of ones when the model has a bias.
pub fn ridge_closed_form(spec: &LossSpec, data: &PartitionedData) -> Result<ModelView, AnalysisError> {
    if !(spec.lambda > 0.0) {
        return Err(AnalysisError::NonPositiveLambda(spec.lambda));
    }
    let shape = ModelView::zeros(data.partition(), spec);
    let n = data.n_samples();
    let d: usize = shape.blocks.iter().map(Vec::len).sum();
    let p = d + usize::from(spec.has_bias);
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut col = 0;
    for w in 1..=data.n_workers() {
        let block = data.block(w);
        for j in 0..block.ncols() {
            for i in 0..n {
                x[(i, col)] = block[(i, j)];
            }
            col += 1;
        }
    }
    if spec.has_bias {
        x.column_mut(d).fill(1.0);
    }
    let y = DVector::from_iterator(n, data.labels().iter().copied());
    let scale = 2.0 / n as f64;
    let a = x.transpose() * &x * scale + DMatrix::identity(p, p) * spec.lambda;
    let rhs = x.transpose() * y * scale;
    let theta = a.cholesky().ok_or(AnalysisError::Singular)?.solve(&rhs);
    Ok(unflatten(theta.as_slice(), &shape))
}
