//! Large-margin nearest neighbor with an optional certified-margin penalty.
//!
//! The objective is `J = J_LMNN + λ·J_P` where
//! `J_LMNN = (1−μ)·mean_S d²(x_i,x_j) + μ·mean_R [1 + d²(x_i,x_j) − d²(x_i,x_l)]₊`
//! and `J_P` is the perturbation loss of [`crate::robustness`]. The trainer
//! runs projected gradient descent on the PSD cone with a multiplicative
//! learning-rate schedule: a step that lowers `J` is kept and the rate grows,
//! a step that does not is discarded and the rate shrinks.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::data::{Dataset, LinearMap};
use crate::error::{invalid, Error, Result};
use crate::linalg::{project_to_psd, MetricMatrix};
use crate::robustness::{pca_objective, PerturbationSpec, DEFAULT_EPSILON, Request, TripletObjective};
use crate::triplets::{SimilarPairSet, TripletSet};

/// Below this learning rate no step can change the iterate any more.
const LR_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct LmnnConfig {
    pub mu: f64,
    pub spec: PerturbationSpec,
    pub lr_init: f64,
    pub lr_up: f64,
    pub lr_down: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for LmnnConfig {
    fn default() -> Self {
        LmnnConfig {
            mu: 0.5,
            spec: PerturbationSpec::default(),
            lr_init: 1.0,
            lr_up: 1.01,
            lr_down: 0.5,
            tol: 1e-7,
            max_iter: 1000,
            seed: 0,
        }
    }
}

impl LmnnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return invalid(format!("mu must lie in (0, 1), got {}", self.mu));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return invalid("initial learning rate must be positive");
        }
        if !(self.lr_down > 0.0 && self.lr_down < 1.0 && self.lr_up > 1.0 && self.lr_up.is_finite()) {
            return invalid("learning-rate factors must satisfy 0 < lr_down < 1 < lr_up");
        }
        if !(self.tol > 0.0) {
            return invalid("tolerance must be positive");
        }
        if self.max_iter == 0 {
            return invalid("max_iter must be positive");
        }
        self.spec.validate()
    }
}

/// One optimizer iteration. Rejected steps log the objective of the iterate
/// that was kept, so the logged sequence never increases.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    /// Metric-learning part of the objective (`J_LMNN`, or the SCML hinge
    /// plus its L1 term).
    pub base: f64,
    pub perturbation: f64,
    pub learning_rate: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingTrace {
    pub initial_objective: f64,
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    pub iterations: usize,
}

impl TrainingTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective,j_base,j_p,learning_rate,accepted\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration, r.objective, r.base, r.perturbation, r.learning_rate, r.accepted as u8
            );
        }
        out
    }

    /// Objective of the final iterate.
    pub fn final_objective(&self) -> f64 {
        self.rows.last().map_or(self.initial_objective, |r| r.objective)
    }
}

fn lmnn_objective<'a>(data: &Dataset, s: &'a SimilarPairSet, r: &'a TripletSet) -> Result<TripletObjective<'a>> {
    if s.is_empty() {
        return invalid("similar-pair set is empty");
    }
    if r.is_empty() {
        return invalid("triplet set is empty");
    }
    TripletObjective::new(data.instances().clone(), Some(s), r, None)
}

fn check_dim(m: &MetricMatrix, data: &Dataset) -> Result<()> {
    if m.dim() != data.p() {
        return invalid(format!("metric is {0}x{0} but data has {1} features", m.dim(), data.p()));
    }
    Ok(())
}

fn lmnn_request(mu: f64, grad: bool) -> Request {
    Request { mu: Some(mu), tau: None, epsilon: DEFAULT_EPSILON, grad_lmnn: grad, grad_p: false }
}

pub fn lmnn_loss(m: &MetricMatrix, data: &Dataset, s: &SimilarPairSet, r: &TripletSet, mu: f64) -> Result<f64> {
    check_dim(m, data)?;
    let obj = lmnn_objective(data, s, r)?;
    Ok(obj.evaluate(m.as_matrix(), lmnn_request(mu, false))?.j_lmnn)
}

/// `(1−μ)/|S|·Σ X_ij + μ/|R|·Σ β_ijl (X_ij − X_il)` with `β = 1` when the
/// hinge argument is nonnegative.
pub fn lmnn_gradient(
    m: &MetricMatrix,
    data: &Dataset,
    s: &SimilarPairSet,
    r: &TripletSet,
    mu: f64,
) -> Result<DMatrix<f64>> {
    check_dim(m, data)?;
    let obj = lmnn_objective(data, s, r)?;
    Ok(obj.evaluate(m.as_matrix(), lmnn_request(mu, true))?.grad_lmnn.expect("gradient requested"))
}

struct Point {
    m: MetricMatrix,
    objective: f64,
    base: f64,
    perturbation: f64,
    grad: DMatrix<f64>,
}

fn evaluate_at(obj: &TripletObjective<'_>, m: MetricMatrix, config: &LmnnConfig) -> Result<Point> {
    let lambda = config.spec.lambda;
    let req = Request {
        mu: Some(config.mu),
        tau: Some(config.spec.tau),
        epsilon: config.spec.epsilon,
        grad_lmnn: true,
        grad_p: lambda > 0.0,
    };
    let e = obj.evaluate(m.as_matrix(), req)?;
    let mut grad = e.grad_lmnn.expect("gradient requested");
    if let Some(gp) = e.grad_p {
        grad += gp * lambda;
    }
    Ok(Point { m, objective: e.j_lmnn + lambda * e.j_p, base: e.j_lmnn, perturbation: e.j_p, grad })
}

fn diverged(message: String, trace: TrainingTrace) -> Error {
    Error::TrainingDiverged { message, trace: Box::new(trace) }
}

/// Projected gradient descent from `initial` (identity when absent).
/// Every iterate, accepted or not, is PSD.
pub fn train_lmnn_cr(
    data: &Dataset,
    s: &SimilarPairSet,
    r: &TripletSet,
    config: &LmnnConfig,
    initial: Option<MetricMatrix>,
) -> Result<(MetricMatrix, TrainingTrace)> {
    config.validate()?;
    if s.is_empty() {
        return invalid("similar-pair set is empty");
    }
    train_lmnn_cr_observed(data, s, r, config, initial, &mut |_, _| {})
}

/// Same as [`train_lmnn_cr`], calling `observe(candidate, accepted)` on every
/// projected iterate.
pub fn train_lmnn_cr_observed(
    data: &Dataset,
    s: &SimilarPairSet,
    r: &TripletSet,
    config: &LmnnConfig,
    initial: Option<MetricMatrix>,
    observe: &mut dyn FnMut(&MetricMatrix, bool),
) -> Result<(MetricMatrix, TrainingTrace)> {
    config.validate()?;
    if s.is_empty() {
        return invalid("similar-pair set is empty");
    }
    let inv = config.spec.inverse_shape(data.p())?;
    let obj = TripletObjective::new(data.instances().clone(), Some(s), r, inv)?;
    descend(&obj, config, initial, observe)
}

/// Trains a metric on the reduced coordinates `D x` while margins are
/// measured in the original space of `data`.
pub fn train_lmnn_cr_pca(
    data: &Dataset,
    map: &LinearMap,
    s: &SimilarPairSet,
    r: &TripletSet,
    config: &LmnnConfig,
    initial: Option<MetricMatrix>,
) -> Result<(MetricMatrix, TrainingTrace)> {
    config.validate()?;
    if s.is_empty() {
        return invalid("similar-pair set is empty");
    }
    let obj = pca_objective(map.output_dim(), map, data, Some(s), r, &config.spec)?;
    descend(&obj, config, initial, &mut |_, _| {})
}

fn descend(
    obj: &TripletObjective<'_>,
    config: &LmnnConfig,
    initial: Option<MetricMatrix>,
    observe: &mut dyn FnMut(&MetricMatrix, bool),
) -> Result<(MetricMatrix, TrainingTrace)> {
    let q = obj.dim();
    let m0 = match initial {
        Some(m) if m.dim() != q => return invalid(format!("initial metric must be {q}x{q}")),
        Some(m) => m,
        None => MetricMatrix::identity(q),
    };
    let mut trace = TrainingTrace::default();
    let mut cur = evaluate_at(obj, m0, config)?;
    if !cur.objective.is_finite() {
        return Err(diverged("initial objective is not finite".into(), trace));
    }
    trace.initial_objective = cur.objective;
    let mut lr = config.lr_init;

    for iteration in 1..=config.max_iter {
        let step = cur.m.as_matrix() - &cur.grad * lr;
        let candidate = project_to_psd(&step).and_then(|m| evaluate_at(obj, m, config));
        let next = match candidate {
            Ok(p) if p.objective.is_finite() && p.grad.iter().all(|v| v.is_finite()) => p,
            Ok(_) | Err(Error::NumericalFailure(_)) => {
                trace.iterations = iteration - 1;
                return Err(diverged(format!("non-finite objective at iteration {iteration}"), trace));
            }
            Err(e) => return Err(e),
        };
        trace.iterations = iteration;
        let used = lr;
        observe(&next.m, next.objective < cur.objective);
        if next.objective < cur.objective {
            let rel = (cur.objective - next.objective) / cur.objective.abs().max(1e-12);
            cur = next;
            lr *= config.lr_up;
            trace.rows.push(TraceRow {
                iteration,
                objective: cur.objective,
                base: cur.base,
                perturbation: cur.perturbation,
                learning_rate: used,
                accepted: true,
            });
            if rel < config.tol {
                trace.converged = true;
                break;
            }
        } else {
            lr *= config.lr_down;
            trace.rows.push(TraceRow {
                iteration,
                objective: cur.objective,
                base: cur.base,
                perturbation: cur.perturbation,
                learning_rate: used,
                accepted: false,
            });
            if lr < LR_FLOOR {
                // no representable step improves the objective
                trace.converged = true;
                break;
            }
        }
    }
    log::debug!(
        "lmnn: {} iterations, objective {} -> {}, converged {}",
        trace.iterations,
        trace.initial_objective,
        cur.objective,
        trace.converged
    );
    Ok((cur.m, trace))
}
