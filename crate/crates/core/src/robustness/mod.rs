//! Support points, certified margins and the perturbation loss.
//!
//! For a triplet `(x_i, x_j, x_l)` the decision boundary between target
//! neighbor `x_j` and impostor `x_l` under `d_M` is the hyperplane
//! `{x : (x − (x_j + x_l)/2)ᵀ M (x_l − x_j) = 0}`. The support point is the
//! point of that hyperplane closest to `x_i` in the ellipsoidal norm
//! `‖·‖_{A₀}`, and its squared distance is the squared adversarial margin.
//! Perturbations of `x_i` smaller than the margin cannot make the impostor
//! closer than the target neighbor.

mod objective;
mod report;

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, LinearMap};
use crate::error::{invalid, Result};
use crate::linalg::{spd_inverse, symmetric_eig, MetricMatrix};
use crate::triplets::TripletSet;

pub(crate) use objective::{Request, TripletObjective};
pub use report::{generalization_bound, margin_report, margin_report_pca, percentile, BoundReport, Histogram, MarginReport};

pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Target margin, loss weight, denominator stabilizer and perturbation shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub tau: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// Positive-definite `A₀`; `None` means the identity (spherical
    /// perturbations).
    pub shape: Option<DMatrix<f64>>,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec { tau: 0.0, lambda: 0.0, epsilon: DEFAULT_EPSILON, shape: None }
    }
}

impl PerturbationSpec {
    pub fn new(tau: f64, lambda: f64) -> Result<Self> {
        let spec = PerturbationSpec { tau, lambda, ..Default::default() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_shape(mut self, shape: DMatrix<f64>) -> Result<Self> {
        self.shape = Some(shape);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return invalid(format!("tau must be a finite nonnegative number, got {}", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return invalid(format!("lambda must be a finite nonnegative number, got {}", self.lambda));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return invalid(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if let Some(a) = &self.shape {
            let eig = symmetric_eig(a)?;
            let asym = (a - a.transpose()).amax();
            if asym > 1e-12 * a.amax().max(1.0) {
                return invalid("shape matrix is not symmetric");
            }
            if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
                return invalid("shape matrix must be positive definite");
            }
        }
        Ok(())
    }

    /// `A₀⁻¹`, or `None` for the identity shape.
    pub(crate) fn inverse_shape(&self, p: usize) -> Result<Option<DMatrix<f64>>> {
        match &self.shape {
            None => Ok(None),
            Some(a) if a.shape() != (p, p) => invalid(format!(
                "shape matrix is {}x{} but instances have {p} features",
                a.nrows(),
                a.ncols()
            )),
            Some(a) => spd_inverse(a).map(Some),
        }
    }
}

/// Whether the impostor is farther than the target neighbor under the metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    CorrectSide,
    WrongSide,
}

impl Side {
    pub(crate) fn of(delta: f64) -> Side {
        if delta > 0.0 {
            Side::CorrectSide
        } else {
            Side::WrongSide
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportPointResult {
    pub point: Vec<f64>,
    pub margin_sq: f64,
    pub side: Side,
}

fn check_vectors(p: usize, xs: [&[f64]; 3]) -> Result<()> {
    for x in xs {
        if x.len() != p {
            return invalid(format!("expected vectors of length {p}, got {}", x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("triplet contains a non-finite coordinate");
        }
    }
    Ok(())
}

fn sub(a: &[f64], b: &[f64]) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y))
}

/// Distance gap `d²(x_i,x_l) − d²(x_i,x_j)` under `m`, for difference vectors.
fn gap(m: &DMatrix<f64>, dij: &DVector<f64>, dil: &DVector<f64>) -> f64 {
    dil.dot(&(m * dil)) - dij.dot(&(m * dij))
}

/// Closest point to `x_i` (in the `A₀` norm) on the boundary between `x_j`
/// and `x_l`, with its squared distance.
pub fn support_point(
    m: &MetricMatrix,
    x_i: &[f64],
    x_j: &[f64],
    x_l: &[f64],
    spec: &PerturbationSpec,
) -> Result<SupportPointResult> {
    let p = m.dim();
    check_vectors(p, [x_i, x_j, x_l])?;
    spec.validate()?;
    let inv = spec.inverse_shape(p)?;
    let m = m.as_matrix();
    let delta = gap(m, &sub(x_i, x_j), &sub(x_i, x_l));
    let mv = m * sub(x_l, x_j);
    let dir = match &inv {
        Some(a) => a * &mv,
        None => mv.clone(),
    };
    let den = mv.dot(&dir) + spec.epsilon;
    let coef = 0.5 * delta / den;
    let point = x_i.iter().zip(dir.iter()).map(|(x, d)| x + coef * d).collect();
    Ok(SupportPointResult { point, margin_sq: delta * delta / (4.0 * den), side: Side::of(delta) })
}

pub fn adversarial_margin_sq(
    m: &MetricMatrix,
    x_i: &[f64],
    x_j: &[f64],
    x_l: &[f64],
    spec: &PerturbationSpec,
) -> Result<f64> {
    Ok(support_point(m, x_i, x_j, x_l, spec)?.margin_sq)
}

/// Projection matrix of a map, with the per-feature scaling folded in.
/// Only linear maps qualify: row normalization has no matrix form.
fn linear_part(map: &LinearMap) -> Result<DMatrix<f64>> {
    if map.normalize {
        return invalid("map with row normalization is not linear");
    }
    let mut d = map.d.clone();
    for (c, mut col) in d.column_iter_mut().enumerate() {
        col /= map.scale[c];
    }
    Ok(d)
}

/// Support point when the metric acts on reduced coordinates `x̃ = D x`.
/// The point and the perturbation shape live in the original space.
pub fn support_point_pca(
    m: &MetricMatrix,
    map: &LinearMap,
    x_i: &[f64],
    x_j: &[f64],
    x_l: &[f64],
    spec: &PerturbationSpec,
) -> Result<SupportPointResult> {
    let d = linear_part(map)?;
    let (dd, p) = d.shape();
    if m.dim() != dd {
        return invalid(format!("metric is {0}x{0} but the map reduces to {dd} dimensions", m.dim()));
    }
    check_vectors(p, [x_i, x_j, x_l])?;
    spec.validate()?;
    let inv = spec.inverse_shape(p)?;
    let m = m.as_matrix();
    let delta = gap(m, &(&d * sub(x_i, x_j)), &(&d * sub(x_i, x_l)));
    let g = d.transpose() * (m * (&d * sub(x_l, x_j)));
    let dir = match &inv {
        Some(a) => a * &g,
        None => g.clone(),
    };
    let den = g.dot(&dir) + spec.epsilon;
    let coef = 0.5 * delta / den;
    let point = x_i.iter().zip(dir.iter()).map(|(x, v)| x + coef * v).collect();
    Ok(SupportPointResult { point, margin_sq: delta * delta / (4.0 * den), side: Side::of(delta) })
}

fn plain_objective<'a>(m: &MetricMatrix, data: &Dataset, r: &'a TripletSet, spec: &PerturbationSpec) -> Result<TripletObjective<'a>> {
    spec.validate()?;
    if m.dim() != data.p() {
        return invalid(format!("metric is {0}x{0} but data has {1} features", m.dim(), data.p()));
    }
    if r.is_empty() {
        return invalid("triplet set is empty");
    }
    let inv = spec.inverse_shape(data.p())?;
    TripletObjective::new(data.instances().clone(), None, r, inv)
}

/// Reduced data `X Dᵀ` and the composed inverse shape `D A₀⁻¹ Dᵀ`.
pub(crate) fn pca_objective<'a>(
    m_dim: usize,
    map: &LinearMap,
    data: &Dataset,
    pairs: Option<&'a crate::triplets::SimilarPairSet>,
    r: &'a TripletSet,
    spec: &PerturbationSpec,
) -> Result<TripletObjective<'a>> {
    spec.validate()?;
    let d = linear_part(map)?;
    if d.ncols() != data.p() {
        return invalid(format!("map expects {} features but data has {}", d.ncols(), data.p()));
    }
    if m_dim != d.nrows() {
        return invalid(format!("metric is {m_dim}x{m_dim} but the map reduces to {} dimensions", d.nrows()));
    }
    if r.is_empty() {
        return invalid("triplet set is empty");
    }
    let composed = match spec.inverse_shape(data.p())? {
        Some(a) => &d * a * d.transpose(),
        None => &d * d.transpose(),
    };
    let reduced = data.instances() * d.transpose();
    TripletObjective::new(reduced, pairs, r, Some(composed))
}

fn loss_request(spec: &PerturbationSpec, grad: bool) -> Request {
    Request { mu: None, tau: Some(spec.tau), epsilon: spec.epsilon, grad_lmnn: false, grad_p: grad }
}

/// Mean over `r` of `[τ² − r̃²]₊` for correctly ordered triplets and `τ²` for
/// the rest.
pub fn perturbation_loss(m: &MetricMatrix, data: &Dataset, r: &TripletSet, spec: &PerturbationSpec) -> Result<f64> {
    let obj = plain_objective(m, data, r, spec)?;
    Ok(obj.evaluate(m.as_matrix(), loss_request(spec, false))?.j_p)
}

/// Gradient of [`perturbation_loss`] with respect to `M`. Triplets whose
/// margin equals `τ` exactly count as inactive.
pub fn perturbation_loss_gradient(
    m: &MetricMatrix,
    data: &Dataset,
    r: &TripletSet,
    spec: &PerturbationSpec,
) -> Result<DMatrix<f64>> {
    let obj = plain_objective(m, data, r, spec)?;
    let eval = obj.evaluate(m.as_matrix(), loss_request(spec, true))?;
    Ok(eval.grad_p.expect("gradient requested"))
}

pub fn perturbation_loss_pca(
    m: &MetricMatrix,
    map: &LinearMap,
    data: &Dataset,
    r: &TripletSet,
    spec: &PerturbationSpec,
) -> Result<f64> {
    let obj = pca_objective(m.dim(), map, data, None, r, spec)?;
    Ok(obj.evaluate(m.as_matrix(), loss_request(spec, false))?.j_p)
}

/// Gradient of [`perturbation_loss_pca`] with respect to the reduced-space
/// metric.
pub fn perturbation_loss_gradient_pca(
    m: &MetricMatrix,
    map: &LinearMap,
    data: &Dataset,
    r: &TripletSet,
    spec: &PerturbationSpec,
) -> Result<DMatrix<f64>> {
    let obj = pca_objective(m.dim(), map, data, None, r, spec)?;
    let eval = obj.evaluate(m.as_matrix(), loss_request(spec, true))?;
    Ok(eval.grad_p.expect("gradient requested"))
}
