//! Sparse compositional metrics: `M = Σ_k w_k b_k b_kᵀ` with `w ≥ 0`.
//!
//! The weights are fit by accelerated proximal gradient (two-sequence
//! momentum, restarted whenever the objective goes up) with a backtracking
//! line search on the hinge and perturbation terms. The L1 penalty and the
//! nonnegativity constraint are handled exactly by the proximal map.
//!
//! With `π = B v` the projections of a difference vector onto the bases,
//! `d²_w = Σ_k w_k π_k²` and the margin denominator is
//! `(w∘π)ᵀ G (w∘π)` with `G = B A₀⁻¹ Bᵀ`, so nothing `p × p` is ever formed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{mahalanobis_sq, symmetric_eig, MetricMatrix};
use crate::lmnn::{TraceRow, TrainingTrace};
use crate::robustness::PerturbationSpec;
use crate::rng::{self, Stream};
use crate::triplets::{SimilarPairSet, TripletSet};

const RIDGE: f64 = 1e-6;
const LR_FLOOR: f64 = 1e-30;
const KMEANS_MAX_ITER: usize = 100;

/// Unit-norm basis vectors (rows of `bases`) with their cached Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    bases: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl BasisSet {
    /// `bases` holds one basis vector per row; each must have unit norm.
    pub fn new(bases: DMatrix<f64>) -> Result<Self> {
        if bases.nrows() == 0 || bases.ncols() == 0 {
            return invalid("basis set is empty");
        }
        for (k, row) in bases.row_iter().enumerate() {
            let norm = row.norm();
            if !((norm - 1.0).abs() <= 1e-10) {
                return invalid(format!("basis {k} has norm {norm}, expected 1"));
            }
        }
        let gram = &bases * bases.transpose();
        Ok(BasisSet { bases, gram })
    }

    /// Normalizes each row before building the set.
    pub fn from_directions(mut directions: DMatrix<f64>) -> Result<Self> {
        for mut row in directions.row_iter_mut() {
            let norm = row.norm();
            if !(norm > 0.0 && norm.is_finite()) {
                return invalid("basis direction has zero or non-finite norm");
            }
            row /= norm;
        }
        BasisSet::new(directions)
    }

    pub fn len(&self) -> usize {
        self.bases.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.bases.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.bases
    }

    /// `b_k1ᵀ b_k2` for all pairs.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCompositionalMetric {
    pub weights: DVector<f64>,
    pub bases: BasisSet,
}

impl SparseCompositionalMetric {
    pub fn new(weights: DVector<f64>, bases: BasisSet) -> Result<Self> {
        if weights.len() != bases.len() {
            return invalid(format!("{} weights for {} bases", weights.len(), bases.len()));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return invalid("weights must be finite and nonnegative");
        }
        Ok(SparseCompositionalMetric { weights, bases })
    }

    pub fn nonzero_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// `Bᵀ diag(w) B`, PSD by construction.
    pub fn materialize(&self) -> MetricMatrix {
        let b = self.bases.matrix();
        let mut scaled = b.clone();
        for (k, mut row) in scaled.row_iter_mut().enumerate() {
            row *= self.weights[k];
        }
        let m = b.transpose() * scaled;
        MetricMatrix::from_psd(crate::linalg::symmetrize(&m))
    }
}

pub fn scml_distance_sq(metric: &SparseCompositionalMetric, x: &[f64], y: &[f64]) -> Result<f64> {
    let p = metric.bases.dim();
    if x.len() != p || y.len() != p {
        return invalid(format!("expected vectors of length {p}"));
    }
    let diff = DVector::from_iterator(p, x.iter().zip(y).map(|(a, b)| a - b));
    let proj = metric.bases.matrix() * diff;
    Ok(proj.iter().zip(metric.weights.iter()).map(|(pk, wk)| wk * pk * pk).sum())
}

/// `max(w − threshold, 0)` elementwise: the proximal map of
/// `threshold·‖·‖₁` restricted to the nonnegative orthant.
pub fn prox_l1_nonneg(w: &DVector<f64>, threshold: f64) -> DVector<f64> {
    w.map(|v| (v - threshold).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmlConfig {
    pub eta: f64,
    pub spec: PerturbationSpec,
    pub lr_init: f64,
    pub shrink: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for ScmlConfig {
    fn default() -> Self {
        ScmlConfig {
            eta: 1e-3,
            spec: PerturbationSpec::default(),
            lr_init: 1.0,
            shrink: 0.8,
            tol: 1e-7,
            max_iter: 1000,
            seed: 0,
        }
    }
}

impl ScmlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return invalid(format!("eta must be nonnegative, got {}", self.eta));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return invalid("initial learning rate must be positive");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return invalid(format!("shrink factor must lie in (0, 1), got {}", self.shrink));
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

/// Instance projections onto the bases, fixed for a training run.
struct ScmlObjective<'a> {
    k: usize,
    /// `X Bᵀ`, row-major `n × k`.
    proj: Vec<f64>,
    triplets: &'a TripletSet,
    /// `B A₀⁻¹ Bᵀ` when that is cheaper than going through `ℝᵖ`.
    gram: Option<DMatrix<f64>>,
    /// Otherwise `B` and `A₀⁻¹` (identity when `None`).
    bases: DMatrix<f64>,
    inv_shape: Option<DMatrix<f64>>,
}

struct ScmlEval {
    hinge: f64,
    perturbation: f64,
    grad: Option<DVector<f64>>,
}

impl<'a> ScmlObjective<'a> {
    fn new(bases: &BasisSet, data: &Dataset, r: &'a TripletSet, spec: &PerturbationSpec) -> Result<Self> {
        if bases.dim() != data.p() {
            return invalid(format!("bases have {} features but data has {}", bases.dim(), data.p()));
        }
        if r.is_empty() {
            return invalid("triplet set is empty");
        }
        let n = data.n();
        if r.triplets.iter().any(|&(i, j, l)| i >= n || j >= n || l >= n) {
            return invalid("triplet index out of range for the dataset");
        }
        spec.validate()?;
        let inv_shape = spec.inverse_shape(data.p())?;
        let k = bases.len();
        let pm = data.instances() * bases.matrix().transpose();
        let mut proj = vec![0.0; n * k];
        for c in 0..k {
            for i in 0..n {
                proj[i * k + c] = pm[(i, c)];
            }
        }
        let gram = (k <= data.p()).then(|| match &inv_shape {
            Some(a) => bases.matrix() * a * bases.matrix().transpose(),
            None => bases.gram().clone(),
        });
        Ok(ScmlObjective { k, proj, triplets: r, gram, bases: bases.matrix().clone(), inv_shape })
    }

    /// `G u` for `G = B A₀⁻¹ Bᵀ`.
    fn gram_apply(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.gram {
            Some(g) => g * u,
            None => {
                let y = self.bases.transpose() * u;
                let y = match &self.inv_shape {
                    Some(a) => a * y,
                    None => y,
                };
                &self.bases * y
            }
        }
    }

    fn evaluate(&self, w: &DVector<f64>, spec: &PerturbationSpec, grad: bool) -> ScmlEval {
        let k = self.k;
        let tau2 = spec.tau * spec.tau;
        let with_p = spec.tau > 0.0;
        let inv_r = 1.0 / self.triplets.len() as f64;
        let mut g = grad.then(|| DVector::zeros(k));
        let (mut hinge, mut jp) = (0.0, 0.0);
        // (π_i − π_j)², (π_i − π_l)² and π_l − π_j for the current triplet
        let (mut a, mut c, mut v) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        for &(i, j, l) in &self.triplets.triplets {
            let (pi, pj, pl) = (&self.proj[i * k..][..k], &self.proj[j * k..][..k], &self.proj[l * k..][..k]);
            let (mut dij, mut dil) = (0.0, 0.0);
            for q in 0..k {
                a[q] = (pi[q] - pj[q]).powi(2);
                c[q] = (pi[q] - pl[q]).powi(2);
                v[q] = pl[q] - pj[q];
                dij += w[q] * a[q];
                dil += w[q] * c[q];
            }
            let slack = 1.0 + dij - dil;
            if slack > 0.0 {
                hinge += slack;
            }
            if let (Some(g), true) = (g.as_mut(), slack >= 0.0) {
                for q in 0..k {
                    g[q] += inv_r * (a[q] - c[q]);
                }
            }
            if !with_p {
                continue;
            }
            let delta = dil - dij;
            if delta <= 0.0 {
                jp += tau2;
                continue;
            }
            let u = DVector::from_iterator(k, v.iter().zip(w.iter()).map(|(x, y)| x * y));
            let t = self.gram_apply(&u);
            let den = u.dot(&t) + spec.epsilon;
            let r2 = delta * delta / (4.0 * den);
            if r2 < tau2 {
                jp += tau2 - r2;
                if let Some(g) = g.as_mut() {
                    let c1 = delta / (2.0 * den);
                    let c2 = delta * delta / (2.0 * den * den);
                    for q in 0..k {
                        g[q] += spec.lambda * inv_r * (c1 * (a[q] - c[q]) + c2 * v[q] * t[q]);
                    }
                }
            }
        }
        ScmlEval { hinge: hinge * inv_r, perturbation: jp * inv_r, grad: g }
    }
}

/// `mean_R [1 + d²_w(x_i,x_j) − d²_w(x_i,x_l)]₊ + η‖w‖₁ + λ·J_P`.
pub fn scml_cr_objective(
    metric: &SparseCompositionalMetric,
    data: &Dataset,
    r: &TripletSet,
    config: &ScmlConfig,
) -> Result<f64> {
    config.validate()?;
    let obj = ScmlObjective::new(&metric.bases, data, r, &config.spec)?;
    let e = obj.evaluate(&metric.weights, &config.spec, false);
    Ok(e.hinge + config.eta * metric.weights.sum() + config.spec.lambda * e.perturbation)
}

/// Gradient in `w` of the hinge and perturbation terms; the L1 term is left
/// to the proximal step.
pub fn scml_cr_gradient(
    metric: &SparseCompositionalMetric,
    data: &Dataset,
    r: &TripletSet,
    config: &ScmlConfig,
) -> Result<DVector<f64>> {
    config.validate()?;
    let obj = ScmlObjective::new(&metric.bases, data, r, &config.spec)?;
    Ok(obj.evaluate(&metric.weights, &config.spec, true).grad.expect("gradient requested"))
}

/// Accelerated proximal gradient from `w = 1`. The pair set is accepted for
/// symmetry with the LMNN trainer but the objective has no pull term.
pub fn train_scml_cr(
    data: &Dataset,
    _s: &SimilarPairSet,
    r: &TripletSet,
    bases: &BasisSet,
    config: &ScmlConfig,
) -> Result<(SparseCompositionalMetric, TrainingTrace)> {
    config.validate()?;
    let obj = ScmlObjective::new(bases, data, r, &config.spec)?;
    let spec = &config.spec;
    let eta = config.eta;
    let smooth = |w: &DVector<f64>, grad: bool| {
        let e = obj.evaluate(w, spec, grad);
        (e.hinge + spec.lambda * e.perturbation, e)
    };
    let full = |f: f64, w: &DVector<f64>| f + eta * w.sum();

    let mut trace = TrainingTrace::default();
    let mut w = DVector::from_element(bases.len(), 1.0);
    let (f_w, e_w) = smooth(&w, false);
    let mut obj_w = full(f_w, &w);
    let mut parts = (e_w.hinge + eta * w.sum(), e_w.perturbation);
    if !obj_w.is_finite() {
        return Err(Error::TrainingDiverged { message: "initial objective is not finite".into(), trace: Box::new(trace) });
    }
    trace.initial_objective = obj_w;
    let mut y = w.clone();
    let mut t = 1.0f64;
    let mut lr = config.lr_init;

    'outer: for iteration in 1..=config.max_iter {
        trace.iterations = iteration;
        let (f_y, e_y) = smooth(&y, true);
        let g_y = e_y.grad.expect("gradient requested");
        // backtracking on the quadratic upper model of the smooth part
        let (w_new, f_new, e_new) = loop {
            let cand = prox_l1_nonneg(&(&y - &g_y * lr), lr * eta);
            let (f_c, e_c) = smooth(&cand, false);
            let step = &cand - &y;
            let model = f_y + g_y.dot(&step) + step.norm_squared() / (2.0 * lr);
            if !f_c.is_finite() {
                return Err(Error::TrainingDiverged {
                    message: format!("non-finite objective at iteration {iteration}"),
                    trace: Box::new(trace),
                });
            }
            if f_c <= model + 1e-12 * f_y.abs().max(1.0) {
                break (cand, f_c, e_c);
            }
            lr *= config.shrink;
            if lr < LR_FLOOR {
                trace.converged = true;
                break 'outer;
            }
        };
        let obj_new = full(f_new, &w_new);
        if obj_new > obj_w {
            // momentum overshot: restart from the last iterate
            y = w.clone();
            t = 1.0;
            trace.rows.push(TraceRow {
                iteration,
                objective: obj_w,
                base: parts.0,
                perturbation: parts.1,
                learning_rate: lr,
                accepted: false,
            });
            continue;
        }
        let rel = (obj_w - obj_new) / obj_w.abs().max(1e-12);
        let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &w_new + (&w_new - &w) * ((t - 1.0) / t_new);
        t = t_new;
        w = w_new;
        obj_w = obj_new;
        parts = (e_new.hinge + eta * w.sum(), e_new.perturbation);
        trace.rows.push(TraceRow {
            iteration,
            objective: obj_w,
            base: parts.0,
            perturbation: parts.1,
            learning_rate: lr,
            accepted: true,
        });
        if rel < config.tol {
            trace.converged = true;
            break;
        }
    }
    log::debug!(
        "scml: {} iterations, objective {} -> {}, {} nonzero weights",
        trace.iterations,
        trace.initial_objective,
        obj_w,
        w.iter().filter(|&&v| v > 0.0).count()
    );
    Ok((SparseCompositionalMetric::new(w, bases.clone())?, trace))
}

/// Seeded k-means++ followed by Lloyd iterations. Returns one cluster index
/// per row.
fn kmeans(x: &DMatrix<f64>, k: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let n = x.nrows();
    let k = k.min(n).max(1);
    let dist2 = |r: usize, c: &DVector<f64>| (x.row(r).transpose() - c).norm_squared();
    let mut centers: Vec<DVector<f64>> = vec![x.row(rng.random_range(0..n)).transpose()];
    while centers.len() < k {
        let d: Vec<f64> =
            (0..n).map(|r| centers.iter().map(|c| dist2(r, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random_range(0.0..total);
        let mut pick = n - 1;
        for (r, v) in d.iter().enumerate() {
            if target < *v {
                pick = r;
                break;
            }
            target -= v;
        }
        centers.push(x.row(pick).transpose());
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (r, a) in assign.iter_mut().enumerate() {
            let best = (0..centers.len())
                .min_by(|&p, &q| dist2(r, &centers[p]).total_cmp(&dist2(r, &centers[q])).then(p.cmp(&q)))
                .expect("at least one center");
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&r| assign[r] == c).collect();
            if !members.is_empty() {
                *center = members.iter().map(|&r| x.row(r).transpose()).sum::<DVector<f64>>() / members.len() as f64;
            }
        }
    }
    assign
}

/// Leading generalized eigenvectors of between- vs within-class scatter on
/// the given rows, at most `classes − 1` of them.
fn fisher_directions(data: &Dataset, rows: &[usize]) -> Result<Vec<DVector<f64>>> {
    let p = data.p();
    let labels = data.labels();
    let mut classes: Vec<i64> = rows.iter().map(|&r| labels[r]).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Ok(Vec::new());
    }
    let x = data.instances();
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&r| x.row(r).transpose()).sum::<DVector<f64>>() / n;
    let mut sw = DMatrix::<f64>::zeros(p, p);
    let mut sb = DMatrix::<f64>::zeros(p, p);
    for c in &classes {
        let members: Vec<usize> = rows.iter().copied().filter(|&r| labels[r] == *c).collect();
        let nc = members.len() as f64;
        let mc = members.iter().map(|&r| x.row(r).transpose()).sum::<DVector<f64>>() / nc;
        for &r in &members {
            let d = x.row(r).transpose() - &mc;
            sw += &d * d.transpose();
        }
        let d = &mc - &mean;
        sb += &d * d.transpose() * nc;
    }
    sw /= n;
    sb /= n;
    for i in 0..p {
        sw[(i, i)] += RIDGE;
    }
    // whiten with S_w^{-1/2} and diagonalize the between-class scatter
    let whiten = symmetric_eig(&sw)?.reconstruct_with(|l| 1.0 / l.sqrt());
    let inner = &whiten * sb * &whiten;
    let eig = symmetric_eig(&crate::linalg::symmetrize(&inner))?;
    let top = eig.eigenvalues.amax();
    let mut out = Vec::new();
    for (k, &l) in eig.eigenvalues.iter().enumerate().take(classes.len() - 1) {
        if l <= 1e-12 * top.max(f64::MIN_POSITIVE) {
            break;
        }
        let dir = &whiten * eig.eigenvectors.column(k);
        let norm = dir.norm();
        if norm > 0.0 && norm.is_finite() {
            out.push(dir / norm);
        }
    }
    Ok(out)
}

/// Local Fisher directions over a k-means partition, taken round-robin
/// across regions, then global principal directions, then random unit
/// vectors until `k_bases` are collected.
pub fn generate_bases(data: &Dataset, k_bases: usize, regions: usize, seed: u64) -> Result<BasisSet> {
    if k_bases == 0 {
        return invalid("number of bases must be positive");
    }
    if regions == 0 {
        return invalid("number of regions must be positive");
    }
    let p = data.p();
    let mut rng = rng::stream(seed, Stream::Bases);
    let assign = kmeans(data.instances(), regions, &mut rng);
    let n_regions = assign.iter().copied().max().map_or(0, |m| m + 1);
    let mut local = Vec::with_capacity(n_regions);
    for c in 0..n_regions {
        let rows: Vec<usize> = (0..data.n()).filter(|&r| assign[r] == c).collect();
        let dirs = fisher_directions(data, &rows)?;
        if dirs.is_empty() {
            log::debug!("region {c} holds a single class and yields no discriminant direction");
        }
        local.push(dirs);
    }
    let mut chosen: Vec<DVector<f64>> = Vec::with_capacity(k_bases);
    let depth = local.iter().map(Vec::len).max().unwrap_or(0);
    'fill: for level in 0..depth {
        for dirs in &local {
            if let Some(d) = dirs.get(level) {
                chosen.push(d.clone());
                if chosen.len() == k_bases {
                    break 'fill;
                }
            }
        }
    }
    if chosen.len() < k_bases {
        let pca = crate::pca::pca_fit_detailed(data, 1.0)?;
        for row in pca.map.d.row_iter() {
            if chosen.len() == k_bases {
                break;
            }
            chosen.push(row.transpose());
        }
    }
    while chosen.len() < k_bases {
        let v = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.norm();
        if norm > 0.0 {
            chosen.push(v / norm);
        }
    }
    let mut m = DMatrix::zeros(k_bases, p);
    for (k, d) in chosen.iter().enumerate() {
        m.set_row(k, &d.transpose());
    }
    BasisSet::from_directions(m)
}

/// `mahalanobis_sq` on the materialized metric, for cross-checks.
pub fn materialized_distance_sq(metric: &SparseCompositionalMetric, x: &[f64], y: &[f64]) -> Result<f64> {
    mahalanobis_sq(&metric.materialize(), x, y)
}
