//! Batched evaluation of the triplet losses and their gradients.
//!
//! All gradient contributions have the form `c · (x_a − x_b)(x_a − x_b)ᵀ`.
//! They are accumulated as a weighted graph Laplacian applied to the data,
//! `Y = L X`, at O(q) per term, and folded into a `q × q` matrix with one
//! `Xᵀ Y` product. With `Z = X M` precomputed, every distance a triplet needs
//! costs O(q), so an evaluation is O(q³ + n q² + |R| q).

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::linalg::symmetrize;
use crate::triplets::{SimilarPairSet, TripletSet};

/// Loss values and (optionally) gradients at one metric matrix.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub j_lmnn: f64,
    pub j_p: f64,
    pub grad_lmnn: Option<DMatrix<f64>>,
    pub grad_p: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Request {
    /// Pull/push balance; `None` skips the LMNN terms entirely.
    pub mu: Option<f64>,
    /// Target margin; `None` skips the perturbation loss.
    pub tau: Option<f64>,
    pub epsilon: f64,
    pub grad_lmnn: bool,
    pub grad_p: bool,
}

/// Triplet geometry over a fixed data matrix (`n × q`, row-major copy kept for
/// the inner loops).
pub(crate) struct TripletObjective<'a> {
    xmat: DMatrix<f64>,
    x: Vec<f64>,
    n: usize,
    q: usize,
    pairs: Option<&'a SimilarPairSet>,
    triplets: &'a TripletSet,
    /// Inverse perturbation shape in the metric's space; `None` is identity.
    inv_shape: Option<DMatrix<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, q) = m.shape();
    let mut out = vec![0.0; n * q];
    for c in 0..q {
        let col = m.column(c);
        for r in 0..n {
            out[r * q + c] = col[r];
        }
    }
    out
}

#[inline]
fn add_edge(y: &mut [f64], x: &[f64], q: usize, a: usize, b: usize, c: f64) {
    let (xa, xb) = (a * q, b * q);
    for k in 0..q {
        let d = c * (x[xa + k] - x[xb + k]);
        y[xa + k] += d;
        y[xb + k] -= d;
    }
}

#[inline]
fn diff_dot(x: &[f64], z: &[f64], q: usize, a: usize, b: usize) -> f64 {
    let (xa, xb) = (a * q, b * q);
    let mut s = 0.0;
    for k in 0..q {
        s += (x[xa + k] - x[xb + k]) * (z[xa + k] - z[xb + k]);
    }
    s
}

impl<'a> TripletObjective<'a> {
    pub fn new(
        xmat: DMatrix<f64>,
        pairs: Option<&'a SimilarPairSet>,
        triplets: &'a TripletSet,
        inv_shape: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let (n, q) = xmat.shape();
        let bad_pair = pairs.is_some_and(|s| s.pairs.iter().any(|&(i, j)| i >= n || j >= n));
        let bad_triplet = triplets.triplets.iter().any(|&(i, j, l)| i >= n || j >= n || l >= n);
        if bad_pair || bad_triplet {
            return invalid("pair or triplet index out of range for the dataset");
        }
        if let Some(p) = &inv_shape {
            if p.shape() != (q, q) {
                return invalid(format!("shape matrix must be {q}x{q}"));
            }
        }
        let x = row_major(&xmat);
        Ok(TripletObjective { xmat, x, n, q, pairs, triplets, inv_shape })
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    fn check_metric(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.shape() != (self.q, self.q) {
            return invalid(format!(
                "metric is {}x{} but data has {} features",
                m.nrows(),
                m.ncols(),
                self.q
            ));
        }
        Ok(())
    }

    /// Distance gap and squared margin of every triplet, in order.
    pub fn margins(&self, m: &DMatrix<f64>, epsilon: f64) -> Result<Vec<(f64, f64)>> {
        self.check_metric(m)?;
        let q = self.q;
        let x = &self.x;
        let zmat = &self.xmat * m;
        let z = row_major(&zmat);
        let w = self.inv_shape.as_ref().map(|p| row_major(&(&zmat * p)));
        let w = w.as_deref().unwrap_or(&z);
        Ok(self
            .triplets
            .triplets
            .iter()
            .map(|&(i, j, l)| {
                let delta = diff_dot(x, &z, q, i, l) - diff_dot(x, &z, q, i, j);
                let den = diff_dot(&z, w, q, l, j) + epsilon;
                (delta, delta * delta / (4.0 * den))
            })
            .collect())
    }

    pub fn evaluate(&self, m: &DMatrix<f64>, req: Request) -> Result<Evaluation> {
        self.check_metric(m)?;
        let (n, q) = (self.n, self.q);
        let x = &self.x;
        let zmat = &self.xmat * m;
        let z = row_major(&zmat);
        let w = self.inv_shape.as_ref().map(|p| row_major(&(&zmat * p)));
        let w = w.as_deref().unwrap_or(&z);

        let n_r = self.triplets.len();
        let mut y_lmnn = if req.grad_lmnn && req.mu.is_some() { vec![0.0; n * q] } else { Vec::new() };
        let want_p = req.grad_p && req.tau.is_some();
        let mut y_p1 = if want_p { vec![0.0; n * q] } else { Vec::new() };
        let mut y_p2 = if want_p { vec![0.0; n * q] } else { Vec::new() };

        let mut j_lmnn = 0.0;
        if let Some(mu) = req.mu {
            let pairs = match self.pairs {
                Some(s) if !s.is_empty() => s,
                _ => return invalid("similar-pair set is empty"),
            };
            if n_r == 0 {
                return invalid("triplet set is empty");
            }
            let pull_w = (1.0 - mu) / pairs.len() as f64;
            let mut pull = 0.0;
            for &(i, j) in &pairs.pairs {
                pull += diff_dot(x, &z, q, i, j);
                if !y_lmnn.is_empty() {
                    add_edge(&mut y_lmnn, x, q, i, j, pull_w);
                }
            }
            j_lmnn = pull_w * pull;
        }

        if n_r == 0 {
            return invalid("triplet set is empty");
        }
        let push_w = req.mu.map_or(0.0, |mu| mu / n_r as f64);
        let inv_r = 1.0 / n_r as f64;
        let tau2 = req.tau.map(|t| t * t);
        let eps = req.epsilon;
        let mut push = 0.0;
        let mut j_p = 0.0;
        for &(i, j, l) in &self.triplets.triplets {
            let dij = diff_dot(x, &z, q, i, j);
            let dil = diff_dot(x, &z, q, i, l);
            if req.mu.is_some() {
                let slack = 1.0 + dij - dil;
                if slack > 0.0 {
                    push += slack;
                }
                if slack >= 0.0 && !y_lmnn.is_empty() {
                    add_edge(&mut y_lmnn, x, q, i, j, push_w);
                    add_edge(&mut y_lmnn, x, q, i, l, -push_w);
                }
            }
            if let Some(tau2) = tau2 {
                let delta = dil - dij;
                if delta > 0.0 {
                    // (M v)ᵀ A⁻¹ (M v) with v = x_l − x_j, read off Z and W = Z A⁻¹
                    let den = diff_dot(&z, w, q, l, j) + eps;
                    let r2 = delta * delta / (4.0 * den);
                    if r2 < tau2 {
                        j_p += tau2 - r2;
                        if want_p {
                            let c1 = delta / (2.0 * den) * inv_r;
                            add_edge(&mut y_p1, x, q, i, j, c1);
                            add_edge(&mut y_p1, x, q, i, l, -c1);
                            let c2 = delta * delta / (4.0 * den * den) * inv_r;
                            add_edge(&mut y_p2, x, q, j, l, c2);
                        }
                    }
                } else {
                    j_p += tau2;
                }
            }
        }
        j_lmnn += push_w * push;
        j_p *= inv_r;

        let fold = |y: &[f64]| -> DMatrix<f64> {
            let ymat = DMatrix::from_row_slice(n, q, y);
            self.xmat.transpose() * ymat
        };
        let grad_lmnn = (!y_lmnn.is_empty()).then(|| symmetrize(&fold(&y_lmnn)));
        let grad_p = want_p.then(|| {
            let first = fold(&y_p1);
            let s = symmetrize(&fold(&y_p2));
            let second = match &self.inv_shape {
                Some(p) => {
                    let pm = p * m;
                    &s * pm.transpose() + pm * &s
                }
                None => &s * m + m * &s,
            };
            symmetrize(&(first + second))
        });

        if !j_lmnn.is_finite() || !j_p.is_finite() {
            return Err(crate::Error::NumericalFailure("objective evaluated to a non-finite value".into()));
        }
        Ok(Evaluation { j_lmnn, j_p, grad_lmnn, grad_p })
    }
}
