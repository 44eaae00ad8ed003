//! Dense symmetric linear algebra: eigendecomposition, PSD projection and the
//! Mahalanobis quadratic form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use crate::error::{invalid, Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_SLACK: f64 = 1e-10;
const EIG_MAX_ITER: usize = 10_000;

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[k]);
        }
        let out = scaled * v.transpose();
        symmetrize(&out)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(|l| l)
    }
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn check_square_finite(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return invalid(format!("expected a square matrix, got {}x{}", a.nrows(), a.ncols()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return invalid("matrix contains non-finite entries");
    }
    Ok(())
}

/// Eigendecomposition of `(a + aᵀ)/2`.
pub fn symmetric_eig(a: &DMatrix<f64>) -> Result<EigenDecomposition> {
    check_square_finite(a)?;
    let p = a.nrows();
    if p == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let sym = symmetrize(a);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..p).collect();
    // descending, ties by original position for determinism
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let eigenvalues = DVector::from_iterator(p, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("eigensolver produced non-finite eigenvalues".into()));
    }
    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

/// Symmetric positive semidefinite matrix defining `d²_M(x, y) = (x−y)ᵀ M (x−y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix(DMatrix<f64>);

impl MetricMatrix {
    /// Validates symmetry (1e-12 relative) and PSD-ness (min eigenvalue ≥ −1e-10).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square_finite(&m)?;
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return invalid(format!("metric matrix is not symmetric (max asymmetry {asym:e})"));
        }
        let m = symmetrize(&m);
        let eig = symmetric_eig(&m)?;
        if let Some(&min) = eig.eigenvalues.as_slice().last() {
            if min < -PSD_SLACK * scale {
                return invalid(format!("metric matrix is not PSD (min eigenvalue {min:e})"));
            }
        }
        Ok(MetricMatrix(m))
    }

    /// Wraps a matrix already known to be symmetric PSD (e.g. a PSD projection).
    pub(crate) fn from_psd(m: DMatrix<f64>) -> Self {
        MetricMatrix(m)
    }

    pub fn identity(p: usize) -> Self {
        MetricMatrix(DMatrix::identity(p, p))
    }

    pub fn zeros(p: usize) -> Self {
        MetricMatrix(DMatrix::zeros(p, p))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return invalid("metric scale must be a nonnegative finite number");
        }
        Ok(MetricMatrix(&self.0 * c))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let eig = symmetric_eig(&self.0)?;
        Ok(eig.eigenvalues.as_slice().last().copied().unwrap_or(0.0))
    }
}

/// Frobenius-nearest PSD matrix: `V max(Λ, 0) Vᵀ`.
pub fn project_to_psd(a: &DMatrix<f64>) -> Result<MetricMatrix> {
    let eig = symmetric_eig(a)?;
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(MetricMatrix::from_psd(symmetrize(a)));
    }
    Ok(MetricMatrix::from_psd(eig.reconstruct_with(|l| l.max(0.0))))
}

/// Quadratic form of a (not necessarily PSD) square matrix on `x − y`.
pub(crate) fn quad_form_diff(m: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let p = x.len();
    let mut acc = 0.0;
    for c in 0..p {
        let dc = x[c] - y[c];
        if dc == 0.0 {
            continue;
        }
        let col = m.column(c);
        let mut inner = 0.0;
        for r in 0..p {
            inner += col[r] * (x[r] - y[r]);
        }
        acc += dc * inner;
    }
    acc
}

/// `(x − y)ᵀ M (x − y)`.
pub fn mahalanobis_sq(m: &MetricMatrix, x: &[f64], y: &[f64]) -> Result<f64> {
    let p = m.dim();
    if x.len() != p || y.len() != p {
        return invalid(format!(
            "dimension mismatch: metric is {p}x{p}, vectors have lengths {} and {}",
            x.len(),
            y.len()
        ));
    }
    Ok(quad_form_diff(m.as_matrix(), x, y))
}

/// Inverse of a symmetric positive-definite matrix via its eigendecomposition.
pub(crate) fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetric_eig(a)?;
    let min = eig.eigenvalues.as_slice().last().copied().unwrap_or(1.0);
    if min <= 0.0 {
        return invalid(format!("shape matrix must be positive definite (min eigenvalue {min:e})"));
    }
    Ok(eig.reconstruct_with(|l| 1.0 / l))
}
