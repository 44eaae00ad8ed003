//! Principal component analysis on preprocessed data.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, LinearMap};
use crate::error::{invalid, Result};
use crate::linalg::symmetric_eig;

/// Relative eigenvalue floor below which a direction counts as numerically
/// zero variance.
const RANK_TOL: f64 = 1e-12;

/// Fitted principal directions plus the variance they capture.
#[derive(Debug, Clone)]
pub struct PcaFit {
    pub map: LinearMap,
    /// Covariance eigenvalues of the retained directions.
    pub explained_variance: DVector<f64>,
    pub total_variance: f64,
}

impl PcaFit {
    pub fn explained_fraction(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.explained_variance.sum() / self.total_variance
        } else {
            1.0
        }
    }
}

/// Smallest set of leading principal directions whose cumulative variance
/// share reaches `variance_fraction`.
pub fn pca_fit(data: &Dataset, variance_fraction: f64) -> Result<LinearMap> {
    Ok(pca_fit_detailed(data, variance_fraction)?.map)
}

pub fn pca_fit_detailed(data: &Dataset, variance_fraction: f64) -> Result<PcaFit> {
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return invalid(format!("variance fraction must lie in (0, 1], got {variance_fraction}"));
    }
    let x = data.instances();
    let (n, p) = x.shape();
    let mean = DVector::from_iterator(p, x.column_iter().map(|c| c.mean()));
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / n as f64;
    let eig = symmetric_eig(&cov)?;

    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let floor = RANK_TOL * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let positive = eig.eigenvalues.iter().take_while(|&&l| l > floor).count();

    let mut k = 0;
    let mut captured = 0.0;
    while k < positive {
        captured += eig.eigenvalues[k];
        k += 1;
        if total <= 0.0 || captured / total >= variance_fraction - 1e-15 {
            break;
        }
    }
    // degenerate all-constant data still gets one direction
    let k = k.max(1).min(p);

    let mut d = DMatrix::zeros(k, p);
    for r in 0..k {
        d.set_row(r, &eig.eigenvectors.column(r).transpose());
    }
    Ok(PcaFit {
        map: LinearMap {
            d,
            mean,
            scale: DVector::from_element(p, 1.0),
            normalize: false,
        },
        explained_variance: DVector::from_iterator(k, eig.eigenvalues.iter().take(k).copied()),
        total_variance: total,
    })
}
