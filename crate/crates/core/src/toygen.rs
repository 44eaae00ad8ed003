//! Small synthetic datasets.
//!
//! * `TwoGaussians`: two correlated Gaussian classes in 2-D, ten points each.
//! * `TwoBands`: a positive band above a thin negative band, plus a narrow
//!   negative strip to the right; the classes separate far more easily
//!   vertically than horizontally.
//! * `Multicollinear`: 2-D correlated Gaussians with a third feature equal to
//!   the sum of the first two plus small noise.
//! * `Blobs`: Gaussian classes with caller-chosen means and covariances.
//!
//! Class 1 is the positive class and class 2 the negative one.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{preprocess_with, Dataset, Preprocessing};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub enum Toy {
    TwoGaussians,
    TwoBands,
    Multicollinear,
    Blobs { means: Vec<Vec<f64>>, covariances: Vec<DMatrix<f64>> },
}

impl Toy {
    /// Two overlapping unit-covariance classes in `p` dimensions whose means
    /// differ by 1.5 along the first axis.
    pub fn overlapping_blobs(p: usize) -> Toy {
        let mut a = vec![0.0; p];
        let mut b = vec![0.0; p];
        a[0] = 0.75;
        b[0] = -0.75;
        Toy::Blobs { means: vec![a, b], covariances: vec![DMatrix::identity(p, p); 2] }
    }

    /// Default number of instances per class.
    pub fn default_per_class(&self) -> usize {
        match self {
            Toy::TwoGaussians => 10,
            Toy::TwoBands | Toy::Multicollinear | Toy::Blobs { .. } => 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub which: Toy,
    pub n_per_class: usize,
    pub seed: u64,
    pub preprocessing: Preprocessing,
}

impl ToySpec {
    pub fn new(which: Toy, seed: u64) -> Self {
        let n_per_class = which.default_per_class();
        ToySpec { which, n_per_class, seed, preprocessing: Preprocessing::None }
    }
}

fn gaussian(rng: &mut rng::Rng, mean: &[f64], chol: &DMatrix<f64>) -> Vec<f64> {
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let x = chol * z;
    mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
}

fn cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    cov.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidInput("covariance matrix is not positive definite".into()))
}

pub fn generate(spec: &ToySpec) -> Result<Dataset> {
    if spec.n_per_class < 2 {
        return invalid(format!("need at least 2 instances per class, got {}", spec.n_per_class));
    }
    let n = spec.n_per_class;
    let mut rng = rng::stream(spec.seed, Stream::Toy);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    match &spec.which {
        Toy::TwoGaussians => {
            let chol = cholesky(&DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]))?;
            for (label, mean) in [(1, [0.4, 0.4]), (2, [-0.4, -0.4])] {
                for _ in 0..n {
                    rows.push(gaussian(&mut rng, &mean, &chol));
                    labels.push(label);
                }
            }
        }
        Toy::TwoBands => {
            for _ in 0..n {
                rows.push(vec![rng.random_range(-3.0..0.0), rng.random_range(0.0..1.0)]);
                labels.push(1);
            }
            for _ in 0..n {
                rows.push(vec![rng.random_range(-3.0..0.0), rng.random_range(-0.6..-0.5)]);
                labels.push(2);
            }
            for _ in 0..(n / 5).max(1) {
                rows.push(vec![rng.random_range(0.0..0.1), rng.random_range(0.0..1.0)]);
                labels.push(2);
            }
        }
        Toy::Multicollinear => {
            let chol = cholesky(&DMatrix::from_row_slice(2, 2, &[1.0, -0.9, -0.9, 1.0]))?;
            for (label, mean) in [(1, [0.45, 0.45]), (2, [-0.45, -0.45])] {
                for _ in 0..n {
                    let mut x = gaussian(&mut rng, &mean, &chol);
                    let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.01;
                    x.push(x[0] + x[1] + noise);
                    rows.push(x);
                    labels.push(label);
                }
            }
        }
        Toy::Blobs { means, covariances } => {
            if means.is_empty() || means.len() != covariances.len() {
                return invalid("blobs need one covariance per mean and at least one class");
            }
            let p = means[0].len();
            if p == 0 || means.iter().any(|m| m.len() != p) || covariances.iter().any(|c| c.shape() != (p, p)) {
                return invalid("blob means and covariances must share one dimension");
            }
            for (c, (mean, cov)) in means.iter().zip(covariances).enumerate() {
                let chol = cholesky(cov)?;
                for _ in 0..n {
                    rows.push(gaussian(&mut rng, mean, &chol));
                    labels.push(c as i64 + 1);
                }
            }
        }
    }
    let raw = Dataset::from_rows(&rows, labels)?;
    Ok(preprocess_with(&raw, spec.preprocessing)?.0)
}
