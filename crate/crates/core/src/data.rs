//! Labelled datasets and the affine preprocessing pipeline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Instance matrix (one row per instance) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: DMatrix<f64>,
    labels: Vec<i64>,
}

impl Dataset {
    pub fn new(instances: DMatrix<f64>, labels: Vec<i64>) -> Result<Self> {
        if instances.nrows() == 0 {
            return invalid("dataset has no instances");
        }
        if instances.ncols() == 0 {
            return invalid("dataset has no features");
        }
        if instances.nrows() != labels.len() {
            return invalid(format!(
                "{} instances but {} labels",
                instances.nrows(),
                labels.len()
            ));
        }
        if let Some(pos) = instances.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % instances.nrows(), pos / instances.nrows());
            return invalid(format!("non-finite feature at row {r}, column {c}"));
        }
        Ok(Dataset { instances, labels })
    }

    /// Builds a dataset from row-major feature rows.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<i64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return invalid("rows have inconsistent lengths");
        }
        let m = DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c]);
        Dataset::new(m, labels)
    }

    pub fn n(&self) -> usize {
        self.instances.nrows()
    }

    pub fn p(&self) -> usize {
        self.instances.ncols()
    }

    pub fn instances(&self) -> &DMatrix<f64> {
        &self.instances
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.instances.row(i).iter().copied().collect()
    }

    /// Instances flattened row-major (`n * p`).
    pub fn row_major(&self) -> Vec<f64> {
        let (n, p) = self.instances.shape();
        let mut out = Vec::with_capacity(n * p);
        for r in 0..n {
            for c in 0..p {
                out.push(self.instances[(r, c)]);
            }
        }
        out
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<i64> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.iter().any(|&i| i >= self.n()) {
            return invalid("subset index out of range");
        }
        let m = DMatrix::from_fn(indices.len(), self.p(), |r, c| self.instances[(indices[r], c)]);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(m, labels)
    }

    pub fn with_instances(&self, instances: DMatrix<f64>) -> Result<Dataset> {
        Dataset::new(instances, self.labels.clone())
    }
}

/// Which preprocessing steps to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    /// Leave instances untouched.
    None,
    /// Mean-centering and per-feature standardization.
    Standardize,
    /// Standardization followed by L2 normalization of every row.
    #[default]
    Full,
}

/// Affine map `x ↦ D · normalize((x − mean) / scale)`.
///
/// Preprocessing produces a map with `D = I`; PCA produces one whose rows are
/// principal directions and whose `scale` is all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub d: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
    pub normalize: bool,
}

impl LinearMap {
    pub fn identity(p: usize) -> Self {
        LinearMap {
            d: DMatrix::identity(p, p),
            mean: DVector::zeros(p),
            scale: DVector::from_element(p, 1.0),
            normalize: false,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.d.nrows()
    }

    pub fn is_identity_projection(&self) -> bool {
        self.d.is_square() && self.d == DMatrix::identity(self.d.nrows(), self.d.ncols())
    }

    pub fn apply_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.input_dim();
        if x.len() != p {
            return invalid(format!("expected {p} features, got {}", x.len()));
        }
        let mut z: Vec<f64> = (0..p).map(|c| (x[c] - self.mean[c]) / self.scale[c]).collect();
        if self.normalize {
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                z.iter_mut().for_each(|v| *v /= norm);
            }
        }
        if self.is_identity_projection() {
            return Ok(z);
        }
        let zv = DVector::from_vec(z);
        Ok((&self.d * zv).iter().copied().collect())
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let rows = self.apply_matrix(data.instances())?;
        data.with_instances(rows)
    }

    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = self.input_dim();
        if x.ncols() != p {
            return invalid(format!("expected {p} features, got {}", x.ncols()));
        }
        let mut z = x.clone();
        for mut row in z.row_iter_mut() {
            for c in 0..p {
                row[c] = (row[c] - self.mean[c]) / self.scale[c];
            }
            if self.normalize {
                let norm = row.norm();
                if norm > 0.0 {
                    row /= norm;
                }
            }
        }
        if self.is_identity_projection() {
            Ok(z)
        } else {
            Ok(z * self.d.transpose())
        }
    }
}

/// Centering, standardization and L2 normalization.
pub fn preprocess(raw: &Dataset) -> Result<(Dataset, LinearMap)> {
    preprocess_with(raw, Preprocessing::Full)
}

/// Fits the transform on `raw` and applies it. Zero-variance features keep
/// scale 1. Rows that are exactly zero after standardization stay zero.
pub fn preprocess_with(raw: &Dataset, mode: Preprocessing) -> Result<(Dataset, LinearMap)> {
    let (n, p) = raw.instances().shape();
    if n == 0 {
        return invalid("cannot preprocess an empty dataset");
    }
    let map = match mode {
        Preprocessing::None => LinearMap::identity(p),
        Preprocessing::Standardize | Preprocessing::Full => {
            let x = raw.instances();
            let mean = DVector::from_iterator(p, x.column_iter().map(|c| c.mean()));
            let scale = DVector::from_iterator(
                p,
                x.column_iter().enumerate().map(|(k, c)| {
                    let var = c.iter().map(|v| (v - mean[k]).powi(2)).sum::<f64>() / n as f64;
                    let sd = var.sqrt();
                    if sd > 0.0 && sd.is_finite() {
                        sd
                    } else {
                        1.0
                    }
                }),
            );
            LinearMap {
                d: DMatrix::identity(p, p),
                mean,
                scale,
                normalize: mode == Preprocessing::Full,
            }
        }
    };
    let out = map.apply(raw)?;
    Ok((out, map))
}
