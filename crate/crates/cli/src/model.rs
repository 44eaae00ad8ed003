//! JSON model files.

use certmetric::{BasisSet, Dataset, Distance, LinearMap, MetricMatrix, SparseCompositionalMetric};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{data, CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mahalanobis,
    SparseCompositional,
    MahalanobisWithPca,
}

/// Dense matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect();
        MatrixData { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> CliResult<DMatrix<f64>> {
        if self.rows.checked_mul(self.cols) != Some(self.data.len()) {
            return data(format!("matrix of shape {}x{} holds {} values", self.rows, self.cols, self.data.len()));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaData {
    /// Principal directions, one per row.
    pub directions: MatrixData,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub method: String,
    pub preprocessing: certmetric::Preprocessing,
    pub mu: Option<f64>,
    pub tau: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub k_targets: usize,
    pub k_impostors: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub pca_variance: Option<f64>,
    pub eta: Option<f64>,
    pub k_bases: Option<usize>,
    pub regions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub sha256: String,
    pub n: usize,
    pub p: usize,
    pub classes: usize,
}

impl Fingerprint {
    pub fn of(d: &Dataset) -> Self {
        let mut h = Sha256::new();
        h.update((d.n() as u64).to_le_bytes());
        h.update((d.p() as u64).to_le_bytes());
        for v in d.row_major() {
            h.update(v.to_le_bytes());
        }
        for l in d.labels() {
            h.update(l.to_le_bytes());
        }
        Fingerprint { sha256: hex::encode(h.finalize()), n: d.n(), p: d.p(), classes: d.classes().len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSummary {
    pub triplets: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub tau: f64,
    pub above_tau: usize,
    pub wrong_side: usize,
}

impl From<&certmetric::robustness::MarginReport> for MarginSummary {
    fn from(r: &certmetric::robustness::MarginReport) -> Self {
        MarginSummary {
            triplets: r.margins.len(),
            mean: r.mean,
            median: r.median,
            min: r.min,
            max: r.max,
            tau: r.tau,
            above_tau: r.n_hat,
            wrong_side: r.wrong_side,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub iterations: usize,
    pub converged: bool,
    pub initial_objective: f64,
    pub final_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config: TrainSettings,
    pub dataset: Fingerprint,
    pub margins: MarginSummary,
    pub training: TrainingSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub preprocessing: Transform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaData>,
    /// Mahalanobis kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixData>,
    /// Sparse compositional kind: one weight per basis row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bases: Option<MatrixData>,
    pub metadata: Metadata,
}

/// A model ready for use: input transform plus a distance on its output.
pub struct LoadedModel {
    pub transform: LinearMap,
    pub pca: Option<LinearMap>,
    pub metric: Box<dyn Distance>,
    /// Dense metric in the space where margins are measured, when one exists.
    pub dense: Option<MetricMatrix>,
    pub sparse: Option<SparseCompositionalMetric>,
}

impl LoadedModel {
    pub fn input_dim(&self) -> usize {
        self.transform.input_dim()
    }

    /// Raw features to the space the preprocessing produces.
    pub fn preprocess(&self, d: &Dataset) -> CliResult<Dataset> {
        self.check_dim(d)?;
        Ok(self.transform.apply(d)?)
    }

    /// Preprocessed features to the space the metric acts on.
    pub fn reduce(&self, d: &Dataset) -> CliResult<Dataset> {
        match &self.pca {
            Some(map) => Ok(map.apply(d)?),
            None => Ok(d.clone()),
        }
    }

    pub fn check_dim(&self, d: &Dataset) -> CliResult<()> {
        if d.p() != self.input_dim() {
            return data(format!("model expects {} features, dataset has {}", self.input_dim(), d.p()));
        }
        Ok(())
    }
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> CliResult<ModelFile> {
        let m: ModelFile = serde_json::from_str(text).map_err(|e| CliError::Data(format!("model file: {e}")))?;
        m.load()?;
        Ok(m)
    }

    pub fn transform_of(map: &LinearMap) -> Transform {
        Transform {
            mean: map.mean.iter().copied().collect(),
            scale: map.scale.iter().copied().collect(),
            normalize: map.normalize,
        }
    }

    pub fn pca_of(map: &LinearMap) -> PcaData {
        PcaData { directions: MatrixData::from_matrix(&map.d), mean: map.mean.iter().copied().collect() }
    }

    /// Validates the payload and builds the usable model.
    pub fn load(&self) -> CliResult<LoadedModel> {
        if self.schema_version != SCHEMA_VERSION {
            return data(format!("unsupported schema version {}", self.schema_version));
        }
        let t = &self.preprocessing;
        let p = t.mean.len();
        if p == 0 || t.scale.len() != p {
            return data("preprocessing mean and scale must be non-empty and of equal length");
        }
        if t.scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) || t.mean.iter().any(|m| !m.is_finite()) {
            return data("preprocessing transform must be finite with positive scales");
        }
        let transform = LinearMap {
            d: DMatrix::identity(p, p),
            mean: DVector::from_vec(t.mean.clone()),
            scale: DVector::from_vec(t.scale.clone()),
            normalize: t.normalize,
        };
        let pca = match (&self.kind, &self.pca) {
            (ModelKind::MahalanobisWithPca, Some(pc)) => {
                let d = pc.directions.to_matrix()?;
                if d.ncols() != p || pc.mean.len() != p || d.nrows() == 0 {
                    return data("PCA map does not match the preprocessing dimension");
                }
                Some(LinearMap {
                    d,
                    mean: DVector::from_vec(pc.mean.clone()),
                    scale: DVector::from_element(p, 1.0),
                    normalize: false,
                })
            }
            (ModelKind::MahalanobisWithPca, None) => return data("model kind needs a PCA map"),
            (_, Some(_)) => return data("PCA map given for a model kind without one"),
            (_, None) => None,
        };
        let metric_dim = pca.as_ref().map_or(p, |m| m.output_dim());
        match self.kind {
            ModelKind::Mahalanobis | ModelKind::MahalanobisWithPca => {
                if self.weights.is_some() || self.bases.is_some() {
                    return data("Mahalanobis models carry no weights or bases");
                }
                let Some(m) = &self.matrix else { return data("model has no metric matrix") };
                let m = m.to_matrix()?;
                if m.shape() != (metric_dim, metric_dim) {
                    return data(format!("metric matrix must be {metric_dim}x{metric_dim}"));
                }
                let m = MetricMatrix::new(m)?;
                Ok(LoadedModel { transform, pca, metric: Box::new(m.clone()), dense: Some(m), sparse: None })
            }
            ModelKind::SparseCompositional => {
                if self.matrix.is_some() {
                    return data("sparse compositional models carry no dense matrix");
                }
                let (Some(w), Some(b)) = (&self.weights, &self.bases) else {
                    return data("sparse compositional model needs weights and bases");
                };
                let b = b.to_matrix()?;
                if b.ncols() != metric_dim || b.nrows() != w.len() {
                    return data("weights and bases do not match the model dimension");
                }
                let metric = SparseCompositionalMetric::new(DVector::from_vec(w.clone()), BasisSet::new(b)?)?;
                Ok(LoadedModel {
                    transform,
                    pca,
                    metric: Box::new(metric.clone()),
                    dense: Some(metric.materialize()),
                    sparse: Some(metric),
                })
            }
        }
    }
}

pub fn read_model(path: &std::path::Path) -> CliResult<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ModelFile::from_json(&text).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}
