//! Mahalanobis metric learning with certified adversarial margins.
//!
//! The crate computes, for every triplet `(x_i, x_j, x_l)` of an instance, a
//! same-class target neighbor and a different-class impostor, the closest
//! point to `x_i` that would flip its nearest neighbor under the learned
//! metric (the *support point*). The distance to that point is the radius of
//! a neighborhood in which the prediction is certified. Two learners use a
//! hinge penalty on small radii:
//!
//! * [`lmnn`]: large-margin nearest neighbor with projected gradient descent
//!   on the PSD cone.
//! * [`scml`]: sparse compositional metrics trained by accelerated proximal
//!   gradient.
//!
//! Supporting modules cover data preprocessing and PCA ([`data`], [`pca`]),
//! dense symmetric linear algebra ([`linalg`]), triplet construction
//! ([`triplets`]), kNN evaluation under Gaussian noise ([`eval`]) and toy
//! dataset generators ([`toygen`]).

pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod lmnn;
pub mod pca;
pub mod rng;
pub mod robustness;
pub mod scml;
pub mod toygen;
pub mod triplets;

pub use data::{Dataset, LinearMap, Preprocessing};
pub use error::{Error, Result};
pub use linalg::{mahalanobis_sq, project_to_psd, symmetric_eig, EigenDecomposition, MetricMatrix};
pub use robustness::{PerturbationSpec, Side, SupportPointResult};
pub use triplets::{SimilarPairSet, TripletSet};
pub use eval::{knn_predict, Distance, Euclidean, NoiseKind, NoiseSpec};
pub use lmnn::{LmnnConfig, TrainingTrace};
pub use scml::{BasisSet, ScmlConfig, SparseCompositionalMetric};
pub use toygen::{Toy, ToySpec};
