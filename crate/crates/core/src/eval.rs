//! kNN classification, Gaussian noise injection and random hyperparameter
//! search.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{symmetric_eig, MetricMatrix};
use crate::lmnn::{train_lmnn_cr, LmnnConfig};
use crate::robustness::{margin_report, percentile, PerturbationSpec};
use crate::rng::{self, Stream};
use crate::scml::{generate_bases, train_scml_cr, ScmlConfig, SparseCompositionalMetric};
use crate::triplets;

/// A squared distance between instances.
///
/// Implementors that factor as `‖L(x − y)‖²` should return `L` from
/// [`Distance::embedding`]; kNN then works on embedded rows.
pub trait Distance: Send + Sync {
    fn dim(&self) -> usize;

    fn distance_sq(&self, x: &[f64], y: &[f64]) -> f64;

    fn embedding(&self) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Euclidean(pub usize);

impl Distance for Euclidean {
    fn dim(&self) -> usize {
        self.0
    }

    fn distance_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl Distance for MetricMatrix {
    fn dim(&self) -> usize {
        MetricMatrix::dim(self)
    }

    fn distance_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        crate::linalg::quad_form_diff(self.as_matrix(), x, y)
    }

    fn embedding(&self) -> Option<DMatrix<f64>> {
        let eig = symmetric_eig(self.as_matrix()).ok()?;
        let mut l = eig.eigenvectors.transpose();
        for (r, mut row) in l.row_iter_mut().enumerate() {
            row *= eig.eigenvalues[r].max(0.0).sqrt();
        }
        Some(l)
    }
}

impl Distance for SparseCompositionalMetric {
    fn dim(&self) -> usize {
        self.bases.dim()
    }

    fn distance_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        crate::scml::scml_distance_sq(self, x, y).unwrap_or(f64::NAN)
    }

    fn embedding(&self) -> Option<DMatrix<f64>> {
        let mut l = self.bases.matrix().clone();
        for (k, mut row) in l.row_iter_mut().enumerate() {
            row *= self.weights[k].sqrt();
        }
        Some(l)
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Majority label among the `k` nearest training instances to each query.
/// Distance ties go to the lower training index, vote ties to the smaller
/// label.
pub fn knn_predict(metric: &dyn Distance, train: &Dataset, queries: &DMatrix<f64>, k: usize) -> Result<Vec<i64>> {
    let p = train.p();
    if metric.dim() != p || queries.ncols() != p {
        return invalid(format!(
            "metric has {} features, training data {p}, queries {}",
            metric.dim(),
            queries.ncols()
        ));
    }
    if k == 0 || k > train.n() {
        return invalid(format!("k must lie in 1..={}, got {k}", train.n()));
    }
    let (train_rows, query_rows, euclid): (Vec<Vec<f64>>, Vec<Vec<f64>>, bool) = match metric.embedding() {
        Some(l) => (rows_of(&(train.instances() * l.transpose())), rows_of(&(queries * l.transpose())), true),
        None => (rows_of(train.instances()), rows_of(queries), false),
    };
    let labels = train.labels();
    let out = query_rows
        .par_iter()
        .map(|q| {
            let mut scored: Vec<(f64, usize)> = train_rows
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let d = if euclid {
                        t.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
                    } else {
                        metric.distance_sq(q, t)
                    };
                    (d, i)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < scored.len() {
                scored.select_nth_unstable_by(k - 1, cmp);
                scored.truncate(k);
            }
            let mut votes: Vec<(i64, usize)> = Vec::with_capacity(k);
            for &(_, i) in &scored {
                match votes.iter_mut().find(|(l, _)| *l == labels[i]) {
                    Some(v) => v.1 += 1,
                    None => votes.push((labels[i], 1)),
                }
            }
            votes.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).expect("k >= 1").0
        })
        .collect();
    Ok(out)
}

pub fn accuracy(predicted: &[i64], truth: &[i64]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / predicted.len() as f64
}

/// kNN accuracy of `metric` trained on `train`, evaluated on `test`.
pub fn knn_accuracy(metric: &dyn Distance, train: &Dataset, test: &Dataset, k: usize) -> Result<f64> {
    let pred = knn_predict(metric, train, test.instances(), k)?;
    Ok(accuracy(&pred, test.labels()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Equal variance in every feature.
    Spherical,
    /// Per-feature variance proportional to the feature's variance in the
    /// test set.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub kind: NoiseKind,
    pub seed: u64,
}

/// Per-feature noise variances for `x` at the given SNR. Signal power is
/// the mean squared row norm divided by the number of features.
pub fn noise_variances(x: &DMatrix<f64>, snr_db: f64, kind: NoiseKind) -> Vec<f64> {
    let (n, p) = x.shape();
    let signal = x.row_iter().map(|r| r.norm_squared()).sum::<f64>() / (n * p) as f64;
    let noise = signal * 10f64.powf(-snr_db / 10.0);
    match kind {
        NoiseKind::Spherical => vec![noise; p],
        NoiseKind::Diagonal => {
            let var: Vec<f64> = x
                .column_iter()
                .map(|c| {
                    let m = c.mean();
                    c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64
                })
                .collect();
            let mean_var = var.iter().sum::<f64>() / p as f64;
            if mean_var > 0.0 {
                var.iter().map(|v| noise * v / mean_var).collect()
            } else {
                vec![noise; p]
            }
        }
    }
}

/// Adds zero-mean Gaussian noise calibrated to `spec.snr_db`.
pub fn add_noise(test: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    if !spec.snr_db.is_finite() {
        return invalid(format!("SNR must be finite, got {}", spec.snr_db));
    }
    let var = noise_variances(test.instances(), spec.snr_db, spec.kind);
    let normals: Vec<Normal<f64>> = var
        .iter()
        .map(|v| Normal::new(0.0, v.sqrt()).map_err(|e| Error::InvalidInput(e.to_string())))
        .collect::<Result<_>>()?;
    let mut rng = rng::stream(spec.seed, Stream::Noise);
    let (n, p) = test.instances().shape();
    let mut x = test.instances().clone();
    for r in 0..n {
        for c in 0..p {
            x[(r, c)] += normals[c].sample(&mut rng);
        }
    }
    test.with_instances(x)
}

/// Resamples `test` with replacement to `target_n` rows, then adds noise.
pub fn augment_test(test: &Dataset, target_n: usize, spec: &NoiseSpec) -> Result<Dataset> {
    add_noise(&resample(test, target_n, spec.seed)?, spec)
}

/// Draws `target_n` rows of `test` with replacement.
pub fn resample(test: &Dataset, target_n: usize, seed: u64) -> Result<Dataset> {
    if target_n < test.n() {
        return invalid(format!("cannot augment {} instances down to {target_n}", test.n()));
    }
    let mut rng = rng::substream(seed, Stream::Noise, 1);
    let idx: Vec<usize> = (0..target_n).map(|_| rng.random_range(0..test.n())).collect();
    test.subset(&idx)
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
/// Returns the held-out indices of every fold. When the smallest class has
/// fewer members than `folds`, the fold count drops to that size.
pub fn stratified_folds(labels: &[i64], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return invalid("at least two folds are required");
    }
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let smallest = classes.iter().map(|c| labels.iter().filter(|l| *l == c).count()).min().unwrap_or(0);
    if smallest < 2 {
        return invalid("every class needs at least two instances for cross-validation");
    }
    let folds = if smallest < folds {
        log::warn!("smallest class has {smallest} instances; using {smallest} folds instead of {folds}");
        smallest
    } else {
        folds
    };
    let mut rng = rng::stream(seed, Stream::Split);
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for c in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            out[next % folds].push(i);
            next += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialParams {
    pub mu: f64,
    pub tau: f64,
    pub lambda: f64,
}

/// Something that turns training data and hyperparameters into a metric.
pub trait Trainer: Sync {
    /// Target-neighbor and impostor counts used to build triplets.
    fn neighbor_counts(&self) -> (usize, usize);

    /// Whether `tau` and `lambda` are searched; otherwise both stay 0.
    fn uses_perturbation(&self) -> bool;

    fn fit(&self, train: &Dataset, params: &TrialParams, seed: u64) -> Result<Box<dyn Distance>>;
}

#[derive(Debug, Clone)]
pub struct LmnnTrainer {
    pub k_targets: usize,
    pub k_impostors: usize,
    pub robust: bool,
    pub base: LmnnConfig,
}

impl Trainer for LmnnTrainer {
    fn neighbor_counts(&self) -> (usize, usize) {
        (self.k_targets, self.k_impostors)
    }

    fn uses_perturbation(&self) -> bool {
        self.robust
    }

    fn fit(&self, train: &Dataset, params: &TrialParams, seed: u64) -> Result<Box<dyn Distance>> {
        let (s, r) = triplets::build(train, self.k_targets, self.k_impostors)?;
        let config = LmnnConfig {
            mu: params.mu,
            spec: PerturbationSpec { tau: params.tau, lambda: params.lambda, ..self.base.spec.clone() },
            seed,
            ..self.base.clone()
        };
        let (m, _) = train_lmnn_cr(train, &s, &r, &config, None)?;
        Ok(Box::new(m))
    }
}

#[derive(Debug, Clone)]
pub struct ScmlTrainer {
    pub k_targets: usize,
    pub k_impostors: usize,
    pub k_bases: usize,
    pub regions: usize,
    pub robust: bool,
    pub base: ScmlConfig,
}

impl Trainer for ScmlTrainer {
    fn neighbor_counts(&self) -> (usize, usize) {
        (self.k_targets, self.k_impostors)
    }

    fn uses_perturbation(&self) -> bool {
        self.robust
    }

    fn fit(&self, train: &Dataset, params: &TrialParams, seed: u64) -> Result<Box<dyn Distance>> {
        let (s, r) = triplets::build(train, self.k_targets, self.k_impostors)?;
        let bases = generate_bases(train, self.k_bases, self.regions, seed)?;
        let config = ScmlConfig {
            spec: PerturbationSpec { tau: params.tau, lambda: params.lambda, ..self.base.spec.clone() },
            seed,
            ..self.base.clone()
        };
        let (m, _) = train_scml_cr(train, &s, &r, &bases, &config)?;
        Ok(Box::new(m))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub n_samples: usize,
    pub mu_range: (f64, f64),
    /// `τ` is drawn below this percentile of the Euclidean margins.
    pub tau_upper_percentile: f64,
    /// `λ` is drawn below `lambda_scale / τ²`.
    pub lambda_scale: f64,
    pub folds: usize,
    /// Neighbors used by the cross-validated classifier.
    pub k_neighbors: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            n_samples: 50,
            mu_range: (0.1, 0.9),
            tau_upper_percentile: 90.0,
            lambda_scale: 4.0,
            folds: 5,
            k_neighbors: 3,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.mu_range;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return invalid(format!("mu range ({lo}, {hi}) must be a nonempty subinterval of (0, 1)"));
        }
        if self.n_samples == 0 {
            return invalid("at least one trial is required");
        }
        if !(self.tau_upper_percentile > 0.0 && self.tau_upper_percentile <= 100.0) {
            return invalid("tau percentile must lie in (0, 100]");
        }
        if !(self.lambda_scale > 0.0 && self.lambda_scale.is_finite()) {
            return invalid("lambda scale must be positive");
        }
        if self.folds < 2 {
            return invalid("at least two folds are required");
        }
        if self.k_neighbors == 0 {
            return invalid("k_neighbors must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub params: TrialParams,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_index: usize,
    pub best: TrialParams,
    pub trials: Vec<TrialResult>,
    /// Upper end of the `τ` range.
    pub tau_upper: f64,
}

impl SearchResult {
    pub fn to_csv(&self) -> String {
        let folds = self.trials.first().map_or(0, |t| t.fold_accuracies.len());
        let mut out = String::from("trial,mu,tau,lambda");
        for f in 1..=folds {
            out.push_str(&format!(",fold{f}"));
        }
        out.push_str(",mean\n");
        for (i, t) in self.trials.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}", i, t.params.mu, t.params.tau, t.params.lambda));
            for a in &t.fold_accuracies {
                out.push_str(&format!(",{a}"));
            }
            out.push_str(&format!(",{}\n", t.mean_accuracy));
        }
        out
    }
}

/// `P`-th percentile of Euclidean adversarial margins over the triplets of
/// `data`, wrong-side triplets counting as 0.
pub fn euclidean_margin_percentile(data: &Dataset, k_targets: usize, k_impostors: usize, pct: f64) -> Result<f64> {
    let (_, r) = triplets::build(data, k_targets, k_impostors)?;
    let report = margin_report(&MetricMatrix::identity(data.p()), data, &r, &PerturbationSpec::default(), 1)?;
    percentile(&report.margins, pct)
}

/// Draws `n_samples` configurations and scores each by stratified k-fold
/// kNN accuracy. The best mean wins; ties go to the earlier trial.
pub fn random_search(data: &Dataset, space: &SearchSpace, trainer: &dyn Trainer, seed: u64) -> Result<SearchResult> {
    space.validate()?;
    let (kt, ki) = trainer.neighbor_counts();
    let tau_upper = if trainer.uses_perturbation() {
        euclidean_margin_percentile(data, kt, ki, space.tau_upper_percentile)?
    } else {
        0.0
    };
    let mut rng = rng::stream(seed, Stream::Search);
    let params: Vec<TrialParams> = (0..space.n_samples)
        .map(|_| {
            let mu = rng.random_range(space.mu_range.0..space.mu_range.1);
            if !trainer.uses_perturbation() || tau_upper <= 0.0 {
                return TrialParams { mu, tau: 0.0, lambda: 0.0 };
            }
            let tau = rng.random_range(0.0..tau_upper);
            let lambda = if tau > 0.0 { rng.random_range(0.0..space.lambda_scale / (tau * tau)) } else { 0.0 };
            TrialParams { mu, tau, lambda }
        })
        .collect();
    let folds = stratified_folds(data.labels(), space.folds, seed)?;
    let splits: Vec<(Dataset, Dataset)> = folds
        .iter()
        .map(|held| {
            let train_idx: Vec<usize> = (0..data.n()).filter(|i| held.binary_search(i).is_err()).collect();
            Ok((data.subset(&train_idx)?, data.subset(held)?))
        })
        .collect::<Result<_>>()?;

    let trials: Vec<TrialResult> = params
        .par_iter()
        .enumerate()
        .map(|(t, p)| {
            let trial_seed = rng::child_seed(seed, t as u64);
            let fold_accuracies = splits
                .iter()
                .map(|(train, test)| match trainer.fit(train, p, trial_seed) {
                    Ok(metric) => knn_accuracy(metric.as_ref(), train, test, space.k_neighbors.min(train.n())),
                    Err(e) if e.is_numerical() => {
                        log::warn!("trial {t}: training failed ({e}); fold scored as 0");
                        Ok(0.0)
                    }
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
            Ok(TrialResult { params: *p, fold_accuracies, mean_accuracy })
        })
        .collect::<Result<_>>()?;
    let mut best_index = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.mean_accuracy > trials[best_index].mean_accuracy {
            best_index = i;
        }
    }
    Ok(SearchResult { best_index, best: trials[best_index].params, trials, tau_upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, p: usize, classes: i64, seed: u64) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| r.random_range(-1.0..1.0));
        Dataset::new(x, (0..n).map(|i| i as i64 % classes).collect()).unwrap()
    }

    #[test]
    fn exact_match_with_one_neighbor() {
        let train = random_data(10, 3, 2, 1);
        let q = DMatrix::from_fn(1, 3, |_, c| train.instances()[(4, c)]);
        let pred = knn_predict(&Euclidean(3), &train, &q, 1).unwrap();
        assert_eq!(pred, vec![train.labels()[4]]);
    }

    #[test]
    fn single_class_always_wins() {
        let mut train = random_data(6, 2, 1, 2);
        train = train.with_instances(train.instances().clone()).unwrap();
        let q = DMatrix::from_fn(4, 2, |r, c| (r + c) as f64);
        let pred = knn_predict(&Euclidean(2), &train, &q, 6).unwrap();
        assert!(pred.iter().all(|&l| l == 0));
    }

    #[test]
    fn matches_brute_force_classifier() {
        let train = random_data(30, 3, 3, 3);
        let queries = random_data(20, 3, 3, 4);
        let pred = knn_predict(&Euclidean(3), &train, queries.instances(), 3).unwrap();
        for (qi, &got) in pred.iter().enumerate() {
            let q = queries.row(qi);
            let mut d: Vec<(f64, usize)> = (0..train.n())
                .map(|i| (train.row(i).iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum(), i))
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut counts = std::collections::BTreeMap::new();
            for &(_, i) in d.iter().take(3) {
                *counts.entry(train.labels()[i]).or_insert(0) += 1;
            }
            let top = *counts.values().max().unwrap();
            let want = *counts.iter().find(|(_, &c)| c == top).unwrap().0;
            assert_eq!(got, want);
        }
    }

    #[test]
    fn vote_ties_go_to_smaller_label() {
        let train = Dataset::from_rows(&[vec![1.0], vec![-1.0]], vec![7, 3]).unwrap();
        let pred = knn_predict(&Euclidean(1), &train, &DMatrix::from_element(1, 1, 0.0), 2).unwrap();
        assert_eq!(pred, vec![3]);
    }

    #[test]
    fn metric_scaling_does_not_change_labels() {
        let train = random_data(40, 3, 2, 5);
        let queries = random_data(25, 3, 2, 6);
        let b = DMatrix::from_fn(3, 3, |r, c| ((r * 3 + c) as f64).sin());
        let m = MetricMatrix::new(b.transpose() * &b + DMatrix::identity(3, 3) * 0.05).unwrap();
        let base = knn_predict(&m, &train, queries.instances(), 3).unwrap();
        for c in [0.1, 10.0] {
            let scaled = m.scaled(c).unwrap();
            assert_eq!(knn_predict(&scaled, &train, queries.instances(), 3).unwrap(), base);
        }
    }

    #[test]
    fn knn_input_validation() {
        let train = random_data(5, 2, 2, 7);
        assert!(knn_predict(&Euclidean(2), &train, &DMatrix::zeros(1, 2), 6).is_err());
        assert!(knn_predict(&Euclidean(2), &train, &DMatrix::zeros(1, 3), 1).is_err());
    }

    #[test]
    fn vanishing_noise() {
        let data = random_data(20, 3, 2, 8);
        let spec = NoiseSpec { snr_db: 300.0, kind: NoiseKind::Spherical, seed: 1 };
        let noisy = add_noise(&data, &spec).unwrap();
        assert!((noisy.instances() - data.instances()).amax() < 1e-10);
        assert_eq!(noisy.labels(), data.labels());
    }

    fn unit_rows(n: usize, p: usize, seed: u64) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(n, p, |_, c| r.random_range(-1.0..1.0) * (1.0 + c as f64));
        for mut row in x.row_iter_mut() {
            let norm = row.norm();
            row /= norm;
        }
        Dataset::new(x, (0..n).map(|i| (i % 2) as i64).collect()).unwrap()
    }

    #[test]
    fn spherical_noise_power_matches_snr() {
        let data = unit_rows(10_000, 4, 9);
        let noisy = add_noise(&data, &NoiseSpec { snr_db: 0.0, kind: NoiseKind::Spherical, seed: 2 }).unwrap();
        let diff = noisy.instances() - data.instances();
        let noise_power = diff.norm_squared() / (10_000.0 * 4.0);
        let signal_power = 1.0 / 4.0;
        assert!((noise_power / signal_power - 1.0).abs() < 0.05, "ratio {}", noise_power / signal_power);
    }

    #[test]
    fn diagonal_noise_follows_feature_variance() {
        let data = unit_rows(10_000, 3, 10);
        let noisy = add_noise(&data, &NoiseSpec { snr_db: 5.0, kind: NoiseKind::Diagonal, seed: 3 }).unwrap();
        let diff = noisy.instances() - data.instances();
        let var = |m: &DMatrix<f64>, c: usize| {
            let col = m.column(c);
            let mean = col.mean();
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64
        };
        for c in 1..3 {
            let noise_ratio = var(&diff, c) / var(&diff, 0);
            let signal_ratio = var(data.instances(), c) / var(data.instances(), 0);
            assert!((noise_ratio / signal_ratio - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn augmentation() {
        let data = random_data(30, 2, 3, 11);
        let spec = NoiseSpec { snr_db: 300.0, kind: NoiseKind::Spherical, seed: 4 };
        let same = augment_test(&data, 30, &spec).unwrap();
        for i in 0..30 {
            let row = same.row(i);
            let found = (0..30).any(|j| {
                data.labels()[j] == same.labels()[i]
                    && data.row(j).iter().zip(&row).all(|(a, b)| (a - b).abs() < 1e-10)
            });
            assert!(found);
        }
        let big = augment_test(&data, 10_000, &spec).unwrap();
        for c in 0..3 {
            let frac = big.labels().iter().filter(|&&l| l == c).count() as f64 / 10_000.0;
            assert!((frac - 1.0 / 3.0).abs() < 0.03);
        }
        assert_eq!(big, augment_test(&data, 10_000, &spec).unwrap());
        assert!(augment_test(&data, 10, &spec).is_err());
    }

    #[test]
    fn folds_are_stratified_and_cover_everything() {
        let labels: Vec<i64> = (0..50).map(|i| (i % 2) as i64).collect();
        let folds = stratified_folds(&labels, 5, 1).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        for f in &folds {
            let ones = f.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(ones, 5);
        }
        let small = vec![0, 0, 0, 1, 1, 1];
        assert_eq!(stratified_folds(&small, 5, 1).unwrap().len(), 3);
        assert!(stratified_folds(&[0, 0, 1], 2, 1).is_err());
    }

    fn search_data() -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(40, 2, |i, _| r.random_range(-1.0..1.0) + if i % 2 == 0 { 1.0 } else { -1.0 });
        Dataset::new(x, (0..40).map(|i| (i % 2) as i64).collect()).unwrap()
    }

    fn small_trainer(robust: bool) -> LmnnTrainer {
        LmnnTrainer {
            k_targets: 3,
            k_impostors: 5,
            robust,
            base: LmnnConfig { max_iter: 20, ..Default::default() },
        }
    }

    #[test]
    fn single_trial_is_returned() {
        let space = SearchSpace { n_samples: 1, folds: 3, ..Default::default() };
        let res = random_search(&search_data(), &space, &small_trainer(true), 5).unwrap();
        assert_eq!(res.best_index, 0);
        assert_eq!(res.best, res.trials[0].params);
        assert_eq!(res.trials[0].fold_accuracies.len(), 3);
    }

    struct ConstantTrainer;

    impl Trainer for ConstantTrainer {
        fn neighbor_counts(&self) -> (usize, usize) {
            (1, 1)
        }
        fn uses_perturbation(&self) -> bool {
            true
        }
        fn fit(&self, train: &Dataset, _: &TrialParams, _: u64) -> Result<Box<dyn Distance>> {
            Ok(Box::new(Euclidean(train.p())))
        }
    }

    #[test]
    fn ties_go_to_the_first_trial() {
        let space = SearchSpace { n_samples: 6, folds: 3, ..Default::default() };
        let res = random_search(&search_data(), &space, &ConstantTrainer, 1).unwrap();
        assert_eq!(res.best_index, 0);
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let data = search_data();
        let space = SearchSpace { n_samples: 50, folds: 2, ..Default::default() };
        let res = random_search(&data, &space, &ConstantTrainer, 3).unwrap();
        let upper = euclidean_margin_percentile(&data, 1, 1, 90.0).unwrap();
        assert_relative_eq!(res.tau_upper, upper, epsilon = 0.0);
        assert!(upper > 0.0);
        for t in &res.trials {
            let p = t.params;
            assert!(p.mu >= 0.1 && p.mu < 0.9);
            assert!(p.tau >= 0.0 && p.tau <= upper);
            assert!(p.lambda >= 0.0 && p.lambda <= 4.0 / (p.tau * p.tau));
        }
    }

    #[test]
    fn search_is_deterministic() {
        let space = SearchSpace { n_samples: 4, folds: 3, ..Default::default() };
        let a = random_search(&search_data(), &space, &small_trainer(true), 9).unwrap();
        let b = random_search(&search_data(), &space, &small_trainer(true), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn plain_trainer_searches_mu_only() {
        let space = SearchSpace { n_samples: 3, folds: 3, ..Default::default() };
        let res = random_search(&search_data(), &space, &small_trainer(false), 2).unwrap();
        assert!(res.trials.iter().all(|t| t.params.tau == 0.0 && t.params.lambda == 0.0));
    }
}
