//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line
//! to stderr; the test fails if any criterion fails.

use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use certmetric::eval::{
    augment_test, euclidean_margin_percentile, knn_accuracy, random_search, stratified_folds, LmnnTrainer, SearchSpace,
    Trainer,
};
use certmetric::lmnn::{lmnn_gradient, lmnn_loss, train_lmnn_cr, train_lmnn_cr_observed, train_lmnn_cr_pca};
use certmetric::robustness::{
    generalization_bound, margin_report, perturbation_loss, perturbation_loss_gradient, perturbation_loss_gradient_pca,
    perturbation_loss_pca, support_point, support_point_pca,
};
use certmetric::scml::{generate_bases, materialized_distance_sq, scml_distance_sq, train_scml_cr};
use certmetric::{
    mahalanobis_sq, toygen, triplets, Dataset, LinearMap, LmnnConfig, MetricMatrix, NoiseKind, NoiseSpec,
    PerturbationSpec, Preprocessing, ScmlConfig, SimilarPairSet, SparseCompositionalMetric, Toy, ToySpec, TripletSet,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the oracle side free of the library's samplers
    let u: f64 = r.random_range(f64::EPSILON..1.0);
    let v: f64 = r.random_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn random_vec(p: usize, r: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(p, |_, _| normal(r))
}

/// Wishart draw `BᵀB` with standard Gaussian `B`.
fn random_psd(p: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(p, p, |_, _| normal(r));
    let m = b.transpose() * &b;
    (&m + m.transpose()) * 0.5
}

fn random_pd(p: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    random_psd(p, r) + DMatrix::identity(p, p) * 0.5
}

fn slice(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Boundary `{z : aᵀz = b}` of the triplet under `M`: points equidistant
/// from `x_j` and `x_l`.
fn boundary(m: &DMatrix<f64>, xj: &DVector<f64>, xl: &DVector<f64>) -> (DVector<f64>, f64) {
    let a = m * (xl - xj) * 2.0;
    let b = xl.dot(&(m * xl)) - xj.dot(&(m * xj));
    (a, b)
}

/// Minimizes `(z − x)ᵀ A (z − x)` subject to `aᵀz = b` by solving the KKT
/// system `[2A a; aᵀ 0][z; ν] = [2Ax; b]`.
fn kkt_projection(x: &DVector<f64>, a: &DVector<f64>, b: f64, shape: &DMatrix<f64>) -> DVector<f64> {
    let p = x.len();
    let mut k = DMatrix::zeros(p + 1, p + 1);
    k.view_mut((0, 0), (p, p)).copy_from(&(shape * 2.0));
    for c in 0..p {
        k[(c, p)] = a[c];
        k[(p, c)] = a[c];
    }
    let mut rhs = DVector::zeros(p + 1);
    rhs.rows_mut(0, p).copy_from(&(shape * x * 2.0));
    rhs[p] = b;
    let sol = k.lu().solve(&rhs).expect("KKT system is nonsingular");
    sol.rows(0, p).into_owned()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst_point = 0.0f64;
    let mut worst_margin = 0.0f64;
    // Same comparison with a vanishing stabilizer, reported to separate the
    // epsilon term from the formula itself.
    let mut worst_unregularized = 0.0f64;
    let tiny = PerturbationSpec { epsilon: 1e-300, ..PerturbationSpec::default() };
    for t in 0..1000 {
        let p = [2, 5, 20][t % 3];
        let m = random_psd(p, &mut r);
        let (xi, xj, xl) = (random_vec(p, &mut r), random_vec(p, &mut r), random_vec(p, &mut r));
        let mm = MetricMatrix::new(m.clone()).unwrap();
        let sp = support_point(&mm, &slice(&xi), &slice(&xj), &slice(&xl), &PerturbationSpec::default()).map_err(|e| e.to_string())?;
        let (a, b) = boundary(&m, &xj, &xl);
        let oracle = kkt_projection(&xi, &a, b, &DMatrix::identity(p, p));
        let point = DVector::from_vec(sp.point.clone());
        worst_point = worst_point.max((&point - &oracle).amax());
        let exact = support_point(&mm, &slice(&xi), &slice(&xj), &slice(&xl), &tiny).map_err(|e| e.to_string())?;
        worst_unregularized = worst_unregularized.max((DVector::from_vec(exact.point) - &oracle).amax());
        let dist2 = (&point - &xi).norm_squared();
        if !rel_close(sp.margin_sq, dist2, 1e-8) {
            worst_margin = worst_margin.max((sp.margin_sq - dist2).abs() / dist2.max(f64::MIN_POSITIVE));
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "max point error {worst_point:.2e} (epsilon 1e-300: {worst_unregularized:.2e}), margin mismatches {worst_margin:.2e}, {elapsed:.2?}"
    );
    if worst_point <= 1e-8 && worst_margin == 0.0 && elapsed < Duration::from_secs(10) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst_boundary = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut beaten = 0;
    for t in 0..1000 {
        let p = [2, 5, 20][t % 3];
        let m = random_psd(p, &mut r);
        let shape = random_pd(p, &mut r);
        let spec = PerturbationSpec::default().with_shape(shape.clone()).map_err(|e| e.to_string())?;
        let (xi, xj, xl) = (random_vec(p, &mut r), random_vec(p, &mut r), random_vec(p, &mut r));
        let mm = MetricMatrix::new(m.clone()).unwrap();
        let sp = support_point(&mm, &slice(&xi), &slice(&xj), &slice(&xl), &spec).map_err(|e| e.to_string())?;
        let z = DVector::from_vec(sp.point.clone());
        let gap = mahalanobis_sq(&mm, &sp.point, &slice(&xj)).unwrap() - mahalanobis_sq(&mm, &sp.point, &slice(&xl)).unwrap();
        worst_boundary = worst_boundary.max(gap.abs());
        let (a, b) = boundary(&m, &xj, &xl);
        worst_oracle = worst_oracle.max((&z - kkt_projection(&xi, &a, b, &shape)).amax());
        let own = (&z - &xi).dot(&(&shape * (&z - &xi)));
        for _ in 0..100 {
            let y = random_vec(p, &mut r) * 3.0;
            let on_boundary = kkt_projection(&y, &a, b, &DMatrix::identity(p, p));
            let d = on_boundary - &xi;
            if d.dot(&(&shape * &d)) < own - 1e-10 * own.max(1.0) {
                beaten += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "max boundary residual {worst_boundary:.2e}, max KKT deviation {worst_oracle:.2e}, {beaten} closer boundary points, {elapsed:.2?}"
    );
    if worst_boundary <= 1e-6 && worst_oracle <= 1e-6 && beaten == 0 && elapsed < Duration::from_secs(30) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for t in 0..200 {
        let p = [2, 5, 20][t % 3];
        let m = MetricMatrix::new(random_pd(p, &mut r)).unwrap();
        let xi = random_vec(p, &mut r);
        let xj = &xi + random_vec(p, &mut r) * 0.5;
        let dir = random_vec(p, &mut r);
        let xl = &xi + dir.normalize() * 300.0;
        let (xi, xj, xl) = (slice(&xi), slice(&xj), slice(&xl));
        let base = support_point(&m, &xi, &xj, &xl, &PerturbationSpec::default()).map_err(|e| e.to_string())?;
        for c in [1e-3, 1.0, 1e3] {
            let sc = support_point(&m.scaled(c).unwrap(), &xi, &xj, &xl, &PerturbationSpec::default()).unwrap();
            for (a, b) in sc.point.iter().zip(&base.point) {
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE));
            }
            worst = worst.max((sc.margin_sq - base.margin_sq).abs() / base.margin_sq);
        }
    }
    let detail = format!("max relative deviation {worst:.2e} over 200 triplets with x_l 300 units from x_i");
    if worst <= 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Central differences along symmetric unit directions, as the largest
/// entrywise error relative to the largest gradient entry.
fn fd_relative_error(f: &dyn Fn(&DMatrix<f64>) -> f64, m: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let h = 1e-6;
    let p = m.nrows();
    let mut fd = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let mut e = DMatrix::zeros(p, p);
            e[(a, b)] = 1.0;
            e[(b, a)] = 1.0;
            let d = (f(&(m + &e * h)) - f(&(m - &e * h))) / (2.0 * h);
            let v = if a == b { d } else { d / 2.0 };
            fd[(a, b)] = v;
            fd[(b, a)] = v;
        }
    }
    (&fd - g).amax() / g.amax().max(fd.amax()).max(f64::MIN_POSITIVE)
}

fn random_dataset(n: usize, p: usize, r: &mut ChaCha8Rng) -> Dataset {
    let x = DMatrix::from_fn(n, p, |_, _| normal(r));
    Dataset::new(x, (0..n).map(|i| (i % 2) as i64 + 1).collect()).unwrap()
}

fn random_triplets(d: &Dataset, count: usize, r: &mut ChaCha8Rng) -> TripletSet {
    let (same, other): (Vec<usize>, Vec<usize>) = (0..d.n()).partition(|&i| d.labels()[i] == 1);
    let pick = |v: &Vec<usize>, r: &mut ChaCha8Rng| v[r.random_range(0..v.len())];
    let mut triplets = Vec::new();
    while triplets.len() < count {
        let i = pick(&same, r);
        let j = pick(&same, r);
        if i != j {
            triplets.push((i, j, pick(&other, r)));
        }
    }
    TripletSet { triplets }
}

/// Hinge arguments and side gaps all at least `tol` from zero.
fn away_from_kinks(m: &MetricMatrix, reduced: &Dataset, original: &Dataset, map: Option<&LinearMap>, r: &TripletSet, spec: &PerturbationSpec) -> bool {
    let tol = 1e-3;
    r.triplets.iter().all(|&(i, j, l)| {
        let (xi, xj, xl) = (reduced.row(i), reduced.row(j), reduced.row(l));
        let delta = mahalanobis_sq(m, &xi, &xl).unwrap() - mahalanobis_sq(m, &xi, &xj).unwrap();
        let r2 = match map {
            Some(map) => support_point_pca(m, map, &original.row(i), &original.row(j), &original.row(l), spec).unwrap().margin_sq,
            None => support_point(m, &xi, &xj, &xl, spec).unwrap().margin_sq,
        };
        delta.abs() > tol && (spec.tau * spec.tau - r2).abs() > tol && (1.0 - delta).abs() > tol
    })
}

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let spec = PerturbationSpec::new(1.0, 1.0).unwrap();
    let (mut worst_plain, mut worst_pca, mut worst_lmnn) = (0.0f64, 0.0f64, 0.0f64);
    let (mut n_plain, mut n_pca, mut n_lmnn) = (0, 0, 0);
    let mut attempts = 0;
    while (n_plain < 50 || n_pca < 50 || n_lmnn < 50) && attempts < 2000 {
        attempts += 1;
        let p = 4;
        let data = random_dataset(10, p, &mut r);
        let set = random_triplets(&data, 6, &mut r);
        let m = MetricMatrix::new(random_pd(p, &mut r)).unwrap();
        if n_plain < 50 && away_from_kinks(&m, &data, &data, None, &set, &spec) {
            let g = perturbation_loss_gradient(&m, &data, &set, &spec).unwrap();
            if g.amax() > 1e-6 {
                let f = |x: &DMatrix<f64>| perturbation_loss(&MetricMatrix::new(x.clone()).unwrap(), &data, &set, &spec).unwrap();
                worst_plain = worst_plain.max(fd_relative_error(&f, m.as_matrix(), &g));
                n_plain += 1;
            }
        }
        if n_lmnn < 50 && away_from_kinks(&m, &data, &data, None, &set, &spec) {
            let pairs = SimilarPairSet { pairs: set.triplets.iter().map(|&(i, j, _)| (i, j)).collect() };
            let g = lmnn_gradient(&m, &data, &pairs, &set, 0.6).unwrap();
            let f = |x: &DMatrix<f64>| lmnn_loss(&MetricMatrix::new(x.clone()).unwrap(), &data, &pairs, &set, 0.6).unwrap();
            worst_lmnn = worst_lmnn.max(fd_relative_error(&f, m.as_matrix(), &g));
            n_lmnn += 1;
        }
        let q = 3;
        let a = DMatrix::from_fn(p, p, |_, _| normal(&mut r));
        let qmat = a.qr().q();
        let d = DMatrix::from_fn(q, p, |i, j| qmat[(j, i)]);
        let map = LinearMap { d: d.clone(), mean: DVector::zeros(p), scale: DVector::from_fn(p, |_, _| r.random_range(0.5..2.0)), normalize: false };
        let reduced = map.apply(&data).unwrap();
        let mq = MetricMatrix::new(random_pd(q, &mut r)).unwrap();
        if n_pca < 50 && away_from_kinks(&mq, &reduced, &data, Some(&map), &set, &spec) {
            let g = perturbation_loss_gradient_pca(&mq, &map, &data, &set, &spec).unwrap();
            if g.amax() > 1e-6 {
                let f = |x: &DMatrix<f64>| {
                    perturbation_loss_pca(&MetricMatrix::new(x.clone()).unwrap(), &map, &data, &set, &spec).unwrap()
                };
                worst_pca = worst_pca.max(fd_relative_error(&f, mq.as_matrix(), &g));
                n_pca += 1;
            }
        }
    }
    let detail = format!(
        "max relative error: plain {worst_plain:.2e} ({n_plain}), pca {worst_pca:.2e} ({n_pca}), lmnn {worst_lmnn:.2e} ({n_lmnn})"
    );
    if n_plain >= 50 && n_pca >= 50 && n_lmnn >= 50 && worst_plain < 1e-4 && worst_pca < 1e-4 && worst_lmnn < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Toy protocol shared by the margin criteria: full preprocessing, three
/// target neighbors, ten impostors, `τ` at half the 90th percentile of
/// Euclidean margins and `λ = 2/τ²`.
struct ToyProblem {
    data: Dataset,
    s: SimilarPairSet,
    r: TripletSet,
    tau: f64,
}

fn toy_problem(which: Toy, seed: u64) -> ToyProblem {
    let spec = ToySpec { preprocessing: Preprocessing::Standardize, ..ToySpec::new(which, seed) };
    let data = toygen::generate(&spec).unwrap();
    let (s, r) = triplets::build(&data, 3, 10).unwrap();
    let tau = 0.5 * euclidean_margin_percentile(&data, 3, 10, 90.0).unwrap();
    ToyProblem { data, s, r, tau }
}

fn robust_config(tau: f64) -> LmnnConfig {
    LmnnConfig { spec: PerturbationSpec::new(tau, 2.0 / (tau * tau)).unwrap(), ..LmnnConfig::default() }
}

fn criterion_5() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut iterates = 0;
    for which in [Toy::TwoGaussians, Toy::TwoBands, Toy::Multicollinear] {
        let t = toy_problem(which, 0);
        let mut observe = |m: &MetricMatrix, _: bool| {
            iterates += 1;
            worst = worst.min(m.min_eigenvalue().unwrap());
        };
        train_lmnn_cr_observed(&t.data, &t.s, &t.r, &robust_config(t.tau), None, &mut observe).map_err(|e| e.to_string())?;
    }
    let detail = format!("{iterates} iterates, smallest eigenvalue {worst:.3e}");
    if worst >= -1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let p = 4;
    let data = random_dataset(16, p, &mut r);
    let set = random_triplets(&data, 20, &mut r);
    let m = MetricMatrix::new(random_pd(p, &mut r)).unwrap();
    let spec = PerturbationSpec::new(0.9, 1.5).unwrap();
    let id = LinearMap::identity(p);
    let loss_gap = (perturbation_loss(&m, &data, &set, &spec).unwrap() - perturbation_loss_pca(&m, &id, &data, &set, &spec).unwrap()).abs();
    let grad_gap = (perturbation_loss_gradient(&m, &data, &set, &spec).unwrap()
        - perturbation_loss_gradient_pca(&m, &id, &data, &set, &spec).unwrap())
    .amax();
    let (s, rr) = triplets::build(&data, 2, 4).unwrap();
    let config = LmnnConfig { max_iter: 200, ..robust_config(0.8) };
    let (plain, _) = train_lmnn_cr(&data, &s, &rr, &config, None).unwrap();
    let (pca, _) = train_lmnn_cr_pca(&data, &id, &s, &rr, &config, None).unwrap();
    let model_gap = (plain.as_matrix() - pca.as_matrix()).amax();
    let detail = format!("loss {loss_gap:.2e}, gradient {grad_gap:.2e}, trained metric {model_gap:.2e}");
    if loss_gap <= 1e-8 && grad_gap <= 1e-8 && model_gap <= 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean_margins(which: Toy, seed: u64) -> (f64, f64) {
    let t = toy_problem(which, seed);
    let plain = LmnnConfig::default();
    let (m0, _) = train_lmnn_cr(&t.data, &t.s, &t.r, &plain, None).unwrap();
    let (m1, _) = train_lmnn_cr(&t.data, &t.s, &t.r, &robust_config(t.tau), None).unwrap();
    let report = |m: &MetricMatrix| margin_report(m, &t.data, &t.r, &PerturbationSpec::default(), 1).unwrap().mean;
    (report(&m0), report(&m1))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut expanded = 0;
    for seed in 0..5 {
        let (a, b) = mean_margins(Toy::Multicollinear, seed);
        if b >= 3.0 * a {
            expanded += 1;
        }
        lines.push(format!("{:.2}", b / a));
    }
    let mut ordered = 0;
    let mut tg = Vec::new();
    for seed in 0..5 {
        let (a, b) = mean_margins(Toy::TwoGaussians, seed);
        if b >= a {
            ordered += 1;
        }
        tg.push(format!("{:.3}", b / a));
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "multicollinear ratio >= 3 in {expanded}/5 seeds (ratios {}), two-gaussians ratio >= 1 in {ordered}/5 (ratios {}), {elapsed:.2?}",
        lines.join(" "),
        tg.join(" ")
    );
    if expanded >= 4 && ordered >= 4 && elapsed < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_8() -> Outcome {
    let mut wins = 0;
    let mut cells = Vec::new();
    for seed in 0..10u64 {
        let spec = ToySpec { preprocessing: Preprocessing::Standardize, ..ToySpec::new(Toy::overlapping_blobs(2), seed) };
        let data = toygen::generate(&spec).unwrap();
        let folds = stratified_folds(data.labels(), 10, seed).unwrap();
        let mut test_idx: Vec<usize> = folds[..3].concat();
        test_idx.sort_unstable();
        let train_idx: Vec<usize> = (0..data.n()).filter(|i| test_idx.binary_search(i).is_err()).collect();
        let train = data.subset(&train_idx).unwrap();
        let test = data.subset(&test_idx).unwrap();
        let noise = NoiseSpec { snr_db: 5.0, kind: NoiseKind::Diagonal, seed };
        let noisy = augment_test(&test, 10_000, &noise).unwrap();
        let space = SearchSpace { n_samples: 10, ..SearchSpace::default() };
        let mut acc = [0.0; 2];
        for (slot, robust) in [false, true].into_iter().enumerate() {
            let trainer = LmnnTrainer { k_targets: 3, k_impostors: 10, robust, base: LmnnConfig::default() };
            let best = random_search(&train, &space, &trainer, seed).unwrap().best;
            let metric = trainer.fit(&train, &best, seed).unwrap();
            acc[slot] = knn_accuracy(metric.as_ref(), &train, &noisy, 3).unwrap();
        }
        if acc[1] >= acc[0] {
            wins += 1;
        }
        cells.push(format!("{:.3}/{:.3}", acc[0], acc[1]));
    }
    let detail = format!("LMNN-CR >= LMNN in {wins}/10 seeds (lmnn/cr: {})", cells.join(" "));
    if wins >= 7 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9() -> Outcome {
    let t = toy_problem(Toy::TwoBands, 1);
    let bases = generate_bases(&t.data, 8, 4, 1).unwrap();
    let config = ScmlConfig { spec: PerturbationSpec::new(t.tau, 2.0 / (t.tau * t.tau)).unwrap(), ..ScmlConfig::default() };
    // the optimizer is deterministic, so a run capped at k iterations ends on the k-th iterate
    let mut min_weight = f64::INFINITY;
    for k in 1..=40 {
        let (metric, _) = train_scml_cr(&t.data, &t.s, &t.r, &bases, &ScmlConfig { max_iter: k, ..config.clone() }).unwrap();
        min_weight = min_weight.min(metric.weights.min());
    }
    let (metric, _) = train_scml_cr(&t.data, &t.s, &t.r, &bases, &config).unwrap();
    let mut r = rng(9);
    let probe = SparseCompositionalMetric::new(DVector::from_fn(bases.len(), |_, _| r.random_range(0.0..2.0)), bases.clone()).unwrap();
    let mut worst = 0.0f64;
    for m in [&metric, &probe] {
        for _ in 0..200 {
            let (x, y) = (slice(&random_vec(2, &mut r)), slice(&random_vec(2, &mut r)));
            let dense = mahalanobis_sq(&m.materialize(), &x, &y).unwrap();
            let via = materialized_distance_sq(m, &x, &y).unwrap();
            worst = worst.max((scml_distance_sq(m, &x, &y).unwrap() - dense).abs()).max((via - dense).abs());
        }
    }
    let mut counts = Vec::new();
    for eta in [1e-3, 1e-1, 10.0] {
        let (m, _) = train_scml_cr(&t.data, &t.s, &t.r, &bases, &ScmlConfig { eta, ..config.clone() }).unwrap();
        counts.push(m.nonzero_count());
    }
    let monotone = counts.windows(2).all(|w| w[1] <= w[0]);
    let detail = format!("min weight over 40 iterates {min_weight:.3e}, distance gap {worst:.2e}, nonzero counts {counts:?}");
    if min_weight >= 0.0 && worst <= 1e-10 && monotone {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_10() -> Outcome {
    let grid: Vec<f64> = (1..=10).map(|k| 0.1 * k as f64).collect();
    let logs: Vec<f64> = grid.iter().map(|&tau| generalization_bound(100, 5, 3, tau, 10, 1000, 1.0, 0.05).unwrap().log_k).collect();
    let decreasing = logs.windows(2).all(|w| w[1] < w[0]);
    let hand = generalization_bound(10, 1, 2, 2.0, 0, 10, 1.0, 0.05).unwrap().log_k;
    let exact = (hand - 4f64.ln()).abs() <= 4f64.ln() * f64::EPSILON;
    let detail = format!("log K strictly decreasing: {decreasing}; tau=2, p=1, 2 classes gives K = {}", hand.exp());
    if decreasing && exact {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn per_iteration(data: &Dataset, s: &SimilarPairSet, r: &TripletSet, config: &LmnnConfig) -> Duration {
    (0..3)
        .map(|_| {
            let start = Instant::now();
            let (_, trace) = train_lmnn_cr(data, s, r, config, None).unwrap();
            start.elapsed() / trace.iterations.max(1) as u32
        })
        .min()
        .unwrap()
}

fn criterion_11() -> Outcome {
    let data = toygen::generate(&ToySpec::new(Toy::overlapping_blobs(2), 11)).unwrap();
    let (s, r) = triplets::build(&data, 3, 10).unwrap();
    let tau = 0.5 * euclidean_margin_percentile(&data, 3, 10, 90.0).unwrap();
    let plain = LmnnConfig { max_iter: 300, tol: 1e-300, ..LmnnConfig::default() };
    let robust = LmnnConfig { max_iter: 300, tol: 1e-300, ..robust_config(tau) };
    let a = per_iteration(&data, &s, &r, &plain);
    let b = per_iteration(&data, &s, &r, &robust);
    let ratio = b.as_secs_f64() / a.as_secs_f64();
    let detail = format!("per iteration: lmnn {a:.2?}, lmnn-cr {b:.2?}, ratio {ratio:.2} on {} triplets", r.len());
    if ratio <= 3.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Runs one CLI invocation in-process with `dir` as working directory.
fn run_cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let previous = std::env::current_dir().map_err(|e| e.to_string())?;
    std::env::set_current_dir(dir).map_err(|e| e.to_string())?;
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = certmetric_cli::main_with(std::iter::once("certmetric").chain(args.iter().copied()), &mut out, &mut err);
    std::env::set_current_dir(previous).map_err(|e| e.to_string())?;
    if code != 0 {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&err)));
    }
    Ok(out)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_12() -> Outcome {
    let commands: Vec<Vec<&str>> = vec![
        vec!["toy", "--kind", "two-bands", "--seed", "12", "--out", "toy.csv"],
        vec!["train", "--data", "data.csv", "--method", "lmnn-cr", "--seed", "5", "--out", "new.json"],
        vec!["train", "--data", "data.csv", "--method", "lmnn", "--pca-variance", "0.9", "--out", "new.json"],
        vec!["train", "--data", "data.csv", "--method", "scml-cr", "--k-bases", "6", "--out", "new.json"],
        vec!["eval", "--model", "model.json", "--train", "data.csv", "--out", "pred.csv"],
        vec!["margin", "--model", "model.json", "--data", "data.csv", "--out-prefix", "rep"],
        vec!["noise-bench", "--model", "model.json", "--train", "data.csv", "--test", "data.csv", "--augment-to", "2000", "--out", "noise.csv"],
        vec!["search", "--data", "data.csv", "--method", "lmnn-cr", "--trials", "4", "--folds", "3", "--max-iter", "50", "--seed", "2", "--out", "trials.csv"],
    ];
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = root.path();
    run_cli(base, &["toy", "--kind", "multicollinear", "--n-per-class", "30", "--seed", "3", "--out", "data.csv"])?;
    run_cli(base, &["train", "--data", "data.csv", "--method", "lmnn-cr", "--out", "model.json"])?;
    let mut mismatched = Vec::new();
    for cmd in &commands {
        let mut runs = Vec::new();
        for round in 0..2 {
            let dir = base.join(format!("{}-{round}", cmd[0]));
            let _ = std::fs::remove_dir_all(&dir);
            std::fs::create_dir(&dir).unwrap();
            for f in ["data.csv", "model.json"] {
                std::fs::copy(base.join(f), dir.join(f)).unwrap();
            }
            let stdout = run_cli(&dir, cmd)?;
            runs.push((stdout, snapshot(&dir)));
        }
        if runs[0] != runs[1] {
            mismatched.push(cmd[0]);
        }
    }
    let detail = format!("{} command invocations rerun, mismatches: {mismatched:?}", commands.len());
    if mismatched.is_empty() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("support point equals hyperplane projection", criterion_1),
        ("ellipsoidal support point", criterion_2),
        ("scale invariance", criterion_3),
        ("gradient fidelity", criterion_4),
        ("PSD iterates", criterion_5),
        ("PCA with identity map", criterion_6),
        ("margin expansion on toys", criterion_7),
        ("robustness ordering under noise", criterion_8),
        ("sparse compositional contracts", criterion_9),
        ("bound diagnostic", criterion_10),
        ("per-iteration cost", criterion_11),
        ("CLI determinism", criterion_12),
    ];
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(k + 1);
                ("FAIL", d)
            }
        };
        let _ = writeln!(std::io::stderr(), "{tag} {:>2} {name}: {detail}", k + 1);
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
