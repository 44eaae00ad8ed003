use std::io::Write;
use std::path::{Path, PathBuf};

use certmetric::data::preprocess_with;
use certmetric::eval::{
    add_noise, knn_accuracy, random_search, resample, LmnnTrainer, ScmlTrainer, SearchSpace, Trainer,
};
use certmetric::lmnn::{train_lmnn_cr, train_lmnn_cr_pca};
use certmetric::pca::pca_fit;
use certmetric::robustness::{generalization_bound, margin_report, margin_report_pca, percentile, MarginReport};
use certmetric::scml::{generate_bases, train_scml_cr};
use certmetric::{
    knn_predict, toygen, triplets, Dataset, Error, LinearMap, LmnnConfig, MetricMatrix, NoiseSpec,
    PerturbationSpec, Preprocessing, ScmlConfig, Toy, ToySpec, TrainingTrace, TripletSet,
};

use crate::cli::*;
use crate::error::{usage, CliError, CliResult};
use crate::io::{load_dataset, save_dataset, write_file};
use crate::model::*;

pub const DEFAULT_K_BASES: usize = 20;
pub const DEFAULT_REGIONS: usize = 10;
/// Default `τ` as a fraction of the 90th percentile of Euclidean margins.
pub const DEFAULT_TAU_FRACTION: f64 = 0.5;
/// Default `λ·τ²`.
pub const DEFAULT_LAMBDA_TAU_SQ: f64 = 2.0;

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => train(&a, out),
        Command::Eval(a) => eval(&a, out),
        Command::Margin(a) => margin(&a, out),
        Command::NoiseBench(a) => noise_bench(&a, out),
        Command::Search(a) => search(&a, out),
        Command::Toy(a) => toy(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::io("<stdout>", e))
}

fn check_fraction(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        usage(format!("--{name} must lie in (0, 1), got {v}"))
    }
}

fn check_nonneg(name: &str, v: f64) -> CliResult<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        usage(format!("--{name} must be a finite nonnegative number, got {v}"))
    }
}

fn check_positive(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        usage(format!("--{name} must be a finite positive number, got {v}"))
    }
}

fn check_count(name: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return usage(format!("--{name} must be at least 1"));
    }
    Ok(())
}

fn check_shared(neighbors: &NeighborArgs, opt: &OptimizerArgs, scml: &ScmlArgs, method: Method) -> CliResult<()> {
    check_count("k-targets", neighbors.k_targets)?;
    check_count("k-impostors", neighbors.k_impostors)?;
    check_count("max-iter", opt.max_iter)?;
    check_positive("tol", opt.tol)?;
    if method.is_scml() {
        if let Some(eta) = scml.eta {
            check_nonneg("eta", eta)?;
        }
        if let Some(k) = scml.k_bases {
            check_count("k-bases", k)?;
        }
        if let Some(r) = scml.regions {
            check_count("regions", r)?;
        }
    } else if scml.eta.is_some() || scml.k_bases.is_some() || scml.regions.is_some() {
        return usage(format!("--eta, --k-bases and --regions apply to scml methods, not {}", method.name()));
    }
    Ok(())
}

/// Flag checks that need no data; failures are usage errors.
fn validate_train(a: &TrainArgs) -> CliResult<()> {
    check_shared(&a.neighbors, &a.optimizer, &a.scml, a.method)?;
    if a.method.is_scml() {
        if a.mu.is_some() {
            return usage("--mu applies to lmnn methods only");
        }
        if a.pca_variance.is_some() {
            return usage("--pca-variance applies to lmnn methods only");
        }
    }
    if let Some(mu) = a.mu {
        check_fraction("mu", mu)?;
    }
    if let Some(v) = a.pca_variance {
        if !(v > 0.0 && v <= 1.0) {
            return usage(format!("--pca-variance must lie in (0, 1], got {v}"));
        }
    }
    if !a.method.is_robust() && (a.tau.is_some() || a.lambda.is_some()) {
        return usage(format!("--tau and --lambda apply to robust methods, not {}", a.method.name()));
    }
    if let Some(t) = a.tau {
        check_nonneg("tau", t)?;
    }
    if let Some(l) = a.lambda {
        check_nonneg("lambda", l)?;
    }
    if a.tau == Some(0.0) && a.lambda != Some(0.0) {
        return usage("--tau 0 needs an explicit --lambda 0");
    }
    check_positive("epsilon", a.epsilon)
}

/// Margins of every triplet measured in the preprocessed space.
pub fn margins_for(
    metric: &MetricMatrix,
    pca: Option<&LinearMap>,
    pre: &Dataset,
    r: &TripletSet,
    tau: f64,
    epsilon: f64,
    bins: usize,
) -> CliResult<MarginReport> {
    let spec = PerturbationSpec { tau, epsilon, ..Default::default() };
    let report = match pca {
        Some(map) => margin_report_pca(metric, map, pre, r, &spec, bins)?,
        None => margin_report(metric, pre, r, &spec, bins)?,
    };
    Ok(report)
}

fn trace_path(a: &TrainArgs) -> PathBuf {
    a.trace.clone().unwrap_or_else(|| a.out.with_extension("trace.csv"))
}

fn reduce(pca: Option<&LinearMap>, pre: &Dataset) -> CliResult<Dataset> {
    match pca {
        Some(map) => Ok(map.apply(pre)?),
        None => Ok(pre.clone()),
    }
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    validate_train(a)?;
    let raw = load_dataset(&a.data, &a.read.options())?;
    let preprocessing: Preprocessing = a.preprocessing.into();
    let (pre, transform) = preprocess_with(&raw, preprocessing)?;
    let pca = a.pca_variance.map(|v| pca_fit(&pre, v)).transpose()?;
    let reduced = reduce(pca.as_ref(), &pre)?;
    let (kt, ki) = (a.neighbors.k_targets, a.neighbors.k_impostors);
    let (s, r) = triplets::build(&reduced, kt, ki)?;

    let mut method = a.method;
    let (mut tau, mut lambda) = (0.0, 0.0);
    if method.is_robust() {
        tau = match a.tau {
            Some(t) => t,
            None => {
                let id = MetricMatrix::identity(reduced.p());
                let report = margins_for(&id, pca.as_ref(), &pre, &r, 0.0, a.epsilon, 1)?;
                let t = DEFAULT_TAU_FRACTION * percentile(&report.margins, 90.0)?;
                if !(t > 0.0) {
                    return Err(CliError::Data("Euclidean margins are all zero; pass --tau".into()));
                }
                t
            }
        };
        lambda = a.lambda.unwrap_or(DEFAULT_LAMBDA_TAU_SQ / (tau * tau));
        if lambda == 0.0 {
            // no perturbation term: identical to the plain method
            method = method.plain();
            tau = 0.0;
        }
    }
    let spec = PerturbationSpec { tau, lambda, epsilon: a.epsilon, shape: None };
    log::info!("training {} on {} instances, {} triplets", method.name(), pre.n(), r.len());

    let mu = if method.is_scml() { None } else { Some(a.mu.unwrap_or(LmnnConfig::default().mu)) };
    let mut settings = TrainSettings {
        method: method.name().to_string(),
        preprocessing,
        mu,
        tau,
        lambda,
        epsilon: a.epsilon,
        k_targets: kt,
        k_impostors: ki,
        max_iter: a.optimizer.max_iter,
        tol: a.optimizer.tol,
        seed: a.seed,
        pca_variance: a.pca_variance,
        eta: None,
        k_bases: None,
        regions: None,
    };

    let diverged = |e: Error| -> CliError {
        if let Error::TrainingDiverged { trace, .. } = &e {
            if let Err(w) = write_file(&trace_path(a), &trace.to_csv()) {
                log::warn!("could not write trace: {w}");
            }
        }
        e.into()
    };
    let (mut model, trace): (ModelFile, TrainingTrace) = if method.is_scml() {
        let defaults = ScmlConfig::default();
        let eta = a.scml.eta.unwrap_or(defaults.eta);
        let k_bases = a.scml.k_bases.unwrap_or(DEFAULT_K_BASES);
        let regions = a.scml.regions.unwrap_or(DEFAULT_REGIONS);
        settings.eta = Some(eta);
        settings.k_bases = Some(k_bases);
        settings.regions = Some(regions);
        let bases = generate_bases(&pre, k_bases, regions, a.seed)?;
        let config = ScmlConfig { eta, spec, tol: a.optimizer.tol, max_iter: a.optimizer.max_iter, seed: a.seed, ..defaults };
        let (metric, trace) = train_scml_cr(&pre, &s, &r, &bases, &config).map_err(diverged)?;
        let model = ModelFile {
            schema_version: SCHEMA_VERSION,
            kind: ModelKind::SparseCompositional,
            preprocessing: ModelFile::transform_of(&transform),
            pca: None,
            matrix: None,
            weights: Some(metric.weights.iter().copied().collect()),
            bases: Some(MatrixData::from_matrix(metric.bases.matrix())),
            metadata: placeholder_metadata(settings, &raw),
        };
        (model, trace)
    } else {
        let config = LmnnConfig {
            mu: mu.expect("lmnn methods carry mu"),
            spec,
            tol: a.optimizer.tol,
            max_iter: a.optimizer.max_iter,
            seed: a.seed,
            ..LmnnConfig::default()
        };
        let (m, trace) = match &pca {
            Some(map) => train_lmnn_cr_pca(&pre, map, &s, &r, &config, None),
            None => train_lmnn_cr(&pre, &s, &r, &config, None),
        }
        .map_err(diverged)?;
        let model = ModelFile {
            schema_version: SCHEMA_VERSION,
            kind: if pca.is_some() { ModelKind::MahalanobisWithPca } else { ModelKind::Mahalanobis },
            preprocessing: ModelFile::transform_of(&transform),
            pca: pca.as_ref().map(ModelFile::pca_of),
            matrix: Some(MatrixData::from_matrix(m.as_matrix())),
            weights: None,
            bases: None,
            metadata: placeholder_metadata(settings, &raw),
        };
        (model, trace)
    };

    let loaded = model.load()?;
    let dense = loaded.dense.as_ref().expect("every model kind has a dense form");
    let report = margins_for(dense, loaded.pca.as_ref(), &pre, &r, tau, a.epsilon, 1)?;
    model.metadata.margins = MarginSummary::from(&report);
    model.metadata.training = TrainingSummary {
        iterations: trace.iterations,
        converged: trace.converged,
        initial_objective: trace.initial_objective,
        final_objective: trace.final_objective(),
    };

    write_file(&a.out, &model.to_json())?;
    write_file(&trace_path(a), &trace.to_csv())?;
    emit(
        out,
        &format!(
            "method: {}\niterations: {}\nconverged: {}\nobjective: {} -> {}\ntau: {}\nlambda: {}\nmean margin: {}\nmodel: {}\n",
            method.name(),
            trace.iterations,
            trace.converged,
            trace.initial_objective,
            trace.final_objective(),
            tau,
            lambda,
            report.mean,
            a.out.display()
        ),
    )
}

fn placeholder_metadata(config: TrainSettings, raw: &Dataset) -> Metadata {
    Metadata {
        config,
        dataset: Fingerprint::of(raw),
        margins: MarginSummary {
            triplets: 0,
            mean: 0.0,
            median: 0.0,
            min: 0.0,
            max: 0.0,
            tau: 0.0,
            above_tau: 0,
            wrong_side: 0,
        },
        training: TrainingSummary { iterations: 0, converged: false, initial_objective: 0.0, final_objective: 0.0 },
    }
}

fn load_for_model(path: &Path, read: &ReadArgs, model: &LoadedModel) -> CliResult<Dataset> {
    let d = load_dataset(path, &read.options())?;
    model.check_dim(&d).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(d)
}

fn check_fingerprint(file: &ModelFile, raw: &Dataset) {
    if Fingerprint::of(raw).sha256 != file.metadata.dataset.sha256 {
        log::warn!("reference set differs from the dataset the model was trained on");
    }
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    check_count("k", a.k)?;
    let file = read_model(&a.model)?;
    let model = file.load()?;
    let train_raw = load_for_model(&a.train, &a.read, &model)?;
    check_fingerprint(&file, &train_raw);
    let test_raw = match &a.test {
        Some(p) => load_for_model(p, &a.read, &model)?,
        None => train_raw.clone(),
    };
    let train = model.reduce(&model.preprocess(&train_raw)?)?;
    let test = model.reduce(&model.preprocess(&test_raw)?)?;
    if a.k > train.n() {
        return Err(CliError::Data(format!("k = {} exceeds the {} reference instances", a.k, train.n())));
    }
    let predicted = knn_predict(model.metric.as_ref(), &train, test.instances(), a.k)?;
    let acc = certmetric::eval::accuracy(&predicted, test.labels());
    if let Some(path) = &a.out {
        let mut csv = String::from("index,label,predicted\n");
        for (i, (l, p)) in test.labels().iter().zip(&predicted).enumerate() {
            csv.push_str(&format!("{i},{l},{p}\n"));
        }
        write_file(path, &csv)?;
    }
    emit(out, &format!("instances: {}\nk: {}\naccuracy: {}\n", test.n(), a.k, acc))
}

fn margin(a: &MarginArgs, out: &mut dyn Write) -> CliResult<()> {
    check_count("bins", a.bins)?;
    check_nonneg("b-const", a.b_const)?;
    check_fraction("delta", a.delta)?;
    if let Some(t) = a.tau {
        check_nonneg("tau", t)?;
    }
    let file = read_model(&a.model)?;
    let model = file.load()?;
    let cfg = &file.metadata.config;
    let kt = a.k_targets.unwrap_or(cfg.k_targets);
    let ki = a.k_impostors.unwrap_or(cfg.k_impostors);
    check_count("k-targets", kt)?;
    check_count("k-impostors", ki)?;
    let raw = load_for_model(&a.data, &a.read, &model)?;
    let pre = model.preprocess(&raw)?;
    let reduced = model.reduce(&pre)?;
    let (_, r) = triplets::build(&reduced, kt, ki)?;
    let tau = a.tau.unwrap_or(cfg.tau);
    let dense = model.dense.as_ref().expect("every model kind has a dense form");
    let report = margins_for(dense, model.pca.as_ref(), &pre, &r, tau, cfg.epsilon, a.bins)?;

    let mut text = report.summary_text();
    if tau > 0.0 {
        let b = generalization_bound(pre.n(), pre.p(), pre.classes().len(), tau, report.n_hat, r.len(), a.b_const, a.delta)?;
        text.push_str(&format!(
            "bound: {}\nlog K: {}\nB: {}\ndelta: {}\nvacuous: {}\n",
            b.bound, b.log_k, b.b_const, b.delta, b.vacuous
        ));
    } else {
        text.push_str("bound: not computed (tau = 0)\n");
    }
    text.push_str("histogram:\n");
    text.push_str(&report.histogram.to_text());
    if let Some(prefix) = &a.out_prefix {
        let with = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        write_file(&with(".margins.csv"), &report.margins_csv(&r))?;
        write_file(&with(".hist.csv"), &report.histogram.to_csv())?;
        write_file(&with(".summary.txt"), &text)?;
    }
    emit(out, &text)
}

fn noise_bench(a: &NoiseBenchArgs, out: &mut dyn Write) -> CliResult<()> {
    check_count("k", a.k)?;
    if a.snr.is_empty() || a.kind.is_empty() {
        return usage("--snr and --kind need at least one value");
    }
    if let Some(s) = a.snr.iter().find(|s| !s.is_finite()) {
        return usage(format!("SNR values must be finite, got {s}"));
    }
    let file = read_model(&a.model)?;
    let model = file.load()?;
    let train_raw = load_for_model(&a.train, &a.read, &model)?;
    check_fingerprint(&file, &train_raw);
    let test_raw = load_for_model(&a.test, &a.read, &model)?;
    let train = model.reduce(&model.preprocess(&train_raw)?)?;
    if a.k > train.n() {
        return Err(CliError::Data(format!("k = {} exceeds the {} reference instances", a.k, train.n())));
    }
    // noise is added after preprocessing, where features share a scale
    let test_pre = model.preprocess(&test_raw)?;
    let base = if a.augment_to > test_pre.n() { resample(&test_pre, a.augment_to, a.seed)? } else { test_pre };
    let target = base.n();
    let clean = knn_accuracy(model.metric.as_ref(), &train, &model.reduce(&base)?, a.k)?;

    let mut csv = String::from("snr_db,kind,accuracy\n");
    csv.push_str(&format!("inf,none,{clean}\n"));
    let mut cell = 0u64;
    for kind in &a.kind {
        for &snr in &a.snr {
            let spec = NoiseSpec { snr_db: snr, kind: kind.kind(), seed: certmetric::rng::child_seed(a.seed, cell) };
            cell += 1;
            let noisy = model.reduce(&add_noise(&base, &spec)?)?;
            let acc = knn_accuracy(model.metric.as_ref(), &train, &noisy, a.k)?;
            csv.push_str(&format!("{snr},{},{acc}\n", kind.name()));
        }
    }
    if let Some(path) = &a.out {
        write_file(path, &csv)?;
    }
    emit(out, &format!("test instances: {target}\n{csv}"))
}

fn search(a: &SearchArgs, out: &mut dyn Write) -> CliResult<()> {
    check_shared(&a.neighbors, &a.optimizer, &a.scml, a.method)?;
    check_count("trials", a.trials)?;
    check_count("k", a.k)?;
    if a.folds < 2 {
        return usage("--folds must be at least 2");
    }
    let raw = load_dataset(&a.data, &a.read.options())?;
    let (pre, _) = preprocess_with(&raw, a.preprocessing.into())?;
    let (kt, ki) = (a.neighbors.k_targets, a.neighbors.k_impostors);
    let robust = a.method.is_robust();
    let trainer: Box<dyn Trainer> = if a.method.is_scml() {
        let base = ScmlConfig {
            eta: a.scml.eta.unwrap_or(ScmlConfig::default().eta),
            tol: a.optimizer.tol,
            max_iter: a.optimizer.max_iter,
            ..ScmlConfig::default()
        };
        Box::new(ScmlTrainer {
            k_targets: kt,
            k_impostors: ki,
            k_bases: a.scml.k_bases.unwrap_or(DEFAULT_K_BASES),
            regions: a.scml.regions.unwrap_or(DEFAULT_REGIONS),
            robust,
            base,
        })
    } else {
        let base = LmnnConfig { tol: a.optimizer.tol, max_iter: a.optimizer.max_iter, ..LmnnConfig::default() };
        Box::new(LmnnTrainer { k_targets: kt, k_impostors: ki, robust, base })
    };
    let space = SearchSpace { n_samples: a.trials, folds: a.folds, k_neighbors: a.k, ..SearchSpace::default() };
    let result = random_search(&pre, &space, trainer.as_ref(), a.seed)?;
    let csv = result.to_csv();
    if let Some(path) = &a.out {
        write_file(path, &csv)?;
    }
    let best = &result.trials[result.best_index];
    let mut text = csv;
    text.push_str(&format!(
        "best trial: {}\nmu: {}\ntau: {}\nlambda: {}\nmean accuracy: {}\n",
        result.best_index,
        best.params.mu,
        best.params.tau,
        best.params.lambda,
        best.mean_accuracy
    ));
    emit(out, &text)
}

fn toy(a: &ToyArgs, out: &mut dyn Write) -> CliResult<()> {
    let which = match a.kind {
        ToyKind::TwoGaussians => Toy::TwoGaussians,
        ToyKind::TwoBands => Toy::TwoBands,
        ToyKind::Multicollinear => Toy::Multicollinear,
        ToyKind::Blobs => {
            check_count("dim", a.dim)?;
            Toy::overlapping_blobs(a.dim)
        }
    };
    let mut spec = ToySpec::new(which, a.seed);
    if let Some(n) = a.n_per_class {
        if n < 2 {
            return usage("--n-per-class must be at least 2");
        }
        spec.n_per_class = n;
    }
    spec.preprocessing = a.preprocessing.into();
    let d = toygen::generate(&spec)?;
    save_dataset(&a.out, &d, a.out_format)?;
    emit(out, &format!("instances: {}\nfeatures: {}\nwritten: {}\n", d.n(), d.p(), a.out.display()))
}
