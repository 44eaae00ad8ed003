//! Margin histograms and the covering-number generalization bound.

use std::fmt::Write as _;

use crate::data::{Dataset, LinearMap};
use crate::error::{invalid, Result};
use crate::linalg::MetricMatrix;
use crate::triplets::TripletSet;

use super::{pca_objective, plain_objective, PerturbationSpec, Side};

/// Linear-interpolation percentile (`q` in `[0, 100]`), the same rule as
/// numpy's default.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return invalid("percentile of an empty sample");
    }
    if !(0.0..=100.0).contains(&q) {
        return invalid(format!("percentile must lie in [0, 100], got {q}"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` ascending bin edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[0, max(values)]`.
    pub fn from_values(values: &[f64], bins: usize) -> Histogram {
        let bins = bins.max(1);
        let top = values.iter().copied().fold(0.0, f64::max);
        let top = if top > 0.0 { top } else { 1.0 };
        let width = top / bins as f64;
        let edges = (0..=bins).map(|k| if k == bins { top } else { k as f64 * width }).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = ((v / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lower,upper,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.edges[k], self.edges[k + 1], c);
        }
        out
    }

    /// Bars scaled so the largest bin spans 50 characters.
    pub fn to_text(&self) -> String {
        let peak = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let mut out = String::new();
        for (k, &c) in self.counts.iter().enumerate() {
            let bar = "#".repeat((c * 50).div_ceil(peak));
            let _ = writeln!(out, "[{:>9.4}, {:>9.4}) {:>7} {}", self.edges[k], self.edges[k + 1], c, bar);
        }
        out
    }
}

/// Per-triplet adversarial margins and their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    /// Margin (not squared) per triplet; 0 for wrong-side triplets.
    pub margins: Vec<f64>,
    pub sides: Vec<Side>,
    pub histogram: Histogram,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub tau: f64,
    /// Triplets whose margin strictly exceeds `tau`.
    pub n_hat: usize,
    pub wrong_side: usize,
}

impl MarginReport {
    fn from_pairs(pairs: Vec<(f64, f64)>, tau: f64, bins: usize) -> Result<MarginReport> {
        let sides: Vec<Side> = pairs.iter().map(|&(d, _)| Side::of(d)).collect();
        let margins: Vec<f64> = pairs
            .iter()
            .zip(&sides)
            .map(|(&(_, r2), s)| if *s == Side::CorrectSide { r2.sqrt() } else { 0.0 })
            .collect();
        let n = margins.len() as f64;
        Ok(MarginReport {
            histogram: Histogram::from_values(&margins, bins),
            mean: margins.iter().sum::<f64>() / n,
            median: percentile(&margins, 50.0)?,
            min: margins.iter().copied().fold(f64::INFINITY, f64::min),
            max: margins.iter().copied().fold(0.0, f64::max),
            n_hat: margins.iter().filter(|&&r| r > tau).count(),
            wrong_side: sides.iter().filter(|&&s| s == Side::WrongSide).count(),
            tau,
            margins,
            sides,
        })
    }

    pub fn margins_csv(&self, r: &TripletSet) -> String {
        let mut out = String::from("i,j,l,margin,side\n");
        for (k, &(i, j, l)) in r.triplets.iter().enumerate() {
            let side = match self.sides[k] {
                Side::CorrectSide => "correct",
                Side::WrongSide => "wrong",
            };
            let _ = writeln!(out, "{i},{j},{l},{},{side}", self.margins[k]);
        }
        out
    }

    pub fn summary_text(&self) -> String {
        format!(
            "triplets: {}\nwrong side: {}\nmean margin: {}\nmedian margin: {}\nmin margin: {}\nmax margin: {}\nabove tau={}: {}\n",
            self.margins.len(),
            self.wrong_side,
            self.mean,
            self.median,
            self.min,
            self.max,
            self.tau,
            self.n_hat
        )
    }
}

pub fn margin_report(
    m: &MetricMatrix,
    data: &Dataset,
    r: &TripletSet,
    spec: &PerturbationSpec,
    bins: usize,
) -> Result<MarginReport> {
    let obj = plain_objective(m, data, r, spec)?;
    MarginReport::from_pairs(obj.margins(m.as_matrix(), spec.epsilon)?, spec.tau, bins)
}

/// Margins in the original space for a metric learned on `D x`.
pub fn margin_report_pca(
    m: &MetricMatrix,
    map: &LinearMap,
    data: &Dataset,
    r: &TripletSet,
    spec: &PerturbationSpec,
    bins: usize,
) -> Result<MarginReport> {
    let obj = pca_objective(m.dim(), map, data, None, r, spec)?;
    MarginReport::from_pairs(obj.margins(m.as_matrix(), spec.epsilon)?, spec.tau, bins)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub n_hat: usize,
    /// `ln K` with `K = classes · (1 + 2/τ)^p`.
    pub log_k: f64,
    /// Upper bound on the expected loss; `+∞` when `K` overflows.
    pub bound: f64,
    pub b_const: f64,
    pub delta: f64,
    /// The bound exceeds the loss ceiling `b_const` and says nothing.
    pub vacuous: bool,
}

/// `n̂/n³ + B·((n³ − n̂)/n³ + 3·√((2K ln 2 + 2 ln(1/δ))/n))`, evaluated with
/// `K` kept in log space.
#[allow(clippy::too_many_arguments)]
pub fn generalization_bound(
    n: usize,
    p: usize,
    classes: usize,
    tau: f64,
    n_hat: usize,
    n_triplets: usize,
    b_const: f64,
    delta: f64,
) -> Result<BoundReport> {
    if !(tau > 0.0 && tau.is_finite()) {
        return invalid(format!("tau must be positive, got {tau}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    if !(b_const >= 0.0 && b_const.is_finite()) {
        return invalid(format!("loss bound must be nonnegative, got {b_const}"));
    }
    if n == 0 || classes == 0 {
        return invalid("sample size and class count must be positive");
    }
    if n_hat > n_triplets {
        return invalid(format!("n_hat {n_hat} exceeds the number of triplets {n_triplets}"));
    }
    let log_k = (classes as f64).ln() + p as f64 * (2.0 / tau).ln_1p();
    let n3 = (n as f64).powi(3);
    let hat = n_hat as f64;
    // 2 K ln 2 overflows once ln K + ln(2 ln 2) passes ln(f64::MAX)
    let log_term = log_k + (2.0 * std::f64::consts::LN_2).ln();
    let bound = if log_term >= f64::MAX.ln() {
        f64::INFINITY
    } else {
        let k_term = log_term.exp();
        let root = ((k_term + 2.0 * (1.0 / delta).ln()) / n as f64).sqrt();
        hat / n3 + b_const * ((n3 - hat) / n3 + 3.0 * root)
    };
    Ok(BoundReport { n_hat, log_k, bound, b_const, delta, vacuous: !(bound <= b_const) })
}
