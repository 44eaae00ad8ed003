//! Target-neighbor pairs and impostor triplets under the Euclidean distance.
//!
//! Each instance is paired with its `k_targets` nearest same-class neighbors.
//! Every pair `(i, j)` then spawns one triplet per impostor `l` among the
//! `k_impostors` nearest different-class instances of `i`. Both lists are
//! computed once and stay fixed during training. Distance ties resolve by
//! ascending index, so output order is fully determined by the input.

use crate::data::Dataset;
use crate::error::{invalid, Result};

/// Same-class pairs `(i, j)`, `j` a target neighbor of `i`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SimilarPairSet {
    pub pairs: Vec<(usize, usize)>,
}

impl SimilarPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Triplets `(i, j, l)`: `j` a target neighbor and `l` an impostor of `i`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletSet {
    pub triplets: Vec<(usize, usize, usize)>,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

fn sq_dist(x: &[f64], p: usize, a: usize, b: usize) -> f64 {
    let (ra, rb) = (&x[a * p..(a + 1) * p], &x[b * p..(b + 1) * p]);
    ra.iter().zip(rb).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// The `k` candidates closest to `i`, ties broken by index.
fn nearest(x: &[f64], p: usize, i: usize, candidates: impl Iterator<Item = usize>, k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates.map(|c| (sq_dist(x, p, i, c), c)).collect();
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored.into_iter().map(|(_, c)| c).collect()
}

/// For each instance, its `min(k_targets, class size − 1)` Euclidean-nearest
/// same-class neighbors. Singleton classes contribute no pairs.
pub fn generate_similar_pairs(data: &Dataset, k_targets: usize) -> Result<SimilarPairSet> {
    if k_targets == 0 {
        return invalid("k_targets must be positive");
    }
    let (n, p) = (data.n(), data.p());
    let x = data.row_major();
    let labels = data.labels();
    let mut pairs = Vec::with_capacity(n * k_targets);
    let mut singletons = 0usize;
    for i in 0..n {
        let same = (0..n).filter(|&j| j != i && labels[j] == labels[i]);
        let targets = nearest(&x, p, i, same, k_targets);
        if targets.is_empty() {
            singletons += 1;
        }
        pairs.extend(targets.into_iter().map(|j| (i, j)));
    }
    if singletons > 0 {
        log::warn!("{singletons} instance(s) have no same-class neighbor and contribute no pairs");
    }
    Ok(SimilarPairSet { pairs })
}

/// One triplet per pair `(i, j)` and impostor `l` among the `k_impostors`
/// nearest different-class instances of `i`.
pub fn generate_triplets(data: &Dataset, pairs: &SimilarPairSet, k_impostors: usize) -> Result<TripletSet> {
    if k_impostors == 0 {
        return invalid("k_impostors must be positive");
    }
    let (n, p) = (data.n(), data.p());
    let labels = data.labels();
    if pairs.pairs.iter().any(|&(i, j)| i >= n || j >= n || i == j || labels[i] != labels[j]) {
        return invalid("similar-pair set is not valid for this dataset");
    }
    let x = data.row_major();
    let mut cache: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut triplets = Vec::with_capacity(pairs.len() * k_impostors);
    for &(i, j) in &pairs.pairs {
        let impostors = cache[i].get_or_insert_with(|| {
            let other = (0..n).filter(|&l| labels[l] != labels[i]);
            nearest(&x, p, i, other, k_impostors)
        });
        if impostors.is_empty() {
            return invalid(format!("instance {i} has no different-class instance to act as impostor"));
        }
        triplets.extend(impostors.iter().map(|&l| (i, j, l)));
    }
    Ok(TripletSet { triplets })
}

/// Pairs and triplets in one call.
pub fn build(data: &Dataset, k_targets: usize, k_impostors: usize) -> Result<(SimilarPairSet, TripletSet)> {
    let s = generate_similar_pairs(data, k_targets)?;
    let r = generate_triplets(data, &s, k_impostors)?;
    Ok((s, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Dataset {
        Dataset::from_rows(&[vec![0.0], vec![1.0], vec![3.0], vec![4.0]], vec![1, 1, 2, 2]).unwrap()
    }

    #[test]
    fn tiny_line_pairs() {
        let s = generate_similar_pairs(&line(), 1).unwrap();
        assert_eq!(s.pairs, vec![(0, 1), (1, 0), (2, 3), (3, 2)]);
    }

    #[test]
    fn tiny_line_triplets() {
        let d = line();
        let s = generate_similar_pairs(&d, 1).unwrap();
        let r = generate_triplets(&d, &s, 1).unwrap();
        assert_eq!(r.triplets, vec![(0, 1, 2), (1, 0, 2), (2, 3, 1), (3, 2, 1)]);
    }

    #[test]
    fn clamping_uses_every_candidate() {
        let d = line();
        let s = generate_similar_pairs(&d, 10).unwrap();
        assert_eq!(s.len(), 4);
        let r = generate_triplets(&d, &s, 10).unwrap();
        assert_eq!(r.len(), 8);
        for &(i, j, l) in &r.triplets {
            assert_eq!(d.labels()[i], d.labels()[j]);
            assert_ne!(d.labels()[i], d.labels()[l]);
        }
    }

    #[test]
    fn ties_break_by_index() {
        let d = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![-1.0], vec![5.0]], vec![1, 1, 1, 2]).unwrap();
        let s = generate_similar_pairs(&d, 1).unwrap();
        assert_eq!(s.pairs[0], (0, 1));
    }

    #[test]
    fn singleton_class_contributes_nothing() {
        let d = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![3.0]], vec![1, 1, 2]).unwrap();
        let s = generate_similar_pairs(&d, 2).unwrap();
        assert_eq!(s.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn single_class_has_no_impostors() {
        let d = Dataset::from_rows(&[vec![0.0], vec![1.0]], vec![1, 1]).unwrap();
        let s = generate_similar_pairs(&d, 1).unwrap();
        assert!(generate_triplets(&d, &s, 1).is_err());
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(generate_similar_pairs(&line(), 0).is_err());
        let s = generate_similar_pairs(&line(), 1).unwrap();
        assert!(generate_triplets(&line(), &s, 0).is_err());
    }
}
