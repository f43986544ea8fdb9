//! Coarse-to-fine retrieval over a [`DatabaseIndex`].
//!
//! The coarse pass ranks every record by its root descriptor; the fine pass
//! computes, for each shortlisted record and each selected level, the minimum
//! distance over that level's sub-descriptors. Level-wise distances are
//! z-scored over the shortlist and fused with per-level weights.

use std::cmp::Ordering;

use super::{DatabaseIndex, PanoramaRecord};
use crate::error::{Error, Result};
use crate::hypgeo::{kernel, BallPoint};

pub const DEFAULT_ZSCORE_EPS: f64 = 1e-8;

/// Number of full-dimension distance evaluations spent on one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounter {
    evaluations: u64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.evaluations
    }

    fn add(&mut self, n: usize) {
        self.evaluations += n as u64;
    }
}

/// Named retrieval variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Root descriptor only.
    One,
    /// Root plus the level above the leaves.
    Balanced,
    /// Root plus the leaf level.
    Leaf,
    /// Exhaustive search over leaf descriptors.
    SlidingWindow,
}

impl Variant {
    /// Levels that must be stored for this variant on a depth-`depth` index.
    pub fn stored_levels(self, depth: usize) -> Vec<usize> {
        match self {
            Variant::One => vec![1],
            Variant::Balanced => vec![1, depth - 1],
            Variant::Leaf => vec![1, depth],
            Variant::SlidingWindow => vec![depth],
        }
    }

    /// Rescoring levels; empty for the root-only and exhaustive variants.
    pub fn rescore_levels(self, depth: usize) -> Vec<usize> {
        match self {
            Variant::One | Variant::SlidingWindow => vec![],
            Variant::Balanced => vec![depth - 1],
            Variant::Leaf => vec![depth],
        }
    }
}

fn check_weights(n_levels: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != n_levels + 1 {
        return Err(Error::config(format!(
            "expected {} weights, got {}",
            n_levels + 1,
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) || weights.iter().all(|&w| w == 0.0) {
        return Err(Error::config(
            "weights must be finite with at least one nonzero",
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    k_prime: usize,
    levels: Vec<usize>,
    weights: Vec<f64>,
    eps: f64,
    k: usize,
}

impl RetrievalConfig {
    /// `levels` are the rescoring levels (each in `2..=depth`); `weights[0]`
    /// belongs to level 1 and `weights[i + 1]` to `levels[i]`.
    pub fn new(
        k_prime: usize,
        levels: Vec<usize>,
        weights: Vec<f64>,
        k: usize,
        depth: usize,
    ) -> Result<Self> {
        if k == 0 || k > k_prime {
            return Err(Error::config(format!(
                "need 1 <= K <= K', got K={k}, K'={k_prime}"
            )));
        }
        if levels.iter().any(|l| !(2..=depth).contains(l)) {
            return Err(Error::config(format!(
                "rescoring levels must lie in 2..={depth}"
            )));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("rescoring levels must be strictly ascending"));
        }
        check_weights(levels.len(), &weights)?;
        Ok(Self {
            k_prime,
            levels,
            weights,
            eps: DEFAULT_ZSCORE_EPS,
            k,
        })
    }

    /// Uniform weights over `{1} ∪ levels`.
    pub fn uniform(k_prime: usize, levels: Vec<usize>, k: usize, depth: usize) -> Result<Self> {
        let w = vec![1.0; levels.len() + 1];
        Self::new(k_prime, levels, w, k, depth)
    }

    pub fn for_variant(variant: Variant, k_prime: usize, k: usize, depth: usize) -> Result<Self> {
        Self::uniform(k_prime, variant.rescore_levels(depth), k, depth)
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::config("z-score eps must be finite and >= 0"));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_weights(self.levels.len(), &weights)?;
        self.weights = weights;
        Ok(self)
    }

    pub fn k_prime(&self) -> usize {
        self.k_prime
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `{1} ∪ levels`, ascending.
    pub fn fused_levels(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(1).chain(self.levels.iter().copied())
    }
}

/// Shortlisted record with its per-level minimum distances, ordered as
/// [`RetrievalConfig::fused_levels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: u64,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResult {
    pub id: u64,
    /// 1-based.
    pub rank: usize,
    /// `(level, raw distance)`.
    pub distances: Vec<(usize, f64)>,
    /// `(level, z-score)`; empty for exhaustive results.
    pub normalized: Vec<(usize, f64)>,
    pub score: f64,
}

fn by_distance_then_id(a: &(u64, f64), b: &(u64, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Keep the `k` smallest under `cmp`, sorted.
fn top_k<T, F>(mut items: Vec<T>, k: usize, cmp: F) -> Vec<T>
where
    F: Fn(&T, &T) -> Ordering,
{
    if k == 0 {
        return Vec::new();
    }
    if k < items.len() {
        items.select_nth_unstable_by(k - 1, &cmp);
        items.truncate(k);
    }
    items.sort_by(cmp);
    items
}

fn check_query(index: &DatabaseIndex, q: &BallPoint) -> Result<()> {
    if q.config() != index.ball() {
        return Err(Error::config(
            "query was embedded under a different ball configuration",
        ));
    }
    Ok(())
}

fn require_level(index: &DatabaseIndex, level: usize) -> Result<()> {
    if !(1..=index.depth()).contains(&level) {
        return Err(Error::invalid(format!(
            "level {level} outside 1..={}",
            index.depth()
        )));
    }
    if !index.stored_levels().contains(level) {
        return Err(Error::config(format!(
            "level {level} is not stored in this index"
        )));
    }
    Ok(())
}

/// The `k_prime` records whose root is closest to `q`, ascending `(d₁, id)`.
pub fn coarse_search(
    index: &DatabaseIndex,
    q: &BallPoint,
    k_prime: usize,
    counter: &mut EvalCounter,
) -> Result<Vec<(u64, f64)>> {
    check_query(index, q)?;
    if index.is_empty() {
        return Ok(Vec::new());
    }
    require_level(index, 1)?;
    let c = index.ball().curvature();
    let all: Vec<(u64, f64)> = index
        .records()
        .iter()
        .map(|r| {
            (
                r.id(),
                kernel::dist(q.coords(), r.root().expect("level 1 stored"), c),
            )
        })
        .collect();
    counter.add(all.len());
    Ok(top_k(all, k_prime.min(index.len()), by_distance_then_id))
}

fn min_over_level(record: &PanoramaRecord, level: usize, q: &[f64], c: f64) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut n = 0;
    for sub in record.level(level).expect("level checked by caller") {
        best = best.min(kernel::dist(q, sub, c));
        n += 1;
    }
    (best, n)
}

/// `min_k d(q, h^(ℓ,k))` for one record.
pub fn level_min_distance(
    index: &DatabaseIndex,
    q: &BallPoint,
    record: &PanoramaRecord,
    level: usize,
    counter: &mut EvalCounter,
) -> Result<f64> {
    check_query(index, q)?;
    if level < 2 {
        return Err(Error::invalid("rescoring levels start at 2"));
    }
    require_level(index, level)?;
    let (d, n) = min_over_level(record, level, q.coords(), index.ball().curvature());
    counter.add(n);
    Ok(d)
}

/// Z-score each level over the candidate set and fuse with the config weights.
/// Output is sorted by fused score (descending), ties by ascending id, with
/// all candidates kept.
pub fn rescore(candidates: &[Candidate], cfg: &RetrievalConfig) -> Vec<ScoredResult> {
    let n = candidates.len();
    let levels: Vec<usize> = cfg.fused_levels().collect();
    let mut normalized: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(levels.len()); n];
    for (col, &level) in levels.iter().enumerate() {
        let mean = candidates.iter().map(|c| c.distances[col]).sum::<f64>() / n as f64;
        let var = candidates
            .iter()
            .map(|c| (c.distances[col] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let denom = var.sqrt() + cfg.eps;
        for (row, c) in normalized.iter_mut().zip(candidates) {
            let z = if denom > 0.0 {
                -(c.distances[col] - mean) / denom
            } else {
                0.0
            };
            row.push((level, z));
        }
    }
    let mut out: Vec<ScoredResult> = candidates
        .iter()
        .zip(normalized)
        .map(|(c, norm)| {
            let score = norm.iter().zip(&cfg.weights).map(|((_, z), w)| w * z).sum();
            ScoredResult {
                id: c.id,
                rank: 0,
                distances: levels
                    .iter()
                    .copied()
                    .zip(c.distances.iter().copied())
                    .collect(),
                normalized: norm,
                score,
            }
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    out.iter_mut().enumerate().for_each(|(i, r)| r.rank = i + 1);
    out
}

/// Coarse shortlist, per-level rescoring, fusion, truncation to `K`.
pub fn retrieve(
    index: &DatabaseIndex,
    q: &BallPoint,
    cfg: &RetrievalConfig,
    counter: &mut EvalCounter,
) -> Result<Vec<ScoredResult>> {
    for &l in cfg.levels() {
        require_level(index, l)?;
    }
    let shortlist = coarse_search(index, q, cfg.k_prime(), counter)?;
    let candidates = shortlist
        .into_iter()
        .map(|(id, d1)| {
            let record = index.record(id).expect("shortlisted id exists");
            let mut distances = Vec::with_capacity(cfg.levels().len() + 1);
            distances.push(d1);
            for &l in cfg.levels() {
                distances.push(level_min_distance(index, q, record, l, counter)?);
            }
            Ok(Candidate { id, distances })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = rescore(&candidates, cfg);
    out.truncate(cfg.k());
    Ok(out)
}

/// Rank every record by its closest leaf descriptor.
pub fn exhaustive_search(
    index: &DatabaseIndex,
    q: &BallPoint,
    k: usize,
    counter: &mut EvalCounter,
) -> Result<Vec<ScoredResult>> {
    check_query(index, q)?;
    if index.is_empty() {
        return Ok(Vec::new());
    }
    let leaf = index.depth();
    require_level(index, leaf)?;
    let c = index.ball().curvature();
    let mut all = Vec::with_capacity(index.len());
    for r in index.records() {
        let (d, n) = min_over_level(r, leaf, q.coords(), c);
        counter.add(n);
        all.push((r.id(), d));
    }
    Ok(top_k(all, k.min(index.len()), by_distance_then_id)
        .into_iter()
        .enumerate()
        .map(|(i, (id, d))| ScoredResult {
            id,
            rank: i + 1,
            distances: vec![(leaf, d)],
            normalized: Vec::new(),
            score: -d,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cands(d: &[f64]) -> Vec<Candidate> {
        d.iter()
            .enumerate()
            .map(|(i, &x)| Candidate {
                id: i as u64,
                distances: vec![x],
            })
            .collect()
    }

    #[test]
    fn zscore_of_one_two_three() {
        let cfg = RetrievalConfig::new(3, vec![], vec![1.0], 3, 5)
            .unwrap()
            .with_eps(0.0)
            .unwrap();
        let out = rescore(&cands(&[1.0, 2.0, 3.0]), &cfg);
        let z: Vec<f64> = out.iter().map(|r| r.normalized[0].1).collect();
        let expect = 1.5f64.sqrt();
        assert!((z[0] - expect).abs() < 1e-12);
        assert!(z[1].abs() < 1e-12);
        assert!((z[2] + expect).abs() < 1e-12);
        assert_eq!(out.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(
            out.iter().map(|r| r.rank).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn constant_level_contributes_nothing() {
        let cfg = RetrievalConfig::new(4, vec![], vec![1.0], 4, 5).unwrap();
        let out = rescore(&cands(&[0.7; 4]), &cfg);
        assert!(out.iter().all(|r| r.score == 0.0));
        assert_eq!(
            out.iter().map(|r| r.id).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
        let lone = RetrievalConfig::new(1, vec![], vec![1.0], 1, 5).unwrap();
        assert_eq!(rescore(&cands(&[3.0]), &lone)[0].score, 0.0);
    }

    #[test]
    fn single_level_ranking_follows_distance() {
        let cfg = RetrievalConfig::new(5, vec![5], vec![0.0, 1.0], 5, 5).unwrap();
        let cs: Vec<Candidate> = [
            (0, 9.0, 0.4),
            (1, 1.0, 0.1),
            (2, 2.0, 0.9),
            (3, 0.5, 0.3),
            (4, 5.0, 0.2),
        ]
        .iter()
        .map(|&(id, a, b)| Candidate {
            id,
            distances: vec![a, b],
        })
        .collect();
        let ids: Vec<u64> = rescore(&cs, &cfg).iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![1, 4, 3, 0, 2]);
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig::new(10, vec![], vec![1.0], 0, 5).is_err());
        assert!(RetrievalConfig::new(10, vec![], vec![1.0], 11, 5).is_err());
        assert!(RetrievalConfig::new(10, vec![1], vec![1.0, 1.0], 5, 5).is_err());
        assert!(RetrievalConfig::new(10, vec![6], vec![1.0, 1.0], 5, 5).is_err());
        assert!(RetrievalConfig::new(10, vec![4, 3], vec![1.0; 3], 5, 5).is_err());
        assert!(RetrievalConfig::new(10, vec![5], vec![1.0], 5, 5).is_err());
        assert!(RetrievalConfig::new(10, vec![5], vec![0.0, 0.0], 5, 5).is_err());
        assert!(RetrievalConfig::new(10, vec![5], vec![f64::NAN, 1.0], 5, 5).is_err());
        assert!(RetrievalConfig::new(10, vec![3, 5], vec![0.0, -1.0, 2.0], 5, 5).is_ok());
    }

    #[test]
    fn variant_levels() {
        assert_eq!(Variant::Balanced.stored_levels(5), vec![1, 4]);
        assert_eq!(Variant::Leaf.rescore_levels(5), vec![5]);
        assert!(Variant::One.rescore_levels(5).is_empty());
        assert_eq!(Variant::SlidingWindow.stored_levels(5), vec![5]);
    }

    #[test]
    fn top_k_orders_and_truncates() {
        let v = vec![(3u64, 1.0), (1, 0.5), (2, 1.0), (0, 2.0)];
        assert_eq!(
            top_k(v.clone(), 3, by_distance_then_id),
            vec![(1, 0.5), (2, 1.0), (3, 1.0)]
        );
        assert_eq!(top_k(v.clone(), 10, by_distance_then_id).len(), 4);
        assert!(top_k(v, 0, by_distance_then_id).is_empty());
    }
}
