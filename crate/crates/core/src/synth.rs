//! Seeded panorama-style feature grids with planted query matches.
//!
//! Each panorama is a cyclic strip of `8·w_f` feature columns. A column's
//! latent value per channel is the panorama's own signature (a common mean
//! plus a per-panorama deviation) plus a few low-frequency harmonics of the
//! azimuth, so neighbouring leaf windows look alike and far-apart ones do
//! not. Cells add independent detail, and features are the absolute value of
//! the latent scaled by `1/sqrt(C)`, which keeps them nonnegative and the
//! pooled descriptors at unit-order norms. Queries are leaf crops plus
//! `σ·|N(0, 1)|` per cell.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hierarchy::{window_layout, Encoder, FeatureGrid, PANORAMA_RATIO};
use crate::hypgeo::BallPoint;
use crate::index::{retrieve, DatabaseIndex, EvalCounter, Geotag, PanoramaInput, RetrievalConfig};

const SIGNATURE_MEAN: f64 = 1.0;
const SIGNATURE_SPREAD: f64 = 0.5;
const HARMONICS: usize = 3;
const HARMONIC_AMPLITUDE: f64 = 0.6;
const CELL_NOISE: f64 = 0.25;
const QUERY_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub n_panoramas: usize,
    pub channels: usize,
    pub grid_height: usize,
    /// Cells per query width.
    pub grid_width: usize,
    pub levels: usize,
    /// Scale of the nonnegative per-cell query noise, in feature units.
    pub noise: f64,
    pub n_queries: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_panoramas: 100,
            channels: 64,
            grid_height: 4,
            grid_width: 4,
            levels: 5,
            noise: 0.1,
            n_queries: 100,
            seed: 7,
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.grid_height == 0 || self.grid_width == 0 {
            return Err(Error::invalid("channels and grid size must be positive"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::invalid(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        if self.n_queries > 0 && self.n_panoramas == 0 {
            return Err(Error::invalid("queries need at least one panorama"));
        }
        window_layout(self.levels, true)?;
        let cols = PANORAMA_RATIO * self.grid_width;
        if !cols.is_multiple_of(1 << (self.levels - 1)) {
            return Err(Error::invalid(format!(
                "grid width {} cannot be split into {} leaf strides",
                self.grid_width,
                1 << (self.levels - 1)
            )));
        }
        Ok(())
    }

    pub fn leaf_count(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// Encoder matching this scene: `dim == channels`, so identity projections.
    pub fn encoder(&self, curvature: f64) -> Result<Encoder> {
        Encoder::with_defaults(curvature, self.channels, self.channels, self.levels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuery {
    pub grid: FeatureGrid,
    pub panorama: u64,
    /// 1-based leaf window the query was cropped from.
    pub leaf: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SceneSpec,
    pub panoramas: Vec<PanoramaInput>,
    pub queries: Vec<SyntheticQuery>,
}

/// Latent strip of one panorama: `rows × cols × channels` before `|·|`.
struct Strip {
    rows: usize,
    cols: usize,
    channels: usize,
    scale: f64,
    values: Vec<f64>,
}

impl Strip {
    fn generate(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Self {
        let c = spec.channels;
        let rows = spec.grid_height;
        let cols = PANORAMA_RATIO * spec.grid_width;
        let signature: Vec<f64> = (0..c)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                SIGNATURE_MEAN + SIGNATURE_SPREAD * z
            })
            .collect();
        // harmonics[h][ch] = (cos coeff, sin coeff)
        let harmonics: Vec<Vec<(f64, f64)>> = (1..=HARMONICS)
            .map(|h| {
                let amp = HARMONIC_AMPLITUDE / h as f64;
                (0..c)
                    .map(|_| {
                        let a: f64 = StandardNormal.sample(rng);
                        let b: f64 = StandardNormal.sample(rng);
                        (amp * a, amp * b)
                    })
                    .collect()
            })
            .collect();
        let cell = Normal::new(0.0, CELL_NOISE).expect("valid sigma");
        let mut values = Vec::with_capacity(rows * cols * c);
        for _ in 0..rows {
            for x in 0..cols {
                let theta = std::f64::consts::TAU * x as f64 / cols as f64;
                for ch in 0..c {
                    let mut v = signature[ch];
                    for (h, coeffs) in harmonics.iter().enumerate() {
                        let (a, b) = coeffs[ch];
                        let t = (h + 1) as f64 * theta;
                        v += a * t.cos() + b * t.sin();
                    }
                    values.push(v + cell.sample(rng));
                }
            }
        }
        Self {
            rows,
            cols,
            channels: c,
            scale: 1.0 / (c as f64).sqrt(),
            values,
        }
    }

    /// Columns `[start, start + width)` with wraparound.
    fn crop(&self, start: usize, width: usize) -> FeatureGrid {
        let mut out = Vec::with_capacity(self.rows * width * self.channels);
        for r in 0..self.rows {
            for dx in 0..width {
                let x = (start + dx) % self.cols;
                let at = (r * self.cols + x) * self.channels;
                out.extend(
                    self.values[at..at + self.channels]
                        .iter()
                        .map(|v| round_f32(self.scale * v.abs())),
                );
            }
        }
        FeatureGrid::new(self.rows, width, self.channels, out).expect("crop shape is consistent")
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn leaf_windows(spec: &SceneSpec) -> Vec<(usize, usize)> {
    let layout = window_layout(spec.levels, true).expect("validated");
    let w = spec.grid_width as f64;
    layout
        .leaves()
        .iter()
        .map(|win| {
            (
                (win.start * w).round() as usize,
                (win.width * w).round() as usize,
            )
        })
        .collect()
}

fn panorama_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id + 1);
    rng
}

fn geotag_for(id: u64) -> Geotag {
    Geotag {
        lat: 40.0 + (id / 100) as f64 * 1e-3,
        lon: -75.0 + (id % 100) as f64 * 1e-3,
    }
}

/// Deterministic dataset for `spec`; panoramas get ids `0..n_panoramas`.
pub fn generate_dataset(spec: &SceneSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let windows = leaf_windows(spec);
    let strips: Vec<Strip> = (0..spec.n_panoramas as u64)
        .into_par_iter()
        .map(|id| Strip::generate(spec, &mut panorama_rng(spec.seed, id)))
        .collect();
    let panoramas = strips
        .iter()
        .enumerate()
        .map(|(id, s)| PanoramaInput {
            id: id as u64,
            geotag: Some(geotag_for(id as u64)),
            leaf_grids: windows.iter().map(|&(x, w)| s.crop(x, w)).collect(),
        })
        .collect::<Vec<_>>();
    let queries = sample_queries(spec, &panoramas, spec.n_queries, spec.noise, 0);
    Ok(SyntheticDataset {
        spec: spec.clone(),
        panoramas,
        queries,
    })
}

/// Draw `count` queries from an existing dataset's panoramas. Distinct
/// `stream` values give independent query sets (e.g. a validation split).
pub fn generate_queries(
    dataset: &SyntheticDataset,
    count: usize,
    noise: f64,
    stream: u64,
) -> Result<Vec<SyntheticQuery>> {
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::invalid("noise must be finite and >= 0"));
    }
    if count > 0 && dataset.panoramas.is_empty() {
        return Err(Error::invalid("queries need at least one panorama"));
    }
    Ok(sample_queries(
        &dataset.spec,
        &dataset.panoramas,
        count,
        noise,
        stream,
    ))
}

fn sample_queries(
    spec: &SceneSpec,
    panoramas: &[PanoramaInput],
    count: usize,
    noise: f64,
    stream: u64,
) -> Vec<SyntheticQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ QUERY_SALT);
    rng.set_stream(stream);
    (0..count)
        .map(|_| {
            let p = rng.random_range(0..panoramas.len());
            let leaf = rng.random_range(0..spec.leaf_count());
            let src = &panoramas[p].leaf_grids[leaf];
            let values = src
                .values()
                .iter()
                .map(|&v| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    round_f32(v + noise * n.abs())
                })
                .collect();
            SyntheticQuery {
                grid: FeatureGrid::new(src.height(), src.width(), src.channels(), values)
                    .expect("same shape as source"),
                panorama: panoramas[p].id,
                leaf: leaf + 1,
            }
        })
        .collect()
}

/// Fraction of queries whose ground-truth id appears in the first `k` results.
pub fn evaluate_recall(results: &[Vec<u64>], truth: &[u64], k: usize) -> Result<f64> {
    if results.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} result lists but {} ground-truth ids",
            results.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("recall over zero queries"));
    }
    let hits = results
        .iter()
        .zip(truth)
        .filter(|(r, t)| r.iter().take(k).any(|id| id == *t))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Run `retrieve` for every query (in parallel) and return ranked ids plus
/// the summed evaluation count.
pub fn retrieve_all(
    index: &DatabaseIndex,
    queries: &[BallPoint],
    cfg: &RetrievalConfig,
) -> Result<(Vec<Vec<u64>>, u64)> {
    let out = queries
        .par_iter()
        .map(|q| {
            let mut counter = EvalCounter::new();
            let ids = retrieve(index, q, cfg, &mut counter)?
                .into_iter()
                .map(|r| r.id)
                .collect::<Vec<_>>();
            Ok((ids, counter.get()))
        })
        .collect::<Result<Vec<_>>>()?;
    let evals = out.iter().map(|(_, e)| e).sum();
    Ok((out.into_iter().map(|(ids, _)| ids).collect(), evals))
}

/// Pick the weight vector from the Cartesian product of `grid` (one factor
/// per fused level) that maximises recall@1 on the given queries. Ties keep
/// the earliest candidate in enumeration order.
pub fn grid_search_weights(
    index: &DatabaseIndex,
    queries: &[BallPoint],
    truth: &[u64],
    base: &RetrievalConfig,
    grid: &[f64],
) -> Result<(RetrievalConfig, f64)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty weight grid"));
    }
    let n = base.levels().len() + 1;
    let mut best: Option<(RetrievalConfig, f64)> = None;
    for code in 0..grid.len().pow(n as u32) {
        let mut rest = code;
        let weights: Vec<f64> = (0..n)
            .map(|_| {
                let w = grid[rest % grid.len()];
                rest /= grid.len();
                w
            })
            .collect();
        let Ok(cfg) = base.clone().with_weights(weights) else {
            continue;
        };
        let (ids, _) = retrieve_all(index, queries, &cfg)?;
        let r1 = evaluate_recall(&ids, truth, 1)?;
        if best.as_ref().is_none_or(|(_, b)| r1 > *b) {
            best = Some((cfg, r1));
        }
    }
    best.ok_or_else(|| Error::invalid("weight grid has no valid (nonzero) combination"))
}
