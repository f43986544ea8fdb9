//! Query embedding and the per-panorama descriptor hierarchy.
//!
//! A panorama is cut into `2^(L−1)` leaf windows. Every level `ℓ` has its own
//! aggregator (GeM pooling followed by a bias-free linear map); each leaf is
//! pooled by every level's aggregator, lifted with `exp_0`, and the leaves of
//! each contiguous index group are merged with the Einstein midpoint. Level 1
//! ends up with a single representative point, level `L` with one point per
//! leaf.

use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hypgeo::{self, BallConfig, BallPoint, TangentVec};

/// Panorama width in units of the query width.
pub const PANORAMA_RATIO: usize = 8;
pub const MIN_LEVELS: usize = 2;
pub const MAX_LEVELS: usize = 8;
pub const DEFAULT_GEM_P: f64 = 3.0;

/// Spatial grid of channel vectors, stored row-major as `(height, width, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("feature grid dimensions must be >= 1"));
        }
        if values.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "feature grid {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature grid has non-finite entries"));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.channels)
    }
}

/// Generalised-mean pooling over the spatial cells, one value per channel.
pub fn gem_pool(grid: &FeatureGrid, p: f64) -> Result<Vec<f64>> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::invalid(format!(
            "GeM exponent must be >= 1, got {p}"
        )));
    }
    let integral = p.fract() == 0.0 && p <= i32::MAX as f64;
    if !integral && grid.values.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid(
            "GeM with a fractional exponent requires nonnegative features",
        ));
    }
    let n = (grid.height * grid.width) as f64;
    let mut acc = vec![0.0; grid.channels];
    for cell in grid.cells() {
        for (a, &v) in acc.iter_mut().zip(cell) {
            *a += if integral {
                v.powi(p as i32)
            } else {
                v.powf(p)
            };
        }
    }
    Ok(acc
        .into_iter()
        .map(|s| {
            let m = s / n;
            if p == 1.0 {
                m
            } else {
                m.signum() * m.abs().powf(1.0 / p)
            }
        })
        .collect())
}

/// Dense `out_dim × in_dim` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    out_dim: usize,
    in_dim: usize,
    data: Vec<f64>,
}

impl Projection {
    pub fn new(out_dim: usize, in_dim: usize, data: Vec<f64>) -> Result<Self> {
        if out_dim == 0 || in_dim == 0 || data.len() != out_dim * in_dim {
            return Err(Error::config(
                "projection matrix shape does not match its data",
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("projection matrix has non-finite entries"));
        }
        Ok(Self {
            out_dim,
            in_dim,
            data,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        (0..dim).for_each(|i| data[i * dim + i] = 1.0);
        Self {
            out_dim: dim,
            in_dim: dim,
            data,
        }
    }

    /// `out_dim × in_dim` matrix with orthonormal rows or columns (whichever
    /// is the shorter side), from the QR factors of a seeded Gaussian matrix.
    pub fn seeded_orthonormal(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tall = out_dim.max(in_dim);
        let short = out_dim.min(in_dim);
        let g = DMatrix::<f64>::from_fn(tall, short, |_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        let m = if out_dim >= in_dim { q } else { q.transpose() };
        let data = (0..out_dim)
            .flat_map(|r| (0..in_dim).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)])
            .collect();
        Self {
            out_dim,
            in_dim,
            data,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.in_dim {
            return Err(Error::config(format!(
                "projection expects {} inputs, got {}",
                self.in_dim,
                v.len()
            )));
        }
        Ok(self
            .data
            .chunks_exact(self.in_dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// GeM exponent plus linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregator {
    pub p: f64,
    pub projection: Projection,
}

impl Aggregator {
    pub fn aggregate(&self, grid: &FeatureGrid) -> Result<Vec<f64>> {
        if grid.channels != self.projection.in_dim {
            return Err(Error::config(format!(
                "aggregator expects {} channels, grid has {}",
                self.projection.in_dim, grid.channels
            )));
        }
        self.projection.apply(&gem_pool(grid, self.p)?)
    }
}

/// Which aggregator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Query,
    /// 1-based hierarchy level.
    Level(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolingConfig {
    query: Aggregator,
    levels: Vec<Aggregator>,
}

impl PoolingConfig {
    pub fn new(query: Aggregator, levels: Vec<Aggregator>) -> Result<Self> {
        if !(MIN_LEVELS..=MAX_LEVELS).contains(&levels.len()) {
            return Err(Error::config(format!(
                "need between {MIN_LEVELS} and {MAX_LEVELS} level aggregators, got {}",
                levels.len()
            )));
        }
        let shape = (query.projection.out_dim, query.projection.in_dim);
        for agg in levels.iter().chain(std::iter::once(&query)) {
            if (agg.projection.out_dim, agg.projection.in_dim) != shape {
                return Err(Error::config("aggregators disagree on projection shape"));
            }
            if !(agg.p.is_finite() && agg.p >= 1.0) {
                return Err(Error::config(format!(
                    "GeM exponent must be >= 1, got {}",
                    agg.p
                )));
            }
        }
        Ok(Self { query, levels })
    }

    /// GeM `p = 3` everywhere; identity maps when `channels == dim`, otherwise
    /// one seeded orthonormal map per branch.
    pub fn default_for(channels: usize, dim: usize, levels: usize, seed: u64) -> Result<Self> {
        let make = |branch: u64| Aggregator {
            p: DEFAULT_GEM_P,
            projection: if channels == dim {
                Projection::identity(dim)
            } else {
                Projection::seeded_orthonormal(dim, channels, seed.wrapping_add(branch))
            },
        };
        Self::new(make(0), (1..=levels as u64).map(make).collect())
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn channels(&self) -> usize {
        self.query.projection.in_dim
    }

    pub fn dim(&self) -> usize {
        self.query.projection.out_dim
    }

    pub fn aggregator(&self, branch: Branch) -> Result<&Aggregator> {
        match branch {
            Branch::Query => Ok(&self.query),
            Branch::Level(l) if (1..=self.levels.len()).contains(&l) => Ok(&self.levels[l - 1]),
            Branch::Level(l) => Err(Error::config(format!("no aggregator for level {l}"))),
        }
    }
}

/// Linear projection of a pooled vector for the given branch.
pub fn project_desc(v: &[f64], branch: Branch, cfg: &PoolingConfig) -> Result<TangentVec> {
    TangentVec::new(cfg.aggregator(branch)?.projection.apply(v)?)
}

/// Horizontal extent measured in query-width units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowLayout {
    levels: usize,
    cyclic: bool,
    windows: Vec<Vec<Window>>,
}

impl WindowLayout {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn leaf_count(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn cyclic(&self) -> bool {
        self.cyclic
    }

    pub fn panorama_ratio(&self) -> usize {
        PANORAMA_RATIO
    }

    /// Windows of 1-based level `level`.
    pub fn level(&self, level: usize) -> &[Window] {
        &self.windows[level - 1]
    }

    pub fn leaves(&self) -> &[Window] {
        &self.windows[self.levels - 1]
    }
}

/// Level `ℓ` holds `2^(ℓ−1)` windows of width `8/2^(ℓ−1)` query widths. Leaf
/// windows are never narrower than one query width; past `L = 4` they overlap.
/// Cyclic layouts space leaves evenly around the full 360°, non-cyclic ones
/// fit the last leaf flush with the right edge.
pub fn window_layout(levels: usize, cyclic: bool) -> Result<WindowLayout> {
    if !(MIN_LEVELS..=MAX_LEVELS).contains(&levels) {
        return Err(Error::config(format!(
            "levels must lie in {MIN_LEVELS}..={MAX_LEVELS}, got {levels}"
        )));
    }
    let pano = PANORAMA_RATIO as f64;
    let mut windows = Vec::with_capacity(levels);
    for l in 1..=levels {
        let n = 1usize << (l - 1);
        let nominal = pano / n as f64;
        let row = if l < levels {
            (0..n)
                .map(|k| Window {
                    start: nominal * k as f64,
                    width: nominal,
                })
                .collect()
        } else {
            let width = nominal.max(1.0);
            let stride = if cyclic || n == 1 {
                nominal
            } else {
                (pano - width) / (n - 1) as f64
            };
            (0..n)
                .map(|k| Window {
                    start: stride * k as f64,
                    width,
                })
                .collect()
        };
        windows.push(row);
    }
    Ok(WindowLayout {
        levels,
        cyclic,
        windows,
    })
}

/// 1-based leaf indices merged into group `k` of level `level`.
pub fn group_indices(level: usize, k: usize, levels: usize) -> Result<RangeInclusive<usize>> {
    if !(1..=levels).contains(&level) || levels > MAX_LEVELS {
        return Err(Error::invalid(format!(
            "level {level} outside 1..={levels}"
        )));
    }
    if !(1..=(1usize << (level - 1))).contains(&k) {
        return Err(Error::invalid(format!(
            "group {k} does not exist at level {level}"
        )));
    }
    let size = 1usize << (levels - level);
    Ok((k - 1) * size + 1..=k * size)
}

/// Per-level hyperbolic descriptors of one panorama.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTree {
    levels: Vec<Vec<BallPoint>>,
    leaf_euclidean: Option<Vec<TangentVec>>,
}

impl DescriptorTree {
    /// Assemble a tree from explicit per-level points.
    pub fn from_levels(
        levels: Vec<Vec<BallPoint>>,
        leaf_euclidean: Option<Vec<TangentVec>>,
    ) -> Result<Self> {
        if levels.is_empty() || levels.len() > MAX_LEVELS {
            return Err(Error::invalid("tree must have between 1 and 8 levels"));
        }
        let cfg = levels[0]
            .first()
            .map(|p| *p.config())
            .ok_or_else(|| Error::invalid("tree level 1 is empty"))?;
        for (i, row) in levels.iter().enumerate() {
            if row.len() != 1 << i {
                return Err(Error::invalid(format!(
                    "level {} needs {} points, got {}",
                    i + 1,
                    1 << i,
                    row.len()
                )));
            }
            if row.iter().any(|p| *p.config() != cfg) {
                return Err(Error::config("tree mixes ball configurations"));
            }
        }
        if let Some(leaf) = &leaf_euclidean {
            let n = levels.last().map_or(0, Vec::len);
            if leaf.len() != n || leaf.iter().any(|v| v.coords().len() != cfg.dim()) {
                return Err(Error::invalid(
                    "leaf descriptors do not match the leaf level",
                ));
            }
        }
        Ok(Self {
            levels,
            leaf_euclidean,
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn config(&self) -> &BallConfig {
        self.levels[0][0].config()
    }

    /// Points of 1-based level `level`.
    pub fn level(&self, level: usize) -> &[BallPoint] {
        &self.levels[level - 1]
    }

    pub fn root(&self) -> &BallPoint {
        &self.levels[0][0]
    }

    pub fn leaves(&self) -> &[BallPoint] {
        self.levels.last().expect("tree has at least one level")
    }

    /// Euclidean leaf descriptors before `exp_0`, when retained.
    pub fn leaf_euclidean(&self) -> Option<&[TangentVec]> {
        self.leaf_euclidean.as_deref()
    }

    pub fn points(&self) -> impl Iterator<Item = &BallPoint> {
        self.levels.iter().flatten()
    }

    pub(crate) fn points_mut(&mut self) -> impl Iterator<Item = &mut BallPoint> {
        self.levels.iter_mut().flatten()
    }

    pub(crate) fn into_levels(self) -> Vec<Vec<BallPoint>> {
        self.levels
    }
}

/// Ball, aggregators and layout that together turn grids into descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    ball: BallConfig,
    pooling: PoolingConfig,
    layout: WindowLayout,
}

impl Encoder {
    pub fn new(ball: BallConfig, pooling: PoolingConfig, layout: WindowLayout) -> Result<Self> {
        if pooling.dim() != ball.dim() {
            return Err(Error::config(format!(
                "descriptor dim {} does not match ball dim {}",
                pooling.dim(),
                ball.dim()
            )));
        }
        if pooling.levels() != layout.levels() {
            return Err(Error::config(
                "pooling and layout disagree on the number of levels",
            ));
        }
        Ok(Self {
            ball,
            pooling,
            layout,
        })
    }

    /// Default encoder: `c` as given, identity/orthonormal projections, cyclic layout.
    pub fn with_defaults(
        curvature: f64,
        channels: usize,
        dim: usize,
        levels: usize,
    ) -> Result<Self> {
        Self::new(
            BallConfig::new(curvature, dim)?,
            PoolingConfig::default_for(channels, dim, levels, 0x5eed)?,
            window_layout(levels, true)?,
        )
    }

    pub fn ball(&self) -> &BallConfig {
        &self.ball
    }

    pub fn pooling(&self) -> &PoolingConfig {
        &self.pooling
    }

    pub fn layout(&self) -> &WindowLayout {
        &self.layout
    }

    pub fn levels(&self) -> usize {
        self.layout.levels()
    }

    /// Euclidean descriptor `Linear(GeM(grid))` for one branch.
    pub fn describe(&self, grid: &FeatureGrid, branch: Branch) -> Result<TangentVec> {
        let agg = self.pooling.aggregator(branch)?;
        if grid.channels() != self.pooling.channels() {
            return Err(Error::config(format!(
                "grid has {} channels, encoder expects {}",
                grid.channels(),
                self.pooling.channels()
            )));
        }
        project_desc(&gem_pool(grid, agg.p)?, branch, &self.pooling)
    }

    /// `h_q = exp_0(Linear_q(GeM_q(grid)))`.
    pub fn embed_query(&self, grid: &FeatureGrid) -> Result<BallPoint> {
        hypgeo::exp0(&self.describe(grid, Branch::Query)?, self.ball)
    }

    /// Run the hierarchical aggregation over `2^(L−1)` leaf grids (left to right).
    pub fn build_tree(&self, leaf_grids: &[FeatureGrid]) -> Result<DescriptorTree> {
        let levels = self.levels();
        let leaf_count = self.layout.leaf_count();
        if leaf_grids.len() != leaf_count {
            return Err(Error::invalid(format!(
                "expected {leaf_count} leaf grids, got {}",
                leaf_grids.len()
            )));
        }
        let mut tree = Vec::with_capacity(levels);
        let mut leaf_euclidean = Vec::new();
        for l in 1..=levels {
            let descs = leaf_grids
                .iter()
                .map(|g| self.describe(g, Branch::Level(l)))
                .collect::<Result<Vec<_>>>()?;
            let lifted = descs
                .iter()
                .map(|d| hypgeo::exp0(d, self.ball))
                .collect::<Result<Vec<_>>>()?;
            let row = (1..=1usize << (l - 1))
                .map(|k| {
                    let group = group_indices(l, k, levels)?;
                    hypgeo::einstein_midpoint(&lifted[group.start() - 1..*group.end()])
                })
                .collect::<Result<Vec<_>>>()?;
            tree.push(row);
            if l == levels {
                leaf_euclidean = descs;
            }
        }
        DescriptorTree::from_levels(tree, Some(leaf_euclidean))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(vals: &[f64]) -> FeatureGrid {
        FeatureGrid::new(1, vals.len(), 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn gem_examples() {
        let g = FeatureGrid::filled(2, 3, 4, 0.7).unwrap();
        for p in [1.0, 2.5, 3.0, 10.0] {
            for v in gem_pool(&g, p).unwrap() {
                assert!((v - 0.7).abs() < 1e-12);
            }
        }
        assert_eq!(gem_pool(&grid1(&[1.0, 2.0, 3.0]), 1.0).unwrap(), vec![2.0]);
        let v = gem_pool(&grid1(&[1.0, 2.0, 3.0]), 3.0).unwrap()[0];
        assert!((v - 12f64.cbrt()).abs() < 1e-12);
        assert!((v - 2.289428).abs() < 1e-6);
    }

    #[test]
    fn gem_rejects_negative_with_fractional_p() {
        let g = grid1(&[1.0, -2.0]);
        assert!(matches!(gem_pool(&g, 2.5), Err(Error::InvalidInput(_))));
        assert!(gem_pool(&g, 3.0).is_ok());
        assert!(gem_pool(&g, 0.5).is_err());
    }

    #[test]
    fn gem_is_nondecreasing_in_p() {
        let g = FeatureGrid::new(2, 2, 2, vec![0.1, 2.0, 0.5, 0.3, 1.5, 0.0, 0.9, 1.1]).unwrap();
        let rows: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 10.0]
            .iter()
            .map(|&p| gem_pool(&g, p).unwrap())
            .collect();
        for w in rows.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!(a <= b);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let cfg = PoolingConfig::default_for(3, 3, 2, 1).unwrap();
        let v = [0.5, -1.0, 2.0];
        assert_eq!(project_desc(&v, Branch::Query, &cfg).unwrap().coords(), &v);
        assert_eq!(
            project_desc(&[0.0; 3], Branch::Level(2), &cfg)
                .unwrap()
                .coords(),
            &[0.0; 3]
        );
        let double =
            Projection::new(3, 3, vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(double.apply(&v).unwrap(), vec![1.0, -2.0, 4.0]);
        assert!(matches!(
            project_desc(&[1.0, 2.0], Branch::Query, &cfg),
            Err(Error::Config(_))
        ));
        assert!(cfg.aggregator(Branch::Level(3)).is_err());
    }

    #[test]
    fn orthonormal_projection_preserves_norms_where_expected() {
        // Tall: orthonormal columns, so ‖Mv‖ = ‖v‖.
        let tall = Projection::seeded_orthonormal(6, 3, 9);
        let v = [0.3, -0.2, 1.1];
        let n = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((n(&tall.apply(&v).unwrap()) - n(&v)).abs() < 1e-12);
        // Wide: orthonormal rows, so M·Mᵀ = I.
        let wide = Projection::seeded_orthonormal(2, 5, 9);
        for i in 0..2 {
            for j in 0..2 {
                let r: f64 = (0..5)
                    .map(|k| wide.data[i * 5 + k] * wide.data[j * 5 + k])
                    .sum();
                assert!((r - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert_eq!(
            Projection::seeded_orthonormal(4, 3, 2),
            Projection::seeded_orthonormal(4, 3, 2)
        );
    }

    #[test]
    fn layout_examples() {
        let l4 = window_layout(4, true).unwrap();
        assert_eq!(l4.leaf_count(), 8);
        for (k, w) in l4.leaves().iter().enumerate() {
            assert_eq!(w.start, k as f64);
            assert_eq!(w.width, 1.0);
        }
        let l5 = window_layout(5, true).unwrap();
        assert_eq!(l5.leaf_count(), 16);
        assert_eq!(l5.leaves()[1].start - l5.leaves()[0].start, 0.5);
        assert_eq!(l5.leaves()[15].start + l5.leaves()[15].width, 8.5);
        assert_eq!(l5.level(4).len(), 8);
        assert_eq!(l5.level(4)[0].width, 1.0);
        let l2 = window_layout(2, false).unwrap();
        assert_eq!(l2.level(2).len(), 2);
        assert!(l2.level(2).iter().all(|w| w.width == 4.0));
        let l5flat = window_layout(5, false).unwrap();
        let last = l5flat.leaves()[15];
        assert!((last.start + last.width - 8.0).abs() < 1e-12);
        assert!(window_layout(1, true).is_err());
        assert!(window_layout(9, true).is_err());
    }

    #[test]
    fn group_examples() {
        assert_eq!(group_indices(5, 7, 5).unwrap(), 7..=7);
        assert_eq!(group_indices(1, 1, 5).unwrap(), 1..=16);
        assert_eq!(group_indices(3, 2, 5).unwrap(), 5..=8);
        assert!(group_indices(3, 5, 5).is_err());
        assert!(group_indices(0, 1, 5).is_err());
        assert!(group_indices(6, 1, 5).is_err());
    }

    #[test]
    fn groups_partition_the_leaves() {
        for levels in 2..=8 {
            for l in 1..=levels {
                let mut seen = vec![0u8; 1 << (levels - 1)];
                for k in 1..=1usize << (l - 1) {
                    for j in group_indices(l, k, levels).unwrap() {
                        seen[j - 1] += 1;
                    }
                }
                assert!(seen.iter().all(|&s| s == 1));
            }
        }
    }

    fn encoder(levels: usize) -> Encoder {
        Encoder::with_defaults(1.0, 3, 3, levels).unwrap()
    }

    #[test]
    fn zero_grid_embeds_at_origin() {
        let e = encoder(2);
        let h = e
            .embed_query(&FeatureGrid::filled(2, 2, 3, 0.0).unwrap())
            .unwrap();
        assert_eq!(h.norm(), 0.0);
    }

    #[test]
    fn identical_leaves_give_flat_levels() {
        let e = encoder(3);
        let g = FeatureGrid::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.3, 0.1, 0.2]).unwrap();
        let tree = e.build_tree(&vec![g.clone(); 4]).unwrap();
        let leaf1 = hypgeo::exp0(&e.describe(&g, Branch::Level(1)).unwrap(), *e.ball()).unwrap();
        for (a, b) in tree.root().coords().iter().zip(leaf1.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
        for l in 2..=3 {
            let row = tree.level(l);
            assert!(row.iter().all(|p| p == &row[0]));
        }
    }

    #[test]
    fn two_level_tree_matches_manual_composition() {
        let e = encoder(2);
        let g1 = FeatureGrid::new(1, 2, 3, vec![0.1, 0.5, 0.3, 0.2, 0.1, 0.4]).unwrap();
        let g2 = FeatureGrid::new(1, 2, 3, vec![0.6, 0.1, 0.0, 0.2, 0.3, 0.1]).unwrap();
        let tree = e.build_tree(&[g1.clone(), g2.clone()]).unwrap();
        let lift = |g: &FeatureGrid, l| {
            hypgeo::exp0(&e.describe(g, Branch::Level(l)).unwrap(), *e.ball()).unwrap()
        };
        let root = hypgeo::einstein_midpoint(&[lift(&g1, 1), lift(&g2, 1)]).unwrap();
        assert_eq!(tree.root(), &root);
        assert_eq!(tree.level(2), &[lift(&g1, 2), lift(&g2, 2)]);
        assert_eq!(
            tree.leaf_euclidean().unwrap()[1],
            e.describe(&g2, Branch::Level(2)).unwrap()
        );
    }

    #[test]
    fn wrong_leaf_count_is_rejected() {
        let e = encoder(3);
        let g = FeatureGrid::filled(1, 1, 3, 0.2).unwrap();
        assert!(matches!(
            e.build_tree(&vec![g; 3]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn encoder_checks_shapes() {
        let ball = BallConfig::new(1.0, 4).unwrap();
        let pooling = PoolingConfig::default_for(3, 3, 2, 0).unwrap();
        assert!(Encoder::new(ball, pooling.clone(), window_layout(2, true).unwrap()).is_err());
        let ball = BallConfig::new(1.0, 3).unwrap();
        assert!(Encoder::new(ball, pooling, window_layout(3, true).unwrap()).is_err());
        let e = encoder(2);
        assert!(e
            .embed_query(&FeatureGrid::filled(1, 1, 5, 0.1).unwrap())
            .is_err());
    }
}
