//! Immutable database of panorama descriptor trees.
//!
//! Only a configurable subset of hierarchy levels is kept per record (see
//! [`StoredLevels`]); that subset is what gets persisted and what determines
//! on-disk size. Coordinates are rounded to `f32` at build time so an index
//! loaded from disk is bit-identical to the one that was written.

mod format;
mod search;

pub use format::{
    decode_grids, decode_index, encode_grids, encode_index, load_index, persist_index,
    read_grid_file, write_grid_file, GRID_MAGIC, GRID_VERSION, INDEX_MAGIC, INDEX_VERSION,
};
pub use search::{
    coarse_search, exhaustive_search, level_min_distance, rescore, retrieve, Candidate,
    EvalCounter, RetrievalConfig, ScoredResult, Variant, DEFAULT_ZSCORE_EPS,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hierarchy::{
    window_layout, DescriptorTree, Encoder, FeatureGrid, WindowLayout, MAX_LEVELS,
};
use crate::hypgeo::{kernel, BallConfig, BallPoint};

/// Bit `ℓ − 1` set means level `ℓ` is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StoredLevels(u16);

impl StoredLevels {
    pub fn new(levels: &[usize], depth: usize) -> Result<Self> {
        let mut mask = 0u16;
        for &l in levels {
            if !(1..=depth).contains(&l) {
                return Err(Error::config(format!(
                    "stored level {l} outside 1..={depth}"
                )));
            }
            mask |= 1 << (l - 1);
        }
        Self::from_mask(mask, depth)
    }

    pub fn all(depth: usize) -> Self {
        Self(((1u32 << depth) - 1) as u16)
    }

    pub fn from_mask(mask: u16, depth: usize) -> Result<Self> {
        if depth == 0 || depth > MAX_LEVELS {
            return Err(Error::config(format!(
                "depth {depth} outside 1..={MAX_LEVELS}"
            )));
        }
        if mask == 0 || (mask as u32) >> depth != 0 {
            return Err(Error::config(format!(
                "stored-level mask {mask:#06x} invalid for depth {depth}"
            )));
        }
        Ok(Self(mask))
    }

    pub fn mask(self) -> u16 {
        self.0
    }

    pub fn contains(self, level: usize) -> bool {
        (1..=16).contains(&level) && self.0 & (1 << (level - 1)) != 0
    }

    /// Ascending stored levels.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (1..=16).filter(move |&l| self.contains(l))
    }

    /// Descriptors kept per record.
    pub fn points_per_record(self) -> usize {
        self.iter().map(|l| 1usize << (l - 1)).sum()
    }

    /// Bytes of `f32` descriptor payload per record at dimension `dim`.
    pub fn payload_bytes(self, dim: usize) -> usize {
        self.points_per_record() * dim * 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geotag {
    pub lat: f64,
    pub lon: f64,
}

/// One panorama's stored descriptors. `levels[ℓ − 1]` holds the flattened
/// `2^(ℓ−1) × D` coordinates of level `ℓ` when it is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaRecord {
    id: u64,
    geotag: Option<Geotag>,
    levels: Vec<Option<Vec<f64>>>,
    dim: usize,
}

impl PanoramaRecord {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn geotag(&self) -> Option<Geotag> {
        self.geotag
    }

    /// Sub-descriptors of level `level`, or `None` if the level is not stored.
    pub fn level(&self, level: usize) -> Option<std::slice::ChunksExact<'_, f64>> {
        self.levels
            .get(level.checked_sub(1)?)?
            .as_ref()
            .map(|v| v.chunks_exact(self.dim))
    }

    pub fn point(&self, level: usize, k: usize, cfg: BallConfig) -> Option<BallPoint> {
        let coords = self.level(level)?.nth(k.checked_sub(1)?)?;
        Some(BallPoint::from_interior(coords.to_vec(), cfg))
    }

    pub fn root(&self) -> Option<&[f64]> {
        self.levels.first()?.as_deref()
    }
}

/// Feature grids of one panorama awaiting encoding.
#[derive(Debug, Clone)]
pub struct PanoramaInput {
    pub id: u64,
    pub geotag: Option<Geotag>,
    pub leaf_grids: Vec<FeatureGrid>,
}

/// `(id, geotag, per-level flattened coordinates)` as read from disk.
pub(crate) type RawRecord = (u64, Option<Geotag>, Vec<Option<Vec<f64>>>);

#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseIndex {
    ball: BallConfig,
    layout: WindowLayout,
    stored: StoredLevels,
    records: Vec<PanoramaRecord>,
}

/// Round to `f32` precision while staying strictly inside the ball.
pub(crate) fn quantize_point(coords: &[f64], cfg: &BallConfig) -> Vec<f64> {
    let max = cfg.max_norm();
    let mut scale = 1.0f64;
    loop {
        let q: Vec<f64> = coords.iter().map(|&v| (v * scale) as f32 as f64).collect();
        if kernel::norm(&q) <= max {
            return q;
        }
        scale *= 1.0 - 1e-7;
    }
}

impl DatabaseIndex {
    /// Assemble an index from already-built trees.
    pub fn from_trees(
        ball: BallConfig,
        layout: WindowLayout,
        stored: StoredLevels,
        trees: Vec<(u64, Option<Geotag>, DescriptorTree)>,
    ) -> Result<Self> {
        let depth = layout.levels();
        StoredLevels::from_mask(stored.mask(), depth)?;
        let mut records = trees
            .into_iter()
            .map(|(id, geotag, tree)| {
                if tree.depth() != depth {
                    return Err(Error::invalid(format!(
                        "record {id}: tree depth {} differs from index depth {depth}",
                        tree.depth()
                    )));
                }
                if *tree.config() != ball {
                    return Err(Error::config(format!(
                        "record {id}: tree uses a different ball"
                    )));
                }
                let levels = tree
                    .into_levels()
                    .into_iter()
                    .enumerate()
                    .map(|(i, row)| {
                        stored.contains(i + 1).then(|| {
                            row.iter()
                                .flat_map(|p| quantize_point(p.coords(), &ball))
                                .collect()
                        })
                    })
                    .collect();
                Ok(PanoramaRecord {
                    id,
                    geotag,
                    levels,
                    dim: ball.dim(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.sort_by_key(|r| r.id);
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::invalid(format!("duplicate panorama id {}", w[0].id)));
        }
        Ok(Self {
            ball,
            layout,
            stored,
            records,
        })
    }

    pub(crate) fn from_records(
        ball: BallConfig,
        depth: usize,
        stored: StoredLevels,
        records: Vec<RawRecord>,
    ) -> Result<Self> {
        let records = records
            .into_iter()
            .map(|(id, geotag, levels)| PanoramaRecord {
                id,
                geotag,
                levels,
                dim: ball.dim(),
            })
            .collect();
        Ok(Self {
            ball,
            layout: window_layout(depth, true)?,
            stored,
            records,
        })
    }

    pub fn ball(&self) -> &BallConfig {
        &self.ball
    }

    pub fn layout(&self) -> &WindowLayout {
        &self.layout
    }

    pub fn depth(&self) -> usize {
        self.layout.levels()
    }

    pub fn stored_levels(&self) -> StoredLevels {
        self.stored
    }

    pub fn records(&self) -> &[PanoramaRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, id: u64) -> Option<&PanoramaRecord> {
        self.records
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.records[i])
    }
}

/// Encode every panorama and collect the trees into an index.
///
/// Panoramas are encoded in parallel; the result depends only on the inputs.
pub fn build_index(
    panoramas: &[PanoramaInput],
    encoder: &Encoder,
    stored: StoredLevels,
) -> Result<DatabaseIndex> {
    let trees = panoramas
        .par_iter()
        .map(|p| {
            encoder
                .build_tree(&p.leaf_grids)
                .map(|t| (p.id, p.geotag, t))
                .map_err(|e| match e {
                    Error::InvalidInput(m) => Error::invalid(format!("panorama {}: {m}", p.id)),
                    other => other,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    DatabaseIndex::from_trees(*encoder.ball(), encoder.layout().clone(), stored, trees)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stored_levels_accounting() {
        let b = StoredLevels::new(&[1, 4], 5).unwrap();
        let l = StoredLevels::new(&[5, 1], 5).unwrap();
        assert_eq!(b.points_per_record(), 9);
        assert_eq!(l.points_per_record(), 17);
        assert_eq!(l.payload_bytes(2048), 17 * 2048 * 4);
        assert_eq!(l.iter().collect::<Vec<_>>(), vec![1, 5]);
        assert_eq!(StoredLevels::all(5).points_per_record(), 31);
        assert!(StoredLevels::new(&[6], 5).is_err());
        assert!(StoredLevels::new(&[], 5).is_err());
        assert!(StoredLevels::from_mask(0b100000, 5).is_err());
    }

    #[test]
    fn quantized_points_are_f32_exact_and_interior() {
        let cfg = BallConfig::new(1.0, 3).unwrap();
        let edge = [cfg.max_norm() / 3f64.sqrt(); 3];
        let q = quantize_point(&edge, &cfg);
        assert!(kernel::norm(&q) <= cfg.max_norm());
        assert!(q.iter().all(|&v| v as f32 as f64 == v));
    }

    fn tiny_inputs(n: u64) -> (Encoder, Vec<PanoramaInput>) {
        let enc = Encoder::with_defaults(1.0, 2, 2, 2).unwrap();
        let inputs = (0..n)
            .map(|id| PanoramaInput {
                id,
                geotag: None,
                leaf_grids: vec![
                    FeatureGrid::new(1, 1, 2, vec![0.1 * id as f64, 0.2]).unwrap(),
                    FeatureGrid::new(1, 1, 2, vec![0.3, 0.05 * id as f64]).unwrap(),
                ],
            })
            .collect();
        (enc, inputs)
    }

    #[test]
    fn build_rejects_duplicates_and_bad_leaf_counts() {
        let (enc, mut inputs) = tiny_inputs(3);
        inputs[2].id = 0;
        assert!(matches!(
            build_index(&inputs, &enc, StoredLevels::all(2)),
            Err(Error::InvalidInput(_))
        ));
        let (enc, mut inputs) = tiny_inputs(3);
        inputs[1].leaf_grids.pop();
        assert!(build_index(&inputs, &enc, StoredLevels::all(2)).is_err());
    }

    #[test]
    fn empty_and_single_builds() {
        let (enc, inputs) = tiny_inputs(1);
        let empty = build_index(&[], &enc, StoredLevels::all(2)).unwrap();
        assert!(empty.is_empty());
        let one = build_index(&inputs, &enc, StoredLevels::all(2)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.records()[0].level(2).unwrap().count(), 2);
    }

    #[test]
    fn records_are_sorted_by_id() {
        let (enc, mut inputs) = tiny_inputs(4);
        inputs.reverse();
        let idx = build_index(&inputs, &enc, StoredLevels::new(&[1], 2).unwrap()).unwrap();
        let ids: Vec<u64> = idx.records().iter().map(|r| r.id()).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
        assert!(idx.records()[0].level(2).is_none());
        assert!(idx.record(2).is_some());
        assert!(idx.record(9).is_none());
    }
}
