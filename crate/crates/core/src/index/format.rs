//! Little-endian binary formats.
//!
//! Index file:
//!
//! ```text
//! "HVPR" | version u32 | curvature f64 | levels u16 | stored mask u16 | dim u32 | count u64
//! per record: id u64 | geotag flag u8 [| lat f64 | lon f64]
//!             | for each stored level ℓ (ascending): 2^(ℓ−1) × dim f32
//! ```
//!
//! Feature-grid file:
//!
//! ```text
//! "HFGR" | version u32 | leaf count u32 | height u32 | width u32 | channels u32
//! | leaf grids in order, each height × width × channels f32 (row-major)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DatabaseIndex, Geotag, StoredLevels};
use crate::error::{Error, Result};
use crate::hierarchy::{FeatureGrid, MAX_LEVELS, MIN_LEVELS};
use crate::hypgeo::{kernel, BallConfig};

pub const INDEX_MAGIC: &[u8; 4] = b"HVPR";
pub const INDEX_VERSION: u32 = 1;
pub const GRID_MAGIC: &[u8; 4] = b"HFGR";
pub const GRID_VERSION: u32 = 1;

const INDEX_HEADER_LEN: usize = 4 + 4 + 8 + 2 + 2 + 4 + 8;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.offset(),
                format!(
                    "truncated: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let start = self.offset();
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format(start, "length overflow"))?,
        )?;
        let out: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")) as f64)
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(start, "non-finite value"));
        }
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.offset(),
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serialise an index into its file representation.
pub fn encode_index(index: &DatabaseIndex) -> Vec<u8> {
    let stored = index.stored_levels();
    let dim = index.ball().dim();
    let per_record = 9 + stored.payload_bytes(dim);
    let mut out = Vec::with_capacity(INDEX_HEADER_LEN + index.len() * per_record);
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.extend_from_slice(&index.ball().curvature().to_le_bytes());
    out.extend_from_slice(&(index.depth() as u16).to_le_bytes());
    out.extend_from_slice(&stored.mask().to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for r in index.records() {
        out.extend_from_slice(&r.id.to_le_bytes());
        match r.geotag {
            Some(g) => {
                out.push(1);
                out.extend_from_slice(&g.lat.to_le_bytes());
                out.extend_from_slice(&g.lon.to_le_bytes());
            }
            None => out.push(0),
        }
        for level in r.levels.iter().flatten() {
            put_f32s(&mut out, level);
        }
    }
    out
}

/// Parse an index file. Any defect yields an error; nothing partial is returned.
pub fn decode_index(bytes: &[u8]) -> Result<DatabaseIndex> {
    let mut rd = Reader::new(bytes);
    if &rd.array::<4>()? != INDEX_MAGIC {
        return Err(Error::format(0, "bad magic, expected HVPR"));
    }
    let version = rd.u32()?;
    if version != INDEX_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let curvature = rd.f64()?;
    let depth = rd.u16()? as usize;
    if !(MIN_LEVELS..=MAX_LEVELS).contains(&depth) {
        return Err(Error::format(
            16,
            format!("level count {depth} out of range"),
        ));
    }
    let mask = rd.u16()?;
    let stored =
        StoredLevels::from_mask(mask, depth).map_err(|e| Error::format(18, e.to_string()))?;
    let dim = rd.u32()? as usize;
    let ball = BallConfig::new(curvature, dim).map_err(|e| Error::format(8, e.to_string()))?;
    let count = rd.u64()?;
    let per_record_min = 9 + stored.payload_bytes(dim) as u64;
    if count.saturating_mul(per_record_min) > (bytes.len() - INDEX_HEADER_LEN) as u64 {
        return Err(Error::format(
            rd.offset() - 8,
            format!("record count {count} exceeds file size"),
        ));
    }

    let mut records = Vec::with_capacity(count as usize);
    let mut prev: Option<u64> = None;
    for _ in 0..count {
        let at = rd.offset();
        let id = rd.u64()?;
        if prev.is_some_and(|p| p >= id) {
            return Err(Error::format(
                at,
                format!("record id {id} out of order or duplicated"),
            ));
        }
        prev = Some(id);
        let flag_at = rd.offset();
        let geotag = match rd.u8()? {
            0 => None,
            1 => Some(Geotag {
                lat: rd.f64()?,
                lon: rd.f64()?,
            }),
            other => return Err(Error::format(flag_at, format!("bad geotag flag {other}"))),
        };
        let mut levels = vec![None; depth];
        for l in stored.iter() {
            let at = rd.offset();
            let values = rd.f32s((1usize << (l - 1)) * dim)?;
            for (k, p) in values.chunks_exact(dim).enumerate() {
                if kernel::norm(p) > ball.max_norm() {
                    return Err(Error::format(
                        at + (k * dim * 4) as u64,
                        format!(
                            "record {id} level {l} descriptor {} lies outside the ball",
                            k + 1
                        ),
                    ));
                }
            }
            levels[l - 1] = Some(values);
        }
        records.push((id, geotag, levels));
    }
    rd.finish()?;
    DatabaseIndex::from_records(ball, depth, stored, records)
}

pub fn persist_index(index: &DatabaseIndex, path: impl AsRef<Path>) -> Result<u64> {
    let bytes = encode_index(index);
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(bytes.len() as u64)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<DatabaseIndex> {
    decode_index(&fs::read(path)?)
}

/// Serialise same-shaped grids (one panorama's leaves, or a single query).
pub fn encode_grids(grids: &[FeatureGrid]) -> Result<Vec<u8>> {
    let first = grids
        .first()
        .ok_or_else(|| Error::invalid("grid file needs at least one grid"))?;
    let shape = (first.height(), first.width(), first.channels());
    if grids
        .iter()
        .any(|g| (g.height(), g.width(), g.channels()) != shape)
    {
        return Err(Error::invalid("all grids in a file must share one shape"));
    }
    let mut out = Vec::with_capacity(24 + grids.len() * first.values().len() * 4);
    out.extend_from_slice(GRID_MAGIC);
    for v in [
        GRID_VERSION,
        grids.len() as u32,
        shape.0 as u32,
        shape.1 as u32,
        shape.2 as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for g in grids {
        put_f32s(&mut out, g.values());
    }
    Ok(out)
}

pub fn decode_grids(bytes: &[u8]) -> Result<Vec<FeatureGrid>> {
    let mut rd = Reader::new(bytes);
    if &rd.array::<4>()? != GRID_MAGIC {
        return Err(Error::format(0, "bad magic, expected HFGR"));
    }
    let version = rd.u32()?;
    if version != GRID_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = rd.u32()? as usize;
    let (h, w, c) = (rd.u32()? as usize, rd.u32()? as usize, rd.u32()? as usize);
    if count == 0 || h == 0 || w == 0 || c == 0 {
        return Err(Error::format(8, "zero-sized grid header"));
    }
    let cells = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .filter(|&n| n.saturating_mul(count).saturating_mul(4) == bytes.len() - 24)
        .ok_or_else(|| Error::format(24, "payload size does not match header"))?;
    (0..count)
        .map(|_| {
            let at = rd.offset();
            FeatureGrid::new(h, w, c, rd.f32s(cells)?).map_err(|e| Error::format(at, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|g| rd.finish().map(|_| g))
}

pub fn write_grid_file(path: impl AsRef<Path>, grids: &[FeatureGrid]) -> Result<()> {
    fs::write(path, encode_grids(grids)?)?;
    Ok(())
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<Vec<FeatureGrid>> {
    decode_grids(&fs::read(path)?)
}
