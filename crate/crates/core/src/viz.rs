//! Norm/angle export of stored descriptors for external plotting.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::hypgeo::kernel;
use crate::index::DatabaseIndex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VizRow {
    pub id: u64,
    pub level: usize,
    /// 1-based position within the level.
    pub k: usize,
    /// `√c‖h‖`, in `[0, 1)`.
    pub norm: f64,
    /// Angle in `(−π, π]` of the projection onto the first two principal axes.
    pub angle: f64,
}

pub const CSV_HEADER: &str = "id,level,k,norm,angle";

impl VizRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.id, self.level, self.k, self.norm, self.angle
        )
    }
}

/// Leading two principal axes of the rows of `data` (`n × dim`), each with
/// its largest-magnitude entry made positive so the result is sign-stable.
fn principal_axes(data: &DMatrix<f64>) -> [Vec<f64>; 2] {
    let dim = data.ncols();
    let cov = data.transpose() * data;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let axis = |i: Option<&usize>| -> Vec<f64> {
        let Some(&i) = i else {
            return vec![0.0; dim];
        };
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    [axis(order.first()), axis(order.get(1))]
}

/// One row per stored descriptor, ordered by record id, level, then position.
pub fn descriptor_rows(index: &DatabaseIndex) -> Result<Vec<VizRow>> {
    if index.is_empty() {
        return Err(Error::invalid("index has no records to export"));
    }
    let dim = index.ball().dim();
    let sc = index.ball().curvature().sqrt();
    let mut keys = Vec::new();
    let mut flat = Vec::new();
    for r in index.records() {
        for level in index.stored_levels().iter() {
            for (k, coords) in r.level(level).expect("stored level").enumerate() {
                keys.push((r.id(), level, k + 1, sc * kernel::norm(coords)));
                flat.extend_from_slice(coords);
            }
        }
    }
    let n = keys.len();
    let mut data = DMatrix::from_row_slice(n, dim, &flat);
    let mean = data.row_mean();
    for mut row in data.row_iter_mut() {
        row -= &mean;
    }
    let [a1, a2] = principal_axes(&data);
    Ok(keys
        .into_iter()
        .zip(data.row_iter())
        .map(|((id, level, k, norm), row)| {
            let p1: f64 = row.iter().zip(&a1).map(|(x, a)| x * a).sum();
            let p2: f64 = row.iter().zip(&a2).map(|(x, a)| x * a).sum();
            VizRow {
                id,
                level,
                k,
                norm,
                angle: p2.atan2(p1),
            }
        })
        .collect())
}

/// Mean exported norm per level, ascending by level.
pub fn mean_norm_by_level(rows: &[VizRow]) -> Vec<(usize, f64)> {
    let mut acc: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for r in rows {
        let e = acc.entry(r.level).or_default();
        e.0 += r.norm;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(l, (s, n))| (l, s / n as f64))
        .collect()
}
