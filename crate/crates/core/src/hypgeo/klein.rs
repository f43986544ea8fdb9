use std::cmp::Ordering;

use super::{kernel, BallConfig, BallPoint};
use crate::error::{Error, Result};

/// A point in the Klein model of the same curvature as its source ball.
#[derive(Debug, Clone, PartialEq)]
pub struct KleinPoint {
    coords: Vec<f64>,
    cfg: BallConfig,
}

impl KleinPoint {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn config(&self) -> &BallConfig {
        &self.cfg
    }
}

/// `x_K = 2·x_P / (1 + c‖x_P‖²)`.
pub fn to_klein(p: &BallPoint) -> KleinPoint {
    let c = p.cfg.curvature;
    let s = 2.0 / (1.0 + c * kernel::norm_sq(&p.coords));
    KleinPoint {
        coords: p.coords.iter().map(|v| s * v).collect(),
        cfg: p.cfg,
    }
}

/// `x_P = x_K / (1 + sqrt(1 − c‖x_K‖²))`.
pub fn to_poincare(k: &KleinPoint) -> BallPoint {
    let c = k.cfg.curvature;
    let s = 1.0 / (1.0 + (1.0 - c * kernel::norm_sq(&k.coords)).max(0.0).sqrt());
    BallPoint::from_interior(k.coords.iter().map(|v| s * v).collect(), k.cfg)
}

/// `γ = 1 / sqrt(1 − c‖k‖²)`.
pub fn lorentz_factor(k: &KleinPoint) -> f64 {
    1.0 / (1.0 - k.cfg.curvature * kernel::norm_sq(&k.coords)).sqrt()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Lorentz-weighted average computed in the Klein model.
///
/// Inputs are summed in lexicographic coordinate order, so the result is
/// bit-identical under any permutation of `points`.
pub fn einstein_midpoint(points: &[BallPoint]) -> Result<BallPoint> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("einstein midpoint of an empty set"))?;
    let cfg = first.cfg;
    if points.iter().any(|p| p.cfg != cfg) {
        return Err(Error::config(
            "midpoint inputs belong to different configurations",
        ));
    }
    if points.len() == 1 {
        return Ok(first.clone());
    }
    let mut order: Vec<&BallPoint> = points.iter().collect();
    order.sort_by(|a, b| lex_cmp(&a.coords, &b.coords));

    let mut acc = vec![0.0; cfg.dim];
    let mut weight = 0.0;
    for p in order {
        let k = to_klein(p);
        let g = lorentz_factor(&k);
        weight += g;
        for (a, v) in acc.iter_mut().zip(&k.coords) {
            *a += g * v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= weight);
    Ok(to_poincare(&KleinPoint { coords: acc, cfg }))
}
