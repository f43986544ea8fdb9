//! Poincaré-ball and Klein-model primitives.
//!
//! Points carry the [`BallConfig`] they were created under; binary operations
//! reject mixed configurations. Every operation that produces a ball point runs
//! its output through [`project_to_ball`], so `sqrt(c)·‖x‖ <= 1 − ε_b` holds for
//! every [`BallPoint`] in existence.
//!
//! All arithmetic is `f64`.

pub mod kernel;
mod klein;

pub use klein::{einstein_midpoint, lorentz_factor, to_klein, to_poincare, KleinPoint};

use crate::error::{Error, Result};

pub const DEFAULT_BOUNDARY_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallConfig {
    curvature: f64,
    dim: usize,
    boundary_eps: f64,
}

impl BallConfig {
    pub fn new(curvature: f64, dim: usize) -> Result<Self> {
        Self::with_boundary_eps(curvature, dim, DEFAULT_BOUNDARY_EPS)
    }

    pub fn with_boundary_eps(curvature: f64, dim: usize, boundary_eps: f64) -> Result<Self> {
        if !(curvature.is_finite() && curvature > 0.0) {
            return Err(Error::config(format!(
                "curvature must be > 0, got {curvature}"
            )));
        }
        if dim == 0 {
            return Err(Error::config("dimension must be >= 1"));
        }
        if !(boundary_eps > 0.0 && boundary_eps <= 1e-3) {
            return Err(Error::config(format!(
                "boundary eps must lie in (0, 1e-3], got {boundary_eps}"
            )));
        }
        Ok(Self {
            curvature,
            dim,
            boundary_eps,
        })
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boundary_eps(&self) -> f64 {
        self.boundary_eps
    }

    /// Largest Euclidean norm a ball point may have.
    pub fn max_norm(&self) -> f64 {
        (1.0 - self.boundary_eps) / self.curvature.sqrt()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::config(format!(
                "dimension mismatch: expected {}, got {len}",
                self.dim
            )));
        }
        Ok(())
    }
}

/// A point strictly inside the ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    cfg: BallConfig,
}

impl BallPoint {
    pub fn origin(cfg: BallConfig) -> Self {
        Self {
            coords: vec![0.0; cfg.dim],
            cfg,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn config(&self) -> &BallConfig {
        &self.cfg
    }

    pub fn norm(&self) -> f64 {
        kernel::norm(&self.coords)
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Wrap coordinates already known to be interior (kernel outputs).
    pub(crate) fn from_interior(mut coords: Vec<f64>, cfg: BallConfig) -> Self {
        kernel::project_in_place(&mut coords, cfg.curvature, cfg.boundary_eps);
        Self { coords, cfg }
    }

    pub(crate) fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    fn same_config(&self, other: &BallPoint) -> Result<()> {
        if self.cfg != other.cfg {
            return Err(Error::config(
                "ball points belong to different configurations",
            ));
        }
        Ok(())
    }
}

/// A Euclidean (tangent-space) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec {
    coords: Vec<f64>,
}

impl TangentVec {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tangent vector has non-finite entries"));
        }
        Ok(Self { coords })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn norm(&self) -> f64 {
        kernel::norm(&self.coords)
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub(crate) fn from_finite(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

/// Clamp `v` into the ball, preserving direction.
pub fn project_to_ball(v: &[f64], cfg: BallConfig) -> Result<BallPoint> {
    cfg.check_dim(v.len())?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("cannot project a non-finite vector"));
    }
    Ok(BallPoint::from_interior(v.to_vec(), cfg))
}

/// `λ_x = 2 / (1 − c‖x‖²)`.
pub fn conformal_factor(x: &BallPoint) -> f64 {
    2.0 / (1.0 - x.cfg.curvature * kernel::norm_sq(&x.coords))
}

pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
    x.same_config(y)?;
    let mut out = vec![0.0; x.coords.len()];
    kernel::mobius_add_into(&x.coords, &y.coords, x.cfg.curvature, &mut out);
    Ok(BallPoint::from_interior(out, x.cfg))
}

/// Geodesic distance `(2/√c)·artanh(√c‖(−x) ⊕_c y‖)`.
pub fn dist(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    x.same_config(y)?;
    Ok(kernel::dist(&x.coords, &y.coords, x.cfg.curvature))
}

pub fn exp_map(x: &BallPoint, v: &TangentVec) -> Result<BallPoint> {
    x.cfg.check_dim(v.coords.len())?;
    let c = x.cfg.curvature;
    let sc = c.sqrt();
    let vn = v.norm();
    if vn == 0.0 {
        return Ok(x.clone());
    }
    let lambda = conformal_factor(x);
    let s = (sc * lambda * vn / 2.0).tanh() / (sc * vn);
    let step: Vec<f64> = v.coords.iter().map(|vi| s * vi).collect();
    let step = BallPoint::from_interior(step, x.cfg);
    mobius_add(x, &step)
}

pub fn log_map(x: &BallPoint, y: &BallPoint) -> Result<TangentVec> {
    x.same_config(y)?;
    let c = x.cfg.curvature;
    let sc = c.sqrt();
    let neg: Vec<f64> = x.coords.iter().map(|v| -v).collect();
    let mut u = vec![0.0; neg.len()];
    kernel::mobius_add_into(&neg, &y.coords, c, &mut u);
    let un = kernel::norm(&u);
    if un == 0.0 {
        return Ok(TangentVec::zeros(u.len()));
    }
    let lambda = conformal_factor(x);
    let s = 2.0 / (sc * lambda) * kernel::clamped_atanh(sc * un) / un;
    u.iter_mut().for_each(|v| *v *= s);
    Ok(TangentVec::from_finite(u))
}

/// `exp_0^c(v) = tanh(√c‖v‖)·v/(√c‖v‖)`.
pub fn exp0(v: &TangentVec, cfg: BallConfig) -> Result<BallPoint> {
    cfg.check_dim(v.coords.len())?;
    let mut out = vec![0.0; v.coords.len()];
    kernel::exp0_into(&v.coords, cfg.curvature, &mut out);
    Ok(BallPoint::from_interior(out, cfg))
}

pub fn log0(y: &BallPoint) -> TangentVec {
    let mut out = vec![0.0; y.coords.len()];
    kernel::log0_into(&y.coords, y.cfg.curvature, &mut out);
    TangentVec::from_finite(out)
}
