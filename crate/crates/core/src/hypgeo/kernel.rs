//! Slice-level kernels shared by the typed API and the hot retrieval paths.
//!
//! Nothing here validates dimensions or curvature; callers do.

/// Largest argument handed to `atanh`.
pub const ATANH_CLAMP: f64 = 1.0 - 1e-12;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    norm_sq(v).sqrt()
}

#[inline]
pub fn clamped_atanh(x: f64) -> f64 {
    x.clamp(0.0, ATANH_CLAMP).atanh()
}

/// Rescale `v` in place so that `sqrt(c)·‖v‖ <= 1 - eps`.
#[inline]
pub fn project_in_place(v: &mut [f64], c: f64, eps: f64) {
    let max_norm = (1.0 - eps) / c.sqrt();
    let n = norm(v);
    if n > max_norm {
        let s = max_norm / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Möbius addition `x ⊕_c y` written into `out`.
pub fn mobius_add_into(x: &[f64], y: &[f64], c: f64, out: &mut [f64]) {
    let xy = dot(x, y);
    let x2 = norm_sq(x);
    let y2 = norm_sq(y);
    let a = 1.0 + 2.0 * c * xy + c * y2;
    let b = 1.0 - c * x2;
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = (a * xi + b * yi) / den;
    }
}

/// Norm of `(−x) ⊕_c y` without materialising the vector.
///
/// With `δ = y − x` the numerator is `(1 − c‖x‖²)·δ − c‖δ‖²·x`, which is
/// exactly zero for `x == y` and keeps full relative precision for close
/// pairs.
#[inline]
pub fn mobius_diff_norm(x: &[f64], y: &[f64], c: f64) -> f64 {
    let mut d2 = 0.0;
    let mut dx = 0.0;
    let mut x2 = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = b - a;
        d2 += d * d;
        dx += d * a;
        x2 += a * a;
    }
    let xy = x2 + dx;
    let y2 = x2 + 2.0 * dx + d2;
    let b = 1.0 - c * x2;
    let den = 1.0 - 2.0 * c * xy + c * c * x2 * y2;
    let bracket = b * b - 2.0 * b * c * dx + c * c * d2 * x2;
    (d2 * bracket.max(0.0)).sqrt() / den
}

/// Geodesic distance via Möbius subtraction.
#[inline]
pub fn dist(x: &[f64], y: &[f64], c: f64) -> f64 {
    let sc = c.sqrt();
    2.0 / sc * clamped_atanh(sc * mobius_diff_norm(x, y, c))
}

/// Geodesic distance via the closed arcosh form.
pub fn dist_arcosh(x: &[f64], y: &[f64], c: f64) -> f64 {
    let diff_sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let alpha = 1.0 - c * norm_sq(x);
    let beta = 1.0 - c * norm_sq(y);
    let arg = 1.0 + 2.0 * c * diff_sq / (alpha * beta);
    arg.max(1.0).acosh() / c.sqrt()
}

/// `exp_0^c` into `out`.
pub fn exp0_into(v: &[f64], c: f64, out: &mut [f64]) {
    let sc = c.sqrt();
    let n = norm(v);
    if n == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let s = (sc * n).tanh() / (sc * n);
    for (o, vi) in out.iter_mut().zip(v) {
        *o = s * vi;
    }
}

/// `log_0^c` into `out`.
pub fn log0_into(y: &[f64], c: f64, out: &mut [f64]) {
    let sc = c.sqrt();
    let n = norm(y);
    if n == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let s = clamped_atanh(sc * n) / (sc * n);
    for (o, yi) in out.iter_mut().zip(y) {
        *o = s * yi;
    }
}
