//! Triplet objectives over descriptor trees, closed-form gradients, a
//! finite-difference checker and a plain Riemannian gradient step.
//!
//! Every ball point entering a loss is treated as a free parameter. Gradients
//! are Euclidean (with respect to ball coordinates) and are flattened in
//! [`TripletBatch::points`] order: query, positive tree, then each negative
//! tree, each tree level by level.

use crate::error::{Error, Result};
use crate::hierarchy::DescriptorTree;
use crate::hypgeo::{self, kernel, project_to_ball, BallConfig, BallPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const DEFAULT_MARGIN: f64 = 0.1;
pub const FD_STEP: f64 = 1e-5;
/// Hinge arguments closer than this to zero are reported as kinks.
pub const KINK_TOL: f64 = 1e-3;
/// Pairs closer than this are reported as distance singularities.
pub const COINCIDENT_TOL: f64 = 1e-6;

/// Which same-level descriptors act as negatives in the hierarchical loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HierNegatives {
    /// Every other descriptor at the child's level, sibling included.
    #[default]
    AllOthers,
    /// As above but without the child's sibling.
    ExcludeSibling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    query: BallPoint,
    positive: DescriptorTree,
    negatives: Vec<DescriptorTree>,
    margin: f64,
    hier_negatives: HierNegatives,
}

impl TripletBatch {
    pub fn new(
        query: BallPoint,
        positive: DescriptorTree,
        negatives: Vec<DescriptorTree>,
        margin: f64,
    ) -> Result<Self> {
        if negatives.is_empty() {
            return Err(Error::invalid(
                "a triplet batch needs at least one negative",
            ));
        }
        if !(margin.is_finite() && margin > 0.0) {
            return Err(Error::invalid(format!("margin must be > 0, got {margin}")));
        }
        let cfg = query.config();
        let depth = positive.depth();
        for t in std::iter::once(&positive).chain(&negatives) {
            if t.config() != cfg {
                return Err(Error::config("batch trees and query use different balls"));
            }
            if t.depth() != depth {
                return Err(Error::invalid("batch trees differ in depth"));
            }
        }
        Ok(Self {
            query,
            positive,
            negatives,
            margin,
            hier_negatives: HierNegatives::default(),
        })
    }

    pub fn with_hier_negatives(mut self, mode: HierNegatives) -> Self {
        self.hier_negatives = mode;
        self
    }

    pub fn query(&self) -> &BallPoint {
        &self.query
    }

    pub fn positive(&self) -> &DescriptorTree {
        &self.positive
    }

    pub fn negatives(&self) -> &[DescriptorTree] {
        &self.negatives
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    fn trees(&self) -> impl Iterator<Item = &DescriptorTree> {
        std::iter::once(&self.positive).chain(&self.negatives)
    }

    /// All parameters in gradient order.
    pub fn points(&self) -> Vec<&BallPoint> {
        std::iter::once(&self.query)
            .chain(self.trees().flat_map(|t| t.points()))
            .collect()
    }

    fn points_mut(&mut self) -> Vec<&mut BallPoint> {
        let mut out = vec![&mut self.query];
        out.extend(self.positive.points_mut());
        for t in &mut self.negatives {
            out.extend(t.points_mut());
        }
        out
    }

    fn tree_len(&self) -> usize {
        self.positive.points().count()
    }

    /// Flat parameter offset of tree `t` (0 = positive).
    fn tree_offset(&self, t: usize) -> usize {
        1 + t * self.tree_len()
    }

    /// Replace every parameter with a new point (same order as [`points`](Self::points)).
    pub fn with_points(&self, points: Vec<BallPoint>) -> Result<Self> {
        if points.len() != self.points().len() {
            return Err(Error::invalid("parameter count mismatch"));
        }
        let mut next = self.clone();
        for (slot, p) in next.points_mut().into_iter().zip(points) {
            if p.config() != slot.config() {
                return Err(Error::config("replacement point uses a different ball"));
            }
            *slot = p;
        }
        Ok(next)
    }
}

/// Which objective to evaluate on a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Hierarchical loss summed over every tree in the batch.
    Hier,
    Hyp,
    Euc,
    /// `Hier + Hyp + Euc`.
    Total,
}

/// Accumulates value, gradient (when requested) and smoothness diagnostics.
struct Acc<'a> {
    value: f64,
    grad: Option<&'a mut [Vec<f64>]>,
    min_hinge: f64,
    min_pair: f64,
}

impl<'a> Acc<'a> {
    fn new(grad: Option<&'a mut [Vec<f64>]>) -> Self {
        Self {
            value: 0.0,
            grad,
            min_hinge: f64::INFINITY,
            min_pair: f64::INFINITY,
        }
    }

    /// Adds `max(arg, 0)`; returns whether the hinge is active.
    fn hinge(&mut self, arg: f64) -> bool {
        self.min_hinge = self.min_hinge.min(arg.abs());
        if arg > 0.0 {
            self.value += arg;
            true
        } else {
            false
        }
    }

    fn pair(&mut self, d: f64) {
        self.min_pair = self.min_pair.min(d);
    }

    fn add_grad(&mut self, idx: usize, scale: f64, g: &[f64]) {
        if let Some(grad) = self.grad.as_deref_mut() {
            for (a, b) in grad[idx].iter_mut().zip(g) {
                *a += scale * b;
            }
        }
    }

    fn wants_grad(&self) -> bool {
        self.grad.is_some()
    }
}

/// `d_c(x, y)` with its gradients via the arcosh form.
fn dist_with_grad(x: &[f64], y: &[f64], c: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let alpha = 1.0 - c * kernel::norm_sq(x);
    let beta = 1.0 - c * kernel::norm_sq(y);
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let u_minus_1 = 2.0 * c * s / (alpha * beta);
    let d = kernel::dist(x, y, c);
    if u_minus_1 == 0.0 {
        return (d, vec![0.0; x.len()], vec![0.0; y.len()]);
    }
    let dd_du = 1.0 / (c.sqrt() * (u_minus_1 * (u_minus_1 + 2.0)).sqrt());
    let k = dd_du * 4.0 * c / (alpha * beta);
    let gx = x
        .iter()
        .zip(y)
        .map(|(a, b)| k * ((a - b) + c * s * a / alpha))
        .collect();
    let gy = x
        .iter()
        .zip(y)
        .map(|(a, b)| k * ((b - a) + c * s * b / beta))
        .collect();
    (d, gx, gy)
}

/// Pull an upstream gradient `g` (w.r.t. `log_0(y)`) back to `y`.
fn log0_vjp(y: &[f64], c: f64, g: &[f64]) -> Vec<f64> {
    let sc = c.sqrt();
    let r = kernel::norm(y);
    if r == 0.0 {
        return g.to_vec();
    }
    let a = kernel::clamped_atanh(sc * r);
    let f = a / (sc * r);
    let df = (c * r / (1.0 - c * r * r) - sc * a) / (c * r * r);
    let yg = kernel::dot(y, g);
    y.iter()
        .zip(g)
        .map(|(yi, gi)| f * gi + df / r * yg * yi)
        .collect()
}

fn log0_raw(y: &[f64], c: f64) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    kernel::log0_into(y, c, &mut out);
    out
}

/// Index of `(level, k)` (both 1-based) within a tree's flattened points.
fn flat(level: usize, k: usize) -> usize {
    (1 << (level - 1)) - 1 + (k - 1)
}

fn hier_into(
    tree: &DescriptorTree,
    margin: f64,
    mode: HierNegatives,
    offset: usize,
    acc: &mut Acc,
) {
    let c = tree.config().curvature();
    for l in 2..=tree.depth() {
        let row = tree.level(l);
        let parents = tree.level(l - 1);
        for k in 1..=parents.len() {
            let parent = parents[k - 1].coords();
            for b in 0..2 {
                let ci = 2 * k - b;
                let sibling = if b == 0 { 2 * k - 1 } else { 2 * k };
                let child = row[ci - 1].coords();
                let (d_pos, g_pp, g_pc) = dist_with_grad(parent, child, c);
                acc.pair(d_pos);
                for n in 1..=row.len() {
                    if n == ci || (mode == HierNegatives::ExcludeSibling && n == sibling) {
                        continue;
                    }
                    let (d_neg, g_nc, g_nn) = dist_with_grad(child, row[n - 1].coords(), c);
                    acc.pair(d_neg);
                    if acc.hinge(d_pos - d_neg + margin) && acc.wants_grad() {
                        acc.add_grad(offset + flat(l - 1, k), 1.0, &g_pp);
                        acc.add_grad(offset + flat(l, ci), 1.0, &g_pc);
                        acc.add_grad(offset + flat(l, ci), -1.0, &g_nc);
                        acc.add_grad(offset + flat(l, n), -1.0, &g_nn);
                    }
                }
            }
        }
    }
}

fn hyp_into(batch: &TripletBatch, acc: &mut Acc) {
    let c = batch.query.config().curvature();
    let q = batch.query.coords();
    let (d_pos, gq_pos, gp) = dist_with_grad(q, batch.positive.root().coords(), c);
    acc.pair(d_pos);
    for (t, neg) in batch.negatives.iter().enumerate() {
        let (d_neg, gq_neg, gn) = dist_with_grad(q, neg.root().coords(), c);
        acc.pair(d_neg);
        if acc.hinge(d_pos - d_neg + batch.margin) && acc.wants_grad() {
            acc.add_grad(0, 1.0, &gq_pos);
            acc.add_grad(batch.tree_offset(0), 1.0, &gp);
            acc.add_grad(0, -1.0, &gq_neg);
            acc.add_grad(batch.tree_offset(t + 1), -1.0, &gn);
        }
    }
}

fn euclid_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = kernel::norm(&diff);
    if n == 0.0 {
        return (0.0, vec![0.0; a.len()]);
    }
    (n, diff.into_iter().map(|d| d / n).collect())
}

fn euc_into(batch: &TripletBatch, acc: &mut Acc) -> Result<()> {
    if batch.trees().any(|t| t.leaf_euclidean().is_none()) {
        return Err(Error::config(
            "Euclidean loss needs trees built with retained leaf descriptors",
        ));
    }
    let c = batch.query.config().curvature();
    let depth = batch.positive.depth();
    let leaf_base = flat(depth, 1);
    let dq = log0_raw(batch.query.coords(), c);
    let pos: Vec<Vec<f64>> = batch
        .positive
        .leaves()
        .iter()
        .map(|p| log0_raw(p.coords(), c))
        .collect();
    for (t, neg) in batch.negatives.iter().enumerate() {
        for (j, (pj, nj_point)) in pos.iter().zip(neg.leaves()).enumerate() {
            let nj = log0_raw(nj_point.coords(), c);
            let (e_pos, g_pos) = euclid_with_grad(&dq, pj);
            let (e_neg, g_neg) = euclid_with_grad(&dq, &nj);
            acc.pair(e_pos);
            acc.pair(e_neg);
            if acc.hinge(e_pos - e_neg + batch.margin) && acc.wants_grad() {
                // d/d(dq) = g_pos − g_neg; d/d(pj) = −g_pos; d/d(nj) = +g_neg
                let gq: Vec<f64> = g_pos.iter().zip(&g_neg).map(|(a, b)| a - b).collect();
                acc.add_grad(0, 1.0, &log0_vjp(batch.query.coords(), c, &gq));
                let neg_pos: Vec<f64> = g_pos.iter().map(|v| -v).collect();
                let pj_point = batch.positive.leaves()[j].coords();
                acc.add_grad(
                    batch.tree_offset(0) + leaf_base + j,
                    1.0,
                    &log0_vjp(pj_point, c, &neg_pos),
                );
                acc.add_grad(
                    batch.tree_offset(t + 1) + leaf_base + j,
                    1.0,
                    &log0_vjp(nj_point.coords(), c, &g_neg),
                );
            }
        }
    }
    Ok(())
}

fn evaluate(obj: Objective, batch: &TripletBatch, acc: &mut Acc) -> Result<()> {
    let hier = |acc: &mut Acc| {
        for (t, tree) in batch.trees().enumerate() {
            hier_into(
                tree,
                batch.margin,
                batch.hier_negatives,
                batch.tree_offset(t),
                acc,
            );
        }
    };
    match obj {
        Objective::Hier => hier(acc),
        Objective::Hyp => hyp_into(batch, acc),
        Objective::Euc => euc_into(batch, acc)?,
        Objective::Total => {
            hier(acc);
            hyp_into(batch, acc);
            euc_into(batch, acc)?;
        }
    }
    Ok(())
}

/// Hierarchical triplet loss of a single tree.
pub fn hier_triplet(tree: &DescriptorTree, margin: f64) -> Result<f64> {
    hier_triplet_with(tree, margin, HierNegatives::default())
}

pub fn hier_triplet_with(tree: &DescriptorTree, margin: f64, mode: HierNegatives) -> Result<f64> {
    if tree.depth() < 2 {
        return Err(Error::invalid(
            "hierarchical loss needs at least two levels",
        ));
    }
    let mut acc = Acc::new(None);
    hier_into(tree, margin, mode, 0, &mut acc);
    Ok(acc.value)
}

/// Gradient of [`hier_triplet_with`] with respect to each tree point, level by level.
pub fn hier_triplet_grad(
    tree: &DescriptorTree,
    margin: f64,
    mode: HierNegatives,
) -> Result<Vec<Vec<f64>>> {
    if tree.depth() < 2 {
        return Err(Error::invalid(
            "hierarchical loss needs at least two levels",
        ));
    }
    let dim = tree.config().dim();
    let mut g = vec![vec![0.0; dim]; tree.points().count()];
    let mut acc = Acc::new(Some(&mut g));
    hier_into(tree, margin, mode, 0, &mut acc);
    Ok(g)
}

/// Query-to-root triplet loss over every negative.
pub fn hyp_triplet(batch: &TripletBatch) -> f64 {
    let mut acc = Acc::new(None);
    hyp_into(batch, &mut acc);
    acc.value
}

/// Tangent-space triplet loss between the query and leaf descriptors, pairing
/// the positive's leaf `j` with each negative's leaf `j`.
pub fn euc_triplet(batch: &TripletBatch) -> Result<f64> {
    let mut acc = Acc::new(None);
    euc_into(batch, &mut acc)?;
    Ok(acc.value)
}

/// Sum of the hierarchical loss over every tree in the batch plus both
/// triplet losses.
pub fn total_loss(batch: &TripletBatch) -> Result<f64> {
    loss(Objective::Total, batch)
}

pub fn loss(obj: Objective, batch: &TripletBatch) -> Result<f64> {
    if batch.positive.depth() < 2 && matches!(obj, Objective::Hier | Objective::Total) {
        return Err(Error::invalid(
            "hierarchical loss needs at least two levels",
        ));
    }
    let mut acc = Acc::new(None);
    evaluate(obj, batch, &mut acc)?;
    Ok(acc.value)
}

/// Closed-form gradient, aligned with [`TripletBatch::points`].
pub fn grad(obj: Objective, batch: &TripletBatch) -> Result<Vec<Vec<f64>>> {
    let dim = batch.query.config().dim();
    let mut g = vec![vec![0.0; dim]; batch.points().len()];
    let mut acc = Acc::new(Some(&mut g));
    evaluate(obj, batch, &mut acc)?;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    /// `|a − n| / max(|a|, |n|, 1e-8)`, maximised over all coordinates.
    pub max_rel_error: f64,
    /// `(parameter index, coordinate)` of the maximum.
    pub max_at: (usize, usize),
    /// Set when some hinge sits within [`KINK_TOL`] of its kink or two
    /// compared points (nearly) coincide; the comparison is then unreliable.
    pub nondifferentiable: bool,
}

/// Compare [`grad`] with central differences of step [`FD_STEP`].
pub fn grad_check(obj: Objective, batch: &TripletBatch) -> Result<GradReport> {
    let analytic = grad(obj, batch)?;
    let mut probe = Acc::new(None);
    evaluate(obj, batch, &mut probe)?;
    let nondifferentiable = probe.min_hinge < KINK_TOL || probe.min_pair < COINCIDENT_TOL;

    let mut work = batch.clone();
    let mut numeric = analytic
        .iter()
        .map(|g| vec![0.0; g.len()])
        .collect::<Vec<_>>();
    for (i, row) in numeric.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            let orig = work.points_mut()[i].coords()[j];
            work.points_mut()[i].coords_mut()[j] = orig + FD_STEP;
            let up = loss(obj, &work)?;
            work.points_mut()[i].coords_mut()[j] = orig - FD_STEP;
            let down = loss(obj, &work)?;
            work.points_mut()[i].coords_mut()[j] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
    }
    let mut max_rel_error = 0.0;
    let mut max_at = (0, 0);
    for (i, (a_row, n_row)) in analytic.iter().zip(&numeric).enumerate() {
        for (j, (a, n)) in a_row.iter().zip(n_row).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            if rel > max_rel_error {
                max_rel_error = rel;
                max_at = (i, j);
            }
        }
    }
    Ok(GradReport {
        analytic,
        numeric,
        max_rel_error,
        max_at,
        nondifferentiable,
    })
}

/// `x ← exp_x(−η·g/λ_x²)` for each point, `g` being the Euclidean gradient.
pub fn rsgd_step(points: &[BallPoint], grads: &[Vec<f64>], lr: f64) -> Result<Vec<BallPoint>> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::invalid(format!(
            "learning rate must be > 0, got {lr}"
        )));
    }
    if points.len() != grads.len() {
        return Err(Error::invalid("one gradient per point required"));
    }
    points
        .iter()
        .zip(grads)
        .map(|(x, g)| {
            let lambda = hypgeo::conformal_factor(x);
            let s = -lr / (lambda * lambda);
            let v = hypgeo::TangentVec::new(g.iter().map(|gi| s * gi).collect())?;
            hypgeo::exp_map(x, &v)
        })
        .collect()
}

/// Run `steps` Riemannian steps on `obj`; returns the final batch and the
/// loss before each step plus the final loss.
pub fn optimize(
    obj: Objective,
    batch: &TripletBatch,
    steps: usize,
    lr: f64,
) -> Result<(TripletBatch, Vec<f64>)> {
    let mut current = batch.clone();
    let mut history = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        history.push(loss(obj, &current)?);
        let g = grad(obj, &current)?;
        let pts: Vec<BallPoint> = current.points().into_iter().cloned().collect();
        current = current.with_points(rsgd_step(&pts, &g, lr)?)?;
    }
    history.push(loss(obj, &current)?);
    Ok((current, history))
}

/// Seeded random batch: a query, a positive and `negatives` negative trees of
/// depth `depth` in `dim` dimensions, all points with norm below `0.6/√c`.
/// Leaf tangent descriptors are retained so every objective is defined.
pub fn seeded_batch(
    seed: u64,
    cfg: BallConfig,
    depth: usize,
    negatives: usize,
) -> Result<TripletBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = 0.6 / cfg.curvature().sqrt();
    let point = |rng: &mut ChaCha8Rng| {
        let dir: Vec<f64> = (0..cfg.dim())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = kernel::norm(&dir).max(1e-12);
        let r = radius * rng.random::<f64>().sqrt();
        let coords: Vec<f64> = dir.iter().map(|v| v * r / n).collect();
        project_to_ball(&coords, cfg)
    };
    let tree = |rng: &mut ChaCha8Rng| -> Result<DescriptorTree> {
        let levels = (0..depth)
            .map(|i| (0..1 << i).map(|_| point(rng)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let leaf = levels
            .last()
            .map(|row| row.iter().map(hypgeo::log0).collect());
        DescriptorTree::from_levels(levels, leaf)
    };
    let query = point(&mut rng)?;
    let positive = tree(&mut rng)?;
    let negs = (0..negatives)
        .map(|_| tree(&mut rng))
        .collect::<Result<Vec<_>>>()?;
    TripletBatch::new(query, positive, negs, DEFAULT_MARGIN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypgeo::TangentVec;

    fn cfg(d: usize) -> BallConfig {
        BallConfig::new(1.0, d).unwrap()
    }

    fn pt(v: &[f64]) -> BallPoint {
        project_to_ball(v, cfg(v.len())).unwrap()
    }

    fn flat_tree(p: &[f64], depth: usize) -> DescriptorTree {
        let levels = (0..depth).map(|i| vec![pt(p); 1 << i]).collect();
        let leaf = vec![hypgeo::log0(&pt(p)); 1 << (depth - 1)];
        DescriptorTree::from_levels(levels, Some(leaf)).unwrap()
    }

    #[test]
    fn collapsed_tree_pays_the_margin_per_triple() {
        let tree = flat_tree(&[0.1, 0.2], 3);
        // level 2: 2 children × 1 negative; level 3: 4 children × 3 negatives
        let triples = 2 + 12;
        assert!((hier_triplet(&tree, 0.1).unwrap() - 0.1 * triples as f64).abs() < 1e-12);
        let no_sib = hier_triplet_with(&tree, 0.1, HierNegatives::ExcludeSibling).unwrap();
        assert!((no_sib - 0.1 * 8.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_hinge_contributes_zero() {
        // parent 0, children at ±0.0997 (d ≈ 0.2), |d(child, other)| ≈ 0.4 > 0.2 + 0.1
        let r = (0.1f64).tanh();
        let tree =
            DescriptorTree::from_levels(vec![vec![pt(&[0.0])], vec![pt(&[-r]), pt(&[r])]], None)
                .unwrap();
        assert!((hypgeo::dist(tree.root(), &tree.level(2)[0]).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(hier_triplet(&tree, 0.1).unwrap(), 0.0);
        assert!(hier_triplet(
            &DescriptorTree::from_levels(vec![vec![pt(&[0.0])]], None).unwrap(),
            0.1
        )
        .is_err());
    }

    fn batch_1d(q: f64, pos_root: f64, neg_root: f64) -> TripletBatch {
        let tree = |r: f64| {
            DescriptorTree::from_levels(vec![vec![pt(&[r])], vec![pt(&[r]), pt(&[r])]], None)
                .unwrap()
        };
        TripletBatch::new(pt(&[q]), tree(pos_root), vec![tree(neg_root)], 0.1).unwrap()
    }

    #[test]
    fn hyp_hinge_arithmetic() {
        // d(0, tanh(t/2)) = t
        let at = |d: f64| (d / 2.0).tanh();
        let b = batch_1d(0.0, at(0.2), at(0.5));
        assert!(hyp_triplet(&b).abs() < 1e-12);
        let b = batch_1d(0.0, at(0.5), at(0.2));
        assert!((hyp_triplet(&b) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn euc_requires_leaf_descriptors() {
        let b = batch_1d(0.1, 0.2, 0.3);
        assert!(matches!(euc_triplet(&b), Err(Error::Config(_))));
        let t = flat_tree(&[0.3], 2);
        let b = TripletBatch::new(pt(&[0.1]), t.clone(), vec![t], 0.1).unwrap();
        assert!((euc_triplet(&b).unwrap() - 0.1 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn batch_validation() {
        let t = flat_tree(&[0.3], 2);
        assert!(TripletBatch::new(pt(&[0.1]), t.clone(), vec![], 0.1).is_err());
        assert!(TripletBatch::new(pt(&[0.1]), t.clone(), vec![t.clone()], 0.0).is_err());
        let deeper = flat_tree(&[0.3], 3);
        assert!(TripletBatch::new(pt(&[0.1]), t.clone(), vec![deeper], 0.1).is_err());
        let other = project_to_ball(&[0.1], BallConfig::new(2.0, 1).unwrap()).unwrap();
        assert!(matches!(
            TripletBatch::new(other, t.clone(), vec![t], 0.1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn distance_derivative_from_origin() {
        let (_, _, gy) = dist_with_grad(&[0.0], &[0.5], 1.0);
        assert!((gy[0] - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn log0_vjp_matches_finite_differences() {
        let y = [0.3, -0.45, 0.2];
        let g = [0.7, 0.1, -0.4];
        let c = 1.7;
        let f = |y: &[f64]| kernel::dot(&log0_raw(y, c), &g);
        let a = log0_vjp(&y, c, &g);
        for i in 0..3 {
            let mut up = y;
            let mut dn = y;
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let n = (f(&up) - f(&dn)) / 2e-6;
            assert!((a[i] - n).abs() < 1e-7, "{} vs {}", a[i], n);
        }
    }

    #[test]
    fn inactive_loss_has_zero_gradient() {
        let at = |d: f64| (d / 2.0).tanh();
        let b = batch_1d(0.0, at(0.2), at(0.9));
        let g = grad(Objective::Hyp, &b).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn rsgd_zero_gradient_and_origin_step() {
        let p = vec![pt(&[0.2, -0.1])];
        assert_eq!(rsgd_step(&p, &[vec![0.0, 0.0]], 0.05).unwrap(), p);
        let o = vec![BallPoint::origin(cfg(2))];
        let g = vec![vec![1.0, -2.0]];
        let stepped = rsgd_step(&o, &g, 0.05).unwrap();
        let expect = hypgeo::exp0(
            &TangentVec::new(vec![-0.05 / 4.0, 0.1 / 4.0]).unwrap(),
            cfg(2),
        )
        .unwrap();
        for (a, b) in stepped[0].coords().iter().zip(expect.coords()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(rsgd_step(&o, &g, 0.0).is_err());
        assert!(rsgd_step(&o, &[], 0.1).is_err());
    }

    #[test]
    fn grad_check_flags_kinks() {
        let at = |d: f64| (d / 2.0).tanh();
        // d_pos − d_neg + m = 0.3 − 0.4 + 0.1 = 0: exactly on the kink
        let b = batch_1d(0.0, at(0.3), at(0.4));
        let r = grad_check(Objective::Hyp, &b).unwrap();
        assert!(r.nondifferentiable);
    }
}
