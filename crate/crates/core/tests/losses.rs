use hypevpr::hypgeo::{dist, BallConfig};
use hypevpr::losses::*;

fn cfg() -> BallConfig {
    BallConfig::new(1.0, 4).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    for obj in [
        Objective::Hier,
        Objective::Hyp,
        Objective::Euc,
        Objective::Total,
    ] {
        let mut checked = 0;
        let mut seed = 0;
        let mut worst: f64 = 0.0;
        while checked < 20 {
            let b = seeded_batch(seed, cfg(), 3, 3).unwrap();
            seed += 1;
            let r = grad_check(obj, &b).unwrap();
            if r.nondifferentiable {
                continue;
            }
            worst = worst.max(r.max_rel_error);
            checked += 1;
        }
        assert!(worst < 1e-4, "{obj:?}: {worst:e}");
        eprintln!("{obj:?}: worst {worst:e}, skipped {}", seed - 20);
    }
}

#[test]
fn l2_tree_matches_unrolled_loop() {
    let b = seeded_batch(11, cfg(), 2, 1).unwrap();
    let t = b.positive();
    let (p, c1, c2) = (t.root(), &t.level(2)[0], &t.level(2)[1]);
    let h = |x: f64| x.max(0.0);
    let m = 0.1;
    let expect = h(dist(p, c2).unwrap() - dist(c2, c1).unwrap() + m)
        + h(dist(p, c1).unwrap() - dist(c1, c2).unwrap() + m);
    assert!((hier_triplet(t, m).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn hyp_with_ten_negatives_matches_loop_and_ignores_order() {
    let b = seeded_batch(5, cfg(), 2, 10).unwrap();
    let q = b.query();
    let dp = dist(q, b.positive().root()).unwrap();
    let expect: f64 = b
        .negatives()
        .iter()
        .map(|n| (dp - dist(q, n.root()).unwrap() + b.margin()).max(0.0))
        .sum();
    assert!((hyp_triplet(&b) - expect).abs() < 1e-12);
    let mut rev = b.negatives().to_vec();
    rev.reverse();
    let flipped = TripletBatch::new(q.clone(), b.positive().clone(), rev, b.margin()).unwrap();
    assert!((hyp_triplet(&flipped) - hyp_triplet(&b)).abs() < 1e-12);
    assert!((total_loss(&flipped).unwrap() - total_loss(&b).unwrap()).abs() < 1e-9);
}

#[test]
fn euc_matches_naive_tangent_loop() {
    let b = seeded_batch(9, cfg(), 3, 2).unwrap();
    let dq = hypevpr::hypgeo::log0(b.query());
    let e = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut expect = 0.0;
    for n in b.negatives() {
        for (pj, nj) in b
            .positive()
            .leaf_euclidean()
            .unwrap()
            .iter()
            .zip(n.leaf_euclidean().unwrap())
        {
            expect +=
                (e(dq.coords(), pj.coords()) - e(dq.coords(), nj.coords()) + b.margin()).max(0.0);
        }
    }
    assert!((euc_triplet(&b).unwrap() - expect).abs() < 1e-9);
}

#[test]
fn total_is_the_sum_of_components() {
    let b = seeded_batch(3, cfg(), 3, 2).unwrap();
    let hier: f64 = std::iter::once(b.positive())
        .chain(b.negatives())
        .map(|t| hier_triplet(t, b.margin()).unwrap())
        .sum();
    let sum = hier + hyp_triplet(&b) + euc_triplet(&b).unwrap();
    assert!((total_loss(&b).unwrap() - sum).abs() < 1e-9);
    assert!(hyp_triplet(&b) >= 0.0 && hier >= 0.0);
}

#[test]
fn step_size_is_first_order() {
    let b = seeded_batch(1, cfg(), 3, 1).unwrap();
    let g = grad(Objective::Total, &b).unwrap();
    let pts: Vec<_> = b.points().into_iter().cloned().collect();
    let ratio = |lr: f64| {
        let next = rsgd_step(&pts, &g, lr).unwrap();
        let moved: f64 = pts
            .iter()
            .zip(&next)
            .map(|(a, b)| {
                a.coords()
                    .iter()
                    .zip(b.coords())
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt();
        moved / lr
    };
    let rs: Vec<f64> = (0..6).map(|i| ratio(0.01 / 2f64.powi(i))).collect();
    let diffs: Vec<f64> = rs.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    assert!(rs.iter().all(|r| r.is_finite() && *r < 1e3));
    assert!(diffs.windows(2).all(|w| w[1] <= w[0] * 0.75), "{rs:?}");
}

#[test]
fn toy_problem_converges() {
    let b = seeded_batch(2024, cfg(), 3, 1).unwrap();
    let (_, hist) = optimize(Objective::Total, &b, 200, 0.05).unwrap();
    eprintln!("{} -> {}", hist[0], hist[200]);
    assert!(hist[200] < 0.5 * hist[0]);
}
