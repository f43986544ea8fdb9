//! Self-contained invariant suites, small enough to run on every `verify`.
//!
//! Each suite is seeded and returns a [`CheckOutcome`] instead of panicking,
//! so callers can report every failure at once.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::hypgeo::{self, kernel, BallConfig, BallPoint, TangentVec};
use crate::index::{
    build_index, decode_index, encode_index, exhaustive_search, retrieve, EvalCounter,
    RetrievalConfig, StoredLevels,
};
use crate::losses::{self, Objective};
use crate::synth::{generate_dataset, SceneSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn from_result(name: &'static str, r: Result<std::result::Result<String, String>>) -> Self {
        match r {
            Ok(Ok(detail)) => Self {
                name,
                passed: true,
                detail,
            },
            Ok(Err(detail)) => Self {
                name,
                passed: false,
                detail,
            },
            Err(e) => Self {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        }
    }
}

/// Uniform direction, radius `≤ max_r` (scaled so norms spread out).
pub(crate) fn random_point(rng: &mut ChaCha8Rng, cfg: BallConfig, max_r: f64) -> BallPoint {
    let dir: Vec<f64> = (0..cfg.dim())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let n = kernel::norm(&dir).max(1e-300);
    let r = max_r * rng.random::<f64>();
    let v: Vec<f64> = dir.iter().map(|x| x * r / n).collect();
    hypgeo::project_to_ball(&v, cfg).expect("finite coordinates")
}

fn geometry(samples: usize, seed: u64) -> Result<std::result::Result<String, String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, 0.0f64, 0.0f64, 0.0f64); // symmetry, triangle excess, eq-forms rel, roundtrip
    for dim in [2, 8, 64] {
        let cfg = BallConfig::new(1.0, dim)?;
        for _ in 0..samples {
            let x = random_point(&mut rng, cfg, 0.95);
            let y = random_point(&mut rng, cfg, 0.95);
            let z = random_point(&mut rng, cfg, 0.95);
            let dxy = hypgeo::dist(&x, &y)?;
            let dyx = hypgeo::dist(&y, &x)?;
            if hypgeo::dist(&x, &x)? != 0.0 {
                return Ok(Err(format!("d(x,x) != 0 at D={dim}")));
            }
            worst.0 = worst.0.max((dxy - dyx).abs());
            let excess = dxy - hypgeo::dist(&x, &z)? - hypgeo::dist(&z, &y)?;
            worst.1 = worst.1.max(excess);
            let alt = kernel::dist_arcosh(x.coords(), y.coords(), 1.0);
            if dxy > 1e-6 {
                worst.2 = worst.2.max((dxy - alt).abs() / dxy);
            }
            let base = random_point(&mut rng, cfg, 0.3);
            let dir: Vec<f64> = (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let scale = 5.0 * rng.random::<f64>() / kernel::norm(&dir);
            let v = TangentVec::new(dir.iter().map(|d| d * scale).collect())?;
            let back = hypgeo::log_map(&base, &hypgeo::exp_map(&base, &v)?)?;
            let err = v
                .coords()
                .iter()
                .zip(back.coords())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst.3 = worst.3.max(err);
        }
    }
    let detail = format!(
        "symmetry {:.1e}, triangle excess {:.1e}, closed-form gap {:.1e}, roundtrip {:.1e}",
        worst.0, worst.1, worst.2, worst.3
    );
    let ok = worst.0 <= 1e-12 && worst.1 <= 1e-9 && worst.2 <= 1e-9 && worst.3 <= 1e-9;
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

fn midpoint(groups: usize, seed: u64) -> Result<std::result::Result<String, String>> {
    let cfg1 = BallConfig::new(1.0, 1)?;
    let two = [
        hypgeo::project_to_ball(&[0.0], cfg1)?,
        hypgeo::project_to_ball(&[0.6], cfg1)?,
    ];
    let m = hypgeo::einstein_midpoint(&two)?;
    if (m.coords()[0] - 1.0 / 3.0).abs() > 1e-12 {
        return Ok(Err(format!("midpoint of {{0, 0.6}} = {}", m.coords()[0])));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = BallConfig::new(1.0, 8)?;
    let mut worst_excess = f64::NEG_INFINITY;
    for g in 0..groups {
        let n = 2 + g % 7;
        let mut pts: Vec<BallPoint> = (0..n).map(|_| random_point(&mut rng, cfg, 0.99)).collect();
        let m = hypgeo::einstein_midpoint(&pts)?;
        pts.reverse();
        pts.rotate_left(g % n);
        if hypgeo::einstein_midpoint(&pts)? != m {
            return Ok(Err("midpoint changed under permutation".into()));
        }
        let bound = pts.iter().map(BallPoint::norm).fold(0.0, f64::max);
        worst_excess = worst_excess.max(m.norm() - bound);
    }
    let detail = format!("max norm excess over group {worst_excess:.1e}");
    Ok(if worst_excess <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    })
}

fn retrieval() -> Result<std::result::Result<String, String>> {
    let spec = SceneSpec {
        n_panoramas: 60,
        channels: 16,
        grid_height: 2,
        grid_width: 2,
        levels: 5,
        noise: 0.1,
        n_queries: 20,
        seed: 7,
    };
    let ds = generate_dataset(&spec)?;
    let enc = spec.encoder(1.0)?;
    let index = build_index(&ds.panoramas, &enc, StoredLevels::new(&[1, 5], 5)?)?;
    let n = index.len();
    let cfg = RetrievalConfig::new(n, vec![5], vec![0.0, 1.0], n, 5)?;
    let hier_cfg = RetrievalConfig::uniform(10, vec![5], 5, 5)?;
    for q in &ds.queries {
        let qp = enc.embed_query(&q.grid)?;
        let mut c = EvalCounter::new();
        let a: Vec<u64> = retrieve(&index, &qp, &cfg, &mut c)?
            .iter()
            .map(|r| r.id)
            .collect();
        let mut ce = EvalCounter::new();
        let b: Vec<u64> = exhaustive_search(&index, &qp, n, &mut ce)?
            .iter()
            .map(|r| r.id)
            .collect();
        if a != b {
            return Ok(Err(
                "full-shortlist leaf rescoring differs from exhaustive ranking".into(),
            ));
        }
        if ce.get() != (n * 16) as u64 {
            return Ok(Err(format!("exhaustive count {} != {}", ce.get(), n * 16)));
        }
        let mut ch = EvalCounter::new();
        retrieve(&index, &qp, &hier_cfg, &mut ch)?;
        if ch.get() != (n + 10 * 16) as u64 {
            return Ok(Err(format!(
                "hierarchical count {} != {}",
                ch.get(),
                n + 160
            )));
        }
    }
    let b = StoredLevels::new(&[1, 4], 5)?.payload_bytes(2048);
    let l = StoredLevels::new(&[1, 5], 5)?.payload_bytes(2048);
    if b * 17 != l * 9 {
        return Ok(Err(format!("payload ratio {b}/{l} is not 9/17")));
    }
    let bytes = encode_index(&index);
    if decode_index(&bytes)? != index {
        return Ok(Err("decoded index differs from the original".into()));
    }
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    if decode_index(&bad).is_ok() || decode_index(&bytes[..bytes.len() - 1]).is_ok() {
        return Ok(Err("corrupted index bytes were accepted".into()));
    }
    Ok(Ok(format!("{} queries over {n} records", ds.queries.len())))
}

fn gradients(configs: usize) -> Result<std::result::Result<String, String>> {
    let cfg = BallConfig::new(1.0, 4)?;
    let mut worst = 0.0f64;
    for obj in [Objective::Hier, Objective::Hyp, Objective::Euc] {
        let (mut seed, mut done) = (0u64, 0);
        while done < configs {
            let batch = losses::seeded_batch(seed, cfg, 3, 2)?;
            seed += 1;
            let report = losses::grad_check(obj, &batch)?;
            if report.nondifferentiable {
                continue;
            }
            worst = worst.max(report.max_rel_error);
            done += 1;
        }
    }
    let toy = losses::seeded_batch(2024, cfg, 3, 1)?;
    let (_, hist) = losses::optimize(Objective::Total, &toy, 200, 0.05)?;
    let (first, last) = (hist[0], *hist.last().expect("history is nonempty"));
    let detail = format!("max relative error {worst:.1e}; toy loss {first:.3} -> {last:.3}");
    Ok(if worst < 1e-4 && last < 0.5 * first {
        Ok(detail)
    } else {
        Err(detail)
    })
}

/// Run every suite.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        CheckOutcome::from_result("geometry", geometry(300, 1)),
        CheckOutcome::from_result("midpoint", midpoint(300, 2)),
        CheckOutcome::from_result("retrieval", retrieval()),
        CheckOutcome::from_result("gradients", gradients(10)),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn suites_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
