//! Wasserstein distances between equal-weight empirical measures.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::Trajectory;
use crate::dynamics::Side;
use crate::error::{config, Error, Result};
use crate::rng::{stream, stream_rng};

use super::assignment::min_cost_assignment;

/// Largest point set handled by the exact solver.
pub const EXACT_CAP: usize = 1024;

/// Projection count used when the exact solver is out of reach.
pub const SLICED_PROJECTIONS: usize = 256;

fn check_sets(a: &[f64], b: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || a.len() % dim != 0 {
        return config(format!("point buffer of length {} is not a multiple of dimension {dim}", a.len()));
    }
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), got: b.len() });
    }
    Ok(a.len() / dim)
}

/// Exact `W₂` between `{aᵢ}` and `{bᵢ}`, each a flat `n × dim` buffer.
pub fn w2_exact(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    let n = check_sets(a, b, dim)?;
    if n > EXACT_CAP {
        return Err(Error::OverCap { n, cap: EXACT_CAP });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut cost = vec![0.0; n * n];
    for (i, pa) in a.chunks_exact(dim).enumerate() {
        for (j, pb) in b.chunks_exact(dim).enumerate() {
            cost[i * n + j] = pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    let assign = min_cost_assignment(n, &cost);
    // Summing matched costs in sorted order makes the result exactly symmetric.
    let mut matched: Vec<f64> = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    matched.sort_unstable_by(f64::total_cmp);
    let total: f64 = matched.iter().sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Sliced `W₁` and `W₂` over the same random directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sliced {
    pub w1: f64,
    pub w2: f64,
}

pub fn sliced(a: &[f64], b: &[f64], dim: usize, projections: usize, seed: u64) -> Result<Sliced> {
    let n = check_sets(a, b, dim)?;
    if projections == 0 {
        return config("sliced distance needs at least one projection");
    }
    if n == 0 {
        return Ok(Sliced { w1: 0.0, w2: 0.0 });
    }
    let mut rng = stream_rng(seed, stream::METRICS);
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut pa = vec![0.0; n];
    let mut pb = vec![0.0; n];
    for _ in 0..projections {
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        let project = |p: &[f64]| p.iter().zip(&dir).map(|(x, u)| x * u).sum::<f64>();
        pa.iter_mut().zip(a.chunks_exact(dim)).for_each(|(o, p)| *o = project(p));
        pb.iter_mut().zip(b.chunks_exact(dim)).for_each(|(o, p)| *o = project(p));
        pa.sort_unstable_by(f64::total_cmp);
        pb.sort_unstable_by(f64::total_cmp);
        let (mut c1, mut c2) = (0.0, 0.0);
        for (x, y) in pa.iter().zip(&pb) {
            c1 += (x - y).abs();
            c2 += (x - y) * (x - y);
        }
        s1 += c1 / n as f64;
        s2 += c2 / n as f64;
    }
    let k = projections as f64;
    Ok(Sliced { w1: s1 / k, w2: (s2 / k).sqrt() })
}

/// Root mean of squared 1-D `W₂` over `projections` random unit directions.
pub fn w2_sliced(a: &[f64], b: &[f64], dim: usize, projections: usize, seed: u64) -> Result<f64> {
    Ok(sliced(a, b, dim, projections, seed)?.w2)
}

/// Exact `W₂` within the solver cap, sliced beyond it.
pub fn w2_auto(a: &[f64], b: &[f64], dim: usize, seed: u64) -> Result<f64> {
    if a.len() / dim.max(1) <= EXACT_CAP {
        w2_exact(a, b, dim)
    } else {
        w2_sliced(a, b, dim, SLICED_PROJECTIONS, seed)
    }
}

/// `W₂(μ_t, μ₀)` (or the dual analogue) at every checkpoint.
pub fn deviation_from_init(traj: &Trajectory, side: Side) -> Result<Vec<f64>> {
    let pick = |c: &crate::dynamics::Checkpoint| match side {
        Side::Primal => c.primal.clone(),
        Side::Dual => c.dual.clone(),
    };
    let init = pick(traj.initial());
    traj.checkpoints
        .iter()
        .map(|c| {
            let e = pick(c);
            w2_auto(e.as_flat(), init.as_flat(), e.dim(), c.iteration as u64)
        })
        .collect()
}

/// Upper bound `√(W₂(μ_t, μ₀)² + W₂(ν_t, ν₀)²)` on the product-measure distance.
pub fn joint_deviation(traj: &Trajectory) -> Result<Vec<f64>> {
    let p = deviation_from_init(traj, Side::Primal)?;
    let d = deviation_from_init(traj, Side::Dual)?;
    Ok(p.iter().zip(&d).map(|(a, b)| a.hypot(*b)).collect())
}
