//! Ideal particles: each particle follows the velocity field of an external
//! reference run instead of its own ensemble's.

use std::time::Instant;

use crate::error::{config, Result};
use crate::problem::MomentProblem;

use super::config::{DynConfig, Integrator};
use super::engine::{check_finite, initial_ensembles, rk4_combine, Checkpoint, Trajectory};
use super::field::{apply, velocities};

const GRID_TOL: f64 = 1e-9;

/// Integrates the configured particles through the fields recorded in
/// `reference`, on the reference's time grid and with its integrator.
///
/// Particles never interact: particle `i` depends only on its own
/// initialization and the reference fields.
pub fn run_ip(p: &dyn MomentProblem, cfg: &DynConfig, reference: &Trajectory) -> Result<Trajectory> {
    cfg.validate()?;
    let Some(fields) = reference.fields.as_ref() else {
        return config("reference trajectory has no recorded velocity fields");
    };
    if cfg.integrator != reference.integrator {
        return config("ideal-particle integrator must match the reference run");
    }
    let ref_alpha = reference.initial().primal.alpha();
    if (ref_alpha - cfg.alpha).abs() > 0.0 || (reference.eta - cfg.eta()).abs() > 0.0 {
        return config("ideal particles need the reference's alpha and eta");
    }
    let h = reference.grid_step;
    let horizon = cfg.horizon();
    let grid_index = |t: f64| -> Option<usize> {
        let j = (t / h).round();
        ((j * h - t).abs() <= GRID_TOL * t.max(1.0)).then_some(j as usize)
    };
    match grid_index(horizon) {
        Some(j) if j <= fields.len() => {}
        _ => {
            return config(format!(
                "time-grid mismatch: horizon {horizon} is not covered by the reference grid ({} steps of {h})",
                fields.len()
            ))
        }
    }
    let mut marks = Vec::new();
    for k in cfg.checkpoint_iterations() {
        let t = k as f64 * cfg.eps();
        let Some(j) = grid_index(t) else {
            return config(format!("time-grid mismatch: checkpoint t = {t} is not on the reference grid (step {h})"));
        };
        marks.push((j, k, t));
    }

    let (mut f, mut g) = initial_ensembles(p, cfg)?;
    let start = Instant::now();
    let a = cfg.eta() * h;
    let last = marks.last().map_or(0, |m| m.0);
    let mut checkpoints = Vec::with_capacity(marks.len());
    let mut next = 0;
    for j in 0..=last {
        while next < marks.len() && marks[next].0 == j {
            let (_, k, t) = marks[next];
            checkpoints.push(Checkpoint {
                iteration: k,
                t,
                primal: f.clone(),
                dual: g.clone(),
                wall_secs: start.elapsed().as_secs_f64(),
            });
            next += 1;
        }
        if j == last {
            break;
        }
        let stages = &fields[j];
        match cfg.integrator {
            Integrator::Euler => {
                apply(&mut f, &stages[0].primal, a);
                apply(&mut g, &stages[0].dual, a);
            }
            Integrator::Rk4 => {
                let stage = |e: &crate::ensemble::ParticleEnsemble, k: &[f64], s: f64| {
                    let mut out = e.clone();
                    for (x, v) in out.as_flat_mut().iter_mut().zip(k) {
                        *x += s * v;
                    }
                    out
                };
                let (kf1, kg1) = (velocities(&f, &stages[0].primal), velocities(&g, &stages[0].dual));
                let (ft, gt) = (stage(&f, &kf1, 0.5 * a), stage(&g, &kg1, 0.5 * a));
                let (kf2, kg2) = (velocities(&ft, &stages[1].primal), velocities(&gt, &stages[1].dual));
                let (ft, gt) = (stage(&f, &kf2, 0.5 * a), stage(&g, &kg2, 0.5 * a));
                let (kf3, kg3) = (velocities(&ft, &stages[2].primal), velocities(&gt, &stages[2].dual));
                let (ft, gt) = (stage(&f, &kf3, a), stage(&g, &kg3, a));
                let (kf4, kg4) = (velocities(&ft, &stages[3].primal), velocities(&gt, &stages[3].dual));
                rk4_combine(&mut f, &kf1, &kf2, &kf3, &kf4, a);
                rk4_combine(&mut g, &kg1, &kg2, &kg3, &kg4, a);
            }
        }
        check_finite(&f, &g, j + 1)?;
    }

    Ok(Trajectory { eps: cfg.eps(), eta: cfg.eta(), checkpoints, grid_step: h, integrator: cfg.integrator, fields: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::config::{Checkpoints, Expectation};
    use crate::dynamics::engine::run_ctpgda;
    use crate::problem::toy::Toy;

    fn reference_cfg(width: usize, integrator: Integrator) -> DynConfig {
        let mut c = DynConfig::new(2.0, width, 12, 5);
        c.eps = Some(0.125);
        c.expectation = Expectation::MonteCarlo { batch: 4 };
        c.integrator = integrator;
        c.checkpoints = Checkpoints::Every(4);
        c.record_field = true;
        c
    }

    #[test]
    fn self_reference_reproduces_ctpgda() {
        for integrator in [Integrator::Euler, Integrator::Rk4] {
            let c = reference_cfg(8, integrator);
            let p = Toy { lambda: 0.1 };
            let reference = run_ctpgda(&p, &c).unwrap();
            let ip = run_ip(&p, &c, &reference).unwrap();
            assert_eq!(ip.checkpoints.len(), reference.checkpoints.len());
            for (a, b) in ip.checkpoints.iter().zip(&reference.checkpoints) {
                assert_eq!(a.iteration, b.iteration);
                assert_eq!(a.primal, b.primal);
                assert_eq!(a.dual, b.dual);
            }
        }
    }

    #[test]
    fn single_particle_path_is_independent_of_company() {
        let p = Toy { lambda: 0.1 };
        let reference = run_ctpgda(&p, &reference_cfg(16, Integrator::Rk4)).unwrap();
        let mut alone = reference_cfg(1, Integrator::Rk4);
        alone.record_field = false;
        let mut crowd = alone.clone();
        crowd.n_primal = 6;
        crowd.n_dual = 6;
        let a = run_ip(&p, &alone, &reference).unwrap();
        let b = run_ip(&p, &crowd, &reference).unwrap();
        // The first particle of the crowd has the same initialization.
        assert_eq!(a.initial().primal.particle(0), b.initial().primal.particle(0));
        assert_eq!(a.last().primal.particle(0), b.last().primal.particle(0));
        assert_eq!(a.last().dual.particle(0), b.last().dual.particle(0));
    }

    #[test]
    fn misaligned_grid_is_rejected() {
        let p = Toy { lambda: 0.1 };
        let reference = run_ctpgda(&p, &reference_cfg(8, Integrator::Euler)).unwrap();
        let mut c = reference_cfg(8, Integrator::Euler);
        c.eps = Some(0.1);
        let err = run_ip(&p, &c, &reference).unwrap_err().to_string();
        assert!(err.contains("time-grid mismatch"), "{err}");
        let mut c = reference_cfg(8, Integrator::Euler);
        c.steps = 40;
        assert!(run_ip(&p, &c, &reference).is_err());
    }
}
