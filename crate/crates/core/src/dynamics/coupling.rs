//! Coupled runs measuring the error decomposition
//! reference → IP → CTPGDA → PGDA → SGDA, width by width.
//!
//! All legs of one width share the initialization (same seed and width) and
//! the per-iteration sample stream. The reference is a continuous-time run
//! at width `n_ref` that records its fields; the continuous-time legs at
//! width `N` use the same integrator and internal step, so at `N = n_ref`
//! they coincide with the reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::ParticleEnsemble;
use crate::error::{config, Result};
use crate::metrics::weak::{default_dictionary, weak_error, TestFunction};
use crate::problem::MomentProblem;

use super::config::{Checkpoints, DynConfig};
use super::engine::{run_ctpgda, run_pgda, run_sgda, Checkpoint, Trajectory};
use super::ip::run_ip;

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    /// Shared settings; widths, `eps`, `steps` and checkpoints are overridden per leg.
    pub base: DynConfig,
    pub widths: Vec<usize>,
    pub n_ref: usize,
    /// Time horizon `T`.
    pub horizon: f64,
    /// Internal step of the reference and of every continuous-time leg.
    pub ref_step: f64,
    /// Gaps are reported at `t_c = c T / n_checkpoints`, `c = 0..=n_checkpoints`.
    pub n_checkpoints: usize,
    /// Independent initializations per width (seeds `seed`, `seed + 1`, ...).
    pub replicates: usize,
}

/// Per-width results, each series indexed by the common checkpoint times and
/// averaged over replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthReport {
    pub width: usize,
    pub ip_ctpgda: Vec<f64>,
    pub ctpgda_pgda: Vec<f64>,
    pub pgda_sgda: Vec<f64>,
    /// Weak error of SGDA against the reference.
    pub weak_error: Vec<f64>,
}

impl WidthReport {
    pub fn sup_weak_error(&self) -> f64 {
        self.weak_error.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingReport {
    pub n_ref: usize,
    pub times: Vec<f64>,
    pub widths: Vec<WidthReport>,
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return config("coupling needs at least one width");
        }
        if self.n_ref == 0 || self.widths.contains(&0) {
            return config("widths and n_ref must be at least 1");
        }
        if self.n_checkpoints == 0 || self.replicates == 0 {
            return config("n_checkpoints and replicates must be at least 1");
        }
        if !(self.horizon > 0.0 && self.ref_step > 0.0) {
            return config("horizon and ref_step must be positive");
        }
        steps_for(self.horizon, self.ref_step, "ref_step")?;
        for t in self.times() {
            steps_for(t, self.ref_step, "ref_step")?;
            for &n in &self.widths {
                steps_for(t, 1.0 / n as f64, "1/width")?;
            }
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_checkpoints).map(|c| c as f64 * self.horizon / self.n_checkpoints as f64).collect()
    }

    fn leg(&self, width: usize, eps: f64, seed: u64) -> Result<DynConfig> {
        let mut c = self.base.clone();
        c.n_primal = width;
        c.n_dual = width;
        c.eps = Some(eps);
        c.substeps = 1;
        c.seed = seed;
        c.steps = steps_for(self.horizon, eps, "step")?;
        c.checkpoints = Checkpoints::Iterations(
            self.times().iter().map(|&t| steps_for(t, eps, "step")).collect::<Result<_>>()?,
        );
        c.record_field = false;
        Ok(c)
    }
}

/// `t / step` when it is an integer (to rounding), else a configuration error.
fn steps_for(t: f64, step: f64, what: &str) -> Result<usize> {
    let k = (t / step).round();
    if (k * step - t).abs() > GRID_TOL * t.max(1.0) {
        return config(format!("time-grid mismatch: t = {t} is not a multiple of {what} = {step}"));
    }
    Ok(k as usize)
}

/// `sup_i √(‖θᵢ − θ'ᵢ‖² + ‖ωᵢ − ω'ᵢ‖²)` between two same-width checkpoints.
pub fn sup_gap(a: &Checkpoint, b: &Checkpoint) -> f64 {
    let per = |x: &ParticleEnsemble, y: &ParticleEnsemble| -> Vec<f64> {
        x.particles().zip(y.particles()).map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum()).collect()
    };
    let f = per(&a.primal, &b.primal);
    let g = per(&a.dual, &b.dual);
    f.iter().zip(&g).map(|(x, y)| (x + y).sqrt()).fold(0.0, f64::max)
}

fn series_gap(a: &Trajectory, b: &Trajectory) -> Vec<f64> {
    a.checkpoints.iter().zip(&b.checkpoints).map(|(x, y)| sup_gap(x, y)).collect()
}

/// Weak error between two checkpoints: the larger of the primal and dual
/// cloud distances.
pub fn checkpoint_weak_error(primal_dict: &[TestFunction], dual_dict: &[TestFunction], a: &Checkpoint, b: &Checkpoint) -> Result<f64> {
    let f = weak_error(primal_dict, a.primal.as_flat(), b.primal.as_flat(), a.primal.dim())?;
    let g = weak_error(dual_dict, a.dual.as_flat(), b.dual.as_flat(), a.dual.dim())?;
    Ok(f.max(g))
}

/// The continuous-time reference run at width `n_ref`.
pub fn reference_run(p: &dyn MomentProblem, cc: &CouplingConfig) -> Result<Trajectory> {
    let mut c = cc.leg(cc.n_ref, cc.ref_step, cc.base.seed)?;
    c.record_field = true;
    run_ctpgda(p, &c)
}

struct Legs {
    ip_ctpgda: Vec<f64>,
    ctpgda_pgda: Vec<f64>,
    pgda_sgda: Vec<f64>,
    weak_error: Vec<f64>,
}

fn run_legs(
    p: &dyn MomentProblem,
    cc: &CouplingConfig,
    reference: &Trajectory,
    dicts: &(Vec<TestFunction>, Vec<TestFunction>),
    width: usize,
    seed: u64,
) -> Result<Legs> {
    let discrete = cc.leg(width, 1.0 / width as f64, seed)?;
    let continuous = cc.leg(width, cc.ref_step, seed)?;
    let sgda = run_sgda(p, &discrete)?;
    let pgda = run_pgda(p, &discrete)?;
    let ct = run_ctpgda(p, &continuous)?;
    let ip = run_ip(p, &continuous, reference)?;
    let weak_error = sgda
        .checkpoints
        .iter()
        .zip(&reference.checkpoints)
        .map(|(a, b)| checkpoint_weak_error(&dicts.0, &dicts.1, a, b))
        .collect::<Result<_>>()?;
    Ok(Legs {
        ip_ctpgda: series_gap(&ip, &ct),
        ctpgda_pgda: series_gap(&ct, &pgda),
        pgda_sgda: series_gap(&pgda, &sgda),
        weak_error,
    })
}

fn mean_series(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len()).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n).collect()
}

/// Runs the reference and, per width and replicate, the four coupled legs.
pub fn couple_dynamics(p: &dyn MomentProblem, cc: &CouplingConfig) -> Result<CouplingReport> {
    cc.validate()?;
    let reference = reference_run(p, cc)?;
    couple_with_reference(p, cc, &reference)
}

/// As [`couple_dynamics`], against an already computed reference.
pub fn couple_with_reference(p: &dyn MomentProblem, cc: &CouplingConfig, reference: &Trajectory) -> Result<CouplingReport> {
    cc.validate()?;
    let dicts = (
        default_dictionary(p.primal_dim() + 2, cc.base.seed),
        default_dictionary(p.dual_dim() + 2, cc.base.seed.wrapping_add(1)),
    );
    let jobs: Vec<(usize, u64)> = cc
        .widths
        .iter()
        .flat_map(|&n| (0..cc.replicates as u64).map(move |r| (n, cc.base.seed.wrapping_add(r))))
        .collect();
    let legs: Vec<Legs> =
        jobs.par_iter().map(|&(n, seed)| run_legs(p, cc, reference, &dicts, n, seed)).collect::<Result<_>>()?;
    let widths = cc
        .widths
        .iter()
        .enumerate()
        .map(|(w, &width)| {
            let mine = &legs[w * cc.replicates..(w + 1) * cc.replicates];
            let collect = |f: fn(&Legs) -> &Vec<f64>| mean_series(&mine.iter().map(|l| f(l).clone()).collect::<Vec<_>>());
            WidthReport {
                width,
                ip_ctpgda: collect(|l| &l.ip_ctpgda),
                ctpgda_pgda: collect(|l| &l.ctpgda_pgda),
                pgda_sgda: collect(|l| &l.pgda_sgda),
                weak_error: collect(|l| &l.weak_error),
            }
        })
        .collect();
    Ok(CouplingReport { n_ref: cc.n_ref, times: cc.times(), widths })
}

/// Sup over time of the PGDA–SGDA gap at horizon `T` for each stepsize scale,
/// at fixed width `base.n_primal`, averaged over `replicates` seeds.
pub fn pgda_sgda_gap(
    p: &dyn MomentProblem,
    base: &DynConfig,
    horizon: f64,
    eps_values: &[f64],
    n_checkpoints: usize,
    replicates: usize,
) -> Result<Vec<(f64, f64)>> {
    if replicates == 0 || n_checkpoints == 0 {
        return config("replicates and n_checkpoints must be at least 1");
    }
    eps_values
        .iter()
        .map(|&eps| {
            let mut total = 0.0;
            for r in 0..replicates as u64 {
                let mut c = base.clone();
                c.eps = Some(eps);
                c.seed = base.seed.wrapping_add(r);
                c.steps = steps_for(horizon, eps, "eps")?;
                let marks = (0..=n_checkpoints)
                    .map(|j| steps_for(j as f64 * horizon / n_checkpoints as f64, eps, "eps"))
                    .collect::<Result<_>>()?;
                c.checkpoints = Checkpoints::Iterations(marks);
                let gap = series_gap(&run_pgda(p, &c)?, &run_sgda(p, &c)?).into_iter().fold(0.0, f64::max);
                total += gap;
            }
            Ok((eps, total / replicates as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::config::{Expectation, Integrator};
    use crate::problem::toy::Toy;

    fn cfg(widths: Vec<usize>, n_ref: usize, integrator: Integrator, ref_step: f64) -> CouplingConfig {
        let mut base = DynConfig::new(2.0, 1, 1, 11);
        base.expectation = Expectation::MonteCarlo { batch: 4 };
        base.integrator = integrator;
        CouplingConfig { base, widths, n_ref, horizon: 1.0, ref_step, n_checkpoints: 4, replicates: 1 }
    }

    #[test]
    fn self_comparison_is_exact() {
        let p = Toy { lambda: 0.1 };
        let report = couple_dynamics(&p, &cfg(vec![16], 16, Integrator::Rk4, 1.0 / 32.0)).unwrap();
        let w = &report.widths[0];
        assert!(w.ip_ctpgda.iter().all(|&g| g == 0.0), "{:?}", w.ip_ctpgda);
        assert_eq!(report.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn euler_at_matched_step_equals_pgda() {
        let p = Toy { lambda: 0.1 };
        let report = couple_dynamics(&p, &cfg(vec![8], 32, Integrator::Euler, 1.0 / 8.0)).unwrap();
        let w = &report.widths[0];
        assert!(w.ctpgda_pgda.iter().all(|&g| g == 0.0), "{:?}", w.ctpgda_pgda);
    }

    #[test]
    fn every_gap_starts_at_zero() {
        let p = Toy { lambda: 0.1 };
        let report = couple_dynamics(&p, &cfg(vec![4, 8], 32, Integrator::Rk4, 1.0 / 16.0)).unwrap();
        for w in &report.widths {
            assert_eq!((w.ip_ctpgda[0], w.ctpgda_pgda[0], w.pgda_sgda[0]), (0.0, 0.0, 0.0));
            assert!(w.pgda_sgda[4] > 0.0);
        }
    }

    #[test]
    fn off_grid_times_are_rejected() {
        let p = Toy { lambda: 0.1 };
        let mut c = cfg(vec![3], 16, Integrator::Euler, 1.0 / 16.0);
        let err = couple_dynamics(&p, &c).unwrap_err().to_string();
        assert!(err.contains("time-grid mismatch"), "{err}");
        c.widths = vec![];
        assert!(couple_dynamics(&p, &c).is_err());
    }
}
