//! Metrics requested by name and evaluated at every checkpoint.

use fcme_core::dynamics::{Side, Trajectory};
use fcme_core::metrics::{
    deviation_from_init, fenchel_gap, joint_deviation, potential_v, primal_j, stationarity_residual, Estimate,
    MetricRecord, Source,
};
use fcme_core::{GroundTruth, MomentProblem};

use crate::error::{CliError, CliResult};

pub const KNOWN: &[&str] = &[
    "potential_v",
    "primal_j",
    "objective_gap",
    "fenchel_gap",
    "stationarity",
    "l2_error",
    "w2_primal",
    "w2_dual",
    "w2_joint",
    "anchor_value",
];

/// Default Monte Carlo evaluation batch for continuous problems.
pub const DEFAULT_EVAL_BATCH: usize = 20_000;

/// Exact population when available and no batch was requested.
pub fn source_for(p: &dyn MomentProblem, eval_batch: Option<usize>, seed: u64) -> Source {
    match eval_batch {
        None if p.population().is_some() => Source::Population,
        n => Source::MonteCarlo { n: n.unwrap_or(DEFAULT_EVAL_BATCH), seed },
    }
}

/// `E[(f(X) − f*(X))²]` under the data law.
pub fn l2_error(p: &dyn MomentProblem, gt: &dyn GroundTruth, f: &dyn Fn(&[f64]) -> f64, source: &Source) -> CliResult<Estimate> {
    let batch = source.draw(p)?;
    let weights: Vec<f64> = batch.iter().map(|b| b.0).collect();
    let terms: Vec<f64> = batch.iter().map(|(_, s)| (f(&s.x) - gt.f_star(&s.x)).powi(2)).collect();
    Ok(Estimate::from_terms(&weights, &terms, matches!(source, Source::Population), 0.0))
}

/// One record per (checkpoint, metric), checkpoint-major, in request order.
pub fn evaluate(
    p: &dyn MomentProblem,
    gt: &dyn GroundTruth,
    traj: &Trajectory,
    names: &[String],
    source: &Source,
) -> CliResult<Vec<MetricRecord>> {
    let wants = |n: &str| names.iter().any(|m| m == n);
    let series = |name: &str| -> CliResult<Option<Vec<f64>>> {
        Ok(match name {
            "w2_primal" if wants(name) => Some(deviation_from_init(traj, Side::Primal)?),
            "w2_dual" if wants(name) => Some(deviation_from_init(traj, Side::Dual)?),
            "w2_joint" if wants(name) => Some(joint_deviation(traj)?),
            _ => None,
        })
    };
    let (w2p, w2d, w2j) = (series("w2_primal")?, series("w2_dual")?, series("w2_joint")?);
    let j_star = if wants("objective_gap") {
        let fs = |w: &[f64]| gt.f_star(w);
        Some(primal_j(p, gt, &fs, source)?.value)
    } else {
        None
    };

    let mut out = Vec::new();
    for (k, cp) in traj.checkpoints.iter().enumerate() {
        let (it, t) = (cp.iteration, cp.t);
        let f = cp.primal.func();
        let g = cp.dual.func();
        for name in names {
            let rec = |e: Estimate| MetricRecord::from_estimate(name.as_str(), it, t, e);
            match name.as_str() {
                "potential_v" => out.push(rec(potential_v(p, gt, &f, &g, source)?)),
                "primal_j" => out.push(rec(primal_j(p, gt, &f, source)?)),
                "objective_gap" => {
                    let e = primal_j(p, gt, &f, source)?;
                    out.push(rec(Estimate { value: e.value - j_star.expect("computed above"), stderr: e.stderr }));
                }
                "fenchel_gap" => out.push(rec(fenchel_gap(p, gt, &f, &g, source)?)),
                "stationarity" => {
                    let r = stationarity_residual(p, &cp.primal, &cp.dual, source)?;
                    out.push(MetricRecord::from_estimate("stationarity_primal", it, t, r.primal));
                    out.push(MetricRecord::from_estimate("stationarity_dual", it, t, r.dual));
                }
                "l2_error" => out.push(rec(l2_error(p, gt, &f, source)?)),
                "w2_primal" => out.push(MetricRecord::new(name.as_str(), it, t, w2p.as_ref().expect("computed")[k], None)),
                "w2_dual" => out.push(MetricRecord::new(name.as_str(), it, t, w2d.as_ref().expect("computed")[k], None)),
                "w2_joint" => out.push(MetricRecord::new(name.as_str(), it, t, w2j.as_ref().expect("computed")[k], None)),
                "anchor_value" => {
                    let a = p
                        .anchor()
                        .ok_or_else(|| CliError::Config(format!("anchor_value: problem '{}' has no anchor", p.name())))?;
                    out.push(MetricRecord::new(name.as_str(), it, t, f(&a.point), None));
                }
                other => return Err(CliError::Config(format!("unknown metric '{other}'"))),
            }
        }
    }
    Ok(out)
}
