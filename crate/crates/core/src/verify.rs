//! Fast invariant suite: drift gradients against finite differences, metric
//! axioms, problem checkers and stationarity at the oracles.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::applications::{
    make_ccapm, make_npiv, make_policy_eval, make_riesz, riesz::representer_gap, CcapmChain, FiniteMdp, NpivDesign,
    RieszShift,
};
use crate::dynamics::{sgda_update_direction, Side};
use crate::ensemble::{NetKind, ParticleEnsemble};
use crate::error::Result;
use crate::metrics::{
    default_dictionary, fenchel_gap, potential_v, sliced, stationarity_residual, w2_exact, weak_error, Source,
};
use crate::problem::{check_problem, pair, GroundTruth, MomentProblem, Sample};
use crate::rng::{stream, stream_rng};

/// A deliberate bug injected into the checked code path, to confirm the
/// suite notices it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negate every dual update direction.
    FlipDualSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed value against its tolerance, or the failing witness.
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

/// Output scale of the oracle fits: large enough that the output weights
/// stay within the unit range at these targets.
const ORACLE_ALPHA: f64 = 64.0;
const ORACLE_WIDTH: usize = 256;
const ORACLE_SLOPE: f64 = 16.0;
const ORACLE_RIDGE: f64 = 1e-11;

/// A primal network interpolating `target` at `points` (1-D inputs), built
/// from evenly spaced ramp neurons with a least-squares output layer.
pub fn fit_oracle(points: &[Vec<f64>], target: &[f64]) -> Result<ParticleEnsemble> {
    ParticleEnsemble::ramps(NetKind::Primal, ORACLE_WIDTH, ORACLE_ALPHA, ORACLE_SLOPE, -1.5, 1.5)?
        .fit_output_layer(points, target, ORACLE_RIDGE)
}

/// The four shipped applications at small desk settings, with `λ > 0` and
/// an active anchor so every drift term is exercised.
pub fn desk_problems() -> Result<Vec<(Box<dyn MomentProblem>, Box<dyn GroundTruth>)>> {
    let (pe, pet) = make_policy_eval(FiniteMdp::generate(8, 0.9, 0.5, 1)?, 0.1)?;
    let (np, npt) = make_npiv(NpivDesign::default(), 0.05)?;
    let (cc, cct) = make_ccapm(CcapmChain::generate(6, 5.0, 1)?, 0.1, 0.5)?;
    let (rz, rzt) = make_riesz(RieszShift::default(), 0.05)?;
    Ok(vec![
        (Box::new(pe), Box::new(pet)),
        (Box::new(np), Box::new(npt)),
        (Box::new(cc), Box::new(cct)),
        (Box::new(rz), Box::new(rzt)),
    ])
}

/// The per-sample minimax integrand
/// `⟨u, g⟩ + g(z)⟨δΦ/δf, f⟩ − g(z)²/2 + λΨ(f) + κ(f(c) − target)²`,
/// evaluated from the networks directly.
pub fn sample_integrand(p: &dyn MomentProblem, s: &Sample, f: &ParticleEnsemble, g: &ParticleEnsemble) -> f64 {
    let fv = |w: &[f64]| f.eval_unchecked(w);
    let gv = |w: &[f64]| g.eval_unchecked(w);
    let gz = gv(&s.z);
    let mut out = pair(&p.dual_offset(s), &gv) + gz * p.phi_pairing(s, &fv) - 0.5 * gz * gz;
    if p.lambda() != 0.0 {
        out += p.lambda() * p.psi_value(s, &fv);
    }
    if let Some(a) = p.anchor() {
        out += a.weight * (fv(&a.point) - a.target).powi(2);
    }
    out
}

/// Worst relative error of the update direction against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub instances: usize,
    pub max_rel_err: f64,
    pub witness: String,
}

const FD_STEP: f64 = 1e-5;

/// Compares `sgda_update_direction` with `∓ N ε ∂L/∂θᵢ` (descent for the
/// primal, ascent for the dual), differencing the per-sample integrand `L`,
/// over `instances` random (problem, sample, networks, neuron, side) draws.
pub fn gradient_check(instances: usize, seed: u64, fault: Option<Fault>) -> Result<GradientReport> {
    let problems = desk_problems()?;
    let mut rng = stream_rng(seed, stream::VERIFY);
    let mut report = GradientReport { instances, max_rel_err: 0.0, witness: String::new() };
    for k in 0..instances {
        let (p, _) = &problems[k % problems.len()];
        let p = p.as_ref();
        let width = 2 + rng.random_range(0..6usize);
        let alpha = rng.random_range(0.5..4.0);
        let net_seed = rng.next_u64();
        let f = ParticleEnsemble::init_gaussian(NetKind::Primal, width, p.primal_dim() + 2, alpha, net_seed, false)?;
        let g = ParticleEnsemble::init_gaussian(NetKind::Dual, width, p.dual_dim() + 2, alpha, net_seed ^ 1, false)?;
        let s = p.sample(&mut rng);
        let i = rng.random_range(0..width);
        let side = if rng.random_bool(0.5) { Side::Primal } else { Side::Dual };
        let eps = rng.random_range(0.01..1.0);

        let mut dir = sgda_update_direction(p, &s, &f, &g, i, side, eps);
        if fault == Some(Fault::FlipDualSign) && side == Side::Dual {
            dir.iter_mut().for_each(|v| *v = -*v);
        }

        let (net, sign) = match side {
            Side::Primal => (&f, -1.0),
            Side::Dual => (&g, 1.0),
        };
        let scale = sign * width as f64 * eps;
        let mut fd = vec![0.0; net.dim()];
        for (c, out) in fd.iter_mut().enumerate() {
            let mut params = net.as_flat().to_vec();
            let base = params[i * net.dim() + c];
            let h = FD_STEP * base.abs().max(1.0);
            let mut eval = |v: f64| -> Result<f64> {
                params[i * net.dim() + c] = v;
                let moved = ParticleEnsemble::new(net.kind(), alpha, net.dim(), params.clone())?;
                Ok(match side {
                    Side::Primal => sample_integrand(p, &s, &moved, &g),
                    Side::Dual => sample_integrand(p, &s, &f, &moved),
                })
            };
            *out = scale * (eval(base + h)? - eval(base - h)?) / (2.0 * h);
        }
        let diff = dir.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let norm = fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let rel = diff / norm.max(1e-8);
        if rel > report.max_rel_err || k == 0 {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.witness = format!("{} {side:?} neuron {i} of {width}: update {dir:?} vs differences {fd:?}", p.name());
        }
    }
    Ok(report)
}

/// Tolerance of the gradient check.
pub const GRADIENT_TOL: f64 = 1e-5;

fn gaussian_cloud(rng: &mut impl Rng, n: usize, dim: usize, shift: f64) -> Vec<f64> {
    (0..n * dim).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect()
}

/// Exact `W₂` symmetry, identity and triangle inequality on random triples,
/// and 1-D sliced against exact.
pub fn w2_axioms(triples: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = stream_rng(seed, stream::VERIFY + 1);
    let mut worst = 0.0f64;
    let mut witness = String::new();
    for k in 0..triples {
        let n = 1 + k % 12;
        let dim = 1 + k % 3;
        let a = gaussian_cloud(&mut rng, n, dim, 0.0);
        let b = gaussian_cloud(&mut rng, n, dim, 0.3);
        let c = gaussian_cloud(&mut rng, n, dim, -0.2);
        let ab = w2_exact(&a, &b, dim)?;
        let viol = [
            (ab - w2_exact(&b, &a, dim)?).abs(),
            w2_exact(&a, &a, dim)?,
            ab - w2_exact(&a, &c, dim)? - w2_exact(&c, &b, dim)?,
        ]
        .into_iter()
        .fold(0.0, f64::max);
        if viol > worst {
            worst = viol;
            witness = format!("triple {k} (n={n}, dim={dim})");
        }
        if dim == 1 {
            let s = sliced(&a, &b, 1, 4, seed)?;
            worst = worst.max((s.w2 - ab).abs() / (1.0 + ab));
            worst = worst.max(s.w1 - s.w2);
        }
    }
    Ok(CheckResult::new(
        "w2 metric axioms and 1-D sliced = exact",
        worst < 1e-9,
        format!("worst violation {worst:.2e} (tol 1e-9) {witness}"),
    ))
}

fn weak_pseudometric(seed: u64) -> Result<CheckResult> {
    let mut rng = stream_rng(seed, stream::VERIFY + 2);
    let dict = default_dictionary(3, seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (a, b, c) = (gaussian_cloud(&mut rng, 6, 3, 0.0), gaussian_cloud(&mut rng, 9, 3, 0.5), gaussian_cloud(&mut rng, 4, 3, -0.5));
        let ab = weak_error(&dict, &a, &b, 3)?;
        worst = worst
            .max((ab - weak_error(&dict, &b, &a, 3)?).abs())
            .max(ab - weak_error(&dict, &a, &c, 3)? - weak_error(&dict, &c, &b, 3)?);
    }
    Ok(CheckResult::new("weak error pseudometric", worst <= 1e-12, format!("worst violation {worst:.2e}")))
}

fn problem_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (p, _) in desk_problems()? {
        let r = check_problem(p.as_ref(), 10_000, seed);
        let detail = match r.checks.iter().find(|c| !c.passed()) {
            Some(c) => format!("{}: worst {:.2e} at {}", c.name, c.max_violation, c.witness.as_deref().unwrap_or("?")),
            None => format!("{} trials", r.trials),
        };
        out.push(CheckResult::new(&format!("problem checker: {}", p.name()), r.passed(), detail));
    }
    Ok(out)
}

fn oracle_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let zero = |_: &[f64]| 0.0;

    let mdp = FiniteMdp::generate(16, 0.9, 0.5, 1)?;
    let v = mdp.value_function()?;
    let bellman = mdp.bellman_residual(&v);
    out.push(CheckResult::new("bellman residual of the exact value", bellman < 1e-10, format!("{bellman:.2e} (tol 1e-10)")));
    let (pe, pet) = make_policy_eval(mdp, 0.0)?;
    let fstar = |w: &[f64]| pet.f_star(w);
    let vpe = potential_v(&pe, &pet, &fstar, &zero, &Source::Population)?;
    out.push(CheckResult::new("potential at the policy-eval saddle", vpe.value.abs() < 1e-20, format!("{:.2e}", vpe.value)));

    let (np, npt) = make_npiv(NpivDesign::default(), 0.0)?;
    let grid: Vec<Vec<f64>> = (0..400).map(|k| vec![-1.0 + 2.0 * (k as f64 + 0.5) / 400.0]).collect();
    let target: Vec<f64> = grid.iter().map(|x| npt.f_star(x)).collect();
    let f = fit_oracle(&grid, &target)?;
    let g = ParticleEnsemble::init_gaussian(NetKind::Dual, 64, np.dual_dim() + 2, 4.0, seed, true)?;
    let r = stationarity_residual(&np, &f, &g, &Source::MonteCarlo { n: 20_000, seed })?;
    let ok = r.dual.value < 4.0 * r.dual.stderr && r.primal.value <= 4.0 * r.primal.stderr;
    out.push(CheckResult::new(
        "npiv stationarity at (f0, 0)",
        ok,
        format!("primal {:.2e}±{:.1e}, dual {:.2e}±{:.1e} (< 4 se)", r.primal.value, r.primal.stderr, r.dual.value, r.dual.stderr),
    ));

    let fun = f.func();
    let rough = ParticleEnsemble::init_gaussian(NetKind::Primal, 16, 3, 2.0, seed, false)?;
    let rf = rough.func();
    let oracle = |z: &[f64]| npt.cond_exp(z, &rf);
    let gap = fenchel_gap(&np, &npt, &rf, &oracle, &Source::MonteCarlo { n: 20_000, seed })?;
    out.push(CheckResult::new(
        "fenchel gap at the oracle dual",
        gap.value.abs() < 4.0 * gap.stderr,
        format!("{:.2e}±{:.1e} (< 4 se)", gap.value, gap.stderr),
    ));
    let pot = potential_v(&np, &npt, &fun, &zero, &Source::MonteCarlo { n: 20_000, seed })?;
    out.push(CheckResult::new(
        "npiv potential nonnegative",
        pot.value >= -3.0 * pot.stderr,
        format!("{:.2e}±{:.1e}", pot.value, pot.stderr),
    ));

    let (rz, _) = make_riesz(RieszShift::default(), 0.0)?;
    let mut rng = stream_rng(seed, stream::VERIFY + 3);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let g = ParticleEnsemble::init_gaussian(NetKind::Dual, 8, 3, 2.0, seed + k, false)?;
        let (mean, se) = representer_gap(&rz, &g.func(), 20_000, &mut rng);
        worst = worst.max(mean.abs() / se.max(1e-300));
    }
    out.push(CheckResult::new("riesz representer identity", worst < 3.0, format!("worst |gap|/se {worst:.2} over 20 networks")));

    let anti = ParticleEnsemble::init_gaussian(NetKind::Primal, 16, 3, 8.0, seed, true)?;
    let zero_net = [-0.7, 0.0, 0.4].iter().all(|&x| anti.eval(&[x]).map(|v| v == 0.0).unwrap_or(false));
    out.push(CheckResult::new("antithetic initialization is the zero network", zero_net, String::new()));
    Ok(out)
}

/// Runs every check; returns them in a fixed order.
pub fn run_suite(seed: u64, fault: Option<Fault>) -> Result<Vec<CheckResult>> {
    let grad = gradient_check(200, seed, fault)?;
    let mut out = vec![CheckResult::new(
        "update direction vs finite differences",
        grad.max_rel_err < GRADIENT_TOL,
        format!("max rel err {:.2e} over {} instances (tol {GRADIENT_TOL:.0e}); worst: {}", grad.max_rel_err, grad.instances, grad.witness),
    )];
    out.push(w2_axioms(200, seed)?);
    out.push(weak_pseudometric(seed)?);
    out.extend(problem_checks(seed)?);
    out.extend(oracle_checks(seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_check_passes_and_catches_a_flipped_dual() {
        let ok = gradient_check(40, 3, None).unwrap();
        assert!(ok.max_rel_err < GRADIENT_TOL, "{ok:?}");
        let bad = gradient_check(40, 3, Some(Fault::FlipDualSign)).unwrap();
        assert!(bad.max_rel_err > 1.0, "{bad:?}");
    }

    #[test]
    fn integrand_at_zero_networks_is_zero_without_anchor() {
        let (p, _) = make_npiv(NpivDesign::default(), 0.3).unwrap();
        let z = ParticleEnsemble::init_gaussian(NetKind::Primal, 4, 3, 1.0, 1, true).unwrap();
        let s = p.sample(&mut stream_rng(0, 0));
        assert_eq!(sample_integrand(&p, &s, &z, &z), 0.0);
    }
}
