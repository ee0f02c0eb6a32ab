//! Monte Carlo (or exact) estimates of the objective-level quantities.

use rayon::prelude::*;

use crate::dynamics::field::{add_anchor_charge, add_sample_charges, ChargeBuilder, Charges};
use crate::ensemble::ParticleEnsemble;
use crate::error::{config, Result};
use crate::problem::{pair, Func, GroundTruth, MomentProblem, Sample};
use crate::rng::{stream, stream_rng};

/// Where an expectation over the data law comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// `n` fresh i.i.d. draws from the metrics stream of `seed`.
    MonteCarlo { n: usize, seed: u64 },
    /// Exact enumeration of a finite-state problem's population.
    Population,
}

impl Source {
    pub fn draw(&self, p: &dyn MomentProblem) -> Result<Vec<(f64, Sample)>> {
        match *self {
            Source::MonteCarlo { n: 0, .. } => config("evaluation batch must be at least 1"),
            Source::MonteCarlo { n, seed } => {
                let mut rng = stream_rng(seed, stream::METRICS);
                let w = 1.0 / n as f64;
                Ok((0..n).map(|_| (w, p.sample(&mut rng))).collect())
            }
            Source::Population => match p.population() {
                Some(pop) => Ok(pop),
                None => config(format!("problem '{}' has no finite population", p.name())),
            },
        }
    }

    fn is_exact(&self) -> bool {
        matches!(self, Source::Population)
    }
}

/// A point estimate with its standard error (0 for exact expectations).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Weighted mean of per-sample terms plus a deterministic `offset`.
    pub fn from_terms(weights: &[f64], terms: &[f64], exact: bool, offset: f64) -> Self {
        let mean: f64 = weights.iter().zip(terms).map(|(w, t)| w * t).sum();
        let stderr = if exact || terms.len() < 2 {
            0.0
        } else {
            let n = terms.len() as f64;
            let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self { value: mean + offset, stderr }
    }
}

fn estimate(p: &dyn MomentProblem, source: &Source, offset: f64, term: impl Fn(&Sample) -> f64 + Sync) -> Result<Estimate> {
    let batch = source.draw(p)?;
    let weights: Vec<f64> = batch.iter().map(|b| b.0).collect();
    let terms: Vec<f64> = batch.par_iter().map(|(_, s)| term(s)).collect();
    Ok(Estimate::from_terms(&weights, &terms, source.is_exact(), offset))
}

/// Lyapunov potential `E[λΨ(f − f*) + (g(Z) − g*(Z))²]`, plus the anchor
/// penalty on `f − f*` when the problem has one.
pub fn potential_v(p: &dyn MomentProblem, gt: &dyn GroundTruth, f: Func, g: Func, source: &Source) -> Result<Estimate> {
    let lambda = p.lambda();
    let diff = |w: &[f64]| f(w) - gt.f_star(w);
    let anchor = p.anchor().map_or(0.0, |a| a.weight * diff(&a.point).powi(2));
    estimate(p, source, anchor, |s| {
        let psi = if lambda != 0.0 { lambda * p.psi_value(s, &diff) } else { 0.0 };
        psi + (g(&s.z) - gt.g_star(&s.z)).powi(2)
    })
}

/// Penalized minimum-distance criterion `J(f) = E[δ̄(Z; f)²/2 + λΨ(f)]`
/// (plus the anchor penalty).
pub fn primal_j(p: &dyn MomentProblem, gt: &dyn GroundTruth, f: Func, source: &Source) -> Result<Estimate> {
    let lambda = p.lambda();
    let anchor = p.anchor().map_or(0.0, |a| a.weight * (f(&a.point) - a.target).powi(2));
    estimate(p, source, anchor, |s| {
        let psi = if lambda != 0.0 { lambda * p.psi_value(s, f) } else { 0.0 };
        0.5 * gt.cond_exp(&s.z, f).powi(2) + psi
    })
}

/// `J(f) − L(f, g)`, which equals `E[(δ̄(Z; f) − g(Z))²]/2 ≥ 0`.
///
/// Estimated through the per-sample integrand of `L`, so its noise reflects
/// what an optimizer sees.
pub fn fenchel_gap(p: &dyn MomentProblem, gt: &dyn GroundTruth, f: Func, g: Func, source: &Source) -> Result<Estimate> {
    estimate(p, source, 0.0, |s| {
        let gz = g(&s.z);
        let coupling = pair(&p.dual_offset(s), g) + gz * p.phi_pairing(s, f);
        0.5 * gt.cond_exp(&s.z, f).powi(2) - coupling + 0.5 * gz * gz
    })
}

/// Mean particle speed under a batch-estimated field, with the matching
/// mean per-particle standard-error norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub primal: Estimate,
    pub dual: Estimate,
}

fn particle_speeds(ens: &ParticleEnsemble, per_sample: &[Charges], weights: &[f64], fixed: &Charges, exact: bool) -> Estimate {
    let dim = ens.dim();
    let n = per_sample.len() as f64;
    let stats: Vec<(f64, f64)> = ens
        .particles()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|theta| {
            let mut sum = vec![0.0; dim];
            let mut sq = vec![0.0; dim];
            let mut v = vec![0.0; dim];
            for (c, w) in per_sample.iter().zip(weights) {
                v.iter_mut().for_each(|x| *x = 0.0);
                c.velocity_into(theta, &mut v);
                for k in 0..dim {
                    sum[k] += w * v[k];
                    sq[k] += w * v[k] * v[k];
                }
            }
            let mean = fixed.velocity(theta);
            let speed = mean.iter().zip(&sum).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
            // With weights 1/n, sum and sq are the sample first and second moments.
            let se = if exact || per_sample.len() < 2 {
                0.0
            } else {
                let var: f64 = (0..dim).map(|k| (sq[k] - sum[k] * sum[k]).max(0.0)).sum::<f64>() * n / (n - 1.0);
                (var / n).sqrt()
            };
            (speed, se)
        })
        .collect();
    let m = stats.len() as f64;
    Estimate { value: stats.iter().map(|s| s.0).sum::<f64>() / m, stderr: stats.iter().map(|s| s.1).sum::<f64>() / m }
}

/// Stationarity residuals with the networks supplied as functions (for
/// example oracles), evaluated at the given particle clouds.
pub fn stationarity_residual_with(
    p: &dyn MomentProblem,
    f: Func,
    g: Func,
    primal: &ParticleEnsemble,
    dual: &ParticleEnsemble,
    source: &Source,
) -> Result<Residual> {
    let batch = source.draw(p)?;
    let scales = (primal.alpha(), dual.alpha());
    let mut pcs = Vec::with_capacity(batch.len());
    let mut dcs = Vec::with_capacity(batch.len());
    for (_, s) in &batch {
        let mut pb = ChargeBuilder::new(primal.input_dim());
        let mut db = ChargeBuilder::new(dual.input_dim());
        add_sample_charges(p, f, g, scales, 1.0, s, &mut pb, &mut db);
        pcs.push(pb.finish());
        dcs.push(db.finish());
    }
    let mut ab = ChargeBuilder::new(primal.input_dim());
    add_anchor_charge(p, f, scales.0, &mut ab);
    let weights: Vec<f64> = batch.iter().map(|b| b.0).collect();
    let exact = source.is_exact();
    Ok(Residual {
        primal: particle_speeds(primal, &pcs, &weights, &ab.finish(), exact),
        dual: particle_speeds(dual, &dcs, &weights, &Charges::empty(dual.input_dim()), exact),
    })
}

/// `(mean ‖v̂^f(θᵢ)‖, mean ‖v̂^g(ωᵢ)‖)` for the ensembles' own field.
pub fn stationarity_residual(
    p: &dyn MomentProblem,
    primal: &ParticleEnsemble,
    dual: &ParticleEnsemble,
    source: &Source,
) -> Result<Residual> {
    stationarity_residual_with(p, &primal.func(), &dual.func(), primal, dual, source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::applications::{make_npiv, make_policy_eval, FiniteMdp, NpivDesign};
    use crate::ensemble::NetKind;
    use crate::problem::toy::Toy;

    fn nets(seed: u64, width: usize) -> (ParticleEnsemble, ParticleEnsemble) {
        (
            ParticleEnsemble::init_gaussian(NetKind::Primal, width, 3, 2.0, seed, false).unwrap(),
            ParticleEnsemble::init_gaussian(NetKind::Dual, width, 3, 2.0, seed + 1, false).unwrap(),
        )
    }

    #[test]
    fn source_errors() {
        let p = Toy { lambda: 0.0 };
        assert!(Source::MonteCarlo { n: 0, seed: 0 }.draw(&p).is_err());
        assert!(Source::Population.draw(&p).is_err());
    }

    #[test]
    fn potential_vanishes_at_the_saddle_point() {
        let mdp = FiniteMdp::generate(8, 0.8, 0.3, 2).unwrap();
        let (p, t) = make_policy_eval(mdp, 0.2).unwrap();
        let fs = |w: &[f64]| t.f_star(w);
        let gs = |z: &[f64]| t.g_star(z);
        let v = potential_v(&p, &t, &fs, &gs, &Source::Population).unwrap();
        assert_eq!(v, Estimate { value: 0.0, stderr: 0.0 });
        // With λ = 0 only the dual error remains.
        let (p0, t0) = make_policy_eval(p.mdp().clone(), 0.0).unwrap();
        let zero = |_: &[f64]| 0.0;
        let v = potential_v(&p0, &t0, &zero, &|z: &[f64]| t0.g_star(z) + 0.5, &Source::Population).unwrap();
        assert!((v.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn primal_objective_by_enumeration() {
        let mdp = FiniteMdp::generate(6, 0.9, 0.4, 5).unwrap();
        let (p, t) = make_policy_eval(mdp, 0.3).unwrap();
        let (f, _) = nets(3, 16);
        let got = primal_j(&p, &t, &f.func(), &Source::Population).unwrap();
        // Brute force: Σ_s π(s) [½(r(s) + γ Σ P(s,s') f(s') − f(s))² + λ Σ P(s,s') f(s')²].
        let m = p.mdp();
        let pi = &m.stationary;
        let fv: Vec<f64> = m.states.iter().map(|&s| f.eval(&[s]).unwrap()).collect();
        let mut want = 0.0;
        for s in 0..m.n_states() {
            let next: f64 = (0..m.n_states()).map(|j| m.transition[(s, j)] * fv[j]).sum();
            let psi: f64 = (0..m.n_states()).map(|j| m.transition[(s, j)] * fv[j] * fv[j]).sum();
            want += pi[s] * (0.5 * (m.reward[s] + m.gamma * next - fv[s]).powi(2) + 0.3 * psi);
        }
        assert!((got.value - want).abs() < 1e-10 * want.abs(), "{} vs {want}", got.value);
        // f ≡ 0 leaves half the mean squared reward.
        let zero = |_: &[f64]| 0.0;
        let j0 = primal_j(&p, &t, &zero, &Source::Population).unwrap().value;
        let r2: f64 = (0..m.n_states()).map(|s| pi[s] * m.reward[s] * m.reward[s]).sum();
        assert!((j0 - 0.5 * r2).abs() < 1e-12);
    }

    #[test]
    fn fenchel_gap_shapes() {
        let mdp = FiniteMdp::generate(6, 0.9, 0.4, 5).unwrap();
        let (p, t) = make_policy_eval(mdp, 0.0).unwrap();
        let (f, g) = nets(9, 16);
        let fz = f.func();
        let oracle = |z: &[f64]| t.cond_exp(z, &fz);
        let at_oracle = fenchel_gap(&p, &t, &fz, &oracle, &Source::Population).unwrap();
        assert!(at_oracle.value.abs() < 1e-12);
        let c = 0.3;
        let shifted = |z: &[f64]| t.cond_exp(z, &fz) + c;
        let gap = fenchel_gap(&p, &t, &fz, &shifted, &Source::Population).unwrap();
        assert!((gap.value - c * c / 2.0).abs() < 1e-12);
        let gap = fenchel_gap(&p, &t, &fz, &g.func(), &Source::Population).unwrap();
        assert!(gap.value >= 0.0);
    }

    #[test]
    fn fenchel_gap_is_nonnegative_under_sampling() {
        let (p, t) = make_npiv(NpivDesign::default(), 0.0).unwrap();
        for k in 0..100 {
            let f = ParticleEnsemble::init_gaussian(NetKind::Primal, 8, 3, 2.0, 100 + k, false).unwrap();
            let g = ParticleEnsemble::init_gaussian(NetKind::Dual, 8, 3, 2.0, 200 + k, false).unwrap();
            let e = fenchel_gap(&p, &t, &f.func(), &g.func(), &Source::MonteCarlo { n: 2000, seed: k }).unwrap();
            assert!(e.value >= -3.0 * e.stderr, "{e:?}");
        }
    }

    #[test]
    fn doubling_the_batch_halves_the_variance() {
        let (p, t) = make_npiv(NpivDesign::default(), 0.1).unwrap();
        let (f, g) = nets(4, 16);
        let (ff, gf) = (f.func(), g.func());
        let mut ratios = 0.0;
        for k in 0..50 {
            let a = potential_v(&p, &t, &ff, &gf, &Source::MonteCarlo { n: 500, seed: k }).unwrap();
            let b = potential_v(&p, &t, &ff, &gf, &Source::MonteCarlo { n: 1000, seed: k + 1000 }).unwrap();
            ratios += (b.stderr / a.stderr).powi(2);
        }
        let r = ratios / 50.0;
        assert!((0.4..=0.6).contains(&r), "{r}");
    }

    #[test]
    fn zero_dual_freezes_primal_residual() {
        let p = Toy { lambda: 0.0 };
        let f = ParticleEnsemble::init_gaussian(NetKind::Primal, 8, 3, 2.0, 1, false).unwrap();
        let g = ParticleEnsemble::init_gaussian(NetKind::Dual, 8, 3, 2.0, 2, true).unwrap();
        let r = stationarity_residual(&p, &f, &g, &Source::MonteCarlo { n: 100, seed: 0 }).unwrap();
        assert_eq!(r.primal.value, 0.0);
        assert!(r.dual.value > 0.0 && r.dual.stderr > 0.0);
    }

    #[test]
    fn residual_matches_the_batch_field() {
        let p = Toy { lambda: 0.2 };
        let (f, g) = nets(6, 5);
        let src = Source::MonteCarlo { n: 40, seed: 3 };
        let r = stationarity_residual(&p, &f, &g, &src).unwrap();
        let field = crate::dynamics::field::field_from_batch(&p, &f, &g, &src.draw(&p).unwrap());
        let v = crate::dynamics::field::velocities(&f, &field.primal);
        let want: f64 = v.chunks(f.dim()).map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).sum::<f64>() / 5.0;
        assert!((r.primal.value - want).abs() < 1e-12 * want, "{} vs {want}", r.primal.value);
    }
}
