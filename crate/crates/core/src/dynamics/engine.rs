//! SGDA, population GDA and continuous-time population GDA.

use std::borrow::Cow;
use std::time::Instant;

use crate::ensemble::{NetKind, ParticleEnsemble};
use crate::error::{config, Error, Result};
use crate::problem::{MomentProblem, Sample};
use crate::rng::{stream, stream_rng, StreamRng};

use super::config::{DynConfig, Expectation, Integrator};
use super::field::{apply, field_from_batch, velocities, Charges, VelocityField};

/// Parameter norms above this abort a run.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub t: f64,
    pub primal: ParticleEnsemble,
    pub dual: ParticleEnsemble,
    pub wall_secs: f64,
}

/// Fields seen by one step of a recorded run, in integrator stage order
/// (one for Euler, four for RK4).
pub type StepFields = Vec<VelocityField>;

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub eps: f64,
    pub eta: f64,
    pub checkpoints: Vec<Checkpoint>,
    /// Integration grid the recorded fields live on.
    pub grid_step: f64,
    pub integrator: Integrator,
    pub fields: Option<Vec<StepFields>>,
}

impl Trajectory {
    pub fn initial(&self) -> &Checkpoint {
        &self.checkpoints[0]
    }

    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("trajectory has at least one checkpoint")
    }

    pub fn at_iteration(&self, k: usize) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.iteration == k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    Sgda,
    Pgda,
    Ctpgda,
}

/// Random stream for the data of iteration `k`, positioned so that every
/// dynamics sharing a seed sees the same samples at the same iteration.
pub fn iteration_rng(seed: u64, k: usize) -> StreamRng {
    let mut rng = stream_rng(seed, stream::DATA);
    rng.set_word_pos((k as u128) << 32);
    rng
}

pub fn initial_ensembles(p: &dyn MomentProblem, cfg: &DynConfig) -> Result<(ParticleEnsemble, ParticleEnsemble)> {
    let make = |kind, n, input_dim: usize| -> Result<ParticleEnsemble> {
        let mut e = ParticleEnsemble::init_gaussian(kind, n, input_dim + 2, cfg.alpha, cfg.seed, cfg.antithetic)?;
        if cfg.init_hidden_scale != 1.0 {
            e.scale_hidden(cfg.init_hidden_scale);
        }
        Ok(e)
    };
    Ok((make(NetKind::Primal, cfg.n_primal, p.primal_dim())?, make(NetKind::Dual, cfg.n_dual, p.dual_dim())?))
}

pub(crate) struct Batches<'a> {
    p: &'a dyn MomentProblem,
    seed: u64,
    size: Option<usize>,
    population: Option<Vec<(f64, Sample)>>,
}

impl<'a> Batches<'a> {
    pub(crate) fn new(p: &'a dyn MomentProblem, cfg: &DynConfig, dynamics: Dynamics) -> Result<Self> {
        let (size, population) = match (dynamics, cfg.expectation) {
            (Dynamics::Sgda, _) => (Some(1), None),
            (_, Expectation::MonteCarlo { batch }) => (Some(batch), None),
            (_, Expectation::Exact) => match p.population() {
                Some(pop) => (None, Some(pop)),
                None => return config(format!("problem '{}' has no finite population for exact expectations", p.name())),
            },
        };
        Ok(Self { p, seed: cfg.seed, size, population })
    }

    pub(crate) fn get(&self, k: usize) -> Cow<'_, [(f64, Sample)]> {
        match (&self.population, self.size) {
            (Some(pop), _) => Cow::Borrowed(pop),
            (None, Some(m)) => {
                let mut rng = iteration_rng(self.seed, k);
                let w = 1.0 / m as f64;
                Cow::Owned((0..m).map(|_| (w, self.p.sample(&mut rng))).collect())
            }
            (None, None) => unreachable!("batch source without size or population"),
        }
    }
}

pub(crate) fn check_finite(f: &ParticleEnsemble, g: &ParticleEnsemble, iteration: usize) -> Result<()> {
    for (e, name) in [(f, "primal"), (g, "dual")] {
        let m = e.max_norm();
        if !m.is_finite() || m > DIVERGENCE_NORM {
            return Err(Error::Diverged {
                iteration,
                reason: format!("{name} parameter norm {m:.3e} exceeds {DIVERGENCE_NORM:.0e}; reduce eta or eps"),
            });
        }
    }
    Ok(())
}

/// The batch field, with the primal part dropped when the primal is frozen.
pub(crate) fn step_field(
    p: &dyn MomentProblem,
    f: &ParticleEnsemble,
    g: &ParticleEnsemble,
    batch: &[(f64, Sample)],
    freeze_primal: bool,
) -> VelocityField {
    let mut field = field_from_batch(p, f, g, batch);
    if freeze_primal {
        field.primal = Charges::empty(f.input_dim());
    }
    field
}

fn axpy(base: &ParticleEnsemble, v: &[f64], scale: f64) -> ParticleEnsemble {
    let mut out = base.clone();
    for (a, b) in out.as_flat_mut().iter_mut().zip(v) {
        *a += scale * b;
    }
    out
}

/// One classical RK4 step of `dθ/dt = η v(θ; state)` on both networks.
/// Returns the four stage fields.
pub(crate) fn rk4_step(
    p: &dyn MomentProblem,
    f: &mut ParticleEnsemble,
    g: &mut ParticleEnsemble,
    batch: &[(f64, Sample)],
    eta: f64,
    h: f64,
    freeze_primal: bool,
) -> StepFields {
    let a = eta * h;
    let field = |f: &ParticleEnsemble, g: &ParticleEnsemble| step_field(p, f, g, batch, freeze_primal);
    let f1 = field(f, g);
    let (kf1, kg1) = (velocities(f, &f1.primal), velocities(g, &f1.dual));
    let (ft, gt) = (axpy(f, &kf1, 0.5 * a), axpy(g, &kg1, 0.5 * a));
    let f2 = field(&ft, &gt);
    let (kf2, kg2) = (velocities(&ft, &f2.primal), velocities(&gt, &f2.dual));
    let (ft, gt) = (axpy(f, &kf2, 0.5 * a), axpy(g, &kg2, 0.5 * a));
    let f3 = field(&ft, &gt);
    let (kf3, kg3) = (velocities(&ft, &f3.primal), velocities(&gt, &f3.dual));
    let (ft, gt) = (axpy(f, &kf3, a), axpy(g, &kg3, a));
    let f4 = field(&ft, &gt);
    let (kf4, kg4) = (velocities(&ft, &f4.primal), velocities(&gt, &f4.dual));
    rk4_combine(f, &kf1, &kf2, &kf3, &kf4, a);
    rk4_combine(g, &kg1, &kg2, &kg3, &kg4, a);
    vec![f1, f2, f3, f4]
}

pub(crate) fn rk4_combine(e: &mut ParticleEnsemble, k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64], a: f64) {
    for (i, x) in e.as_flat_mut().iter_mut().enumerate() {
        *x += a / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Runs one of the three self-driven dynamics.
pub fn run(p: &dyn MomentProblem, cfg: &DynConfig, dynamics: Dynamics) -> Result<Trajectory> {
    cfg.validate()?;
    let (mut f, mut g) = initial_ensembles(p, cfg)?;
    let batches = Batches::new(p, cfg, dynamics)?;
    let (eta, eps) = (cfg.eta(), cfg.eps());
    let start = Instant::now();
    let marks = cfg.checkpoint_iterations();
    let mut next_mark = 0;
    let mut checkpoints = Vec::with_capacity(marks.len());
    let mut fields: Option<Vec<StepFields>> = cfg.record_field.then(Vec::new);

    let (substeps, integrator) = match dynamics {
        Dynamics::Ctpgda => (cfg.substeps, cfg.integrator),
        _ => (1, Integrator::Euler),
    };
    let h = eps / substeps as f64;

    for k in 0..=cfg.steps {
        if marks.get(next_mark) == Some(&k) {
            checkpoints.push(Checkpoint {
                iteration: k,
                t: k as f64 * eps,
                primal: f.clone(),
                dual: g.clone(),
                wall_secs: start.elapsed().as_secs_f64(),
            });
            next_mark += 1;
        }
        if k == cfg.steps {
            break;
        }
        let batch = batches.get(k);
        for _ in 0..substeps {
            match integrator {
                Integrator::Euler => {
                    let field = step_field(p, &f, &g, &batch, cfg.freeze_primal);
                    apply(&mut f, &field.primal, eta * h);
                    apply(&mut g, &field.dual, eta * h);
                    if let Some(rec) = fields.as_mut() {
                        rec.push(vec![field]);
                    }
                }
                Integrator::Rk4 => {
                    let stages = rk4_step(p, &mut f, &mut g, &batch, eta, h, cfg.freeze_primal);
                    if let Some(rec) = fields.as_mut() {
                        rec.push(stages);
                    }
                }
            }
        }
        check_finite(&f, &g, k + 1)?;
    }

    Ok(Trajectory { eps, eta, checkpoints, grid_step: h, integrator, fields })
}

/// Stochastic gradient descent–ascent: one fresh sample per iteration.
pub fn run_sgda(p: &dyn MomentProblem, cfg: &DynConfig) -> Result<Trajectory> {
    run(p, cfg, Dynamics::Sgda)
}

/// Population gradient descent–ascent: drifts averaged over a batch (or the
/// exact population) per iteration.
pub fn run_pgda(p: &dyn MomentProblem, cfg: &DynConfig) -> Result<Trajectory> {
    run(p, cfg, Dynamics::Pgda)
}

/// Continuous-time population dynamics integrated with step `ε/substeps`.
/// The batch of ε-interval `k` is reused by all its substeps and stages.
pub fn run_ctpgda(p: &dyn MomentProblem, cfg: &DynConfig) -> Result<Trajectory> {
    run(p, cfg, Dynamics::Ctpgda)
}
