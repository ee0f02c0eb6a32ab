//! Mean-field stochastic gradient descent–ascent for linear functional
//! conditional moment equations `E[Φ(X, Z; f) | Z] = 0`.
//!
//! Both the unknown `f` and the adversarial dual `g` are scaled two-layer
//! networks `(α/N) Σ φ(·; θᵢ)` trained by simultaneous per-neuron updates.

pub mod applications;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod neuron;
pub mod problem;
pub mod quadrature;
pub mod rng;
pub mod verify;

pub use ensemble::{NetKind, NeuronParam, ParticleEnsemble};
pub use error::{Error, Result};
pub use neuron::{neuron_eval, neuron_grad, NeuronSpec};
pub use problem::{check_problem, GroundTruth, MomentProblem, Sample};
