//! Ready-made moment problems with synthetic data and exact oracles.

pub mod ccapm;
pub mod finite_state;
pub mod npiv;
pub mod policy_eval;
pub mod riesz;

pub use ccapm::{make_ccapm, CcapmChain, CcapmProblem};
pub use finite_state::TabularTruth;
pub use npiv::{make_npiv, NpivDesign, NpivProblem, NpivTruth};
pub use policy_eval::{make_policy_eval, FiniteMdp, PolicyEvalProblem};
pub use riesz::{make_riesz, RieszProblem, RieszShift, RieszTruth};
