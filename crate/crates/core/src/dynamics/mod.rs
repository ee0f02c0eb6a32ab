//! SGDA and its population / continuous-time / ideal-particle relatives.

pub mod config;
pub mod coupling;
pub mod engine;
pub mod field;
pub mod ip;

pub use coupling::{couple_dynamics, pgda_sgda_gap, CouplingConfig, CouplingReport, WidthReport};
pub use config::{Checkpoints, DynConfig, Expectation, Integrator};
pub use engine::{run, run_ctpgda, run_pgda, run_sgda, Checkpoint, Dynamics, Trajectory};
pub use field::{sgda_update_direction, Side, VelocityField};
pub use ip::run_ip;
