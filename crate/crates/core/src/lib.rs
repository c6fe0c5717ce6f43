//! Sensor selection and power allocation for energy-harvesting sensor networks.
//!
//! Offline policies: [`sseh::solve_sseh`] (energy-aware selection, then power
//! allocation), [`jsseh::solve_jsseh`] (joint selection and allocation by
//! majorization-minimization), the energy-agnostic baseline
//! [`baselines::solve_ss`] and the all-sensor [`baselines::lower_bound`].
//! Causal policies live in [`online`].

pub mod baselines;
pub mod error;
pub mod jsseh;
pub mod model;
pub mod numerics;
pub mod options;
pub mod online;
pub mod oracle;
pub mod scenario;
mod spg;
pub mod sseh;
pub mod waterfill;

pub use error::{Error, Result};
pub use model::{Allocation, AuditReport, RunResult, Scenario};
pub use options::SolverOptions;
pub use sseh::{DualState, SelectionSets};
