use serde::{Deserialize, Serialize};

/// Step sizes, tolerances, iteration caps and the seed of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolverOptions {
    /// Dual step multiplier of the power-allocation iteration.
    pub step: f64,
    /// Multiplier on the majorized primal step (1 is the safe value).
    pub primal_step: f64,
    /// Primal-dual residual at which power allocation stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations without a new best residual before the dual step is halved.
    pub stall_window: usize,
    /// Tolerance of the projected-gradient solvers (surrogate problem, relaxed selection).
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Relative objective change that counts as MM convergence.
    pub mm_tol: f64,
    /// Consecutive small changes required before MM stops.
    pub mm_patience: usize,
    pub mm_max_iter: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            step: 2.0,
            primal_step: 1.0,
            tol: 1e-9,
            max_iter: 200_000,
            stall_window: 2_000,
            inner_tol: 1e-6,
            inner_max_iter: 300,
            mm_tol: 1e-6,
            mm_patience: 3,
            mm_max_iter: 100,
            seed: 0,
        }
    }
}
