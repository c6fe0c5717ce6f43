//! The energy-agnostic selection baseline and the all-sensor lower bound.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{InfoModel, Scenario};
use crate::numerics::{project_capped_simplex, top_k};
use crate::options::SolverOptions;
use crate::spg::spg;
use crate::sseh::{power_allocation, SelectionSets};
use crate::RunResult;

/// Time-invariant convex relaxation of sensor selection, ignoring energy:
/// minimizes `tr((1/σ²_w) Σ z_i a_i a_iᵀ + Σ_x⁻¹)⁻¹` over the capped simplex.
///
/// Returns the relaxed weights and the indices of the `K` largest.
pub fn joshi_boyd_select(sc: &Scenario, opts: &SolverOptions) -> Result<(Vec<f64>, Vec<usize>)> {
    let (m, k) = (sc.sensors, sc.k);
    let model = InfoModel::new(sc)?;
    let z0 = vec![k as f64 / m as f64; m];
    let out = spg(
        z0,
        |z| {
            let ev = model.eval(z, None)?;
            Ok((ev.value, ev.grad.iter().map(|g| -g).collect()))
        },
        |z| project_capped_simplex(z, k).expect("K <= M"),
        opts.inner_tol,
        opts.max_iter,
    )?;
    if out.pg_norm > opts.inner_tol {
        return Err(Error::NonConvergence {
            residual: out.pg_norm,
            iterations: out.iterations,
            partial: None,
        });
    }
    let set = top_k(&out.x, k);
    Ok((out.x, set))
}

/// The baseline selection held fixed over the horizon, with the energy-aware
/// power allocation on top.
pub fn solve_ss(sc: &Scenario, opts: &SolverOptions) -> Result<RunResult> {
    let clock = Instant::now();
    let (_, set) = joshi_boyd_select(sc, opts)?;
    let mut result = power_allocation(sc, &SelectionSets::constant(&set, sc.slots), opts)?;
    result.wall_time = clock.elapsed().as_secs_f64();
    Ok(result)
}

/// Distortion with every sensor selected in every slot.
pub fn lower_bound(sc: &Scenario, opts: &SolverOptions) -> Result<RunResult> {
    let clock = Instant::now();
    let mut result = power_allocation(sc, &SelectionSets::all(sc.sensors, sc.slots), opts)?;
    result.wall_time = clock.elapsed().as_secs_f64();
    Ok(result)
}
