//! Power allocation for a fixed selection and the energy-aware selection rule.

use std::time::Instant;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{
    audit_with_cardinality, compute_xi, effective_s, Allocation, InfoModel, IterateRecord,
    Residuals, RunResult, Scenario,
};
use crate::numerics::top_k;
use crate::options::SolverOptions;
use crate::waterfill::{beta_from_levels, waterfill_slices};

/// Multipliers of the consistency (`λ`) and causality (`β`) constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    pub lambda: Array2<f64>,
    pub beta: Array2<f64>,
}

/// Selected sensor indices per slot, each set sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionSets {
    pub sets: Vec<Vec<usize>>,
}

impl SelectionSets {
    pub fn all(sensors: usize, slots: usize) -> Self {
        Self {
            sets: vec![(0..sensors).collect(); slots],
        }
    }

    pub fn empty(slots: usize) -> Self {
        Self {
            sets: vec![Vec::new(); slots],
        }
    }

    pub fn constant(set: &[usize], slots: usize) -> Self {
        let mut set = set.to_vec();
        set.sort_unstable();
        Self {
            sets: vec![set; slots],
        }
    }

    /// Sets from the entries of `z` that are at least one half.
    pub fn from_z(z: &Array2<f64>) -> Self {
        Self {
            sets: (0..z.ncols())
                .map(|t| (0..z.nrows()).filter(|&i| z[[i, t]] >= 0.5).collect())
                .collect(),
        }
    }

    pub fn mask(&self, sensors: usize) -> Array2<bool> {
        let mut m = Array2::from_elem((sensors, self.sets.len()), false);
        for (t, set) in self.sets.iter().enumerate() {
            for &i in set {
                m[[i, t]] = true;
            }
        }
        m
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    fn check(&self, sc: &Scenario) -> Result<()> {
        if self.sets.len() != sc.slots {
            return Err(Error::ShapeMismatch(format!(
                "{} selection sets for {} slots",
                self.sets.len(),
                sc.slots
            )));
        }
        for set in &self.sets {
            if set.iter().any(|&i| i >= sc.sensors) || set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParams(
                    "selection sets must hold distinct sorted sensor indices".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Convex power allocation for fixed selection sets.
pub fn power_allocation(sc: &Scenario, sets: &SelectionSets, opts: &SolverOptions) -> Result<RunResult> {
    power_allocation_with_duals(sc, sets, opts).map(|(r, _)| r)
}

/// Primal-dual iteration on `(s, p, λ)`.
///
/// The `s` step is a projected gradient step scaled per coordinate by a
/// Gershgorin bound on the slot Hessian and driven by the extrapolated
/// multiplier `2λᵏ − λᵏ⁻¹`. Powers come from exact waterfilling at `λᵏ`. The
/// multiplier step is proportional to the distortion gradient, which keeps
/// the update invariant to the scale of `λ`. The dual step is halved whenever
/// the residual has not reached a new minimum for `opts.stall_window` iterations.
pub fn power_allocation_with_duals(
    sc: &Scenario,
    sets: &SelectionSets,
    opts: &SolverOptions,
) -> Result<(RunResult, DualState)> {
    let clock = Instant::now();
    sets.check(sc)?;
    if !(opts.step > 0.0 && opts.primal_step > 0.0) {
        return Err(Error::InvalidParams("step sizes must be positive".into()));
    }
    let (m, t_len) = (sc.sensors, sc.slots);
    let xi = compute_xi(sc);
    let model = InfoModel::new(sc)?;
    let mask = sets.mask(m);
    let mask_cols: Vec<Vec<bool>> = (0..t_len).map(|t| mask.column(t).to_vec()).collect();
    let rows_active: Vec<bool> = (0..m).map(|i| mask.row(i).iter().any(|&b| b)).collect();
    let e_rows: Vec<Vec<f64>> = (0..m).map(|i| sc.e.row(i).to_vec()).collect();
    let xi_rows: Vec<Vec<f64>> = (0..m).map(|i| xi.row(i).to_vec()).collect();

    let mut s = Array2::<f64>::zeros((m, t_len));
    let mut s_new = Array2::<f64>::zeros((m, t_len));
    let mut grad = Array2::<f64>::zeros((m, t_len));
    let mut lam = Array2::<f64>::zeros((m, t_len));
    let mut lam_prev = Array2::<f64>::zeros((m, t_len));
    let mut p = Array2::<f64>::zeros((m, t_len));
    let mut lam_row = vec![0.0; t_len];
    let mut p_row = vec![0.0; t_len];

    let mut eps = opts.step;
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut residual = f64::INFINITY;
    let mut iterations = 0usize;
    let mut trace = Vec::new();
    let any_active = rows_active.iter().any(|&b| b);

    if any_active {
        for _ in 0..opts.max_iter {
            iterations += 1;
            let mut objective = 0.0;
            for t in 0..t_len {
                let col = s.column(t).to_vec();
                let ev = model.eval(&col, Some(&mask_cols[t]))?;
                objective += ev.value;
                let root_sum: f64 = (0..m)
                    .filter(|&i| mask_cols[t][i])
                    .map(|i| ev.curv[i].sqrt())
                    .sum();
                for i in 0..m {
                    if !mask_cols[t][i] {
                        continue;
                    }
                    let d = ev.curv[i].sqrt() * root_sum;
                    let lam_bar = 2.0 * lam[[i, t]] - lam_prev[[i, t]];
                    grad[[i, t]] = ev.grad[i];
                    s_new[[i, t]] = if d > 0.0 {
                        (col[i] - opts.primal_step * (lam_bar - ev.grad[i]) / d).max(0.0)
                    } else {
                        0.0
                    };
                }
            }

            for i in 0..m {
                if !rows_active[i] {
                    continue;
                }
                for t in 0..t_len {
                    lam_row[t] = if mask[[i, t]] { lam[[i, t]] } else { 0.0 };
                }
                waterfill_slices(&lam_row, &xi_rows[i], &e_rows[i], sc.ts, &mut p_row);
                for t in 0..t_len {
                    p[[i, t]] = p_row[t];
                }
            }

            residual = 0.0;
            for i in 0..m {
                for t in 0..t_len {
                    if !mask[[i, t]] {
                        continue;
                    }
                    let u = p[[i, t]] / (p[[i, t]] + xi[[i, t]]);
                    let gap = s_new[[i, t]] - u;
                    residual = residual
                        .max((s_new[[i, t]] - s[[i, t]]).abs())
                        .max(gap.abs());
                    lam_prev[[i, t]] = lam[[i, t]];
                    lam[[i, t]] = (lam[[i, t]] + eps * grad[[i, t]] * gap).max(0.0);
                }
            }
            std::mem::swap(&mut s, &mut s_new);
            trace.push(IterateRecord {
                objective,
                constraint_residual: residual,
            });

            if residual <= opts.tol {
                break;
            }
            if residual < best {
                best = residual;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= opts.stall_window {
                    eps *= 0.5;
                    best = residual;
                    since_best = 0;
                }
            }
        }
    } else {
        residual = 0.0;
    }

    // Powers were computed from the previous multipliers; the causality
    // multipliers belong to that same waterfilling.
    let mut beta = Array2::<f64>::zeros((m, t_len));
    for i in 0..m {
        if !rows_active[i] {
            continue;
        }
        for t in 0..t_len {
            lam_row[t] = if mask[[i, t]] { lam_prev[[i, t]] } else { 0.0 };
        }
        if lam_row.iter().any(|&l| l > 0.0) {
            let levels = waterfill_slices(&lam_row, &xi_rows[i], &e_rows[i], sc.ts, &mut p_row);
            for (t, b) in beta_from_levels(&levels).into_iter().enumerate() {
                beta[[i, t]] = b;
            }
        }
    }

    let z = mask.mapv(|b| if b { 1.0 } else { 0.0 });
    let s_eff = effective_s(&p, &z, &xi);
    let allocation = Allocation { z, p, s: s_eff };
    let audit = audit_with_cardinality(sc, &allocation, opts.tol.max(1e-9), &sets.sizes())?;
    let converged = residual <= opts.tol;
    let mut result = RunResult::from_allocation(
        sc,
        allocation,
        Residuals {
            audit,
            solver: residual,
            iterations,
            converged,
        },
    )?;
    result.iterates = Some(trace);
    result.wall_time = clock.elapsed().as_secs_f64();
    let duals = DualState { lambda: lam, beta };
    if !converged {
        return Err(Error::NonConvergence {
            residual,
            iterations,
            partial: Some(Box::new(result)),
        });
    }
    Ok((result, duals))
}

/// Phase 1 solves with every sensor active; phase 2 keeps the `K` largest
/// auxiliary values of each slot.
pub fn eh_aware_phases(sc: &Scenario, opts: &SolverOptions) -> Result<(SelectionSets, RunResult)> {
    let relaxed = power_allocation(sc, &SelectionSets::all(sc.sensors, sc.slots), opts)?;
    let sets = (0..sc.slots)
        .map(|t| top_k(&relaxed.allocation.s.column(t).to_vec(), sc.k))
        .collect();
    Ok((SelectionSets { sets }, relaxed))
}

pub fn eh_aware_select(sc: &Scenario, opts: &SolverOptions) -> Result<SelectionSets> {
    eh_aware_phases(sc, opts).map(|(sets, _)| sets)
}

/// Energy-aware selection followed by power allocation on the chosen sets.
pub fn solve_sseh(sc: &Scenario, opts: &SolverOptions) -> Result<RunResult> {
    let clock = Instant::now();
    let sets = eh_aware_select(sc, opts)?;
    let mut result = power_allocation(sc, &sets, opts)?;
    result.wall_time = clock.elapsed().as_secs_f64();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_sensor_closed_form() {
        let sc = Scenario::with_defaults(1, array![[1.0]], 1.0, array![[2.0]]).unwrap();
        let r = power_allocation(&sc, &SelectionSets::all(1, 1), &SolverOptions::default()).unwrap();
        assert!((r.allocation.p[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((r.allocation.s[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((r.total_distortion - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sets_give_prior_trace() {
        let sc = Scenario::with_defaults(
            1,
            array![[1.0, 0.0], [0.3, 1.0]],
            0.5,
            array![[1.0, 1.0, 0.0], [0.0, 2.0, 1.0]],
        )
        .unwrap();
        let r = power_allocation(&sc, &SelectionSets::empty(3), &SolverOptions::default()).unwrap();
        assert_eq!(r.total_distortion, 3.0 * 2.0);
        assert!(r.allocation.p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn malformed_sets_rejected() {
        let sc = Scenario::with_defaults(1, array![[1.0], [2.0]], 1.0, array![[1.0], [1.0]]).unwrap();
        let opts = SolverOptions::default();
        let bad = SelectionSets { sets: vec![vec![2]] };
        assert!(power_allocation(&sc, &bad, &opts).is_err());
        let dup = SelectionSets { sets: vec![vec![1, 1]] };
        assert!(power_allocation(&sc, &dup, &opts).is_err());
        assert!(power_allocation(&sc, &SelectionSets::empty(2), &opts).is_err());
    }

    #[test]
    fn all_sensors_when_k_equals_m() {
        let sc = Scenario::with_defaults(
            2,
            array![[1.0, 0.2], [0.1, 0.7]],
            0.1,
            array![[1.0, 0.0], [0.0, 2.0]],
        )
        .unwrap();
        let sets = eh_aware_select(&sc, &SolverOptions::default()).unwrap();
        assert_eq!(sets, SelectionSets::all(2, 2));
    }
}
