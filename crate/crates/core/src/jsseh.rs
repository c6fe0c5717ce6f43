//! Joint selection and power allocation by majorization-minimization.
//!
//! The bilinear constraint `s·p − p·z + s·ξ ≤ 0` is replaced at an anchor
//! `(z₀, s₀, p₀)` by the convex majorizer
//!
//! ```text
//! c(z,s,p) = ½(s+p)² − s₀s − p₀p + ½(s₀²+p₀²)
//!          + ½(z²+p²) − (z₀+p₀)(z+p) + ½(z₀+p₀)² + sξ  ≤ 0,
//! ```
//!
//! tight at the anchor. For fixed `(z, p)` the constraint is a quadratic in
//! `s` whose larger root is the best feasible `s`, so the surrogate problem
//! is solved over `(z, p)` alone: capped-simplex and causality constraints
//! are handled by exact projection, and the requirement that the root be
//! nonnegative by an augmented Lagrangian. Outside that region the distortion
//! is continued by its tangent, which keeps the penalized objective smooth.
//!
//! Pairs that have harvested nothing yet must transmit nothing, and for them
//! the bilinear constraint is used exactly (`s = 0`, `z` free) instead of
//! its majorizer, which would freeze `z` at the anchor.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    audit, compute_xi, effective_s, Allocation, InfoModel, IterateRecord, Residuals, RunResult,
    Scenario,
};
use crate::numerics::{project_capped_simplex, project_causal, top_k};
use crate::options::SolverOptions;
use crate::spg::spg;
use crate::sseh::solve_sseh;

/// Expansion point of the majorizer.
#[derive(Clone, Debug, PartialEq)]
pub struct MMAnchor {
    pub z: Array2<f64>,
    pub s: Array2<f64>,
    pub p: Array2<f64>,
}

impl MMAnchor {
    pub fn allocation(&self) -> Allocation {
        Allocation {
            z: self.z.clone(),
            p: self.p.clone(),
            s: self.s.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// The energy-aware separate solution.
    FromSseh,
    /// `z = K/M`, `s = p = 0`.
    UniformZero,
    /// Random selection weights and spending fractions.
    Random(u64),
}

/// Solution of one surrogate problem.
#[derive(Clone, Debug)]
pub struct SurrogateSolution {
    pub anchor: MMAnchor,
    /// Total distortion at the returned point.
    pub objective: f64,
    /// Largest violation of the majorized constraint.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Value of the majorized constraint at `(z, s, p)` for anchor `(z0, s0, p0)`.
pub fn majorizer(z: f64, s: f64, p: f64, z0: f64, s0: f64, p0: f64, xi: f64) -> f64 {
    let f_bar = 0.5 * (s + p).powi(2) - 0.5 * (s0 * s0 + p0 * p0) - s0 * (s - s0) - p0 * (p - p0);
    let w0 = z0 + p0;
    let g_bar = 0.5 * (z * z + p * p) - 0.5 * w0 * w0 - w0 * (z - z0) - w0 * (p - p0);
    f_bar + g_bar + s * xi
}

/// Larger root `s` of the majorized constraint in `s`, with `∂s/∂z` and
/// `∂s/∂p`, and the violation `c(z, 0, p)⁺` of the requirement `s ≥ 0`.
/// The root is allowed to go negative so that it stays smooth across the
/// boundary of the feasible set.
#[derive(Clone, Copy, Debug)]
struct Root {
    s: f64,
    ds_dz: f64,
    ds_dp: f64,
    violation: f64,
}

fn best_s(z: f64, p: f64, z0: f64, s0: f64, p0: f64, xi: f64) -> Root {
    let w0 = z0 + p0;
    let b = p + xi - s0;
    // c(z, 0, p)
    let r = 0.5 * (z - w0).powi(2) + p * p - (p0 + w0) * p + 0.5 * s0 * s0 + 0.5 * p0 * p0;
    let disc = b * b - 2.0 * r;
    let violation = r.max(0.0);
    if disc <= 0.0 {
        // No real root: fall back to the vertex of the parabola.
        return Root {
            s: -b,
            ds_dz: 0.0,
            ds_dp: -1.0,
            violation,
        };
    }
    let sq = disc.sqrt();
    let s = if b > 0.0 { -2.0 * r / (b + sq) } else { -b + sq };
    // ∂c/∂s at the root equals √disc.
    let cz = z - w0;
    let cp = s + 2.0 * p - 2.0 * p0 - z0;
    Root {
        s,
        ds_dz: -cz / sq,
        ds_dp: -cp / sq,
        violation,
    }
}

/// Checks the anchor against its own majorized constraint.
fn anchor_residual(anchor: &MMAnchor, xi: &Array2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for ((i, t), &z0) in anchor.z.indexed_iter() {
        let (s0, p0) = (anchor.s[[i, t]], anchor.p[[i, t]]);
        worst = worst.max(majorizer(z0, s0, p0, z0, s0, p0, xi[[i, t]]));
    }
    worst
}

struct Surrogate<'a> {
    sc: &'a Scenario,
    model: InfoModel,
    xi: Array2<f64>,
    anchor: &'a MMAnchor,
    /// Causality budget increments `E/Ts` per sensor.
    budget: Vec<Vec<f64>>,
    /// Pairs with no energy yet. There `p = 0`, so the bilinear constraint is
    /// exactly `s = 0` with `z` free; the linearized form would instead pin
    /// `z` at its anchor value.
    dormant: Vec<bool>,
}

impl<'a> Surrogate<'a> {
    fn new(sc: &'a Scenario, anchor: &'a MMAnchor) -> Result<Self> {
        let budget: Vec<Vec<f64>> = (0..sc.sensors)
            .map(|i| sc.e.row(i).iter().map(|&e| e / sc.ts).collect())
            .collect();
        let mut dormant = Vec::with_capacity(sc.sensors * sc.slots);
        for row in &budget {
            let mut cum = 0.0;
            for &b in row {
                cum += b;
                dormant.push(cum <= 0.0);
            }
        }
        Ok(Self {
            sc,
            model: InfoModel::new(sc)?,
            xi: compute_xi(sc),
            anchor,
            budget,
            dormant,
        })
    }

    fn n(&self) -> usize {
        self.sc.sensors * self.sc.slots
    }

    /// `x = [z row-major, p row-major]`
    fn pack(&self, z: &Array2<f64>, p: &Array2<f64>) -> Vec<f64> {
        z.iter().chain(p.iter()).cloned().collect()
    }

    fn roots(&self, x: &[f64]) -> Vec<Root> {
        let (m, t_len, n) = (self.sc.sensors, self.sc.slots, self.n());
        let a = self.anchor;
        let mut out = Vec::with_capacity(n);
        for i in 0..m {
            for t in 0..t_len {
                let k = i * t_len + t;
                if self.dormant[k] {
                    out.push(Root {
                        s: 0.0,
                        ds_dz: 0.0,
                        ds_dp: 0.0,
                        violation: 0.0,
                    });
                    continue;
                }
                out.push(best_s(
                    x[k],
                    x[n + k],
                    a.z[[i, t]],
                    a.s[[i, t]],
                    a.p[[i, t]],
                    self.xi[[i, t]],
                ));
            }
        }
        out
    }

    /// Tangent-extended distortion plus augmented-Lagrangian penalty, and its gradient.
    fn value(&self, x: &[f64], mult: &[f64], rho: f64) -> Result<(f64, Vec<f64>)> {
        let (m, t_len, n) = (self.sc.sensors, self.sc.slots, self.n());
        let a = self.anchor;
        let roots = self.roots(x);
        let mut grad = vec![0.0; 2 * n];
        let mut total = 0.0;
        let mut col = vec![0.0; m];
        for t in 0..t_len {
            for i in 0..m {
                col[i] = roots[i * t_len + t].s;
            }
            let (value, ds) = self.model.tangent_extension(&col)?;
            total += value;
            for i in 0..m {
                let k = i * t_len + t;
                let r = &roots[k];
                grad[k] += ds[i] * r.ds_dz;
                grad[n + k] += ds[i] * r.ds_dp;
            }
        }
        for k in 0..n {
            if self.dormant[k] {
                continue;
            }
            let (i, t) = (k / t_len, k % t_len);
            let (z, p) = (x[k], x[n + k]);
            let (z0, p0) = (a.z[[i, t]], a.p[[i, t]]);
            let w0 = z0 + p0;
            let shifted = mult[k] + rho * self.slack(x, k);
            if shifted > 0.0 {
                total += (shifted * shifted - mult[k] * mult[k]) / (2.0 * rho);
                grad[k] += shifted * (z - w0);
                grad[n + k] += shifted * (2.0 * p - p0 - w0);
            }
        }
        Ok((total, grad))
    }

    /// `c(z, 0, p)` for pair `k`; nonpositive exactly when some `s ≥ 0` is feasible.
    fn slack(&self, x: &[f64], k: usize) -> f64 {
        if self.dormant[k] {
            return 0.0;
        }
        let t_len = self.sc.slots;
        let (i, t) = (k / t_len, k % t_len);
        let a = self.anchor;
        let (z, p) = (x[k], x[self.n() + k]);
        let (z0, s0, p0) = (a.z[[i, t]], a.s[[i, t]], a.p[[i, t]]);
        let w0 = z0 + p0;
        0.5 * (z - w0).powi(2) + p * p - (p0 + w0) * p + 0.5 * s0 * s0 + 0.5 * p0 * p0
    }

    fn distortion(&self, x: &[f64]) -> Result<(f64, f64, Array2<f64>)> {
        let (m, t_len) = (self.sc.sensors, self.sc.slots);
        let roots = self.roots(x);
        let s = Array2::from_shape_fn((m, t_len), |(i, t)| roots[i * t_len + t].s.max(0.0));
        let violation = roots.iter().fold(0.0f64, |acc, r| acc.max(r.violation));
        let mut total = 0.0;
        for t in 0..t_len {
            total += self.model.distortion(&s.column(t).to_vec())?;
        }
        Ok((total, violation, s))
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let (m, t_len, n) = (self.sc.sensors, self.sc.slots, self.n());
        let mut out = vec![0.0; 2 * n];
        let mut col = vec![0.0; m];
        for t in 0..t_len {
            for i in 0..m {
                col[i] = x[i * t_len + t];
            }
            let zc = project_capped_simplex(&col, self.sc.k).expect("K <= M");
            for i in 0..m {
                out[i * t_len + t] = zc[i];
            }
        }
        for i in 0..m {
            let row = &x[n + i * t_len..n + (i + 1) * t_len];
            let pr = project_causal(row, &self.budget[i]);
            out[n + i * t_len..n + (i + 1) * t_len].copy_from_slice(&pr);
        }
        out
    }
}

/// Solves the surrogate problem at `anchor`.
///
/// The returned point never has a larger distortion than the anchor: if the
/// inner solver ends above it, the anchor itself is returned.
pub fn surrogate_solve(sc: &Scenario, anchor: &MMAnchor, opts: &SolverOptions) -> Result<SurrogateSolution> {
    let shape = (sc.sensors, sc.slots);
    if anchor.z.dim() != shape || anchor.s.dim() != shape || anchor.p.dim() != shape {
        return Err(Error::ShapeMismatch("anchor shape differs from scenario".into()));
    }
    let sur = Surrogate::new(sc, anchor)?;
    let residual = anchor_residual(anchor, &sur.xi);
    if residual > 1e-9 {
        return Err(Error::InfeasibleAnchor { residual });
    }
    let n = sur.n();
    let anchor_objective: f64 = {
        let mut acc = 0.0;
        for t in 0..sc.slots {
            acc += sur.model.distortion(&anchor.s.column(t).to_vec())?;
        }
        acc
    };

    let mut x = sur.pack(&anchor.z, &anchor.p);
    let mut mult = vec![0.0; n];
    let mut rho = 10.0;
    let mut iterations = 0;
    let mut prev_violation = f64::INFINITY;
    let mut converged = false;
    let mut budget = opts.inner_max_iter;
    for _ in 0..40 {
        let out = spg(
            x.clone(),
            |y| sur.value(y, &mult, rho),
            |y| sur.project(y),
            opts.inner_tol,
            budget,
        )?;
        iterations += out.iterations;
        budget = budget.saturating_sub(out.iterations).max(50);
        x = out.x;
        let (_, violation, _) = sur.distortion(&x)?;
        for k in 0..n {
            mult[k] = (mult[k] + rho * sur.slack(&x, k)).max(0.0);
        }
        if out.pg_norm <= opts.inner_tol && violation <= opts.inner_tol {
            converged = true;
            break;
        }
        if iterations >= opts.inner_max_iter && violation <= opts.inner_tol {
            break;
        }
        if violation > 0.25 * prev_violation {
            rho *= 2.0;
        }
        prev_violation = violation;
    }

    let (objective, violation, s) = sur.distortion(&x)?;
    let z = Array2::from_shape_fn((sc.sensors, sc.slots), |(i, t)| x[i * sc.slots + t]);
    let p = Array2::from_shape_fn((sc.sensors, sc.slots), |(i, t)| x[n + i * sc.slots + t]);
    if objective > anchor_objective {
        return Ok(SurrogateSolution {
            anchor: anchor.clone(),
            objective: anchor_objective,
            residual: 0.0,
            iterations,
            converged,
        });
    }
    Ok(SurrogateSolution {
        anchor: MMAnchor { z, s, p },
        objective,
        residual: violation,
        iterations,
        converged,
    })
}

/// Initial feasible point of the given kind.
pub fn feasible_init(sc: &Scenario, kind: InitKind, opts: &SolverOptions) -> Result<MMAnchor> {
    let (m, t_len) = (sc.sensors, sc.slots);
    let xi = compute_xi(sc);
    match kind {
        InitKind::FromSseh => {
            let r = solve_sseh(sc, opts)?;
            Ok(MMAnchor {
                z: r.allocation.z,
                s: r.allocation.s,
                p: r.allocation.p,
            })
        }
        InitKind::UniformZero => Ok(MMAnchor {
            z: Array2::from_elem((m, t_len), sc.k as f64 / m as f64),
            s: Array2::zeros((m, t_len)),
            p: Array2::zeros((m, t_len)),
        }),
        InitKind::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut z = Array2::zeros((m, t_len));
            for t in 0..t_len {
                let v: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
                for (i, zi) in project_capped_simplex(&v, sc.k)?.into_iter().enumerate() {
                    z[[i, t]] = zi;
                }
            }
            // Each arrival is partly spent in its own slot.
            let mut p = Array2::zeros((m, t_len));
            for i in 0..m {
                for t in 0..t_len {
                    p[[i, t]] = rng.random::<f64>() * sc.e[[i, t]] / sc.ts;
                }
            }
            let s = effective_s(&p, &z, &xi);
            Ok(MMAnchor { z, s, p })
        }
    }
}

/// Keeps the `K` largest entries of each column (ties by lower index).
pub fn crop_topk(z: &Array2<f64>, k: usize) -> Array2<f64> {
    let mut out = Array2::zeros(z.dim());
    for t in 0..z.ncols() {
        for i in top_k(&z.column(t).to_vec(), k) {
            out[[i, t]] = 1.0;
        }
    }
    out
}

/// MM loop from `init`, then cropping to a Boolean selection.
pub fn solve_jsseh(sc: &Scenario, init: InitKind, opts: &SolverOptions) -> Result<RunResult> {
    let anchor = feasible_init(sc, init, opts)?;
    solve_jsseh_from(sc, anchor, opts)
}

/// MM loop from a given feasible anchor.
pub fn solve_jsseh_from(sc: &Scenario, mut anchor: MMAnchor, opts: &SolverOptions) -> Result<RunResult> {
    let clock = Instant::now();
    let xi = compute_xi(sc);
    let model = InfoModel::new(sc)?;
    let objective_of = |s: &Array2<f64>| -> Result<f64> {
        let mut acc = 0.0;
        for t in 0..sc.slots {
            acc += model.distortion(&s.column(t).to_vec())?;
        }
        Ok(acc)
    };
    let mut objective = objective_of(&anchor.s)?;
    let mut trace = vec![IterateRecord {
        objective,
        constraint_residual: audit(sc, &anchor.allocation(), 0.0)?.max_violation(),
    }];
    let mut calm = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    for _ in 0..opts.mm_max_iter {
        iterations += 1;
        let sol = surrogate_solve(sc, &anchor, opts)?;
        let change = (objective - sol.objective).abs() / objective.abs().max(f64::MIN_POSITIVE);
        anchor = sol.anchor;
        objective = sol.objective;
        last_change = change;
        trace.push(IterateRecord {
            objective,
            constraint_residual: audit(sc, &anchor.allocation(), 0.0)?.max_violation(),
        });
        if change <= opts.mm_tol {
            calm += 1;
            if calm >= opts.mm_patience {
                converged = true;
                break;
            }
        } else {
            calm = 0;
        }
    }

    let relaxed_z = anchor.z.clone();
    let z = crop_topk(&relaxed_z, sc.k);
    let s = effective_s(&anchor.p, &z, &xi);
    let allocation = Allocation {
        z,
        p: anchor.p,
        s,
    };
    let report = audit(sc, &allocation, 1e-6)?;
    let mut result = RunResult::from_allocation(
        sc,
        allocation,
        Residuals {
            audit: report,
            solver: last_change,
            iterations,
            converged,
        },
    )?;
    result.pre_crop_objective = Some(objective);
    result.relaxed_z = Some(relaxed_z);
    result.iterates = Some(trace);
    result.wall_time = clock.elapsed().as_secs_f64();
    Ok(result)
}
