//! Reference solvers for tests. Nothing here is used by the production
//! solvers, and nothing here calls them: linear algebra goes through
//! `nalgebra` and every projection is implemented independently.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Allocation, AuditReport, Residuals, RunResult, Scenario};
use crate::options::SolverOptions;
use crate::sseh::SelectionSets;
use crate::waterfill::WaterfillProblem;

/// Most candidate sequences [`enumerate_global`] will try.
pub const ENUMERATION_LIMIT: usize = 10_000;

/// KKT residual the reference power allocation must certify.
pub const REFERENCE_KKT_TOL: f64 = 1e-8;

struct Dense {
    prior: DMatrix<f64>,
    a: Vec<DVector<f64>>,
    scale: f64,
    xi: Array2<f64>,
}

impl Dense {
    fn new(sc: &Scenario) -> Self {
        let n = sc.dim;
        let sx = DMatrix::from_fn(n, n, |i, j| sc.sigma_x.get(i, j));
        let prior = sx.clone().try_inverse().expect("source covariance is invertible");
        let a = (0..sc.sensors)
            .map(|i| DVector::from_iterator(n, sc.a.row(i).iter().cloned()))
            .collect();
        let mut xi = Array2::zeros((sc.sensors, sc.slots));
        for i in 0..sc.sensors {
            let ai: &DVector<f64> = &DVector::from_iterator(n, sc.a.row(i).iter().cloned());
            let q = (ai.transpose() * &sx * ai)[(0, 0)];
            for t in 0..sc.slots {
                xi[[i, t]] = (q / sc.sigma_w2 + 1.0) / sc.h[[i, t]];
            }
        }
        Self {
            prior,
            a,
            scale: 1.0 / sc.sigma_w2,
            xi,
        }
    }

    fn inverse_info(&self, s: &[f64]) -> DMatrix<f64> {
        let mut x = self.prior.clone();
        for (a, &si) in self.a.iter().zip(s) {
            x += (self.scale * si) * a * a.transpose();
        }
        x.cholesky().expect("information matrix is PD").inverse()
    }

    /// Distortion of one slot and `∂D/∂s_i`.
    fn slot(&self, s: &[f64]) -> (f64, Vec<f64>) {
        let xinv = self.inverse_info(s);
        let grad = self
            .a
            .iter()
            .map(|a| {
                let y = &xinv * a;
                -self.scale * y.dot(&y)
            })
            .collect();
        (xinv.trace(), grad)
    }
}

/// Dykstra's alternating projections onto `{p ≥ 0}` and the half-spaces
/// `Σ_{l≤t} p_l ≤ cum[t]`.
fn dykstra_causal(v: &[f64], cum: &[f64]) -> Vec<f64> {
    let n = v.len();
    let sets = n + 1;
    let mut x = v.to_vec();
    let mut incr = vec![vec![0.0; n]; sets];
    for _ in 0..20_000 {
        let before = x.clone();
        // Dykstra can leave x fixed for a sweep while the corrections still
        // move, so both must settle before stopping.
        let mut moved = 0.0f64;
        for k in 0..sets {
            let y: Vec<f64> = x.iter().zip(&incr[k]).map(|(a, b)| a + b).collect();
            let proj: Vec<f64> = if k == n {
                y.iter().map(|&u| u.max(0.0)).collect()
            } else {
                let excess: f64 = y[..=k].iter().sum::<f64>() - cum[k];
                if excess > 0.0 {
                    let shift = excess / (k + 1) as f64;
                    y.iter()
                        .enumerate()
                        .map(|(j, &u)| if j <= k { u - shift } else { u })
                        .collect()
                } else {
                    y.clone()
                }
            };
            for j in 0..n {
                let next = y[j] - proj[j];
                moved = moved.max((next - incr[k][j]).abs());
                incr[k][j] = next;
            }
            x = proj;
        }
        let change = x
            .iter()
            .zip(&before)
            .fold(moved, |m, (a, b)| m.max((a - b).abs()));
        if change <= 1e-16 * (1.0 + cum.last().copied().unwrap_or(0.0)) {
            break;
        }
    }
    x
}

/// FISTA with backtracking and gradient restarts on a product of per-block
/// feasible sets. Returns the point and its gradient-mapping residual.
fn accelerated_projected_gradient<F, P>(
    x0: Vec<f64>,
    f: F,
    project: P,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
    P: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = project(&x0);
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut lip = 1.0f64;
    let mapping = |x: &[f64], g: &[f64]| -> f64 {
        let step: Vec<f64> = (0..n).map(|j| x[j] - g[j]).collect();
        let px = project(&step);
        (0..n).fold(0.0f64, |m, j| m.max((px[j] - x[j]).abs()))
    };
    let mut iters = 0;
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        iters = it + 1;
        let (fy, gy) = f(&y);
        let mut x_new;
        loop {
            let step: Vec<f64> = (0..n).map(|j| y[j] - gy[j] / lip).collect();
            x_new = project(&step);
            let d: Vec<f64> = (0..n).map(|j| x_new[j] - y[j]).collect();
            let quad = fy
                + (0..n).map(|j| gy[j] * d[j]).sum::<f64>()
                + 0.5 * lip * d.iter().map(|v| v * v).sum::<f64>();
            let (fx, _) = f(&x_new);
            if fx <= quad + 1e-15 * fy.abs() || lip > 1e20 {
                break;
            }
            lip *= 2.0;
        }
        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let momentum = (theta - 1.0) / theta_new;
        // Restart when the step points against the previous displacement.
        let restart = (0..n)
            .map(|j| (y[j] - x_new[j]) * (x_new[j] - x[j]))
            .sum::<f64>()
            > 0.0;
        if restart {
            theta = 1.0;
            y = x_new.clone();
        } else {
            y = (0..n)
                .map(|j| x_new[j] + momentum * (x_new[j] - x[j]))
                .collect();
            theta = theta_new;
        }
        x = x_new;
        lip *= 0.95;
        if it % 20 == 0 {
            let (_, gx) = f(&x);
            residual = mapping(&x, &gx);
            if residual <= tol {
                break;
            }
        }
    }
    let (_, gx) = f(&x);
    residual = residual.min(mapping(&x, &gx));
    (x, residual, iters)
}

/// Power allocation for fixed sets solved over `p` alone with `s = p/(p+ξ)`.
pub fn reference_power_alloc(sc: &Scenario, sets: &SelectionSets, opts: &SolverOptions) -> Result<RunResult> {
    let clock = Instant::now();
    let _ = opts;
    let dense = Dense::new(sc);
    let (m, t_len) = (sc.sensors, sc.slots);
    let mask = sets.mask(m);
    // Variables: p[i,t] for selected pairs, laid out row by row.
    let vars: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..t_len).map(move |t| (i, t)))
        .filter(|&(i, t)| mask[[i, t]])
        .collect();
    let blocks: Vec<(usize, Vec<usize>)> = (0..m)
        .map(|i| {
            let idx: Vec<usize> = vars
                .iter()
                .enumerate()
                .filter(|(_, &(r, _))| r == i)
                .map(|(j, _)| j)
                .collect();
            (i, idx)
        })
        .filter(|(_, idx)| !idx.is_empty())
        .collect();

    let unpack = |x: &[f64]| -> Array2<f64> {
        let mut p = Array2::zeros((m, t_len));
        for (j, &(i, t)) in vars.iter().enumerate() {
            p[[i, t]] = x[j];
        }
        p
    };
    let objective = |x: &[f64]| -> (f64, Vec<f64>) {
        let p = unpack(x);
        let mut total = 0.0;
        let mut grad = vec![0.0; x.len()];
        let mut slot_grads = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let s: Vec<f64> = (0..m)
                .map(|i| {
                    if mask[[i, t]] {
                        p[[i, t]] / (p[[i, t]] + dense.xi[[i, t]])
                    } else {
                        0.0
                    }
                })
                .collect();
            let (d, g) = dense.slot(&s);
            total += d;
            slot_grads.push(g);
        }
        for (j, &(i, t)) in vars.iter().enumerate() {
            let xi = dense.xi[[i, t]];
            let denom = p[[i, t]] + xi;
            grad[j] = slot_grads[t][i] * xi / (denom * denom);
        }
        (total, grad)
    };
    let project = |x: &[f64]| -> Vec<f64> {
        let mut out = x.to_vec();
        for (i, idx) in &blocks {
            // Unselected slots keep their energy, which carries forward.
            let mut cum = Vec::with_capacity(idx.len());
            let mut acc = 0.0;
            let mut t_prev = 0;
            for &j in idx {
                let t = vars[j].1;
                while t_prev <= t {
                    acc += sc.e[[*i, t_prev]] / sc.ts;
                    t_prev += 1;
                }
                cum.push(acc);
            }
            let v: Vec<f64> = idx.iter().map(|&j| x[j]).collect();
            for (k, val) in dykstra_causal(&v, &cum).into_iter().enumerate() {
                out[idx[k]] = val;
            }
        }
        out
    };

    let (x, residual, iterations) = if vars.is_empty() {
        (Vec::new(), 0.0, 0)
    } else {
        accelerated_projected_gradient(vec![0.0; vars.len()], objective, project, 200_000, 1e-10)
    };
    let p = unpack(&x);
    let z = mask.mapv(|b| if b { 1.0 } else { 0.0 });
    let mut s = Array2::zeros((m, t_len));
    for i in 0..m {
        for t in 0..t_len {
            if mask[[i, t]] && p[[i, t]] > 0.0 {
                s[[i, t]] = p[[i, t]] / (p[[i, t]] + dense.xi[[i, t]]);
            }
        }
    }
    let per_slot: Vec<f64> = (0..t_len)
        .map(|t| dense.slot(&s.column(t).to_vec()).0)
        .collect();
    let total = per_slot.iter().sum();
    let converged = residual <= REFERENCE_KKT_TOL;
    let result = RunResult {
        allocation: Allocation { z, p, s },
        per_slot_distortion: per_slot,
        total_distortion: total,
        iterates: None,
        residuals: Residuals {
            audit: AuditReport::default(),
            solver: residual,
            iterations,
            converged,
        },
        pre_crop_objective: None,
        relaxed_z: None,
        wall_time: clock.elapsed().as_secs_f64(),
    };
    if !converged {
        return Err(Error::NonConvergence {
            residual,
            iterations,
            partial: Some(Box::new(result)),
        });
    }
    Ok(result)
}

fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, k, &mut Vec::new(), &mut out);
    out
}

/// Exhaustive search over every per-slot selection sequence.
pub fn enumerate_global(sc: &Scenario, opts: &SolverOptions) -> Result<(SelectionSets, RunResult)> {
    let combos = combinations(sc.sensors, sc.k);
    let count = (combos.len() as f64).powi(sc.slots as i32);
    if count > ENUMERATION_LIMIT as f64 {
        return Err(Error::TooLarge {
            candidates: count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let count = count as usize;
    let candidate = |mut idx: usize| -> SelectionSets {
        let mut sets = Vec::with_capacity(sc.slots);
        for _ in 0..sc.slots {
            sets.push(combos[idx % combos.len()].clone());
            idx /= combos.len();
        }
        SelectionSets { sets }
    };
    let results: Vec<Result<RunResult>> = (0..count)
        .into_par_iter()
        .map(|c| reference_power_alloc(sc, &candidate(c), opts))
        .collect();
    let mut best: Option<(usize, RunResult)> = None;
    for (c, r) in results.into_iter().enumerate() {
        let r = r?;
        if best
            .as_ref()
            .is_none_or(|(_, b)| r.total_distortion < b.total_distortion)
        {
            best = Some((c, r));
        }
    }
    let (c, r) = best.expect("at least one candidate");
    Ok((candidate(c), r))
}

/// Number of candidate sequences [`enumerate_global`] would evaluate.
pub fn enumeration_size(sc: &Scenario) -> usize {
    combinations(sc.sensors, sc.k).len().pow(sc.slots as u32)
}

/// Projection onto the causal set for per-slot budget increments, by
/// alternating projections.
pub fn reference_causal_projection(v: &[f64], budget: &[f64]) -> Vec<f64> {
    let cum: Vec<f64> = budget
        .iter()
        .scan(0.0, |acc, &b| {
            *acc += b;
            Some(*acc)
        })
        .collect();
    dykstra_causal(v, &cum)
}

/// Maximizes the waterfilling objective by accelerated projected gradient.
pub fn reference_waterfill(prob: &WaterfillProblem) -> Vec<f64> {
    let cum: Vec<f64> = prob
        .energy
        .iter()
        .scan(0.0, |acc, &e| {
            *acc += e / prob.ts;
            Some(*acc)
        })
        .collect();
    let f = |p: &[f64]| -> (f64, Vec<f64>) {
        let mut val = 0.0;
        let grad = p
            .iter()
            .enumerate()
            .map(|(t, &pt)| {
                let (l, x) = (prob.lambda[t], prob.xi[t]);
                let q = pt.max(0.0) + x;
                val -= l * pt.max(0.0) / q;
                -l * x / (q * q)
            })
            .collect();
        (val, grad)
    };
    let project = |v: &[f64]| dykstra_causal(v, &cum);
    accelerated_projected_gradient(vec![0.0; prob.lambda.len()], f, project, 200_000, 1e-12).0
}

/// Exact projection onto the capped simplex by enumerating every
/// lower/free/upper partition of the coordinates (`3^M` candidates).
pub fn reference_capped_simplex(v: &[f64], k: usize) -> Vec<f64> {
    let m = v.len();
    assert!(k <= m && m <= 12, "brute force is limited to M <= 12");
    let kf = k as f64;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(m as u32) {
        let mut c = code;
        let mut state = vec![0u8; m];
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let n_up = state.iter().filter(|&&s| s == 2).count() as f64;
        let free: Vec<usize> = (0..m).filter(|&i| state[i] == 1).collect();
        let x: Vec<f64> = if free.is_empty() {
            if (n_up - kf).abs() > 0.5 {
                continue;
            }
            state.iter().map(|&s| if s == 2 { 1.0 } else { 0.0 }).collect()
        } else {
            let shift = (free.iter().map(|&i| v[i]).sum::<f64>() - (kf - n_up)) / free.len() as f64;
            state
                .iter()
                .enumerate()
                .map(|(i, &s)| match s {
                    0 => 0.0,
                    2 => 1.0,
                    _ => v[i] - shift,
                })
                .collect()
        };
        if x.iter().any(|&u| !(-1e-12..=1.0 + 1e-12).contains(&u)) {
            continue;
        }
        let dist: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    }
    best.expect("feasible set is nonempty").1
}

/// Sort-based exact capped-simplex projection: the shift lies between
/// consecutive breakpoints `v_i` and `v_i − 1`, where the clamped sum is affine.
fn sorted_capped_simplex(v: &[f64], k: usize) -> Vec<f64> {
    let kf = k as f64;
    let sum_at = |tau: f64| v.iter().map(|&x| (x - tau).clamp(0.0, 1.0)).sum::<f64>();
    let mut bps: Vec<f64> = v.iter().flat_map(|&x| [x, x - 1.0]).collect();
    bps.sort_by(f64::total_cmp);
    let mut tau = bps[0];
    for w in bps.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (slo, shi) = (sum_at(lo), sum_at(hi));
        if slo >= kf && shi <= kf {
            tau = if slo == shi { lo } else { lo + (slo - kf) * (hi - lo) / (slo - shi) };
            break;
        }
    }
    v.iter().map(|&x| (x - tau).clamp(0.0, 1.0)).collect()
}

/// Relaxed time-invariant selection solved by projected gradient from
/// `restarts` random feasible starts; returns the best `z` and its objective.
pub fn reference_relaxed_selection(sc: &Scenario, restarts: usize, seed: u64) -> (Vec<f64>, f64) {
    let dense = Dense::new(sc);
    let m = sc.sensors;
    let f = |z: &[f64]| dense.slot(z);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in 0..restarts.max(1) {
        let start: Vec<f64> = if r == 0 {
            vec![sc.k as f64 / m as f64; m]
        } else {
            let v: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0).collect();
            sorted_capped_simplex(&v, sc.k)
        };
        let project = |v: &[f64]| sorted_capped_simplex(v, sc.k);
        let (z, _, _) = accelerated_projected_gradient(start, f, project, 100_000, 1e-12);
        let val = f(&z).0;
        if best.as_ref().is_none_or(|(_, b)| val < *b) {
            best = Some((z, val));
        }
    }
    best.unwrap()
}
