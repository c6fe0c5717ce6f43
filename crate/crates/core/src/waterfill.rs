//! Per-sensor directional waterfilling under energy causality.
//!
//! Maximizes `Σ λ_t p_t/(p_t+ξ_t)` subject to `Ts Σ_{l≤t} p_l ≤ Σ_{l≤t} E_l`,
//! `p ≥ 0`. The optimum has `p_t = W_t (ν_t − H_t)⁺` with `W = √(ξλ/Ts)`,
//! `H = √(ξTs/λ)` and water levels `ν` that rise only at arrival slots.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct WaterfillProblem {
    pub lambda: Vec<f64>,
    pub xi: Vec<f64>,
    pub energy: Vec<f64>,
    pub ts: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaterfillSolution {
    pub p: Vec<f64>,
    /// Water level per slot; `+∞` on trailing slots that absorb no water.
    pub levels: Vec<f64>,
    /// Causality multipliers with `Σ_{l≥t} β_l = 1/ν_t²`.
    pub beta: Vec<f64>,
    /// Set when every weight is zero; `p`, `levels` and `beta` are then zero.
    pub degenerate: bool,
}

impl WaterfillProblem {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    fn check(&self) -> Result<()> {
        let t = self.lambda.len();
        if self.xi.len() != t || self.energy.len() != t {
            return Err(Error::ShapeMismatch(format!(
                "lambda/xi/energy lengths {}/{}/{}",
                t,
                self.xi.len(),
                self.energy.len()
            )));
        }
        if !(self.ts > 0.0)
            || self.lambda.iter().any(|&v| !(v >= 0.0))
            || self.xi.iter().any(|&v| !(v > 0.0))
            || self.energy.iter().any(|&v| !(v >= 0.0))
        {
            return Err(Error::InvalidParams(
                "need lambda >= 0, xi > 0, energy >= 0, Ts > 0".into(),
            ));
        }
        Ok(())
    }

    /// `Σ λ_t p_t/(p_t+ξ_t)`
    pub fn objective(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(&self.lambda)
            .zip(&self.xi)
            .map(|((&p, &l), &x)| if p > 0.0 { l * p / (p + x) } else { 0.0 })
            .sum()
    }
}

/// Lowest level at which a group spends exactly `budget`.
///
/// Spending `Ts Σ [W ν − ξ]⁺` is piecewise linear in `ν` with breakpoints at
/// `H = ξ/W`, so the level follows from a scan over sorted breakpoints.
fn group_level(w: &[f64], xi: &[f64], budget: f64, ts: f64, order: &mut Vec<usize>) -> f64 {
    order.clear();
    order.extend((0..w.len()).filter(|&j| w[j] > 0.0));
    if order.is_empty() {
        return f64::INFINITY;
    }
    let h = |j: usize| xi[j] / w[j];
    order.sort_by(|&a, &b| h(a).total_cmp(&h(b)));
    if budget <= 0.0 {
        return h(order[0]);
    }
    let (mut sw, mut sxi) = (0.0, 0.0);
    for (k, &j) in order.iter().enumerate() {
        sw += w[j];
        sxi += xi[j];
        let nu = (budget / ts + sxi) / sw;
        match order.get(k + 1) {
            Some(&next) if nu > h(next) => continue,
            _ => return nu,
        }
    }
    unreachable!()
}

/// Waterfilling on raw slices; `p` is overwritten. Returns the levels.
pub(crate) fn waterfill_slices(
    lambda: &[f64],
    xi: &[f64],
    energy: &[f64],
    ts: f64,
    p: &mut [f64],
) -> Vec<f64> {
    let t_len = lambda.len();
    let w: Vec<f64> = lambda
        .iter()
        .zip(xi)
        .map(|(&l, &x)| if l > 0.0 { (x * l / ts).sqrt() } else { 0.0 })
        .collect();

    // (start, end, budget, level)
    let mut groups: Vec<(usize, usize, f64, f64)> = Vec::new();
    let mut scratch = Vec::with_capacity(t_len);
    let mut start = 0;
    while start < t_len {
        let mut end = start + 1;
        while end < t_len && energy[end] <= 0.0 {
            end += 1;
        }
        let budget: f64 = energy[start..end].iter().sum();
        let level = group_level(&w[start..end], &xi[start..end], budget, ts, &mut scratch);
        let mut g = (start, end, budget, level);
        while let Some(prev) = groups.last() {
            if prev.3 > g.3 {
                let prev = groups.pop().unwrap();
                g.0 = prev.0;
                g.2 += prev.2;
                g.3 = group_level(&w[g.0..g.1], &xi[g.0..g.1], g.2, ts, &mut scratch);
            } else {
                break;
            }
        }
        groups.push(g);
        start = end;
    }

    let mut levels = vec![0.0; t_len];
    for &(s, e, _, lv) in &groups {
        for t in s..e {
            levels[t] = lv;
            p[t] = if lv.is_finite() {
                (w[t] * lv - xi[t]).max(0.0)
            } else {
                0.0
            };
        }
    }
    levels
}

/// `β` recovered from the levels: `β_t = 1/ν_t² − 1/ν_{t+1}²`.
pub(crate) fn beta_from_levels(levels: &[f64]) -> Vec<f64> {
    let tail = |v: f64| if v.is_finite() && v > 0.0 { 1.0 / (v * v) } else { 0.0 };
    let n = levels.len();
    (0..n)
        .map(|t| {
            let next = if t + 1 < n { tail(levels[t + 1]) } else { 0.0 };
            (tail(levels[t]) - next).max(0.0)
        })
        .collect()
}

/// Exact directional waterfilling, certified by [`kkt_residual`] against `tol`.
pub fn directional_waterfill(prob: &WaterfillProblem, tol: f64) -> Result<WaterfillSolution> {
    prob.check()?;
    let n = prob.len();
    if prob.lambda.iter().all(|&l| l == 0.0) {
        return Ok(WaterfillSolution {
            p: vec![0.0; n],
            levels: vec![0.0; n],
            beta: vec![0.0; n],
            degenerate: true,
        });
    }
    let mut p = vec![0.0; n];
    let levels = waterfill_slices(&prob.lambda, &prob.xi, &prob.energy, prob.ts, &mut p);
    let beta = beta_from_levels(&levels);
    let sol = WaterfillSolution {
        p,
        levels,
        beta,
        degenerate: false,
    };
    let residual = kkt_residual(prob, &sol);
    if residual > tol {
        return Err(Error::NonConvergence {
            residual,
            iterations: 1,
            partial: None,
        });
    }
    Ok(sol)
}

/// Largest of: relative stationarity gap, causality violation, negative
/// power or dual, and complementary-slackness product.
///
/// Stationarity and slackness terms are divided by `max λ/ξ`, the largest
/// marginal utility, so the residual does not scale with `λ`.
pub fn kkt_residual(prob: &WaterfillProblem, sol: &WaterfillSolution) -> f64 {
    let n = prob.len();
    let u_max = (0..n)
        .map(|t| prob.lambda[t] / prob.xi[t])
        .fold(0.0f64, f64::max);
    let norm = if u_max > 0.0 { u_max } else { 1.0 };
    let mut res = 0.0f64;

    let mut tail = vec![0.0; n + 1];
    for t in (0..n).rev() {
        tail[t] = tail[t + 1] + sol.beta[t];
    }
    let (mut spent, mut harvested) = (0.0, 0.0);
    for t in 0..n {
        let (p, l, x) = (sol.p[t], prob.lambda[t], prob.xi[t]);
        res = res.max(-p).max(-sol.beta[t] / norm);
        spent += prob.ts * p;
        harvested += prob.energy[t];
        let slack = harvested - spent;
        res = res.max(-slack);
        res = res.max(sol.beta[t] * slack.max(0.0) / norm);
        if l > 0.0 {
            let marginal = l * x / ((p.max(0.0) + x) * (p.max(0.0) + x));
            let price = prob.ts * tail[t];
            let gap = if p > 0.0 {
                (marginal - price).abs()
            } else {
                (marginal - price).max(0.0)
            };
            res = res.max(gap / norm);
        } else {
            res = res.max(p.abs());
        }
    }
    res
}
