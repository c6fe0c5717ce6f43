//! Causal policies: recompute an offline plan at every energy arrival, using
//! only the energy known at that moment, over a sliding window.

use std::time::Instant;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::jsseh::{solve_jsseh_from, MMAnchor};
use crate::model::{audit, compute_xi, effective_s, Allocation, Residuals, RunResult, Scenario};
use crate::options::SolverOptions;
use crate::sseh::solve_sseh;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    SsEh,
    JssEh,
}

/// Planning horizon of each recompute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    /// `Tw` slots starting at the event, truncated at the horizon.
    Slots(usize),
    FullHorizon,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineConfig {
    pub policy: Policy,
    pub window: Window,
    pub options: SolverOptions,
}

/// One recompute: the slot it happened at, the sensors that harvested there
/// and the planned slots `start..end`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub slot: usize,
    pub sensors: Vec<usize>,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug)]
pub struct OnlineResult {
    pub result: RunResult,
    pub events: Vec<Event>,
    /// The full plan computed at each event, on its own window.
    pub plans: Vec<RunResult>,
}

/// Harvested minus spent energy of each sensor before slot `t_o`.
pub fn unspent_energy(e: &Array2<f64>, p: &Array2<f64>, ts: f64, t_o: usize) -> Result<Vec<f64>> {
    if e.dim() != p.dim() {
        return Err(Error::ShapeMismatch("E and P differ in shape".into()));
    }
    if t_o > e.ncols() {
        return Err(Error::InvalidParams(format!("slot {t_o} beyond horizon {}", e.ncols())));
    }
    (0..e.nrows())
        .map(|i| {
            let harvested: f64 = e.slice(s![i, ..t_o]).iter().sum();
            let spent: f64 = p.slice(s![i, ..t_o]).iter().sum();
            let left = harvested - ts * spent;
            if left < -1e-9 {
                Err(Error::NegativeResidual { sensor: i, value: left })
            } else {
                Ok(left.max(0.0))
            }
        })
        .collect()
}

fn plan(sub: &Scenario, cfg: &OnlineConfig) -> Result<RunResult> {
    let sseh = solve_sseh(sub, &cfg.options)?;
    match cfg.policy {
        Policy::SsEh => Ok(sseh),
        Policy::JssEh => {
            let xi = compute_xi(sub);
            let z = sseh.allocation.z;
            let p = sseh.allocation.p;
            let s = effective_s(&p, &z, &xi);
            solve_jsseh_from(sub, MMAnchor { z, s, p }, &cfg.options)
        }
    }
}

/// Event-driven myopic policy.
///
/// A plan is computed at slot 0 and at every later slot where some sensor
/// harvests. Each plan sees the unspent energy plus the current arrival, all
/// available at once, and nothing from the future. Its slots are kept until
/// the next event; slots after a short window and before the next event
/// transmit nothing and keep the last selection.
pub fn run_online(sc: &Scenario, cfg: &OnlineConfig) -> Result<OnlineResult> {
    let clock = Instant::now();
    if cfg.window == Window::Slots(0) {
        return Err(Error::InvalidParams("window must be at least one slot".into()));
    }
    let (m, t_len) = (sc.sensors, sc.slots);
    let arrivals: Vec<Vec<usize>> = (0..t_len)
        .map(|t| (0..m).filter(|&i| sc.e[[i, t]] > 0.0).collect())
        .collect();
    let event_slots: Vec<usize> = (0..t_len).filter(|&t| t == 0 || !arrivals[t].is_empty()).collect();

    let mut alloc = Allocation::zeros(m, t_len);
    let mut events = Vec::with_capacity(event_slots.len());
    let mut plans = Vec::with_capacity(event_slots.len());
    let (mut iterations, mut solver, mut converged) = (0, 0.0f64, true);
    for (n, &t_o) in event_slots.iter().enumerate() {
        let next = event_slots.get(n + 1).copied().unwrap_or(t_len);
        let end = match cfg.window {
            Window::Slots(w) => (t_o + w).min(t_len),
            Window::FullHorizon => t_len,
        };
        let carried = unspent_energy(&sc.e, &alloc.p, sc.ts, t_o)?;
        let mut e = Array2::zeros((m, end - t_o));
        for i in 0..m {
            e[[i, 0]] = carried[i] + sc.e[[i, t_o]];
        }
        let sub = sc.window(t_o, end, e);
        let r = plan(&sub, cfg)?;

        let covered = next.min(end);
        for t in t_o..covered {
            for i in 0..m {
                alloc.z[[i, t]] = r.allocation.z[[i, t - t_o]];
                alloc.p[[i, t]] = r.allocation.p[[i, t - t_o]];
                alloc.s[[i, t]] = r.allocation.s[[i, t - t_o]];
            }
        }
        for t in covered..next {
            for i in 0..m {
                alloc.z[[i, t]] = alloc.z[[i, t - 1]];
            }
        }

        iterations += r.residuals.iterations;
        solver = solver.max(r.residuals.solver);
        converged &= r.residuals.converged;
        events.push(Event {
            slot: t_o,
            sensors: arrivals[t_o].clone(),
            start: t_o,
            end,
        });
        plans.push(r);
    }

    let report = audit(sc, &alloc, 1e-6)?;
    let mut result = RunResult::from_allocation(
        sc,
        alloc,
        Residuals {
            audit: report,
            solver,
            iterations,
            converged,
        },
    )?;
    result.wall_time = clock.elapsed().as_secs_f64();
    Ok(OnlineResult { result, events, plans })
}
