//! Spectral projected gradient with a nonmonotone Armijo line search.

use crate::error::Result;

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const STEP_MIN: f64 = 1e-12;
const STEP_MAX: f64 = 1e12;
/// Iterations between checks of the projected-gradient norm.
const CHECK_EVERY: usize = 5;

pub(crate) struct SpgOutcome {
    pub x: Vec<f64>,
    /// `‖P(x − ∇f) − x‖∞` at the returned point.
    pub pg_norm: f64,
    pub iterations: usize,
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Minimizes `f` over a convex set given by its Euclidean projection.
/// `x0` must already be feasible.
pub(crate) fn spg<F, P>(x0: Vec<f64>, mut f: F, project: P, tol: f64, max_iter: usize) -> Result<SpgOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    let pg = |x: &[f64], g: &[f64]| -> f64 {
        let trial: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        inf_norm_diff(&project(&trial), x)
    };
    let mut pg_norm = pg(&x, &g);
    let mut history = vec![fx];
    let mut step = if pg_norm > 0.0 {
        (1.0 / pg_norm).clamp(STEP_MIN, STEP_MAX)
    } else {
        1.0
    };
    let mut iterations = 0;
    while pg_norm > tol && iterations < max_iter {
        iterations += 1;
        let trial: Vec<f64> = (0..n).map(|j| x[j] - step * g[j]).collect();
        let target = project(&trial);
        let d: Vec<f64> = (0..n).map(|j| target[j] - x[j]).collect();
        let slope: f64 = (0..n).map(|j| g[j] * d[j]).sum();
        if slope >= 0.0 {
            break;
        }
        let f_ref = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let (x_new, f_new, g_new) = loop {
            let cand: Vec<f64> = (0..n).map(|j| x[j] + t * d[j]).collect();
            let (fc, gc) = f(&cand)?;
            if fc <= f_ref + ARMIJO * t * slope || t < 1e-12 {
                break (cand, fc, gc);
            }
            let quad = 0.5 * t * t * slope / (fx - fc + t * slope);
            t = if quad > 0.1 * t && quad < 0.9 * t { quad } else { 0.5 * t };
        };
        if f_new > f_ref + ARMIJO * t * slope {
            break;
        }
        let sk: Vec<f64> = (0..n).map(|j| x_new[j] - x[j]).collect();
        let yk: Vec<f64> = (0..n).map(|j| g_new[j] - g[j]).collect();
        let sy: f64 = sk.iter().zip(&yk).map(|(a, b)| a * b).sum();
        let ss: f64 = sk.iter().map(|a| a * a).sum();
        step = if sy > 0.0 { (ss / sy).clamp(STEP_MIN, STEP_MAX) } else { STEP_MAX };
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
        if history.len() > MEMORY {
            history.remove(0);
        }
        if iterations % CHECK_EVERY == 0 || iterations == max_iter {
            pg_norm = pg(&x, &g);
        }
    }
    if iterations > 0 {
        pg_norm = pg(&x, &g);
    }
    Ok(SpgOutcome {
        x,
        pg_norm,
        iterations,
    })
}
