//! Dense symmetric linear algebra and the projections used by the solvers.

use crate::error::{Error, Result};

/// Pivots below this fraction of the largest diagonal entry are treated as breakdown.
const PIVOT_REL_TOL: f64 = 1e-12;

/// Symmetric matrix with full row-major storage; every write is mirrored.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from a dense row-major array. The input must be symmetric up to
    /// rounding; the lower triangle is kept and mirrored.
    pub fn from_row_major(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        let scale = data.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let (lo, up) = (data[i * n + j], data[j * n + i]);
                if (lo - up).abs() > 1e-12 * scale {
                    return Err(Error::InvalidParams(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
                m.set(i, j, lo);
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    /// `self += alpha * a aᵀ`
    pub fn add_rank_one(&mut self, alpha: f64, a: &[f64]) {
        debug_assert_eq!(a.len(), self.n);
        let n = self.n;
        for i in 0..n {
            let ai = alpha * a[i];
            for j in 0..n {
                self.data[i * n + j] += ai * a[j];
            }
        }
    }

    pub fn row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| (0..n).map(|j| self.data[i * n + j] * v[j]).sum())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::new(self)
    }
}

/// Lower-triangular factor `X = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn new(x: &SymMatrix) -> Result<Self> {
        let n = x.order();
        let max_diag = (0..n).fold(0.0f64, |acc, i| acc.max(x.get(i, i)));
        let threshold = PIVOT_REL_TOL * max_diag;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = x.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > threshold) {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut v = x.get(i, j);
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = v / djj;
            }
        }
        Ok(Self { n, l })
    }

    /// Solves `L y = b` in place.
    fn forward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self.l[i * n + k] * b[k];
            }
            b[i] = v / self.l[i * n + i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    fn backward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in (i + 1)..n {
                v -= self.l[k * n + i] * b[k];
            }
            b[i] = v / self.l[i * n + i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// `L⁻¹` as a dense row-major lower-triangular array.
    fn lower_inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        for j in 0..n {
            inv[j * n + j] = 1.0 / self.l[j * n + j];
            for i in (j + 1)..n {
                let mut v = 0.0;
                for k in j..i {
                    v -= self.l[i * n + k] * inv[k * n + j];
                }
                inv[i * n + j] = v / self.l[i * n + i];
            }
        }
        inv
    }

    /// `tr(X⁻¹) = ‖L⁻¹‖_F²`
    pub fn trace_inv(&self) -> f64 {
        self.lower_inverse().iter().map(|v| v * v).sum()
    }

    /// `X⁻¹ = L⁻ᵀ L⁻¹`
    pub fn inverse(&self) -> SymMatrix {
        let n = self.n;
        let li = self.lower_inverse();
        let mut out = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut v = 0.0;
                for k in i..n {
                    v += li[k * n + i] * li[k * n + j];
                }
                out.set(i, j, v);
            }
        }
        out
    }
}

/// `tr(X⁻¹)` through a Cholesky factorization.
pub fn trace_inv(x: &SymMatrix) -> Result<f64> {
    Ok(x.cholesky()?.trace_inv())
}

/// Magnitude of the derivative of `tr((X + scale·s·aaᵀ)⁻¹)` with respect to `s`
/// at `s = 0`, i.e. `scale · aᵀX⁻²a`.
pub fn trace_inv_grad(x: &SymMatrix, a: &[f64], scale: f64) -> Result<f64> {
    if a.len() != x.order() {
        return Err(Error::ShapeMismatch(format!(
            "vector of length {} against matrix of order {}",
            a.len(),
            x.order()
        )));
    }
    let y = x.cholesky()?.solve(a);
    Ok(scale * y.iter().map(|v| v * v).sum::<f64>())
}

/// Euclidean projection onto `{z ∈ [0,1]^M : Σz = K}`.
pub fn project_capped_simplex(v: &[f64], k: usize) -> Result<Vec<f64>> {
    let m = v.len();
    if k > m {
        return Err(Error::InvalidK { k, m });
    }
    if k == 0 {
        return Ok(vec![0.0; m]);
    }
    if k == m {
        return Ok(vec![1.0; m]);
    }
    Ok(project_box_simplex(v, k as f64))
}

/// Euclidean projection onto `{z ∈ [0,1]^n : Σz = total}` for a real
/// `total`, saturating at the all-zeros or all-ones vector outside `[0, n]`.
pub(crate) fn project_box_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let m = v.len();
    if total <= 0.0 {
        return vec![0.0; m];
    }
    if total >= m as f64 {
        return vec![1.0; m];
    }
    let kf = total;
    // Σ clamp(v − τ, 0, 1) is piecewise linear and nonincreasing in τ, with a
    // coordinate turning free at v_i − 1 and vanishing at v_i. Sweep the
    // breakpoints until the sum drops to the target.
    let mut breaks: Vec<(f64, bool)> = Vec::with_capacity(2 * m);
    for &x in v {
        breaks.push((x - 1.0, true));
        breaks.push((x, false));
    }
    breaks.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let (mut n_top, mut n_free, mut free_sum) = (m as f64, 0.0f64, 0.0f64);
    let mut tau = breaks[breaks.len() - 1].0;
    for &(b, enters) in &breaks {
        if n_top + free_sum - n_free * b <= kf {
            tau = if n_free > 0.0 { (free_sum - (kf - n_top)) / n_free } else { b };
            break;
        }
        let x = if enters { b + 1.0 } else { b };
        if enters {
            n_top -= 1.0;
            n_free += 1.0;
            free_sum += x;
        } else {
            n_free -= 1.0;
            free_sum -= x;
        }
    }
    let mut z: Vec<f64> = v.iter().map(|&x| (x - tau).clamp(0.0, 1.0)).collect();

    // Spread any rounding residue over coordinates with room to move. For
    // huge |v| the breakpoints lose digits and the residue can be large, so
    // keep going until it is gone.
    for _ in 0..m {
        let err = kf - z.iter().sum::<f64>();
        if err.abs() <= 4.0 * f64::EPSILON * kf {
            break;
        }
        let room: Vec<usize> = (0..m)
            .filter(|&i| if err > 0.0 { z[i] < 1.0 } else { z[i] > 0.0 })
            .collect();
        let d = err / room.len() as f64;
        for &i in &room {
            z[i] = (z[i] + d).clamp(0.0, 1.0);
        }
    }
    z
}

/// Euclidean projection onto `{p ≥ 0 : Σ_{l≤t} p_l ≤ Σ_{l≤t} b_l ∀t}` for
/// nonnegative per-slot budget increments `b`.
///
/// The solution has the form `p_t = [v_t − θ_t]⁺` with `θ` nonnegative and
/// nonincreasing; groups of slots sharing a `θ` are merged pool-adjacent style.
pub fn project_causal(v: &[f64], budget: &[f64]) -> Vec<f64> {
    debug_assert_eq!(v.len(), budget.len());
    // Clipping at zero already is the projection when it respects every budget.
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    let (mut used, mut cap) = (0.0, 0.0);
    let fits = clipped.iter().zip(budget).all(|(&p, &b)| {
        used += p;
        cap += b.max(0.0);
        used <= cap
    });
    if fits {
        return clipped;
    }
    struct Group {
        start: usize,
        end: usize,
        budget: f64,
        /// Positive entries of `v` in the group, descending.
        vals: Vec<f64>,
        theta: f64,
    }
    // θ ≥ 0 with Σ[v − θ]⁺ = b when the positive part exceeds b, else 0.
    let group_theta = |vals: &[f64], b: f64| -> f64 {
        let total: f64 = vals.iter().sum();
        if total <= b {
            return 0.0;
        }
        let mut acc = 0.0;
        for (j, &x) in vals.iter().enumerate() {
            acc += x;
            let theta = (acc - b) / (j + 1) as f64;
            let next = vals.get(j + 1).copied().unwrap_or(0.0);
            if theta >= next {
                return theta.max(0.0);
            }
        }
        ((acc - b) / vals.len() as f64).max(0.0)
    };
    let merge_desc = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            if a[i] >= b[j] {
                out.push(a[i]);
                i += 1;
            } else {
                out.push(b[j]);
                j += 1;
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        out
    };

    let mut groups: Vec<Group> = Vec::with_capacity(v.len());
    for t in 0..v.len() {
        let vals = if v[t] > 0.0 { vec![v[t]] } else { Vec::new() };
        let budget = budget[t].max(0.0);
        let mut g = Group {
            start: t,
            end: t + 1,
            budget,
            theta: group_theta(&vals, budget),
            vals,
        };
        while groups.last().is_some_and(|prev| prev.theta < g.theta) {
            let prev = groups.pop().expect("checked nonempty");
            g.start = prev.start;
            g.budget += prev.budget;
            g.vals = merge_desc(&prev.vals, &g.vals);
            g.theta = group_theta(&g.vals, g.budget);
        }
        groups.push(g);
    }
    let mut p = vec![0.0; v.len()];
    for g in &groups {
        for t in g.start..g.end {
            p[t] = (v[t] - g.theta).max(0.0);
        }
    }
    // For large |v| the subtraction above loses digits; trim any overshoot
    // so the result is feasible regardless of scale.
    let (mut used, mut cap) = (0.0, 0.0);
    for (pt, b) in p.iter_mut().zip(budget) {
        cap += b.max(0.0);
        if used + *pt > cap {
            *pt = (cap - used).max(0.0);
        }
        used += *pt;
    }
    p
}

/// Indices of the `k` largest entries, ties broken by ascending index; the
/// returned indices are sorted ascending.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}
