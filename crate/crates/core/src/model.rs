//! Problem instances, derived constants, distortion and feasibility checks.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SymMatrix;

/// Parameters a scenario was generated from, kept for provenance in files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GeneratorMeta {
    pub mu: f64,
    #[serde(rename = "Eamp")]
    pub e_amp: f64,
    pub seed: u64,
}

/// A full problem instance. Matrices indexed `[sensor, slot]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub sensors: usize,
    pub slots: usize,
    pub k: usize,
    pub ts: f64,
    pub dim: usize,
    /// Observation vectors, one row per sensor.
    pub a: Array2<f64>,
    pub sigma_x: SymMatrix,
    pub sigma_w2: f64,
    pub h: Array2<f64>,
    pub e: Array2<f64>,
    pub generator: Option<GeneratorMeta>,
}

impl Scenario {
    /// Scenario with identity source covariance, unit gains and `Ts = 1`.
    pub fn with_defaults(k: usize, a: Array2<f64>, sigma_w2: f64, e: Array2<f64>) -> Result<Self> {
        let (sensors, dim) = a.dim();
        let slots = e.ncols();
        Self {
            sensors,
            slots,
            k,
            ts: 1.0,
            dim,
            a,
            sigma_x: SymMatrix::identity(dim),
            sigma_w2,
            h: Array2::ones((sensors, slots)),
            e,
            generator: None,
        }
        .validated()
    }

    /// Checks every invariant and returns the scenario unchanged.
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, t) = (self.sensors, self.slots);
        if m == 0 || t == 0 || self.dim == 0 {
            return Err(Error::InvalidParams("M, T and m must be positive".into()));
        }
        if self.k > m {
            return Err(Error::InvalidK { k: self.k, m });
        }
        if self.a.dim() != (m, self.dim) {
            return Err(Error::ShapeMismatch(format!(
                "A is {:?}, expected ({m}, {})",
                self.a.dim(),
                self.dim
            )));
        }
        if self.sigma_x.order() != self.dim {
            return Err(Error::ShapeMismatch("sigmaX order differs from m".into()));
        }
        for (name, mat) in [("H", &self.h), ("E", &self.e)] {
            if mat.dim() != (m, t) {
                return Err(Error::ShapeMismatch(format!(
                    "{name} is {:?}, expected ({m}, {t})",
                    mat.dim()
                )));
            }
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::InvalidParams("Ts must be positive".into()));
        }
        if !(self.sigma_w2 > 0.0 && self.sigma_w2.is_finite()) {
            return Err(Error::InvalidParams("sigmaW2 must be positive".into()));
        }
        if self.h.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParams("channel gains must be positive".into()));
        }
        if self.e.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParams("energies must be nonnegative".into()));
        }
        if self.a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("A has non-finite entries".into()));
        }
        self.sigma_x.cholesky()?;
        Ok(())
    }

    pub fn a_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.a.row(i)
    }

    /// Scenario restricted to slots `start..end`, with energies replaced.
    pub fn window(&self, start: usize, end: usize, e: Array2<f64>) -> Scenario {
        Scenario {
            slots: end - start,
            h: self.h.slice(ndarray::s![.., start..end]).to_owned(),
            e,
            generator: None,
            ..self.clone()
        }
    }
}

/// `ξ[i,t] = (a_iᵀΣ_x a_i / σ²_w + 1) / h[i,t]`
pub fn compute_xi(sc: &Scenario) -> Array2<f64> {
    let mut xi = Array2::zeros((sc.sensors, sc.slots));
    for i in 0..sc.sensors {
        let a = sc.a.row(i).to_vec();
        let sa = sc.sigma_x.mul_vec(&a);
        let q: f64 = a.iter().zip(&sa).map(|(x, y)| x * y).sum();
        let num = q / sc.sigma_w2 + 1.0;
        for t in 0..sc.slots {
            xi[[i, t]] = num / sc.h[[i, t]];
        }
    }
    xi
}

/// `S = P∘Z / (P + ξ)` elementwise.
pub fn effective_s(p: &Array2<f64>, z: &Array2<f64>, xi: &Array2<f64>) -> Array2<f64> {
    let mut s = Array2::zeros(p.dim());
    ndarray::Zip::from(&mut s)
        .and(p)
        .and(z)
        .and(xi)
        .for_each(|s, &p, &z, &x| *s = if p > 0.0 { p * z / (p + x) } else { 0.0 });
    s
}

/// Per-slot information model `X(s) = Σ_x⁻¹ + (1/σ²_w) Σ s_i a_i a_iᵀ`.
#[derive(Clone, Debug)]
pub struct InfoModel {
    prior: SymMatrix,
    a: Vec<Vec<f64>>,
    scale: f64,
}

/// Distortion of one slot with its gradient magnitudes and curvature diagonal.
#[derive(Clone, Debug)]
pub struct SlotEval {
    pub value: f64,
    /// `−∂D/∂s_i ≥ 0`
    pub grad: Vec<f64>,
    /// `∂²D/∂s_i²`
    pub curv: Vec<f64>,
}

impl InfoModel {
    pub fn new(sc: &Scenario) -> Result<Self> {
        let prior = sc.sigma_x.cholesky()?.inverse();
        let a = (0..sc.sensors).map(|i| sc.a.row(i).to_vec()).collect();
        Ok(Self {
            prior,
            a,
            scale: 1.0 / sc.sigma_w2,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn matrix(&self, s: &[f64]) -> SymMatrix {
        let mut x = self.prior.clone();
        for (a, &si) in self.a.iter().zip(s) {
            if si != 0.0 {
                x.add_rank_one(self.scale * si, a);
            }
        }
        x
    }

    pub fn distortion(&self, s: &[f64]) -> Result<f64> {
        Ok(self.matrix(s).cholesky()?.trace_inv())
    }

    /// Value, gradient and curvature; `active` limits which sensors get derivatives.
    pub fn eval(&self, s: &[f64], active: Option<&[bool]>) -> Result<SlotEval> {
        let xinv = self.matrix(s).cholesky()?.inverse();
        let n = self.a.len();
        let mut grad = vec![0.0; n];
        let mut curv = vec![0.0; n];
        for i in 0..n {
            if active.is_some_and(|m| !m[i]) {
                continue;
            }
            let y = xinv.mul_vec(&self.a[i]);
            let q1: f64 = y.iter().zip(&self.a[i]).map(|(u, v)| u * v).sum();
            let q2: f64 = y.iter().map(|u| u * u).sum();
            grad[i] = self.scale * q2;
            curv[i] = 2.0 * self.scale * self.scale * q1 * q2;
        }
        Ok(SlotEval {
            value: xinv.trace(),
            grad,
            curv,
        })
    }

    /// Distortion at `s⁺` continued by its tangent in every negative
    /// coordinate, with the gradient of that continuation. Continuously
    /// differentiable, and equal to the distortion on the nonnegative orthant.
    pub(crate) fn tangent_extension(&self, s: &[f64]) -> Result<(f64, Vec<f64>)> {
        let clamped: Vec<f64> = s.iter().map(|v| v.max(0.0)).collect();
        let y = self.matrix(&clamped).cholesky()?.inverse();
        let (n, d) = (s.len(), y.order());
        let yd = y.row_major();
        let c = self.scale;
        let times_y = |x: &[f64], out: &mut [f64]| {
            for (r, o) in out.iter_mut().enumerate() {
                *o = yd[r * d..(r + 1) * d].iter().zip(x).map(|(p, q)| p * q).sum();
            }
        };
        let mut u = vec![0.0; n * d];
        for (i, a) in self.a.iter().enumerate() {
            times_y(a, &mut u[i * d..(i + 1) * d]);
        }
        let mut value = y.trace();
        let mut grad: Vec<f64> = u.chunks(d).map(|ui| -c * ui.iter().map(|v| v * v).sum::<f64>()).collect();
        if s.iter().all(|&v| v >= 0.0) {
            return Ok((value, grad));
        }
        // d/ds_j of −c·tr(Y N Y) with N = Σ s_i⁻ a_i a_iᵀ is 2c²·u_jᵀ N Y u_j.
        let mut nmat = SymMatrix::zeros(d);
        for i in 0..n {
            if s[i] < 0.0 {
                value += grad[i] * s[i];
                nmat.add_rank_one(s[i], &self.a[i]);
            }
        }
        let nd = nmat.row_major();
        let (mut w, mut nw) = (vec![0.0; d], vec![0.0; d]);
        for j in 0..n {
            if s[j] < 0.0 {
                continue;
            }
            let uj = &u[j * d..(j + 1) * d];
            times_y(uj, &mut w);
            for (r, o) in nw.iter_mut().enumerate() {
                *o = nd[r * d..(r + 1) * d].iter().zip(&w).map(|(p, q)| p * q).sum();
            }
            let acc: f64 = uj.iter().zip(&nw).map(|(p, q)| p * q).sum();
            grad[j] += 2.0 * c * c * acc;
        }
        Ok((value, grad))
    }
}

/// `tr((1/σ²_w) Σ s_i a_i a_iᵀ + Σ_x⁻¹)⁻¹`
pub fn distortion_slot(sc: &Scenario, s: &[f64]) -> Result<f64> {
    if s.len() != sc.sensors {
        return Err(Error::ShapeMismatch(format!(
            "s has length {}, expected {}",
            s.len(),
            sc.sensors
        )));
    }
    InfoModel::new(sc)?.distortion(s)
}

/// Distortion of every slot for an `M×T` matrix of auxiliary values.
pub fn distortion_per_slot(sc: &Scenario, s: &Array2<f64>) -> Result<Vec<f64>> {
    let model = InfoModel::new(sc)?;
    (0..sc.slots)
        .map(|t| model.distortion(&s.column(t).to_vec()))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub z: Array2<f64>,
    pub p: Array2<f64>,
    pub s: Array2<f64>,
}

impl Allocation {
    pub fn zeros(sensors: usize, slots: usize) -> Self {
        Self {
            z: Array2::zeros((sensors, slots)),
            p: Array2::zeros((sensors, slots)),
            s: Array2::zeros((sensors, slots)),
        }
    }

    /// Indices with `z = 1` in slot `t`.
    pub fn selected(&self, t: usize) -> Vec<usize> {
        (0..self.z.nrows()).filter(|&i| self.z[[i, t]] >= 0.5).collect()
    }
}

/// Largest violation of each constraint family.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditReport {
    pub causality: f64,
    pub cardinality: f64,
    pub box_bounds: f64,
    pub nonnegativity: f64,
    pub s_consistency: f64,
    pub tol: f64,
    pub passed: bool,
}

impl AuditReport {
    pub fn max_violation(&self) -> f64 {
        self.causality
            .max(self.cardinality)
            .max(self.box_bounds)
            .max(self.nonnegativity)
            .max(self.s_consistency)
    }
}

/// Audits against `K` selections per slot.
pub fn audit(sc: &Scenario, alloc: &Allocation, tol: f64) -> Result<AuditReport> {
    audit_with_cardinality(sc, alloc, tol, &vec![sc.k; sc.slots])
}

/// Audits with an explicit per-slot selection count (e.g. `M` for the full problem).
pub fn audit_with_cardinality(
    sc: &Scenario,
    alloc: &Allocation,
    tol: f64,
    cardinality: &[usize],
) -> Result<AuditReport> {
    let shape = (sc.sensors, sc.slots);
    for (name, mat) in [("Z", &alloc.z), ("P", &alloc.p), ("S", &alloc.s)] {
        if mat.dim() != shape {
            return Err(Error::ShapeMismatch(format!(
                "{name} is {:?}, expected {shape:?}",
                mat.dim()
            )));
        }
    }
    if cardinality.len() != sc.slots {
        return Err(Error::ShapeMismatch("cardinality length differs from T".into()));
    }
    let xi = compute_xi(sc);
    let mut r = AuditReport {
        tol,
        ..Default::default()
    };
    for i in 0..sc.sensors {
        let (mut spent, mut harvested) = (0.0, 0.0);
        for t in 0..sc.slots {
            let (z, p, s) = (alloc.z[[i, t]], alloc.p[[i, t]], alloc.s[[i, t]]);
            spent += sc.ts * p;
            harvested += sc.e[[i, t]];
            r.causality = r.causality.max(spent - harvested);
            r.box_bounds = r.box_bounds.max(-z).max(z - 1.0);
            r.nonnegativity = r.nonnegativity.max(-p).max(-s);
            let bound = if p > 0.0 { p * z / (p + xi[[i, t]]) } else { 0.0 };
            r.s_consistency = r.s_consistency.max(s - bound);
        }
    }
    for t in 0..sc.slots {
        let sum: f64 = alloc.z.column(t).sum();
        r.cardinality = r.cardinality.max((sum - cardinality[t] as f64).abs());
    }
    r.passed = r.max_violation() <= tol;
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IterateRecord {
    pub objective: f64,
    pub constraint_residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Residuals {
    pub audit: AuditReport,
    /// Final stopping residual of the solver that produced the result.
    pub solver: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub allocation: Allocation,
    pub per_slot_distortion: Vec<f64>,
    pub total_distortion: f64,
    pub iterates: Option<Vec<IterateRecord>>,
    pub residuals: Residuals,
    /// Objective of the relaxed solution before rounding, when rounding happened.
    pub pre_crop_objective: Option<f64>,
    /// Selection weights before rounding.
    pub relaxed_z: Option<Array2<f64>>,
    pub wall_time: f64,
}

impl RunResult {
    /// Evaluates distortion from `alloc.s` and fills the remaining fields.
    pub fn from_allocation(sc: &Scenario, allocation: Allocation, residuals: Residuals) -> Result<Self> {
        let per_slot_distortion = distortion_per_slot(sc, &allocation.s)?;
        let total_distortion = per_slot_distortion.iter().sum();
        Ok(Self {
            allocation,
            per_slot_distortion,
            total_distortion,
            iterates: None,
            residuals,
            pre_crop_objective: None,
            relaxed_z: None,
            wall_time: 0.0,
        })
    }

    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &RunResult) -> bool {
        self.allocation == other.allocation
            && self.per_slot_distortion == other.per_slot_distortion
            && self.total_distortion == other.total_distortion
            && self.iterates == other.iterates
            && self.residuals == other.residuals
            && self.pre_crop_objective == other.pre_crop_objective
            && self.relaxed_z == other.relaxed_z
    }
}
