//! Seeded scenario generation and the JSON scenario file format.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GeneratorMeta, Scenario};
use crate::numerics::SymMatrix;

/// Covariance of the observation vectors `a_i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ACovariance {
    /// `I/√m`: each component has variance `1/√m`.
    #[default]
    InvSqrtDim,
    /// `I/m`: unit expected squared norm.
    InvDim,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub sensors: usize,
    pub slots: usize,
    pub k: usize,
    pub dim: usize,
    /// Poisson arrival intensity per second.
    pub mu: f64,
    /// Energy per arrival (joules).
    pub e_amp: f64,
    pub sigma_w2: f64,
    pub ts: f64,
    pub seed: u64,
    pub a_cov: ACovariance,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            sensors: 20,
            slots: 50,
            k: 10,
            dim: 5,
            mu: 0.5,
            e_amp: 1.0,
            sigma_w2: 0.1,
            ts: 1.0,
            seed: 0,
            a_cov: ACovariance::InvSqrtDim,
        }
    }
}

const GEOMETRY_STREAM: u64 = 0;
const ENERGY_STREAM: u64 = 1;

/// Smallest `n` with `P(N ≤ n) ≥ u` for `N ~ Poisson(rate)`.
///
/// Inversion makes the count nondecreasing in `rate` for a fixed `u`.
pub fn poisson_quantile(rate: f64, u: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let mut term = (-rate).exp();
    let mut cdf = term;
    let mut n = 0u64;
    while u > cdf && n < 100_000 {
        n += 1;
        term *= rate / n as f64;
        let next = cdf + term;
        if next == cdf && term < f64::EPSILON {
            break;
        }
        cdf = next;
    }
    n
}

/// Draws a scenario: Gaussian observation vectors, unit gains, identity
/// source covariance and Poisson arrival counts scaled by `e_amp`.
///
/// Geometry and energy come from separate ChaCha streams of the same seed,
/// so changing `mu` or `e_amp` leaves the observation vectors untouched.
pub fn generate(params: &GeneratorParams) -> Result<Scenario> {
    let GeneratorParams {
        sensors,
        slots,
        k,
        dim,
        mu,
        e_amp,
        sigma_w2,
        ts,
        seed,
        a_cov,
    } = *params;
    if sensors == 0 || slots == 0 || dim == 0 {
        return Err(Error::InvalidParams("M, T and m must be positive".into()));
    }
    if k > sensors {
        return Err(Error::InvalidParams(format!("K = {k} exceeds M = {sensors}")));
    }
    if !(mu >= 0.0 && mu.is_finite()) || !(e_amp >= 0.0 && e_amp.is_finite()) {
        return Err(Error::InvalidParams("mu and Eamp must be nonnegative".into()));
    }
    if !(sigma_w2 > 0.0 && sigma_w2.is_finite()) || !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::InvalidParams("sigmaW2 and Ts must be positive".into()));
    }
    if mu * ts > 500.0 {
        return Err(Error::InvalidParams("mu * Ts must not exceed 500".into()));
    }

    let std = match a_cov {
        ACovariance::InvSqrtDim => (dim as f64).powf(-0.25),
        ACovariance::InvDim => (dim as f64).powf(-0.5),
    };
    let mut geo = ChaCha8Rng::seed_from_u64(seed);
    geo.set_stream(GEOMETRY_STREAM);
    let a = Array2::from_shape_simple_fn((sensors, dim), || {
        std * geo.sample::<f64, _>(StandardNormal)
    });

    let mut energy = ChaCha8Rng::seed_from_u64(seed);
    energy.set_stream(ENERGY_STREAM);
    let rate = mu * ts;
    let e = Array2::from_shape_simple_fn((sensors, slots), || {
        let u: f64 = energy.random();
        e_amp * poisson_quantile(rate, u) as f64
    });

    Scenario {
        sensors,
        slots,
        k,
        ts,
        dim,
        a,
        sigma_x: SymMatrix::identity(dim),
        sigma_w2,
        h: Array2::ones((sensors, slots)),
        e,
        generator: Some(GeneratorMeta { mu, e_amp, seed }),
    }
    .validated()
}

fn default_ts() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(rename = "M")]
    sensors: usize,
    #[serde(rename = "T")]
    slots: usize,
    #[serde(rename = "K")]
    k: usize,
    m: usize,
    #[serde(rename = "Ts", default = "default_ts")]
    ts: f64,
    #[serde(rename = "sigmaW2")]
    sigma_w2: f64,
    /// Row-major `m×m`; identity when absent.
    #[serde(rename = "sigmaX", default)]
    sigma_x: Option<Vec<f64>>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    /// Unit gains when absent.
    #[serde(rename = "H", default)]
    h: Option<Vec<Vec<f64>>>,
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorMeta>,
}

fn rows_to_array(field: &str, rows: Vec<Vec<f64>>, nrows: usize, ncols: usize) -> Result<Array2<f64>> {
    if rows.len() != nrows {
        return Err(Error::Schema {
            path: field.into(),
            message: format!("expected {nrows} rows, found {}", rows.len()),
        });
    }
    let mut flat = Vec::with_capacity(nrows * ncols);
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Schema {
                path: format!("{field}[{i}]"),
                message: format!("expected {ncols} values, found {}", row.len()),
            });
        }
        flat.extend(row);
    }
    Ok(Array2::from_shape_vec((nrows, ncols), flat).expect("shape checked"))
}

fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn from_json_str(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        Error::Schema {
            path,
            message: err.into_inner().to_string(),
        }
    })?;
    let (m, t, dim) = (file.sensors, file.slots, file.m);
    let sigma_x = match file.sigma_x {
        Some(v) => SymMatrix::from_row_major(dim, &v).map_err(|e| Error::Schema {
            path: "sigmaX".into(),
            message: e.to_string(),
        })?,
        None => SymMatrix::identity(dim),
    };
    let a = rows_to_array("A", file.a, m, dim)?;
    let h = match file.h {
        Some(rows) => rows_to_array("H", rows, m, t)?,
        None => Array2::ones((m, t)),
    };
    let e = rows_to_array("E", file.e, m, t)?;
    Scenario {
        sensors: m,
        slots: t,
        k: file.k,
        ts: file.ts,
        dim,
        a,
        sigma_x,
        sigma_w2: file.sigma_w2,
        h,
        e,
        generator: file.generator,
    }
    .validated()
}

pub fn to_json_string(sc: &Scenario) -> String {
    let file = ScenarioFile {
        sensors: sc.sensors,
        slots: sc.slots,
        k: sc.k,
        m: sc.dim,
        ts: sc.ts,
        sigma_w2: sc.sigma_w2,
        sigma_x: Some(sc.sigma_x.row_major().to_vec()),
        a: array_to_rows(&sc.a),
        h: Some(array_to_rows(&sc.h)),
        e: array_to_rows(&sc.e),
        generator: sc.generator.clone(),
    };
    serde_json::to_string_pretty(&file).expect("scenario serializes")
}

pub fn save(sc: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json_string(sc))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
    from_json_str(&fs::read_to_string(path)?)
}
