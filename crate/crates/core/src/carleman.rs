//! Carleman weight `exp(mu |x + R t(1-t) v|^2 - (1+eps) R^2 t(1-t) / (16 mu))`
//! and a quadrature verifier for the weighted inequality
//! `(R/4) sqrt(eps/mu) ||w g|| <= ||w (d_t - i Delta_A) g||` on space-time test functions.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{magnetic_laplacian, Potentials};
use crate::grid::{smooth_step, smooth_step_derivative, ComplexField, GridSpec, BOUNDARY_BAND, MAX_EXPONENT};
use crate::monitors::log_weighted_sum;
use crate::transform::Solution;

/// Discretization slack allowed on the ratio in admissible cells.
pub const CARLEMAN_TOLERANCE: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlemanParams {
    pub mu: f64,
    pub eps: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub v: [f64; 3],
}

impl CarlemanParams {
    pub fn new(mu: f64, eps: f64, r: f64, v: [f64; 3]) -> Result<Self> {
        let p = Self { mu, eps, r, v };
        p.validate()?;
        Ok(p)
    }

    /// `v = e_k` with `k` zero-based.
    pub fn along(mu: f64, eps: f64, r: f64, k: usize) -> Result<Self> {
        if k > 2 {
            return Err(Error::Param(format!("basis index {k} out of range")));
        }
        let mut v = [0.0; 3];
        v[k] = 1.0;
        Self::new(mu, eps, r, v)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("mu", self.mu), ("eps", self.eps), ("R", self.r)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::Param(format!("Carleman {name} must be positive, got {x}")));
            }
        }
        let n = self.v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::Param(format!("v must be a unit vector, |v| = {n}")));
        }
        Ok(())
    }

    /// One-based index `k` when `v = e_k`.
    pub fn v_index(&self) -> Option<usize> {
        let nonzero: Vec<usize> = (0..3).filter(|&k| self.v[k] != 0.0).collect();
        match nonzero.as_slice() {
            [k] if self.v[*k] == 1.0 => Some(k + 1),
            _ => None,
        }
    }

    /// `R > 8 mu eps^{-1/2} sup|x^t B|`.
    pub fn admissible(&self, sup_xtb: f64) -> bool {
        self.r > 8.0 * self.mu * sup_xtb / self.eps.sqrt()
    }

    /// `(R/4) sqrt(eps/mu)`
    pub fn prefactor(&self) -> f64 {
        0.25 * self.r * (self.eps / self.mu).sqrt()
    }

    pub fn exponent(&self, x: &[f64; 3], t: f64) -> f64 {
        let s = self.r * t * (1.0 - t);
        let d2: f64 = (0..3).map(|k| (x[k] + s * self.v[k]).powi(2)).sum();
        self.mu * d2 - (1.0 + self.eps) * self.r * s / (16.0 * self.mu)
    }
}

pub fn carleman_weight(x: &[f64; 3], t: f64, params: &CarlemanParams) -> Result<f64> {
    params.validate()?;
    let e = params.exponent(x, t);
    if e > MAX_EXPONENT {
        return Err(Error::Overflow(format!("Carleman exponent {e} at t = {t} exceeds {MAX_EXPONENT}")));
    }
    Ok(e.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialProfile {
    /// `exp(-|x - c|^2 / (2 w^2))`
    GaussianBump { center: [f64; 3], width: f64 },
    /// Gaussian bump times `exp(i k . x)`.
    ModulatedBump {
        center: [f64; 3],
        width: f64,
        wavevector: [f64; 3],
    },
}

impl SpatialProfile {
    pub fn value(&self, x: &[f64; 3]) -> Complex64 {
        match self {
            SpatialProfile::GaussianBump { center, width } => Complex64::new(gauss(x, center, *width), 0.0),
            SpatialProfile::ModulatedBump {
                center,
                width,
                wavevector,
            } => {
                let phase: f64 = (0..3).map(|k| wavevector[k] * x[k]).sum();
                Complex64::from_polar(gauss(x, center, *width), phase)
            }
        }
    }

    fn width(&self) -> f64 {
        match self {
            SpatialProfile::GaussianBump { width, .. } | SpatialProfile::ModulatedBump { width, .. } => *width,
        }
    }
}

fn gauss(x: &[f64; 3], c: &[f64; 3], w: f64) -> f64 {
    let d2: f64 = (0..3).map(|k| (x[k] - c[k]).powi(2)).sum();
    (-d2 / (2.0 * w * w)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    Constant,
    /// `exp(-i omega t)`
    Phase { omega: f64 },
}

impl TimeProfile {
    fn value(&self, t: f64) -> Complex64 {
        match self {
            TimeProfile::Constant => Complex64::new(1.0, 0.0),
            TimeProfile::Phase { omega } => Complex64::from_polar(1.0, -omega * t),
        }
    }

    fn derivative(&self, t: f64) -> Complex64 {
        match self {
            TimeProfile::Constant => Complex64::new(0.0, 0.0),
            TimeProfile::Phase { omega } => -Complex64::i() * omega * self.value(t),
        }
    }
}

/// `g = theta_M(x) eta(t) core(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    pub spatial: SpatialProfile,
    pub cutoff_m: f64,
    /// `eta = 1` on `[1/r, 1 - 1/r]`, `0` within `1/(2r)` of the ends.
    pub cutoff_r_time: f64,
    pub time_profile: TimeProfile,
}

impl TestFunctionSpec {
    pub fn bump(width: f64, cutoff_m: f64, cutoff_r_time: f64) -> Self {
        Self {
            spatial: SpatialProfile::GaussianBump {
                center: [0.0; 3],
                width,
            },
            cutoff_m,
            cutoff_r_time,
            time_profile: TimeProfile::Constant,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.spatial.width() > 0.0) {
            return Err(Error::Param("bump width must be positive".into()));
        }
        if !(self.cutoff_r_time > 2.0) {
            return Err(Error::Param(format!(
                "time cutoff rate must exceed 2 for a nonempty plateau, got {}",
                self.cutoff_r_time
            )));
        }
        if !(self.cutoff_m > 0.0) {
            return Err(Error::Param("cutoff radius M must be positive".into()));
        }
        if 2.0 * self.cutoff_m > BOUNDARY_BAND * grid.half_width {
            return Err(Error::Support(format!(
                "support radius 2M = {} exceeds 0.9 L = {}",
                2.0 * self.cutoff_m,
                BOUNDARY_BAND * grid.half_width
            )));
        }
        Ok(())
    }

    pub fn support_radius(&self) -> f64 {
        2.0 * self.cutoff_m
    }

    pub fn theta(&self, x: &[f64; 3]) -> f64 {
        theta_m(x, self.cutoff_m)
    }

    pub fn eta(&self, t: f64) -> f64 {
        eta_r(t, self.cutoff_r_time)
    }

    pub fn value(&self, x: &[f64; 3], t: f64) -> Complex64 {
        let c = self.theta(x) * self.eta(t);
        if c == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        c * self.spatial.value(x) * self.time_profile.value(t)
    }

    /// Closed-form `d_t g`.
    pub fn time_derivative(&self, x: &[f64; 3], t: f64) -> Complex64 {
        let th = self.theta(x);
        if th == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let tp = &self.time_profile;
        th * self.spatial.value(x) * (eta_r_derivative(t, self.cutoff_r_time) * tp.value(t) + self.eta(t) * tp.derivative(t))
    }
}

/// `1` for `|x| <= M`, `0` for `|x| >= 2M`.
pub fn theta_m(x: &[f64; 3], m: f64) -> f64 {
    let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
    1.0 - smooth_step((r - m) / m)
}

pub fn eta_r(t: f64, r: f64) -> f64 {
    let k = 2.0 * r;
    smooth_step(k * t - 1.0) * smooth_step(k * (1.0 - t) - 1.0)
}

pub fn eta_r_derivative(t: f64, r: f64) -> f64 {
    let k = 2.0 * r;
    let (a, b) = (k * t - 1.0, k * (1.0 - t) - 1.0);
    k * (smooth_step_derivative(a) * smooth_step(b) - smooth_step(a) * smooth_step_derivative(b))
}

/// Uniformly time-sampled test function with a known spatial support radius.
#[derive(Debug, Clone)]
pub struct SampledFamily {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub samples: Vec<ComplexField>,
    pub support_radius: f64,
}

/// `count + 1` uniform samples of `[0, 1]`.
pub fn unit_times(count: usize) -> Vec<f64> {
    (0..=count).map(|k| k as f64 / count as f64).collect()
}

pub fn cutoff_factory(spec: &TestFunctionSpec, grid: &GridSpec, times: &[f64]) -> Result<SampledFamily> {
    spec.validate(grid)?;
    let points = grid.points();
    let samples = times
        .par_iter()
        .map(|&t| ComplexField {
            grid: *grid,
            values: points.iter().map(|x| spec.value(x, t)).collect(),
        })
        .collect();
    Ok(SampledFamily {
        grid: *grid,
        times: times.to_vec(),
        samples,
        support_radius: spec.support_radius(),
    })
}

/// `g = theta_M eta_R u` for a solution `u` defined wherever `eta_R > 0`.
pub fn cutoff_product(source: &dyn Solution, m: f64, r_time: f64, times: &[f64]) -> Result<SampledFamily> {
    let grid = source.grid();
    if !(m > 0.0) || 2.0 * m > BOUNDARY_BAND * grid.half_width {
        return Err(Error::Support(format!("cutoff radius M = {m} does not fit the box")));
    }
    if !(r_time > 2.0) {
        return Err(Error::Param(format!("time cutoff rate must exceed 2, got {r_time}")));
    }
    let theta: Vec<f64> = grid.points().iter().map(|x| theta_m(x, m)).collect();
    let samples = times
        .iter()
        .map(|&t| {
            let e = eta_r(t, r_time);
            if e == 0.0 {
                return Ok(ComplexField::zeros(grid));
            }
            let u = source.at(t)?;
            Ok(u.mul_real(&theta).scale(Complex64::new(e, 0.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampledFamily {
        grid,
        times: times.to_vec(),
        samples,
        support_radius: 2.0 * m,
    })
}

/// Magnetic potential entering `Delta_A`.
#[derive(Clone, Copy)]
pub enum CarlemanField<'a> {
    Static(&'a Potentials),
    Timed(&'a (dyn Fn(f64) -> Result<Potentials> + Sync)),
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CarlemanSides {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub admissible: bool,
    pub log_lhs: f64,
    pub log_rhs: f64,
    pub sup_xtB: f64,
}

fn check_family(fam: &SampledFamily) -> Result<f64> {
    let n = fam.times.len();
    if n < 5 || fam.samples.len() != n {
        return Err(Error::Param(format!("need at least 5 matching time samples, got {n}")));
    }
    let dt = fam.times[1] - fam.times[0];
    if !(dt > 0.0) {
        return Err(Error::Param("time samples must increase".into()));
    }
    for w in fam.times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
            return Err(Error::Param("time samples must be uniform".into()));
        }
    }
    if fam.times[0] < -1e-12 || fam.times[n - 1] > 1.0 + 1e-12 {
        return Err(Error::Param("time samples must lie in [0, 1]".into()));
    }
    let grid = fam.grid;
    let edge = grid.half_width - 2.0 * grid.spacing();
    let points = grid.points();
    for (k, g) in fam.samples.iter().enumerate() {
        grid.check_same(&g.grid)?;
        if (k < 2 || k + 2 >= n) && g.values.iter().any(|v| *v != Complex64::new(0.0, 0.0)) {
            return Err(Error::Support(format!(
                "g is nonzero at t = {}, within two samples of the time ends",
                fam.times[k]
            )));
        }
        for (x, v) in points.iter().zip(&g.values) {
            if *v == Complex64::new(0.0, 0.0) {
                continue;
            }
            let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            let sup = x.iter().take(grid.dim).fold(0.0f64, |m, c| m.max(c.abs()));
            if sup > edge || r > fam.support_radius {
                return Err(Error::Support(format!(
                    "g is nonzero at |x| = {r} (|x|_inf = {sup}) at t = {}",
                    fam.times[k]
                )));
            }
        }
    }
    Ok(dt)
}

/// `(d_t - i Delta_A) g` on the interior samples, zero outside the support
/// radius where `g` vanishes identically. `d_t g` uses the fourth-order
/// centered stencil; the two samples at each end are zero by construction.
pub struct OperatorSamples {
    dt: f64,
    inside: Vec<bool>,
    values: Vec<Vec<Complex64>>,
}

pub fn operator_samples(fam: &SampledFamily, field: CarlemanField<'_>) -> Result<OperatorSamples> {
    let dt = check_family(fam)?;
    let n = fam.times.len();
    let grid = fam.grid;
    let inside: Vec<bool> = grid
        .points()
        .iter()
        .map(|x| x.iter().map(|c| c * c).sum::<f64>().sqrt() <= fam.support_radius)
        .collect();
    let i = Complex64::i();
    let s = &fam.samples;
    let values = (2..n - 2)
        .into_par_iter()
        .map(|k| {
            let t = fam.times[k];
            let lap = match field {
                CarlemanField::Static(p) => magnetic_laplacian(&s[k], p),
                CarlemanField::Timed(f) => magnetic_laplacian(&s[k], &f(t)?),
            };
            Ok((0..grid.len())
                .map(|j| {
                    if !inside[j] {
                        return Complex64::new(0.0, 0.0);
                    }
                    let dg = (s[k - 2].values[j] - 8.0 * s[k - 1].values[j] + 8.0 * s[k + 1].values[j]
                        - s[k + 2].values[j])
                        / (12.0 * dt);
                    dg - i * lap.values[j]
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OperatorSamples { dt, inside, values })
}

/// Both sides of the Carleman inequality by trapezoid quadrature in `t`,
/// accumulated in log space.
pub fn carleman_sides(
    fam: &SampledFamily,
    field: CarlemanField<'_>,
    params: &CarlemanParams,
    sup_xtb: f64,
) -> Result<CarlemanSides> {
    params.validate()?;
    let ops = operator_samples(fam, field)?;
    sides_from(fam, &ops, params, sup_xtb)
}

/// Sides for one parameter set from precomputed operator samples.
pub fn sides_from(
    fam: &SampledFamily,
    ops: &OperatorSamples,
    params: &CarlemanParams,
    sup_xtb: f64,
) -> Result<CarlemanSides> {
    params.validate()?;
    let n = fam.times.len();
    if ops.values.len() + 4 != n {
        return Err(Error::Param("operator samples do not match the family".into()));
    }
    let points = fam.grid.points();
    let inside = &ops.inside;
    let per_time: Vec<(f64, f64)> = (2..n - 2)
        .into_par_iter()
        .map(|k| {
            let t = fam.times[k];
            let phi: Vec<f64> = points.iter().map(|x| params.exponent(x, t)).collect();
            (
                log_weighted_sum(&fam.samples[k].values, &phi, |j| inside[j]),
                log_weighted_sum(&ops.values[k - 2], &phi, |j| inside[j]),
            )
        })
        .collect();
    // interior samples carry the full trapezoid weight dt; the zero end samples add nothing
    let base = (ops.dt * fam.grid.cell_volume()).ln();
    let total = |sel: fn(&(f64, f64)) -> f64| {
        let logs: Vec<f64> = per_time.iter().map(sel).collect();
        log_sum_exp(&logs) + base
    };
    let log_g = 0.5 * total(|p| p.0);
    let log_rhs = 0.5 * total(|p| p.1);
    let log_lhs = log_g + params.prefactor().ln();
    let lhs = log_lhs.exp();
    let rhs = log_rhs.exp();
    if lhs.is_infinite() || rhs.is_infinite() {
        return Err(Error::Overflow(format!(
            "Carleman sides overflow (log lhs = {log_lhs}, log rhs = {log_rhs})"
        )));
    }
    let ratio = if lhs == 0.0 {
        0.0
    } else {
        (log_lhs - log_rhs).exp()
    };
    Ok(CarlemanSides {
        lhs,
        rhs,
        ratio,
        admissible: params.admissible(sup_xtb),
        log_lhs,
        log_rhs,
        sup_xtB: sup_xtb,
    })
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanCase {
    pub case_id: String,
    pub params: CarlemanParams,
}

/// One row of `carleman.csv`.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarlemanRow {
    pub case_id: String,
    pub mu: f64,
    pub eps: f64,
    pub R: f64,
    pub v_index: Option<usize>,
    pub sup_xtB: f64,
    pub admissible: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl CarlemanRow {
    /// Inadmissible cells pass vacuously.
    pub fn passes(&self, tol: f64) -> bool {
        !self.admissible || self.ratio <= 1.0 + tol
    }
}

/// `(mu, R)` grid at fixed `eps` and `v = e_k`, ids `"{prefix}-mu{mu}-R{R}"`.
pub fn sweep_cases(prefix: &str, mus: &[f64], rs: &[f64], eps: f64, k: usize) -> Result<Vec<CarlemanCase>> {
    let mut out = Vec::new();
    for &mu in mus {
        for &r in rs {
            out.push(CarlemanCase {
                case_id: format!("{prefix}-mu{mu}-R{r}"),
                params: CarlemanParams::along(mu, eps, r, k)?,
            });
        }
    }
    Ok(out)
}

/// Evaluates independent cells concurrently; rows keep the order of `cases`.
pub fn carleman_sweep(
    fam: &SampledFamily,
    field: CarlemanField<'_>,
    cases: &[CarlemanCase],
    sup_xtb: f64,
) -> Result<Vec<CarlemanRow>> {
    let ops = operator_samples(fam, field)?;
    cases
        .par_iter()
        .map(|c| {
            let s = sides_from(fam, &ops, &c.params, sup_xtb)?;
            Ok(CarlemanRow {
                case_id: c.case_id.clone(),
                mu: c.params.mu,
                eps: c.params.eps,
                R: c.params.r,
                v_index: c.params.v_index(),
                sup_xtB: sup_xtb,
                admissible: s.admissible,
                lhs: s.lhs,
                rhs: s.rhs,
                ratio: s.ratio,
            })
        })
        .collect()
}

pub fn write_carleman_csv<W: Write>(out: W, rows: &[CarlemanRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "case_id", "mu", "eps", "R", "v_index", "sup_xtB", "admissible", "lhs", "rhs", "ratio",
        ])
        .map_err(csv_error)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Seeded bump and modulated-bump specs centered inside the cutoff plateau.
pub fn random_test_specs(seed: u64, count: usize, grid: &GridSpec, cutoff_m: f64) -> Vec<TestFunctionSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut center = [0.0; 3];
            for c in center.iter_mut().take(grid.dim) {
                *c = rng.gen_range(-0.25..0.25) * cutoff_m;
            }
            let width = rng.gen_range(0.4..0.8) * cutoff_m;
            let spatial = if rng.gen_bool(0.5) {
                SpatialProfile::GaussianBump { center, width }
            } else {
                let mut wavevector = [0.0; 3];
                for c in wavevector.iter_mut().take(grid.dim) {
                    *c = rng.gen_range(-1.5..1.5);
                }
                SpatialProfile::ModulatedBump {
                    center,
                    width,
                    wavevector,
                }
            };
            let time_profile = if rng.gen_bool(0.5) {
                TimeProfile::Constant
            } else {
                TimeProfile::Phase {
                    omega: rng.gen_range(-4.0..4.0),
                }
            };
            TestFunctionSpec {
                spatial,
                cutoff_m,
                cutoff_r_time: 4.0,
                time_profile,
            }
        })
        .collect()
}
