//! Gaussian weights, the conjugated operators `S` and `A`, the commutator
//! form, and the weighted-norm inequality checks.

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolve::{covariant_gradient, magnetic_laplacian, Potentials, Trajectory};
use crate::fields::MagneticTensor;
use crate::grid::{ComplexField, GridSpec, VectorField, BOUNDARY_BAND, MAX_EXPONENT};

/// Largest weighted-mass fraction tolerated in the boundary band.
pub const WEIGHTED_BOUNDARY_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    /// `gamma |x|^2`
    StaticGaussian { gamma: f64 },
    /// `|x|^2 / (alpha t + beta (1 - t))^2`
    Interpolating { alpha: f64, beta: f64 },
    /// `gamma a |x|^2 / (a + 4 gamma (a^2 + b^2) t)`
    Dissipation { gamma: f64, a: f64, b: f64 },
    /// `mu |x + R t(1-t) v|^2 - (1+eps) R^2 t(1-t) / (16 mu)`
    Carleman { mu: f64, eps: f64, r: f64, v: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSpec {
    pub kind: WeightKind,
    /// Flat continuation of the quadratic part beyond this distance from the center.
    pub truncation_radius: Option<f64>,
}

/// The weight `phi = c |x - z|^2 + k` and its time derivatives at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightAt {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub z: [f64; 3],
    pub z1: [f64; 3],
    pub z2: [f64; 3],
    pub k: f64,
    pub k1: f64,
    pub k2: f64,
    pub dim: usize,
    pub truncation: Option<f64>,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl WeightAt {
    fn offset(&self, x: &[f64; 3]) -> [f64; 3] {
        let mut d = [0.0; 3];
        for a in 0..self.dim {
            d[a] = x[a] - self.z[a];
        }
        d
    }

    fn flat(&self, d: &[f64; 3]) -> bool {
        self.truncation.is_some_and(|r| dot(d, d) >= r * r)
    }

    pub fn phi(&self, x: &[f64; 3]) -> f64 {
        let d = self.offset(x);
        let q = match self.truncation {
            Some(r) => dot(&d, &d).min(r * r),
            None => dot(&d, &d),
        };
        self.c * q + self.k
    }

    pub fn grad(&self, x: &[f64; 3]) -> [f64; 3] {
        let d = self.offset(x);
        if self.flat(&d) {
            return [0.0; 3];
        }
        d.map(|v| 2.0 * self.c * v)
    }

    /// `Delta phi`
    pub fn laplacian(&self, x: &[f64; 3]) -> f64 {
        if self.flat(&self.offset(x)) {
            0.0
        } else {
            2.0 * self.dim as f64 * self.c
        }
    }

    pub fn phi_t(&self, x: &[f64; 3]) -> f64 {
        let d = self.offset(x);
        if let Some(r) = self.truncation {
            if dot(&d, &d) >= r * r {
                return self.c1 * r * r + self.k1;
            }
        }
        self.c1 * dot(&d, &d) - 2.0 * self.c * dot(&d, &self.z1) + self.k1
    }

    /// `grad phi_t`
    pub fn grad_t(&self, x: &[f64; 3]) -> [f64; 3] {
        let d = self.offset(x);
        if self.flat(&d) {
            return [0.0; 3];
        }
        let mut g = [0.0; 3];
        for a in 0..self.dim {
            g[a] = 2.0 * self.c1 * d[a] - 2.0 * self.c * self.z1[a];
        }
        g
    }

    pub fn phi_tt(&self, x: &[f64; 3]) -> f64 {
        let d = self.offset(x);
        if let Some(r) = self.truncation {
            if dot(&d, &d) >= r * r {
                return self.c2 * r * r + self.k2;
            }
        }
        self.c2 * dot(&d, &d) - 4.0 * self.c1 * dot(&d, &self.z1) + 2.0 * self.c * dot(&self.z1, &self.z1)
            - 2.0 * self.c * dot(&d, &self.z2)
            + self.k2
    }
}

impl WeightSpec {
    pub fn new(kind: WeightKind) -> Result<Self> {
        let s = Self {
            kind,
            truncation_radius: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn static_gaussian(gamma: f64) -> Result<Self> {
        Self::new(WeightKind::StaticGaussian { gamma })
    }

    pub fn interpolating(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(WeightKind::Interpolating { alpha, beta })
    }

    pub fn dissipation(gamma: f64, a: f64, b: f64) -> Result<Self> {
        Self::new(WeightKind::Dissipation { gamma, a, b })
    }

    pub fn carleman(mu: f64, eps: f64, r: f64, v: [f64; 3]) -> Result<Self> {
        Self::new(WeightKind::Carleman { mu, eps, r, v })
    }

    pub fn with_truncation(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Param(format!("truncation radius must be positive, got {radius}")));
        }
        self.truncation_radius = Some(radius);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        match self.kind {
            WeightKind::StaticGaussian { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => {
                bad(format!("gamma must be nonnegative, got {gamma}"))
            }
            WeightKind::Interpolating { alpha, beta } if !(alpha > 0.0 && beta > 0.0) => {
                bad(format!("alpha, beta must be positive, got {alpha}, {beta}"))
            }
            WeightKind::Dissipation { gamma, a, .. } if !(gamma >= 0.0 && a > 0.0) => {
                bad(format!("dissipation weight needs gamma >= 0 and a > 0, got {gamma}, {a}"))
            }
            WeightKind::Carleman { mu, eps, r, v } => {
                if !(mu > 0.0 && eps > 0.0 && r > 0.0) {
                    return bad(format!("mu, eps, R must be positive, got {mu}, {eps}, {r}"));
                }
                if (dot(&v, &v).sqrt() - 1.0).abs() > 1e-12 {
                    return bad(format!("v must be a unit vector, got {v:?}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Multiplier of `log H` in the convexity functional: `alpha t + beta (1-t)`
    /// for the interpolating kind, 1 otherwise.
    pub fn theta_factor(&self, t: f64) -> f64 {
        match self.kind {
            WeightKind::Interpolating { alpha, beta } => alpha * t + beta * (1.0 - t),
            _ => 1.0,
        }
    }

    pub fn at(&self, t: f64, dim: usize) -> WeightAt {
        let zero = [0.0; 3];
        let base = WeightAt {
            c: 0.0,
            c1: 0.0,
            c2: 0.0,
            z: zero,
            z1: zero,
            z2: zero,
            k: 0.0,
            k1: 0.0,
            k2: 0.0,
            dim,
            truncation: self.truncation_radius,
        };
        match self.kind {
            WeightKind::StaticGaussian { gamma } => WeightAt { c: gamma, ..base },
            WeightKind::Interpolating { alpha, beta } => {
                let e = alpha * t + beta * (1.0 - t);
                let de = alpha - beta;
                WeightAt {
                    c: e.powi(-2),
                    c1: -2.0 * de * e.powi(-3),
                    c2: 6.0 * de * de * e.powi(-4),
                    ..base
                }
            }
            WeightKind::Dissipation { gamma, a, b } => {
                let k = 4.0 * gamma * (a * a + b * b);
                let d = a + k * t;
                WeightAt {
                    c: gamma * a / d,
                    c1: -gamma * a * k / (d * d),
                    c2: 2.0 * gamma * a * k * k / (d * d * d),
                    ..base
                }
            }
            WeightKind::Carleman { mu, eps, r, v } => {
                let s = t * (1.0 - t);
                let s1 = 1.0 - 2.0 * t;
                let q = (1.0 + eps) * r * r / (16.0 * mu);
                WeightAt {
                    c: mu,
                    z: v.map(|c| -r * s * c),
                    z1: v.map(|c| -r * s1 * c),
                    z2: v.map(|c| 2.0 * r * c),
                    k: -q * s,
                    k1: -q * s1,
                    k2: 2.0 * q,
                    ..base
                }
            }
        }
    }

    pub fn exponent(&self, grid: &GridSpec, t: f64) -> Vec<f64> {
        let w = self.at(t, grid.dim);
        (0..grid.len()).map(|i| w.phi(&grid.point(i))).collect()
    }

    /// Largest `2 phi` over `|x| <= 0.9 L` at the given times.
    pub fn max_squared_exponent(&self, grid: &GridSpec, times: &[f64]) -> f64 {
        let r = BOUNDARY_BAND * grid.half_width;
        times
            .iter()
            .map(|&t| {
                let w = self.at(t, grid.dim);
                let shift = dot(&w.z, &w.z).sqrt();
                let q = match w.truncation {
                    Some(tr) => (r + shift).powi(2).min(tr * tr),
                    None => (r + shift).powi(2),
                };
                2.0 * (w.c * q + w.k)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Overflow guard: `2 phi <= 700` on `|x| <= 0.9 L` at every time.
    pub fn check_admissible(&self, grid: &GridSpec, times: &[f64]) -> Result<()> {
        let m = self.max_squared_exponent(grid, times);
        if m > MAX_EXPONENT {
            let r2 = (BOUNDARY_BAND * grid.half_width).powi(2);
            return Err(Error::Overflow(format!(
                "weight exponent 2 phi = {m:.1} exceeds {MAX_EXPONENT} on the box; \
                 maximal admissible gamma is {:.6}",
                MAX_EXPONENT / (2.0 * r2)
            )));
        }
        Ok(())
    }
}

/// Largest static `gamma` with `2 gamma (0.9 L)^2 <= 700`.
pub fn max_admissible_gamma(grid: &GridSpec) -> f64 {
    MAX_EXPONENT / (2.0 * (BOUNDARY_BAND * grid.half_width).powi(2))
}

/// `log(sum_i |u_i|^2 e^{2 phi_i})` with a shared shift; `-inf` for `u = 0`.
pub(crate) fn log_weighted_sum(u: &[Complex64], phi: &[f64], mask: impl Fn(usize) -> bool) -> f64 {
    let logs: Vec<f64> = u
        .iter()
        .zip(phi)
        .enumerate()
        .filter(|(i, (v, _))| mask(*i) && v.norm_sqr() > 0.0)
        .map(|(_, (v, p))| v.norm_sqr().ln() + 2.0 * p)
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// `|| e^phi u ||` accumulated in log space.
pub fn exp_weighted_norm(u: &ComplexField, phi: &[f64]) -> Result<f64> {
    if phi.len() != u.values.len() {
        return Err(Error::GridMismatch("weight length".into()));
    }
    let l = log_weighted_sum(&u.values, phi, |_| true);
    let n = (0.5 * (l + u.grid.cell_volume().ln())).exp();
    if !n.is_finite() {
        return Err(Error::Overflow(format!("weighted norm overflows (log = {})", 0.5 * l)));
    }
    Ok(n)
}

/// Fraction of `|| e^phi u ||^2` in the boundary band `|x|_inf > 0.9 L`.
pub fn weighted_boundary_fraction(u: &ComplexField, phi: &[f64]) -> f64 {
    let grid = u.grid;
    let lim = BOUNDARY_BAND * grid.half_width;
    let total = log_weighted_sum(&u.values, phi, |_| true);
    if total == f64::NEG_INFINITY {
        return 0.0;
    }
    let band = log_weighted_sum(&u.values, phi, |i| {
        grid.point(i)[..grid.dim].iter().any(|c| c.abs() > lim)
    });
    (band - total).exp()
}

/// `e^phi u` computed as `exp(phi + ln|u|) u/|u|`.
pub fn exp_weighted_field(u: &ComplexField, phi: &[f64]) -> ComplexField {
    ComplexField {
        grid: u.grid,
        values: u
            .values
            .iter()
            .zip(phi)
            .map(|(v, p)| {
                let m = v.norm();
                if m == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    v / m * (p + m.ln()).exp()
                }
            })
            .collect(),
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub times: Vec<f64>,
    pub H: Vec<f64>,
    pub logH: Vec<f64>,
    pub theta: Vec<f64>,
    /// Nonuniform centered second differences; NaN at the endpoints.
    pub d2_logH: Vec<f64>,
    pub d2_theta: Vec<f64>,
    pub min_second_difference: f64,
    /// `H(t) - H(t0)^{1-tau} H(t1)^tau` with `tau = alpha t / (alpha t + beta (1-t))`
    /// for the interpolating weight on `[0, 1]`, linear `tau` otherwise.
    pub interpolation_gap: Vec<f64>,
    pub boundary_mass: Vec<f64>,
}

fn second_differences(t: &[f64], f: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut d = vec![f64::NAN; n];
    for k in 1..n.saturating_sub(1) {
        let h0 = t[k] - t[k - 1];
        let h1 = t[k + 1] - t[k];
        d[k] = 2.0 * ((f[k + 1] - f[k]) / h1 - (f[k] - f[k - 1]) / h0) / (h0 + h1);
    }
    d
}

fn interior_min(d: &[f64]) -> f64 {
    d.iter().filter(|v| v.is_finite()).cloned().fold(f64::INFINITY, f64::min)
}

#[allow(non_snake_case)]
pub fn weighted_H(traj: &Trajectory, weight: &WeightSpec) -> Result<ConvexityReport> {
    let grid = traj.grid();
    weight.check_admissible(&grid, &traj.times)?;
    let mut h = Vec::with_capacity(traj.times.len());
    let mut bm = Vec::with_capacity(traj.times.len());
    for (&t, u) in traj.times.iter().zip(&traj.snapshots) {
        let phi = weight.exponent(&grid, t);
        let frac = weighted_boundary_fraction(u, &phi);
        if frac > WEIGHTED_BOUNDARY_LIMIT {
            return Err(Error::BoundaryMass {
                t,
                fraction: frac,
                limit: WEIGHTED_BOUNDARY_LIMIT,
            });
        }
        h.push(exp_weighted_norm(u, &phi)?);
        bm.push(frac);
    }
    let log_h: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let theta: Vec<f64> = traj
        .times
        .iter()
        .zip(&log_h)
        .map(|(&t, l)| weight.theta_factor(t) * l)
        .collect();
    let d2_log_h = second_differences(&traj.times, &log_h);
    let d2_theta = second_differences(&traj.times, &theta);
    let min_second_difference = interior_min(&d2_theta).min(interior_min(&d2_log_h));

    let n = traj.times.len();
    let (t0, t1) = (traj.times[0], traj.times[n - 1]);
    let eq_exponents = matches!(weight.kind, WeightKind::Interpolating { .. }) && t0 == 0.0 && t1 == 1.0;
    let interpolation_gap = traj
        .times
        .iter()
        .zip(&h)
        .map(|(&t, &ht)| {
            let tau = match weight.kind {
                WeightKind::Interpolating { alpha, beta } if eq_exponents => alpha * t / (alpha * t + beta * (1.0 - t)),
                _ if t1 > t0 => (t - t0) / (t1 - t0),
                _ => 0.0,
            };
            ht - h[0].powf(1.0 - tau) * h[n - 1].powf(tau)
        })
        .collect();
    Ok(ConvexityReport {
        times: traj.times.clone(),
        H: h,
        logH: log_h,
        theta,
        d2_logH: d2_log_h,
        d2_theta,
        min_second_difference,
        interpolation_gap,
        boundary_mass: bm,
    })
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityVerdict {
    pub min_d2_logH: f64,
    pub min_d2_theta: f64,
    pub logH_convex: bool,
    pub theta_convex: bool,
    pub tol: f64,
    /// Verdict on the convexity of theta.
    pub pass: bool,
}

pub fn convexity_check(report: &ConvexityReport, tol: f64) -> Result<ConvexityVerdict> {
    if report.times.len() < 3 {
        return Err(Error::Param(format!(
            "convexity needs at least 3 samples, got {}",
            report.times.len()
        )));
    }
    let l = interior_min(&report.d2_logH);
    let th = interior_min(&report.d2_theta);
    Ok(ConvexityVerdict {
        min_d2_logH: l,
        min_d2_theta: th,
        logH_convex: l >= -tol,
        theta_convex: th >= -tol,
        tol,
        pass: th >= -tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    S,
    A,
}

/// `S v` or `A v` for the weight at time `t`:
/// `S = a (Delta_A + |grad phi|^2) - ib (Delta phi + 2 grad phi . grad_A) + phi_t`,
/// `A = ib (Delta_A + |grad phi|^2) - a (Delta phi + 2 grad phi . grad_A)`.
pub fn conjugated_apply(
    v: &ComplexField,
    weight: &WeightSpec,
    t: f64,
    pot: &Potentials,
    a: f64,
    b: f64,
    which: Operator,
) -> Result<ComplexField> {
    let grid = v.grid;
    pot.grid.check_same(&grid)?;
    let w = weight.at(t, grid.dim);
    let lap = magnetic_laplacian(v, pot);
    let grad = covariant_gradient(v, pot.magnetic.as_ref());
    let i = Complex64::i();
    let values = (0..grid.len())
        .map(|idx| {
            let x = grid.point(idx);
            let gp = w.grad(&x);
            let mut drift = Complex64::new(0.0, 0.0);
            for k in 0..grid.dim {
                drift += gp[k] * grad[k].values[idx];
            }
            let sym = lap.values[idx] + dot(&gp, &gp) * v.values[idx];
            let anti = w.laplacian(&x) * v.values[idx] + 2.0 * drift;
            match which {
                Operator::S => a * sym - i * b * anti + w.phi_t(&x) * v.values[idx],
                Operator::A => i * b * sym - a * anti,
            }
        })
        .collect();
    Ok(ComplexField { grid, values })
}

/// Weights of the derivative at `x0` of the Lagrange interpolant on `nodes`.
fn lagrange_derivative_weights(nodes: &[f64], x0: f64) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|j| {
            let denom: f64 = (0..n).filter(|&m| m != j).map(|m| nodes[j] - nodes[m]).product();
            let mut num = 0.0;
            for l in (0..n).filter(|&l| l != j) {
                num += (0..n)
                    .filter(|&m| m != j && m != l)
                    .map(|m| x0 - nodes[m])
                    .product::<f64>();
            }
            num / denom
        })
        .collect()
}

/// Time derivative at snapshot `k` from the most centered window of five
/// snapshots (three if fewer exist).
fn snapshot_derivative(times: &[f64], f: &[ComplexField], k: usize) -> ComplexField {
    let n = times.len();
    let width = n.min(5);
    let lo = k.saturating_sub(width / 2).min(n - width);
    let hi = lo + width - 1;
    let w = lagrange_derivative_weights(&times[lo..=hi], times[k]);
    ComplexField {
        grid: f[k].grid,
        values: (0..f[k].values.len())
            .map(|i| (lo..=hi).zip(&w).map(|(m, c)| c * f[m].values[i]).sum())
            .collect(),
    }
}

/// Max over interior snapshots of the relative residual of
/// `v_t = (S + A) v + (a+ib)(V v + e^phi F)` for `v = e^phi u`.
pub fn conjugation_residual(traj: &Trajectory, weight: &WeightSpec, pot: &Potentials, a: f64, b: f64) -> Result<f64> {
    let grid = traj.grid();
    let n = traj.times.len();
    if n < 3 {
        return Err(Error::Param("conjugation residual needs at least 3 snapshots".into()));
    }
    weight.check_admissible(&grid, &traj.times)?;
    let phis: Vec<Vec<f64>> = traj.times.iter().map(|&t| weight.exponent(&grid, t)).collect();
    let vs: Vec<ComplexField> = traj
        .snapshots
        .iter()
        .zip(&phis)
        .map(|(u, p)| exp_weighted_field(u, p))
        .collect();
    let c = Complex64::new(a, b);
    let mut worst: f64 = 0.0;
    for k in 1..n - 1 {
        let t = traj.times[k];
        let dv = snapshot_derivative(&traj.times, &vs, k);
        let s = conjugated_apply(&vs[k], weight, t, pot, a, b, Operator::S)?;
        let aa = conjugated_apply(&vs[k], weight, t, pot, a, b, Operator::A)?;
        let v2 = pot.v2.as_ref().map(|f| f(t));
        let f = pot.forcing.as_ref().map(|f| f(t));
        let rhs: Vec<Complex64> = (0..grid.len())
            .map(|i| {
                let mut pv = Complex64::new(pot.v1[i], 0.0);
                if let Some(v2) = &v2 {
                    pv += v2[i];
                }
                let mut src = pv * vs[k].values[i];
                if let Some(f) = &f {
                    src += (phis[k][i]).exp() * f[i];
                }
                s.values[i] + aa.values[i] + c * src
            })
            .collect();
        let rhs = ComplexField { grid, values: rhs };
        let scale = crate::grid::l2_norm(&dv).max(crate::grid::l2_norm(&rhs));
        if scale > 0.0 {
            worst = worst.max(crate::grid::l2_norm(&dv.sub(&rhs)) / scale);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommutatorTerm {
    pub name: &'static str,
    pub value: f64,
}

/// `<(S_t + [S, A]) f, f>` term by term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommutatorForm {
    pub total: f64,
    pub terms: Vec<CommutatorTerm>,
}

impl CommutatorForm {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

/// The quadratic form of `S_t + [S, A]` for a static potential (`A_t = 0`).
/// `tensor` is `B`; `None` means `B = 0`.
pub fn commutator_form(
    f: &ComplexField,
    weight: &WeightSpec,
    t: f64,
    pot: &Potentials,
    tensor: Option<&MagneticTensor>,
    a: f64,
    b: f64,
) -> Result<CommutatorForm> {
    if weight.truncation_radius.is_some() {
        return Err(Error::Param("commutator form needs an untruncated Gaussian weight".into()));
    }
    let grid = f.grid;
    pot.grid.check_same(&grid)?;
    if let Some(bt) = tensor {
        grid.check_same(&bt.grid)?;
    }
    let w = weight.at(t, grid.dim);
    let m = a * a + b * b;
    let grad = covariant_gradient(f, pot.magnetic.as_ref());
    let dv = grid.cell_volume();
    let (mut hess, mut drift, mut mag, mut tgrad, mut tdrift, mut tsecond) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        let fv = f.values[idx];
        let f2 = fv.norm_sqr();
        let gp = w.grad(&x);
        let gt = w.grad_t(&x);
        let mut g2 = 0.0;
        let mut time_adv = Complex64::new(0.0, 0.0);
        for k in 0..grid.dim {
            g2 += grad[k].values[idx].norm_sqr();
            time_adv += gt[k] * grad[k].values[idx];
        }
        hess += g2;
        drift += f2 * dot(&gp, &gp);
        if let Some(bt) = tensor {
            // f (grad phi)^t B . conj(grad_A f)
            let mut s = Complex64::new(0.0, 0.0);
            for k in 0..grid.dim {
                let mut row = 0.0;
                for j in 0..grid.dim {
                    row += gp[j] * bt.entries[j][k][idx];
                }
                s += row * grad[k].values[idx].conj();
            }
            mag += (fv * s).im;
        }
        tgrad += (fv.conj() * time_adv).im;
        tdrift += f2 * dot(&gp, &gt);
        tsecond += f2 * w.phi_tt(&x);
    }
    let two_c = 2.0 * w.c;
    let terms = vec![
        CommutatorTerm {
            name: "hessian_gradient",
            value: m * 4.0 * two_c * hess * dv,
        },
        CommutatorTerm {
            name: "bilaplacian",
            value: 0.0,
        },
        CommutatorTerm {
            name: "hessian_drift",
            value: m * 4.0 * two_c * drift * dv,
        },
        CommutatorTerm {
            name: "magnetic",
            value: -4.0 * m * mag * dv,
        },
        // [phi_t, A] inside [S, A]
        CommutatorTerm {
            name: "commutator_time_gradient",
            value: 2.0 * b * tgrad * dv,
        },
        CommutatorTerm {
            name: "commutator_time_drift",
            value: 2.0 * a * tdrift * dv,
        },
        // S_t with A_t = 0
        CommutatorTerm {
            name: "st_time_gradient",
            value: 2.0 * b * tgrad * dv,
        },
        CommutatorTerm {
            name: "st_time_drift",
            value: 2.0 * a * tdrift * dv,
        },
        CommutatorTerm {
            name: "st_time_second",
            value: tsecond * dv,
        },
    ];
    Ok(CommutatorForm {
        total: terms.iter().map(|t| t.value).sum(),
        terms,
    })
}

/// `M_A = 4 gamma (a^2 + b^2) sup |x^t B|^2` for a static potential.
pub fn commutator_constant(gamma: f64, a: f64, b: f64, sup_xtb: f64) -> f64 {
    4.0 * gamma * (a * a + b * b) * sup_xtb * sup_xtb
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DissipationPair {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// `int_0^T sup |a (Re V)^+ - b Im V| dt`
    pub m_t: f64,
    /// `sqrt(a^2+b^2) int_0^T || e^phi F || dt`
    pub forcing_term: f64,
}

fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2).zip(f.windows(2)).map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1])).sum()
}

/// Both sides of the dissipation estimate at time `t_final`, with the time
/// integrals by the trapezoid rule over the snapshots in `[0, t_final]`.
pub fn dissipation_check(traj: &Trajectory, pot: &Potentials, gamma: f64, t_final: f64) -> Result<DissipationPair> {
    let (a, b) = (traj.params.a, traj.params.b);
    if !(a > 0.0) {
        return Err(Error::Param(format!("dissipation check needs a > 0, got {a}")));
    }
    let grid = traj.grid();
    let weight = WeightSpec::dissipation(gamma, a, b)?;
    let mut times: Vec<f64> = traj.times.iter().cloned().filter(|&t| t < t_final - 1e-12).collect();
    times.push(t_final);
    weight.check_admissible(&grid, &times)?;
    let mut sup = Vec::with_capacity(times.len());
    let mut fnorm = Vec::with_capacity(times.len());
    for &t in &times {
        let v2 = pot.v2.as_ref().map(|f| f(t));
        let s = (0..grid.len())
            .map(|i| {
                let mut v = Complex64::new(pot.v1[i], 0.0);
                if let Some(v2) = &v2 {
                    v += v2[i];
                }
                (a * v.re.max(0.0) - b * v.im).abs()
            })
            .fold(0.0, f64::max);
        sup.push(s);
        let fn_ = match &pot.forcing {
            Some(f) => {
                let ff = ComplexField {
                    grid,
                    values: f(t),
                };
                exp_weighted_norm(&ff, &weight.exponent(&grid, t))?
            }
            None => 0.0,
        };
        fnorm.push(fn_);
    }
    let m_t = trapezoid(&times, &sup);
    let forcing_term = (a * a + b * b).sqrt() * trapezoid(&times, &fnorm);
    let u_t = traj.interpolate(t_final)?;
    let lhs = (-m_t).exp() * exp_weighted_norm(&u_t, &weight.exponent(&grid, t_final))?;
    let u0 = traj.interpolate(0.0)?;
    let rhs = exp_weighted_norm(&u0, &weight.exponent(&grid, 0.0))? + forcing_term;
    Ok(DissipationPair {
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        m_t,
        forcing_term,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientBound {
    /// `|| sqrt(t(1-t)) e^phi grad_A u ||` over space-time
    pub lhs: f64,
    /// `|| sqrt(t(1-t)) e^phi |x| u ||` over space-time
    pub moment: f64,
    /// `H(t0) + H(t1)` at the trajectory endpoints
    pub bracket: f64,
    pub ratio: f64,
    /// `sqrt(t(1-t)) || e^phi grad_A u(t) ||` per snapshot
    pub series: Vec<f64>,
}

/// Weighted gradient bound with the interpolating weight. `magnetic(t)`
/// supplies `A` at time `t` (`None` for `A = 0`).
pub fn gradient_bound_check(
    traj: &Trajectory,
    alpha: f64,
    beta: f64,
    magnetic: &dyn Fn(f64) -> Option<VectorField>,
) -> Result<GradientBound> {
    let grid = traj.grid();
    let weight = WeightSpec::interpolating(alpha, beta)?;
    weight.check_admissible(&grid, &traj.times)?;
    let r: Vec<f64> = grid.radius_squared().iter().map(|v| v.sqrt()).collect();
    let mut series = Vec::with_capacity(traj.times.len());
    let mut g2 = Vec::with_capacity(traj.times.len());
    let mut m2 = Vec::with_capacity(traj.times.len());
    for (&t, u) in traj.times.iter().zip(&traj.snapshots) {
        let phi = weight.exponent(&grid, t);
        let a = magnetic(t);
        let grad = covariant_gradient(u, a.as_ref());
        let mut s = 0.0;
        for g in &grad {
            s += exp_weighted_norm(g, &phi)?.powi(2);
        }
        let tw = t * (1.0 - t);
        g2.push(tw * s);
        m2.push(tw * exp_weighted_norm(&u.mul_real(&r), &phi)?.powi(2));
        series.push((tw * s).sqrt());
    }
    let lhs = trapezoid(&traj.times, &g2).sqrt();
    let moment = trapezoid(&traj.times, &m2).sqrt();
    let n = traj.times.len();
    let h0 = exp_weighted_norm(&traj.snapshots[0], &weight.exponent(&grid, traj.times[0]))?;
    let h1 = exp_weighted_norm(&traj.snapshots[n - 1], &weight.exponent(&grid, traj.times[n - 1]))?;
    let bracket = h0 + h1;
    Ok(GradientBound {
        lhs,
        moment,
        bracket,
        ratio: if bracket > 0.0 { lhs / bracket } else { 0.0 },
        series,
    })
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorRow {
    pub t: f64,
    pub H: f64,
    pub logH: f64,
    pub theta: f64,
    pub d2_logH: f64,
    pub d2_theta: f64,
    pub grad_lhs: f64,
    pub boundary_mass: f64,
}

/// One row per snapshot; `grad_lhs` is NaN when no gradient series is given.
pub fn monitor_rows(report: &ConvexityReport, grad: Option<&[f64]>) -> Vec<MonitorRow> {
    (0..report.times.len())
        .map(|k| MonitorRow {
            t: report.times[k],
            H: report.H[k],
            logH: report.logH[k],
            theta: report.theta[k],
            d2_logH: report.d2_logH[k],
            d2_theta: report.d2_theta[k],
            grad_lhs: grad.and_then(|g| g.get(k).copied()).unwrap_or(f64::NAN),
            boundary_mass: report.boundary_mass[k],
        })
        .collect()
}

pub fn write_monitors_csv<W: Write>(out: W, rows: &[MonitorRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
