//! Cronström (transversal) gauge reduction.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{PotentialEvaluator, PotentialSpec, Sampling};
use crate::grid::{ComplexField, GridSpec, VectorField};

pub const DEFAULT_NODES: usize = 32;
/// Step of the difference quotients used for derivatives of ray integrals.
pub const FD_STEP: f64 = 1e-4;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::Param("quadrature needs at least one node".into()));
        }
        let mut nodes = vec![0.0; k];
        let mut weights = vec![0.0; k];
        let kf = k as f64;
        for i in 0..(k + 1) / 2 {
            // Chebyshev-like initial guess, then Newton on P_k
            let mut z = (PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(k, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(k, z);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = 0.5 * (1.0 - z);
            nodes[k - 1 - i] = 0.5 * (1.0 + z);
            weights[i] = 0.5 * w;
            weights[k - 1 - i] = 0.5 * w;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `int_0^1 f(s) ds`
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&s, &w)| w * f(s)).sum()
    }

    /// Gauss-Legendre rule mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let l = b - a;
        (
            self.nodes.iter().map(|s| a + l * s).collect(),
            self.weights.iter().map(|w| w * l).collect(),
        )
    }
}

/// `(P_k(z), P_k'(z))` by the three-term recurrence.
fn legendre(k: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if k == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=k {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = k as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// `int_0^1 field(s x) ds` by Gauss-Legendre.
pub fn radial_integral(
    field: impl Fn(&[f64; 3]) -> [f64; 3],
    x: &[f64; 3],
    rule: &GaussLegendre,
) -> Result<[f64; 3]> {
    let mut acc = [0.0; 3];
    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
        let v = field(&[s * x[0], s * x[1], s * x[2]]);
        for a in 0..3 {
            acc[a] += w * v[a];
        }
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("ray integral at {x:?}")));
    }
    Ok(acc)
}

/// Ray integral of a sampled field, evaluated off-grid by trigonometric interpolation.
pub fn radial_integral_sampled(field: &VectorField, x: &[f64; 3], rule: &GaussLegendre) -> Result<[f64; 3]> {
    let interps: Vec<_> = field
        .components
        .iter()
        .map(|c| crate::grid::TrigInterpolant::from_real(field.grid, c))
        .collect();
    radial_integral(
        |y| {
            let mut v = [0.0; 3];
            for (a, it) in interps.iter().enumerate() {
                v[a] = it.eval(&y[..]).re;
            }
            v
        },
        x,
        rule,
    )
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Pointwise Cronström phase `x . int_0^1 A(s x) ds`.
pub fn phase_at(ev: &PotentialEvaluator, x: &[f64; 3], rule: &GaussLegendre) -> Result<f64> {
    let m = radial_integral(|y| ev.value(y, Sampling::Ray), x, rule)?;
    Ok(dot(x, &m))
}

/// Pointwise transversal potential `-int_0^1 Psi(s x) ds`.
pub fn transversal_at(ev: &PotentialEvaluator, x: &[f64; 3], rule: &GaussLegendre) -> Result<[f64; 3]> {
    let m = radial_integral(|y| ev.psi_at(y, Sampling::Ray), x, rule)?;
    Ok([-m[0], -m[1], -m[2]])
}

fn check_nodes(k: usize) -> Result<GaussLegendre> {
    if k < 2 {
        return Err(Error::Param(format!("need at least 2 quadrature nodes, got {k}")));
    }
    GaussLegendre::new(k)
}

pub fn cronstrom_phase(spec: &PotentialSpec, grid: &GridSpec, k: usize) -> Result<Vec<f64>> {
    let rule = check_nodes(k)?;
    let ev = spec.evaluator(grid)?;
    (0..grid.len())
        .into_par_iter()
        .map(|i| phase_at(&ev, &grid.point(i), &rule))
        .collect()
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeTransform {
    pub phase: Vec<f64>,
    pub transformed_potential: VectorField,
    pub quadrature_nodes: usize,
    /// `max |x . A~|`
    pub transversality_defect: f64,
    /// `max |x . (x^t D A~)|`
    pub dA_transversality_defect: f64,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaugeDefects {
    pub transversality_defect: f64,
    pub dA_transversality_defect: f64,
    pub cross_identity_defect: f64,
    pub quadrature_nodes: usize,
}

pub fn cronstrom_potential(spec: &PotentialSpec, grid: &GridSpec, k: usize) -> Result<GaugeTransform> {
    let rule = check_nodes(k)?;
    let ev = spec.evaluator(grid)?;
    let per_point: Vec<(f64, [f64; 3], f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let chi = phase_at(&ev, &x, &rule)?;
            let at = transversal_at(&ev, &x, &rule)?;
            // x^t D A~ is the radial derivative d/dlambda A~(lambda x) at lambda = 1
            let scaled = |l: f64| [l * x[0], l * x[1], l * x[2]];
            let ap = transversal_at(&ev, &scaled(1.0 + FD_STEP), &rule)?;
            let am = transversal_at(&ev, &scaled(1.0 - FD_STEP), &rule)?;
            let mut radial = [0.0; 3];
            for a in 0..3 {
                radial[a] = (ap[a] - am[a]) / (2.0 * FD_STEP);
            }
            Ok((chi, at, dot(&x, &at).abs(), dot(&x, &radial).abs()))
        })
        .collect::<Result<_>>()?;
    let mut potential = VectorField::zeros(*grid);
    let mut phase = Vec::with_capacity(grid.len());
    let mut t_def: f64 = 0.0;
    let mut d_def: f64 = 0.0;
    for (i, (chi, at, t, d)) in per_point.into_iter().enumerate() {
        phase.push(chi);
        for a in 0..grid.dim {
            potential.components[a][i] = at[a];
        }
        t_def = t_def.max(t);
        d_def = d_def.max(d);
    }
    Ok(GaugeTransform {
        phase,
        transformed_potential: potential,
        quadrature_nodes: k,
        transversality_defect: t_def,
        dA_transversality_defect: d_def,
    })
}

/// Pointwise `exp(i sign chi) u`.
pub fn apply_gauge(u: &ComplexField, chi: &[f64], sign: f64) -> Result<ComplexField> {
    if chi.len() != u.values.len() {
        return Err(Error::GridMismatch("phase length".into()));
    }
    Ok(ComplexField {
        grid: u.grid,
        values: u
            .values
            .iter()
            .zip(chi)
            .map(|(v, &c)| v * Complex64::from_polar(1.0, sign * c))
            .collect(),
    })
}

/// Max of `|A - grad chi - A~|` over interior points (`|x|_inf <= 0.75 L`,
/// outside `2 rho0` for singular kinds). `grad chi` is a fourth-order
/// centered difference of the pointwise phase.
pub fn cross_identity_check(spec: &PotentialSpec, grid: &GridSpec, k: usize) -> Result<f64> {
    let rule = check_nodes(k)?;
    let ev = spec.evaluator(grid)?;
    let limit = 0.75 * grid.half_width;
    let core = if spec.is_singular() {
        2.0 * ev.core_radius()
    } else {
        0.0
    };
    let dim = grid.dim;
    let defects: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            if x[..dim].iter().any(|c| c.abs() > limit) || dot(&x, &x).sqrt() < core {
                return Ok(0.0);
            }
            let a = ev.value(&x, Sampling::Ray);
            let at = transversal_at(&ev, &x, &rule)?;
            let mut m: f64 = 0.0;
            let mut err = [0.0; 3];
            for axis in 0..dim {
                let shifted = |d: f64| {
                    let mut y = x;
                    y[axis] += d;
                    phase_at(&ev, &y, &rule)
                };
                let h = FD_STEP;
                let g = (-shifted(2.0 * h)? + 8.0 * shifted(h)? - 8.0 * shifted(-h)? + shifted(-2.0 * h)?)
                    / (12.0 * h);
                err[axis] = a[axis] - g - at[axis];
            }
            m = m.max(dot(&err, &err).sqrt());
            Ok(m)
        })
        .collect::<Result<_>>()?;
    Ok(defects.into_iter().fold(0.0, f64::max))
}

/// Full gauge-reduction record: transformed potential, phase and all defects.
pub fn reduce(spec: &PotentialSpec, grid: &GridSpec, k: usize) -> Result<(GaugeTransform, GaugeDefects)> {
    let t = cronstrom_potential(spec, grid, k)?;
    let cross = cross_identity_check(spec, grid, k)?;
    let d = GaugeDefects {
        transversality_defect: t.transversality_defect,
        dA_transversality_defect: t.dA_transversality_defect,
        cross_identity_defect: cross,
        quadrature_nodes: k,
    };
    Ok((t, d))
}
