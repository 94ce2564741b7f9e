//! Appell (conformal) transformation between Gaussian decay parameters
//! `(alpha, beta)` and its checks.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolve::{covariant_gradient, magnetic_laplacian, Potentials, Trajectory};
use crate::fields::{PotentialSpec, Sampling, ScalarSpec};
use crate::gauge::GaussLegendre;
use crate::grid::{l2_norm, resample_scaled, ComplexField, GridSpec, VectorField};
use crate::grid::MAX_EXPONENT;

/// A solution `u(., s)` available on demand for `s` in `span()`.
pub trait Solution: Sync {
    fn grid(&self) -> GridSpec;
    fn span(&self) -> (f64, f64);
    fn at(&self, s: f64) -> Result<ComplexField>;
}

impl Solution for Trajectory {
    fn grid(&self) -> GridSpec {
        Trajectory::grid(self)
    }

    fn span(&self) -> (f64, f64) {
        (self.times[0], self.t_end())
    }

    fn at(&self, s: f64) -> Result<ComplexField> {
        self.interpolate(s)
    }
}

/// Solution given by a closed form `f(x, s)`.
pub struct Analytic<F: Fn(&[f64; 3], f64) -> Complex64 + Sync> {
    pub grid: GridSpec,
    pub f: F,
}

impl<F: Fn(&[f64; 3], f64) -> Complex64 + Sync> Solution for Analytic<F> {
    fn grid(&self) -> GridSpec {
        self.grid
    }

    fn span(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn at(&self, s: f64) -> Result<ComplexField> {
        Ok(ComplexField::from_fn(self.grid, |x| (self.f)(x, s)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AppellParams {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
}

impl AppellParams {
    pub fn new(alpha: f64, beta: f64, a: f64, b: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Param(format!("alpha, beta must be positive, got {alpha}, {beta}")));
        }
        if a == 0.0 && b == 0.0 {
            return Err(Error::Param("a + ib must be nonzero".into()));
        }
        Ok(Self { alpha, beta, a, b })
    }

    pub fn coefficient(&self) -> Complex64 {
        Complex64::new(self.a, self.b)
    }

    /// `alpha (1 - t) + beta t`
    pub fn denominator(&self, t: f64) -> f64 {
        self.alpha * (1.0 - t) + self.beta * t
    }

    /// Largest spatial dilation `max(sqrt(beta/alpha), sqrt(alpha/beta))`.
    pub fn max_scale(&self) -> f64 {
        (self.beta / self.alpha).max(self.alpha / self.beta).sqrt()
    }

    /// Parameters of the inverse map.
    pub fn inverse(&self) -> Self {
        Self {
            alpha: self.beta,
            beta: self.alpha,
            ..*self
        }
    }

    /// Coefficient `c(s)` of `|y|^2` in the source-side weight for target weight `gamma |x|^2`.
    pub fn source_weight(&self, gamma: f64, s: f64) -> f64 {
        let e = self.alpha * s + self.beta * (1.0 - s);
        let ab = self.alpha * self.beta;
        let m2 = self.a * self.a + self.b * self.b;
        gamma * ab / (e * e) + (self.alpha - self.beta) * self.a / (4.0 * m2 * e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AppellTimes {
    pub s: f64,
    pub g: f64,
    pub prefactor: f64,
}

/// `s = beta t / D`, `g = sqrt(alpha beta) / D`, prefactor `g^{n/2}`.
pub fn appell_map_times(t: f64, alpha: f64, beta: f64, dim: usize) -> Result<AppellTimes> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Param(format!("time {t} outside [0, 1]")));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Param("alpha, beta must be positive".into()));
    }
    let d = alpha * (1.0 - t) + beta * t;
    let s = beta * t / d;
    let g = (alpha * beta).sqrt() / d;
    Ok(AppellTimes {
        s,
        g,
        prefactor: g.powf(dim as f64 / 2.0),
    })
}

fn check_coverage(source: &GridSpec, target: &GridSpec, params: &AppellParams) -> Result<()> {
    if source.dim != target.dim {
        return Err(Error::GridMismatch("source and target dimensions differ".into()));
    }
    let need = params.max_scale() * target.half_width;
    if source.half_width < need * (1.0 - 1e-12) {
        return Err(Error::Coverage(format!(
            "source half-width {} below required {need} (= {} x target half-width {})",
            source.half_width,
            params.max_scale(),
            target.half_width
        )));
    }
    Ok(())
}

/// `e^{h(x,t)}` on the target grid, `h = (alpha-beta)|x|^2 / (4 (a+ib) D)`.
fn phase_factor(params: &AppellParams, t: f64, target: &GridSpec) -> Result<Vec<Complex64>> {
    let c = (params.alpha - params.beta) / (4.0 * params.coefficient() * params.denominator(t));
    let r2 = target.radius_squared();
    let max_r2 = r2.iter().cloned().fold(0.0, f64::max);
    if c.re * max_r2 > MAX_EXPONENT {
        return Err(Error::Overflow(format!("Appell phase exponent {} exceeds {MAX_EXPONENT}", c.re * max_r2)));
    }
    Ok(r2.iter().map(|&r| (c * r).exp()).collect())
}

/// `u~(x, t) = g^{n/2} u(g x, s) e^{h(x, t)}` on `target`.
pub fn appell_forward(source: &dyn Solution, params: &AppellParams, t: f64, target: &GridSpec) -> Result<ComplexField> {
    let sg = source.grid();
    check_coverage(&sg, target, params)?;
    let m = appell_map_times(t, params.alpha, params.beta, target.dim)?;
    let (lo, hi) = source.span();
    let slack = 1e-12;
    if m.s < lo - slack || m.s > hi + slack {
        return Err(Error::Coverage(format!("s = {} outside source span [{lo}, {hi}]", m.s)));
    }
    let u = source.at(m.s.clamp(lo, hi))?;
    let scaled = resample_scaled(&u, m.g, target)?;
    let e = phase_factor(params, t, target)?;
    Ok(ComplexField {
        grid: *target,
        values: scaled
            .values
            .iter()
            .zip(&e)
            .map(|(v, e)| v * e * m.prefactor)
            .collect(),
    })
}

/// The image of a solution under the Appell map, itself a solution.
pub struct Appelled<'a> {
    pub source: &'a dyn Solution,
    pub params: AppellParams,
    pub target: GridSpec,
}

impl Solution for Appelled<'_> {
    fn grid(&self) -> GridSpec {
        self.target
    }

    fn span(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn at(&self, t: f64) -> Result<ComplexField> {
        appell_forward(self.source, &self.params, t, &self.target)
    }
}

/// Coefficients of the source equation `u_s = (a+ib)(Delta_A u + (V1 + V2) u + F)`.
pub struct SourceTerms<'a> {
    pub magnetic: PotentialSpec,
    pub v1: ScalarSpec,
    pub v2: ScalarSpec,
    pub forcing: Option<&'a dyn Solution>,
}

impl SourceTerms<'_> {
    pub fn free() -> Self {
        Self {
            magnetic: PotentialSpec::zero(),
            v1: ScalarSpec::zero(),
            v2: ScalarSpec::zero(),
            forcing: None,
        }
    }
}

/// Coefficients of the transformed equation on the target grid at time `t`.
#[derive(Debug, Clone)]
pub struct TransformedTerms {
    pub t: f64,
    /// `A~ = g A(g x)`
    pub magnetic: Option<VectorField>,
    /// `div A~ = g^2 (div A)(g x)`
    pub div_a: Vec<f64>,
    /// `V~ = g^2 V(g x, s)`
    pub v: Vec<Complex64>,
    /// `F~ = g^{n/2+2} e^h F(g x, s)`
    pub forcing: Option<Vec<Complex64>>,
    /// `i (alpha - beta) A~ . x / ((a+ib) D)`
    pub extra: Vec<Complex64>,
}

pub fn appell_potentials(
    terms: &SourceTerms,
    params: &AppellParams,
    t: f64,
    target: &GridSpec,
) -> Result<TransformedTerms> {
    let m = appell_map_times(t, params.alpha, params.beta, target.dim)?;
    let g = m.g;
    let n = target.len();
    let is_zero = matches!(terms.magnetic.kind, crate::fields::PotentialKind::Zero);
    let (magnetic, div_a) = if is_zero {
        (None, vec![0.0; n])
    } else {
        let ev = terms.magnetic.evaluator(target)?;
        let mut a = VectorField::zeros(*target);
        let mut div = vec![0.0; n];
        for i in 0..n {
            let x = target.point(i);
            let y = [g * x[0], g * x[1], g * x[2]];
            let (v, j) = ev.value_and_jacobian(&y, Sampling::Regularized);
            for k in 0..target.dim {
                a.components[k][i] = g * v[k];
                div[i] += g * g * j[k][k];
            }
        }
        if !terms.magnetic.has_closed_form() {
            div = crate::grid::real_divergence(&a);
        }
        (Some(a), div)
    };
    let v: Vec<Complex64> = (0..n)
        .map(|i| {
            let x = target.point(i);
            let y = [g * x[0], g * x[1], g * x[2]];
            g * g * (terms.v1.at(&y, m.s) + terms.v2.at(&y, m.s))
        })
        .collect();
    let forcing = match terms.forcing {
        None => None,
        Some(f) => {
            let fs = f.at(m.s)?;
            check_coverage(&fs.grid, target, params)?;
            let scaled = resample_scaled(&fs, g, target)?;
            let e = phase_factor(params, t, target)?;
            let pre = g.powf(target.dim as f64 / 2.0 + 2.0);
            Some(scaled.values.iter().zip(&e).map(|(v, e)| v * e * pre).collect())
        }
    };
    let c = Complex64::i() * (params.alpha - params.beta) / (params.coefficient() * params.denominator(t));
    let extra = match &magnetic {
        None => vec![Complex64::new(0.0, 0.0); n],
        Some(a) => a.radial_component().iter().map(|&xa| c * xa).collect(),
    };
    Ok(TransformedTerms {
        t,
        magnetic,
        div_a,
        v,
        forcing,
        extra,
    })
}

/// Right-hand side of the transformed equation applied to `w`.
pub fn appell_rhs(w: &ComplexField, terms: &TransformedTerms, params: &AppellParams) -> Result<ComplexField> {
    let grid = w.grid;
    let mut pot = Potentials::free(grid);
    if let Some(a) = &terms.magnetic {
        pot = pot.with_magnetic(a.clone(), Some(terms.div_a.clone()))?;
    }
    let lap = magnetic_laplacian(w, &pot);
    let c = params.coefficient();
    let values = (0..grid.len())
        .map(|i| {
            let mut s = lap.values[i] + (terms.extra[i] + terms.v[i]) * w.values[i];
            if let Some(f) = &terms.forcing {
                s += f[i];
            }
            c * s
        })
        .collect();
    Ok(ComplexField { grid, values })
}

/// Max over `times` of the relative L2 residual of the transformed equation,
/// with `d/dt u~` by a centered difference of step `dt_fd`.
pub fn appell_residual(
    source: &dyn Solution,
    terms: &SourceTerms,
    params: &AppellParams,
    times: &[f64],
    target: &GridSpec,
    dt_fd: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &t in times {
        if !(t - dt_fd >= 0.0 && t + dt_fd <= 1.0) {
            return Err(Error::Param(format!("residual time {t} must be interior to (0, 1)")));
        }
        let plus = appell_forward(source, params, t + dt_fd, target)?;
        let minus = appell_forward(source, params, t - dt_fd, target)?;
        let dt = plus.sub(&minus).scale(Complex64::new(0.5 / dt_fd, 0.0));
        let w = appell_forward(source, params, t, target)?;
        let tt = appell_potentials(terms, params, t, target)?;
        let r = appell_rhs(&w, &tt, params)?;
        let scale = l2_norm(&dt).max(l2_norm(&r));
        if scale > 0.0 {
            worst = worst.max(l2_norm(&dt.sub(&r)) / scale);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityPair {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Right-hand side exactly as printed when it differs from `rhs`.
    pub rhs_printed: Option<f64>,
}

impl IdentityPair {
    pub fn relative_gap(&self) -> f64 {
        let s = self.lhs.abs().max(self.rhs.abs());
        if s == 0.0 {
            0.0
        } else {
            (self.lhs - self.rhs).abs() / s
        }
    }
}

fn gaussian_weight(grid: &GridSpec, c: f64) -> Result<Vec<f64>> {
    let r2 = grid.radius_squared();
    let max = r2.iter().cloned().fold(0.0, f64::max) * c;
    if max > MAX_EXPONENT {
        return Err(Error::Overflow(format!(
            "weight exponent {max} exceeds {MAX_EXPONENT}; reduce gamma"
        )));
    }
    Ok(r2.iter().map(|&r| (c * r).exp()).collect())
}

fn weighted(f: &ComplexField, w: &[f64]) -> f64 {
    crate::grid::weighted_l2_norm(f, w).expect("weight length")
}

/// The two fixed-time weighted-norm identities at time `t` (the second only
/// when a forcing term is present).
pub fn pointwise_norm_identities(
    source: &dyn Solution,
    terms: &SourceTerms,
    params: &AppellParams,
    gamma: f64,
    t: f64,
    target: &GridSpec,
) -> Result<Vec<IdentityPair>> {
    let sg = source.grid();
    let m = appell_map_times(t, params.alpha, params.beta, target.dim)?;
    let c = params.source_weight(gamma, m.s);
    let wt = gaussian_weight(target, gamma)?;
    let ws = gaussian_weight(&sg, c)?;
    let ut = appell_forward(source, params, t, target)?;
    let us = source.at(m.s)?;
    let mut out = vec![IdentityPair {
        name: "weighted-norm".into(),
        lhs: weighted(&ut, &wt),
        rhs: weighted(&us, &ws),
        rhs_printed: None,
    }];
    if let Some(f) = terms.forcing {
        let tt = appell_potentials(terms, params, t, target)?;
        let ft = ComplexField {
            grid: *target,
            values: tt.forcing.expect("forcing present"),
        };
        let fs = f.at(m.s)?;
        let factor = params.alpha * params.beta / params.denominator(t).powi(2);
        out.push(IdentityPair {
            name: "weighted-forcing-norm".into(),
            lhs: weighted(&ft, &wt),
            rhs: factor * weighted(&fs, &gaussian_weight(&fs.grid, c)?),
            rhs_printed: None,
        });
    }
    Ok(out)
}

/// The two space-time identities (covariant gradient and `|x| u`), by
/// Gauss-Legendre quadrature in `t` (left) and `s` (right). `rhs` carries
/// the Jacobian `g^{-4}` of the time change; `rhs_printed` omits it.
pub fn spacetime_norm_identities(
    source: &dyn Solution,
    terms: &SourceTerms,
    params: &AppellParams,
    gamma: f64,
    target: &GridSpec,
    nodes: usize,
) -> Result<Vec<IdentityPair>> {
    let rule = GaussLegendre::new(nodes)?;
    let sg = source.grid();
    let wt = gaussian_weight(target, gamma)?;
    let r2t = target.radius_squared();
    let r2s = sg.radius_squared();
    let ab = params.alpha * params.beta;
    let sq = ab.sqrt();
    let cc = params.coefficient();

    let (mut grad_l, mut x_l) = (0.0, 0.0);
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let ut = appell_forward(source, params, t, target)?;
        let tt = appell_potentials(terms, params, t, target)?;
        let grad = covariant_gradient(&ut, tt.magnetic.as_ref());
        let g2: f64 = grad.iter().map(|c| weighted(c, &wt).powi(2)).sum();
        let xu = ut.mul_real(&r2t.iter().map(|r| r.sqrt()).collect::<Vec<_>>());
        grad_l += w * t * (1.0 - t) * g2;
        x_l += w * t * (1.0 - t) * weighted(&xu, &wt).powi(2);
    }

    let a_src = if matches!(terms.magnetic.kind, crate::fields::PotentialKind::Zero) {
        None
    } else {
        Some(crate::fields::eval_potential(&terms.magnetic, &sg)?)
    };
    let (mut grad_r, mut grad_p, mut x_r, mut x_p) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
        let e = params.alpha * s + params.beta * (1.0 - s);
        let jac = (ab / (e * e)).powi(2); // g^{-4}
        let ws = gaussian_weight(&sg, params.source_weight(gamma, s))?;
        let us = source.at(s)?;
        let grad = covariant_gradient(&us, a_src.as_ref());
        let mut g2 = 0.0;
        for (k, gk) in grad.iter().enumerate() {
            let comb = ComplexField {
                grid: sg,
                values: (0..sg.len())
                    .map(|i| {
                        let y = sg.point(i)[k];
                        e / sq * gk.values[i] + (params.alpha - params.beta) * y / (2.0 * cc * sq) * us.values[i]
                    })
                    .collect(),
            };
            g2 += weighted(&comb, &ws).powi(2);
        }
        let yu = us.mul_real(&r2s.iter().map(|r| r.sqrt() * sq / e).collect::<Vec<_>>());
        let x2 = weighted(&yu, &ws).powi(2);
        let base = w * s * (1.0 - s);
        grad_p += base * g2;
        grad_r += base * jac * g2;
        x_p += base * x2;
        x_r += base * jac * x2;
    }
    Ok(vec![
        IdentityPair {
            name: "spacetime-covariant-gradient".into(),
            lhs: grad_l.sqrt(),
            rhs: grad_r.sqrt(),
            rhs_printed: Some(grad_p.sqrt()),
        },
        IdentityPair {
            name: "spacetime-position-moment".into(),
            lhs: x_l.sqrt(),
            rhs: x_r.sqrt(),
            rhs_printed: Some(x_p.sqrt()),
        },
    ])
}

/// Samples the transformed solution at `times` as a trajectory on `target`.
pub fn transformed_trajectory(
    source: &dyn Solution,
    params: &AppellParams,
    times: &[f64],
    target: &GridSpec,
    flow: crate::evolve::FlowParams,
) -> Result<Trajectory> {
    let snapshots = times
        .iter()
        .map(|&t| appell_forward(source, params, t, target))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        times: times.to_vec(),
        snapshots,
        params: flow,
    })
}

/// All weighted-norm identities: the fixed-time pairs at `t` followed by the
/// space-time pairs.
pub fn appell_norm_identities(
    source: &dyn Solution,
    terms: &SourceTerms,
    params: &AppellParams,
    gamma: f64,
    t: f64,
    target: &GridSpec,
    nodes: usize,
) -> Result<Vec<IdentityPair>> {
    let mut out = pointwise_norm_identities(source, terms, params, gamma, t, target)?;
    out.extend(spacetime_norm_identities(source, terms, params, gamma, target, nodes)?);
    Ok(out)
}
