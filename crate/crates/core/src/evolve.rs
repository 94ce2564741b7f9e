//! Method-of-lines RK4 integrator for `u_t = (a+ib)(Delta_A u + V u + F)`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{PotentialSpec, Sampling};
use crate::grid::{
    boundary_mass, gradient_and_laplacian, l2_norm, real_divergence, spectral_laplacian, ComplexField,
    GridSpec, RadialCutoff, VectorField, BOUNDARY_LIMIT,
};

/// RK4 stability constant in `dt <= C / (|a+ib| k_max^2)`.
pub const STABILITY_CONSTANT: f64 = 2.5;

pub type TimeField = Arc<dyn Fn(f64) -> Vec<Complex64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowParams {
    pub a: f64,
    pub b: f64,
    pub dt: f64,
    pub t_end: f64,
    pub store_every: usize,
    /// Largest tolerated boundary-mass fraction.
    pub boundary_limit: f64,
}

impl FlowParams {
    pub fn new(a: f64, b: f64, dt: f64, t_end: f64, store_every: usize) -> Self {
        Self {
            a,
            b,
            dt,
            t_end,
            store_every,
            boundary_limit: BOUNDARY_LIMIT,
        }
    }

    pub fn coefficient(&self) -> Complex64 {
        Complex64::new(self.a, self.b)
    }

    pub fn stability_bound(&self, grid: &GridSpec) -> f64 {
        let k = grid.max_wavenumber();
        STABILITY_CONSTANT / (self.coefficient().norm() * k * k)
    }

    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.a >= 0.0) || !self.b.is_finite() || !self.a.is_finite() {
            return Err(Error::Param(format!("need a >= 0 and finite b, got a = {}, b = {}", self.a, self.b)));
        }
        if self.a + self.b.abs() <= 0.0 {
            return Err(Error::Param("a + ib must be nonzero".into()));
        }
        if !(self.t_end > 0.0 && self.t_end <= 1.0) {
            return Err(Error::Param(format!("t_end must lie in (0, 1], got {}", self.t_end)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Param(format!("dt must be positive, got {}", self.dt)));
        }
        if self.store_every == 0 {
            return Err(Error::Param("store_every must be positive".into()));
        }
        let bound = self.stability_bound(grid);
        if self.dt > bound {
            return Err(Error::Stability { dt: self.dt, bound });
        }
        Ok(())
    }
}

/// Static magnetic potential and scalar terms of the flow.
#[derive(Clone)]
pub struct Potentials {
    pub grid: GridSpec,
    pub magnetic: Option<VectorField>,
    pub div_a: Vec<f64>,
    pub a_squared: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Option<TimeField>,
    pub forcing: Option<TimeField>,
}

impl std::fmt::Debug for Potentials {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Potentials")
            .field("grid", &self.grid)
            .field("magnetic", &self.magnetic.is_some())
            .field("v2", &self.v2.is_some())
            .field("forcing", &self.forcing.is_some())
            .finish()
    }
}

impl Potentials {
    pub fn free(grid: GridSpec) -> Self {
        Self {
            grid,
            magnetic: None,
            div_a: vec![0.0; grid.len()],
            a_squared: vec![0.0; grid.len()],
            v1: vec![0.0; grid.len()],
            v2: None,
            forcing: None,
        }
    }

    /// Sets `A` with a given divergence, or a spectral one if `None`.
    pub fn with_magnetic(mut self, a: VectorField, div: Option<Vec<f64>>) -> Result<Self> {
        self.grid.check_same(&a.grid)?;
        self.div_a = match div {
            Some(d) => d,
            None => real_divergence(&a),
        };
        self.a_squared = a.squared_norm();
        self.magnetic = Some(a);
        Ok(self)
    }

    /// Sets `A` from a closed-form spec with its analytic divergence.
    pub fn with_spec(self, spec: &PotentialSpec) -> Result<Self> {
        let grid = self.grid;
        if !spec.has_closed_form() {
            return self.with_magnetic(crate::fields::eval_potential(spec, &grid)?, None);
        }
        let ev = spec.evaluator(&grid)?;
        let mut a = VectorField::zeros(grid);
        let mut div = vec![0.0; grid.len()];
        for i in 0..grid.len() {
            let (v, j) = ev.value_and_jacobian(&grid.point(i), Sampling::Regularized);
            for k in 0..grid.dim {
                a.components[k][i] = v[k];
                div[i] += j[k][k];
            }
        }
        if a.components.iter().flatten().all(|&v| v == 0.0) {
            return Ok(self);
        }
        self.with_magnetic(a, Some(div))
    }

    pub fn with_v1(mut self, v1: Vec<f64>) -> Self {
        self.v1 = v1;
        self
    }

    pub fn with_v2(mut self, v2: TimeField) -> Self {
        self.v2 = Some(v2);
        self
    }

    pub fn with_forcing(mut self, f: TimeField) -> Self {
        self.forcing = Some(f);
        self
    }
}

/// `Delta_A u = Delta u - i div(A) u - 2i A . grad u - |A|^2 u`
pub fn magnetic_laplacian(u: &ComplexField, pot: &Potentials) -> ComplexField {
    let i = Complex64::i();
    match &pot.magnetic {
        None => spectral_laplacian(u),
        Some(a) => {
            let (grad, lap) = gradient_and_laplacian(u);
            let mut out = lap;
            for (idx, o) in out.values.iter_mut().enumerate() {
                let mut adv = Complex64::new(0.0, 0.0);
                for (k, g) in grad.iter().enumerate() {
                    adv += a.components[k][idx] * g.values[idx];
                }
                *o += -i * pot.div_a[idx] * u.values[idx] - 2.0 * i * adv - pot.a_squared[idx] * u.values[idx];
            }
            out
        }
    }
}

/// Covariant gradient `(grad - iA) u`.
pub fn covariant_gradient(u: &ComplexField, a: Option<&VectorField>) -> Vec<ComplexField> {
    let mut g = crate::grid::spectral_gradient(u);
    if let Some(a) = a {
        for (k, c) in g.iter_mut().enumerate() {
            for (idx, v) in c.values.iter_mut().enumerate() {
                *v -= Complex64::i() * a.components[k][idx] * u.values[idx];
            }
        }
    }
    g
}

/// Expanded right-hand side `(a+ib)(Delta_A u + (V1 + V2(t)) u + F(t))`.
pub fn rhs(u: &ComplexField, pot: &Potentials, a: f64, b: f64, t: f64) -> Result<ComplexField> {
    pot.grid.check_same(&u.grid)?;
    let c = Complex64::new(a, b);
    let mut out = magnetic_laplacian(u, pot);
    let v2 = pot.v2.as_ref().map(|f| f(t));
    let f = pot.forcing.as_ref().map(|f| f(t));
    for (idx, o) in out.values.iter_mut().enumerate() {
        let mut v = Complex64::new(pot.v1[idx], 0.0);
        if let Some(v2) = &v2 {
            v += v2[idx];
        }
        let mut s = *o + v * u.values[idx];
        if let Some(f) = &f {
            s += f[idx];
        }
        *o = c * s;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<ComplexField>,
    pub params: FlowParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnapshotInfo {
    pub t: f64,
    pub norm: f64,
    pub boundary_mass: f64,
}

impl Trajectory {
    pub fn grid(&self) -> GridSpec {
        self.snapshots[0].grid
    }

    pub fn final_state(&self) -> &ComplexField {
        self.snapshots.last().expect("nonempty trajectory")
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("nonempty trajectory")
    }

    pub fn manifest(&self) -> Vec<SnapshotInfo> {
        self.times
            .iter()
            .zip(&self.snapshots)
            .map(|(&t, u)| SnapshotInfo {
                t,
                norm: l2_norm(u),
                boundary_mass: boundary_mass(u).0,
            })
            .collect()
    }

    /// Cubic Lagrange interpolation in time over the four nearest snapshots.
    pub fn interpolate(&self, t: f64) -> Result<ComplexField> {
        let n = self.times.len();
        let (t0, t1) = (self.times[0], self.times[n - 1]);
        let slack = 1e-12 * (1.0 + t1.abs());
        if t < t0 - slack || t > t1 + slack {
            return Err(Error::Coverage(format!("time {t} outside trajectory [{t0}, {t1}]")));
        }
        if n == 1 {
            return Ok(self.snapshots[0].clone());
        }
        let k = match self.times.binary_search_by(|p| p.partial_cmp(&t).expect("finite times")) {
            Ok(k) => return Ok(self.snapshots[k].clone()),
            Err(k) => k.clamp(1, n - 1),
        };
        let m = n.min(4);
        let start = (k as isize - 2).clamp(0, (n - m) as isize) as usize;
        let idx: Vec<usize> = (start..start + m).collect();
        let mut out = ComplexField::zeros(self.grid());
        for &j in &idx {
            let mut w = 1.0;
            for &l in &idx {
                if l != j {
                    w *= (t - self.times[l]) / (self.times[j] - self.times[l]);
                }
            }
            for (o, v) in out.values.iter_mut().zip(&self.snapshots[j].values) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}

fn check_boundary(u: &ComplexField, t: f64, limit: f64) -> Result<()> {
    let (_, frac) = boundary_mass(u);
    if frac > limit {
        return Err(Error::BoundaryMass { t, fraction: frac, limit });
    }
    if !u.is_finite() {
        return Err(Error::NonFinite(format!("state at t = {t}")));
    }
    Ok(())
}

/// Classical RK4 from `t = 0` to `t_end` with snapshots every `store_every` steps.
pub fn evolve(u0: &ComplexField, pot: &Potentials, params: &FlowParams) -> Result<Trajectory> {
    evolve_from(u0, pot, params, 0.0)
}

/// RK4 starting at time `t_start` (used when `V2`, `F` are time dependent).
pub fn evolve_from(u0: &ComplexField, pot: &Potentials, params: &FlowParams, t_start: f64) -> Result<Trajectory> {
    let grid = u0.grid;
    pot.grid.check_same(&grid)?;
    params.validate(&grid)?;
    check_boundary(u0, t_start, params.boundary_limit)?;
    let n = params.steps();
    let dt = params.t_end / n as f64;
    let (a, b) = (params.a, params.b);
    let mut u = u0.clone();
    let mut times = vec![t_start];
    let mut snapshots = vec![u.clone()];
    let half = Complex64::new(0.5 * dt, 0.0);
    let full = Complex64::new(dt, 0.0);
    for step in 0..n {
        let t = t_start + step as f64 * dt;
        let k1 = rhs(&u, pot, a, b, t)?;
        let k2 = rhs(&u.add_scaled(half, &k1), pot, a, b, t + 0.5 * dt)?;
        let k3 = rhs(&u.add_scaled(half, &k2), pot, a, b, t + 0.5 * dt)?;
        let k4 = rhs(&u.add_scaled(full, &k3), pot, a, b, t + dt)?;
        let c = dt / 6.0;
        for (idx, v) in u.values.iter_mut().enumerate() {
            *v += c * (k1.values[idx] + 2.0 * k2.values[idx] + 2.0 * k3.values[idx] + k4.values[idx]);
        }
        let done = step + 1;
        if done % params.store_every == 0 || done == n {
            let tn = t_start + done as f64 * dt;
            check_boundary(&u, tn, params.boundary_limit)?;
            times.push(tn);
            snapshots.push(u.clone());
        }
    }
    Ok(Trajectory {
        times,
        snapshots,
        params: *params,
    })
}

/// Final state only (snapshots are not retained).
pub fn propagate(u0: &ComplexField, pot: &Potentials, params: &FlowParams) -> Result<ComplexField> {
    let mut p = *params;
    p.store_every = usize::MAX;
    Ok(evolve(u0, pot, &p)?.final_state().clone())
}

/// Relative L2 distance at `t_end` between `evolve(e^{i chi~} u0; A + grad chi~)`
/// and `e^{i chi~} evolve(u0; A)`, with `chi~ = theta chi` cut off radially
/// (1 for `|x| <= L/16`, 0 for `|x| >= 3L/4`). `chi` returns value and gradient.
pub fn gauge_equivariance_test(
    u0: &ComplexField,
    spec: &PotentialSpec,
    chi: &dyn Fn(&[f64; 3]) -> (f64, [f64; 3]),
    params: &FlowParams,
) -> Result<f64> {
    gauge_equivariance_with_cutoff(u0, spec, chi, params, &RadialCutoff::for_box(&u0.grid))
}

/// As [`gauge_equivariance_test`] with an explicit radial cutoff.
pub fn gauge_equivariance_with_cutoff(
    u0: &ComplexField,
    spec: &PotentialSpec,
    chi: &dyn Fn(&[f64; 3]) -> (f64, [f64; 3]),
    params: &FlowParams,
    cut: &RadialCutoff,
) -> Result<f64> {
    let grid = u0.grid;
    let base = Potentials::free(grid).with_spec(spec)?;
    let mut phase = vec![0.0; grid.len()];
    let mut grad = VectorField::zeros(grid);
    for i in 0..grid.len() {
        let x = grid.point(i);
        let r = x[..grid.dim].iter().map(|c| c * c).sum::<f64>().sqrt();
        let (c, g) = chi(&x);
        let th = cut.value(r);
        let dth = cut.gradient(&x, grid.dim);
        phase[i] = th * c;
        for k in 0..grid.dim {
            grad.components[k][i] = th * g[k] + c * dth[k];
        }
    }
    let mut shifted = match &base.magnetic {
        Some(a) => a.clone(),
        None => VectorField::zeros(grid),
    };
    for k in 0..grid.dim {
        for i in 0..grid.len() {
            shifted.components[k][i] += grad.components[k][i];
        }
    }
    // div(A + grad chi~) = div A + Laplacian chi~ (spectral: chi~ is compactly supported)
    let lap = spectral_laplacian(&ComplexField::from_real(grid, &phase));
    let div: Vec<f64> = base.div_a.iter().zip(&lap.values).map(|(d, l)| d + l.re).collect();
    let moved = Potentials::free(grid).with_magnetic(shifted, Some(div))?;
    let factor: Vec<Complex64> = phase.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
    let lhs = propagate(&u0.mul(&factor), &moved, params)?;
    let rhs = propagate(u0, &base, params)?.mul(&factor);
    Ok(l2_norm(&lhs.sub(&rhs)) / l2_norm(&rhs))
}
