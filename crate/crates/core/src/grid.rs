//! Periodic uniform grids on `[-L, L)^n` with Fourier differentiation and
//! quadrature. Storage is row-major with axis 0 slowest.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of the half-width beyond which samples count as boundary mass.
pub const BOUNDARY_BAND: f64 = 0.9;
/// Largest admissible boundary-mass fraction of an evolved state.
pub const BOUNDARY_LIMIT: f64 = 1e-8;
/// Largest exponent accepted in exponential weights before overflow is reported.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub half_width: f64,
    pub points_per_axis: usize,
}

impl GridSpec {
    pub fn new(dim: usize, half_width: f64, points_per_axis: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Grid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Grid(format!("half-width must be positive, got {half_width}")));
        }
        if points_per_axis < 2 || points_per_axis % 2 != 0 {
            return Err(Error::Grid(format!(
                "points per axis must be even and >= 2, got {points_per_axis}"
            )));
        }
        Ok(Self {
            dim,
            half_width,
            points_per_axis,
        })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points_per_axis as f64
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight h^n.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn axis_coordinate(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.points_per_axis.pow((self.dim - 1 - axis) as u32)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let n = self.points_per_axis;
        let mut out = [0usize; 3];
        let mut rest = idx;
        for a in (0..self.dim).rev() {
            out[a] = rest % n;
            rest /= n;
        }
        out
    }

    /// Coordinates of sample `idx`; unused trailing entries are zero.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.axis_coordinate(m[a]);
        }
        x
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn radius_squared(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let x = self.point(i);
                x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
            })
            .collect()
    }

    /// Signed integer frequency of FFT index `j`; the Nyquist index maps to +N/2.
    pub fn frequency(&self, j: usize) -> i64 {
        let n = self.points_per_axis as i64;
        let j = j as i64;
        if j <= n / 2 {
            j
        } else {
            j - n
        }
    }

    /// Wavenumber used by odd derivatives (Nyquist zeroed).
    pub fn odd_wavenumber(&self, j: usize) -> f64 {
        if j == self.points_per_axis / 2 {
            0.0
        } else {
            self.frequency(j) as f64 * PI / self.half_width
        }
    }

    /// Squared wavenumber used by the Laplacian (Nyquist kept).
    pub fn squared_wavenumber(&self, j: usize) -> f64 {
        let k = self.frequency(j) as f64 * PI / self.half_width;
        k * k
    }

    /// Largest wavenumber magnitude on the grid, `pi N/(2L) sqrt(dim)`.
    pub fn max_wavenumber(&self) -> f64 {
        PI * self.points_per_axis as f64 / (2.0 * self.half_width) * (self.dim as f64).sqrt()
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Coordinate `x_axis` at every grid point.
pub fn coordinates(grid: &GridSpec, axis: usize) -> Result<Vec<f64>> {
    if axis >= grid.dim {
        return Err(Error::Axis {
            axis,
            dim: grid.dim,
        });
    }
    Ok((0..grid.len()).map(|i| grid.point(i)[axis]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: GridSpec,
    pub values: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub components: Vec<Vec<f64>>,
}

impl ComplexField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn new(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("field samples".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64; 3]) -> Complex64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn from_real(grid: GridSpec, re: &[f64]) -> Self {
        Self {
            grid,
            values: re.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Pointwise product with real samples.
    pub fn mul_real(&self, w: &[f64]) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().zip(w).map(|(v, &w)| v * w).collect(),
        }
    }

    pub fn mul(&self, w: &[Complex64]) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().zip(w).map(|(v, w)| v * w).collect(),
        }
    }

    /// `self + c * other`
    pub fn add_scaled(&self, c: Complex64, other: &ComplexField) -> Self {
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &ComplexField) -> Self {
        self.add_scaled(Complex64::new(-1.0, 0.0), other)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            components: vec![vec![0.0; grid.len()]; grid.dim],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64; 3]) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(grid);
        for i in 0..grid.len() {
            let v = f(&grid.point(i));
            for a in 0..grid.dim {
                out.components[a][i] = v[a];
            }
        }
        out
    }

    pub fn at(&self, idx: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (a, c) in self.components.iter().enumerate() {
            v[a] = c[idx];
        }
        v
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let v = self.at(i);
                (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn squared_norm(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| self.components.iter().map(|c| c[i] * c[i]).sum())
            .collect()
    }

    /// Pointwise `x . field`.
    pub fn radial_component(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| {
                let x = self.grid.point(i);
                self.components
                    .iter()
                    .enumerate()
                    .map(|(a, c)| x[a] * c[i])
                    .sum()
            })
            .collect()
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            grid: self.grid,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        }
    }
}

type PlanKey = (usize, bool);

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = plans.lock().expect("fft plan cache poisoned");
    map.entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// In-place n-dimensional DFT over the grid layout. The inverse is normalized.
pub fn fft_nd(grid: &GridSpec, data: &mut [Complex64], inverse: bool) {
    let n = grid.points_per_axis;
    let fft = plan(n, inverse);
    let total = grid.len();
    let mut scratch = vec![Complex64::new(0.0, 0.0); total];
    for axis in 0..grid.dim {
        let stride = grid.stride(axis);
        if stride == 1 {
            fft.process(data);
            continue;
        }
        let outer = total / (n * stride);
        let mut line = 0;
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * n * stride + inner;
                for k in 0..n {
                    scratch[line * n + k] = data[base + k * stride];
                }
                line += 1;
            }
        }
        fft.process(&mut scratch);
        let mut line = 0;
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * n * stride + inner;
                for k in 0..n {
                    data[base + k * stride] = scratch[line * n + k];
                }
                line += 1;
            }
        }
    }
    if inverse {
        let s = 1.0 / total as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

pub fn forward_transform(f: &ComplexField) -> Vec<Complex64> {
    let mut data = f.values.clone();
    fft_nd(&f.grid, &mut data, false);
    data
}

fn inverse_transform(grid: &GridSpec, mut spectrum: Vec<Complex64>) -> ComplexField {
    fft_nd(grid, &mut spectrum, true);
    ComplexField {
        grid: *grid,
        values: spectrum,
    }
}

/// Per-point wavenumber multipliers of a grid.
struct Multipliers {
    /// `k_axis` with the Nyquist entry zeroed, one buffer per axis.
    odd: Vec<Vec<f64>>,
    /// `-|k|^2` with the Nyquist entry kept.
    neg_k2: Vec<f64>,
}

fn multipliers(grid: &GridSpec) -> Arc<Multipliers> {
    type Key = (usize, usize, u64);
    static TABLES: OnceLock<Mutex<HashMap<Key, Arc<Multipliers>>>> = OnceLock::new();
    let tables = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (grid.dim, grid.points_per_axis, grid.half_width.to_bits());
    let mut map = tables.lock().expect("multiplier cache poisoned");
    map.entry(key)
        .or_insert_with(|| {
            let total = grid.len();
            let mut odd = vec![vec![0.0; total]; grid.dim];
            let mut neg_k2 = vec![0.0; total];
            for idx in 0..total {
                let m = grid.multi_index(idx);
                let mut k2 = 0.0;
                for a in 0..grid.dim {
                    odd[a][idx] = grid.odd_wavenumber(m[a]);
                    k2 += grid.squared_wavenumber(m[a]);
                }
                neg_k2[idx] = -k2;
            }
            Arc::new(Multipliers { odd, neg_k2 })
        })
        .clone()
}

/// Multiplies a spectrum by `i k_axis` (odd convention).
fn times_ik(grid: &GridSpec, spectrum: &[Complex64], axis: usize) -> Vec<Complex64> {
    let m = multipliers(grid);
    spectrum
        .iter()
        .zip(&m.odd[axis])
        .map(|(v, &k)| Complex64::new(-k * v.im, k * v.re))
        .collect()
}

fn times_minus_k2(grid: &GridSpec, spectrum: &[Complex64]) -> Vec<Complex64> {
    let m = multipliers(grid);
    spectrum.iter().zip(&m.neg_k2).map(|(v, &k)| v * k).collect()
}

pub fn spectral_gradient(f: &ComplexField) -> Vec<ComplexField> {
    let spec = forward_transform(f);
    (0..f.grid.dim)
        .map(|a| inverse_transform(&f.grid, times_ik(&f.grid, &spec, a)))
        .collect()
}

pub fn spectral_derivative(f: &ComplexField, axis: usize) -> ComplexField {
    let spec = forward_transform(f);
    inverse_transform(&f.grid, times_ik(&f.grid, &spec, axis))
}

pub fn spectral_laplacian(f: &ComplexField) -> ComplexField {
    let spec = forward_transform(f);
    inverse_transform(&f.grid, times_minus_k2(&f.grid, &spec))
}

/// Gradient and Laplacian from one forward transform.
pub fn gradient_and_laplacian(f: &ComplexField) -> (Vec<ComplexField>, ComplexField) {
    let spec = forward_transform(f);
    let grad = (0..f.grid.dim)
        .map(|a| inverse_transform(&f.grid, times_ik(&f.grid, &spec, a)))
        .collect();
    let lap = inverse_transform(&f.grid, times_minus_k2(&f.grid, &spec));
    (grad, lap)
}

/// Spectral divergence of complex components.
pub fn spectral_divergence(components: &[ComplexField]) -> ComplexField {
    let grid = components[0].grid;
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (a, c) in components.iter().enumerate() {
        let d = times_ik(&grid, &forward_transform(c), a);
        acc.iter_mut().zip(d).for_each(|(s, v)| *s += v);
    }
    inverse_transform(&grid, acc)
}

/// Spectral divergence of a real vector field.
pub fn real_divergence(v: &VectorField) -> Vec<f64> {
    let comps: Vec<ComplexField> = v
        .components
        .iter()
        .map(|c| ComplexField::from_real(v.grid, c))
        .collect();
    spectral_divergence(&comps).values.iter().map(|z| z.re).collect()
}

/// Spectral Jacobian `J[k][j] = d_j v^k` of a real vector field.
pub fn real_jacobian(v: &VectorField) -> Vec<Vec<Vec<f64>>> {
    v.components
        .iter()
        .map(|c| {
            spectral_gradient(&ComplexField::from_real(v.grid, c))
                .into_iter()
                .map(|g| g.values.iter().map(|z| z.re).collect())
                .collect()
        })
        .collect()
}

pub fn l2_norm(f: &ComplexField) -> f64 {
    (f.grid.cell_volume() * f.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
}

/// `(h^n sum w^2 |f|^2)^(1/2)`
pub fn weighted_l2_norm(f: &ComplexField, w: &[f64]) -> Result<f64> {
    if w.len() != f.values.len() {
        return Err(Error::GridMismatch("weight length".into()));
    }
    let s: f64 = f
        .values
        .iter()
        .zip(w)
        .map(|(v, w)| w * w * v.norm_sqr())
        .sum();
    Ok((f.grid.cell_volume() * s).sqrt())
}

/// `h^n sum f conj(g)`
pub fn inner_product(f: &ComplexField, g: &ComplexField) -> Result<Complex64> {
    f.grid.check_same(&g.grid)?;
    let s: Complex64 = f
        .values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| a * b.conj())
        .sum();
    Ok(s * f.grid.cell_volume())
}

/// L2 norm computed from the DFT coefficients.
pub fn transform_norm(f: &ComplexField) -> f64 {
    let spec = forward_transform(f);
    let s: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
    (f.grid.cell_volume() * s / f.grid.len() as f64).sqrt()
}

/// Mass `h^n sum |f|^2` over points with `|x|_inf > 0.9 L`, and its fraction of the total.
pub fn boundary_mass(f: &ComplexField) -> (f64, f64) {
    let cut = BOUNDARY_BAND * f.grid.half_width;
    let mut edge = 0.0;
    let mut total = 0.0;
    for (i, v) in f.values.iter().enumerate() {
        let m = v.norm_sqr();
        total += m;
        let x = f.grid.point(i);
        if x.iter().take(f.grid.dim).any(|c| c.abs() > cut) {
            edge += m;
        }
    }
    let h = f.grid.cell_volume();
    let frac = if total > 0.0 { edge / total } else { 0.0 };
    (edge * h, frac)
}

/// Values of the trigonometric basis of `grid` at coordinate `y` along one axis.
fn axis_basis(grid: &GridSpec, y: f64) -> Vec<Complex64> {
    let n = grid.points_per_axis;
    let theta = PI * (y + grid.half_width) / grid.half_width;
    (0..n)
        .map(|j| {
            if j == n / 2 {
                Complex64::new((theta * (n / 2) as f64).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, theta * grid.frequency(j) as f64)
            }
        })
        .collect()
}

/// Applies `mat` (rows = output length, cols = input length) along `axis`
/// of an array with the given shape.
fn apply_along_axis(
    data: &[Complex64],
    shape: &[usize],
    axis: usize,
    mat: &[Vec<Complex64>],
) -> (Vec<Complex64>, Vec<usize>) {
    let m_in = shape[axis];
    let m_out = mat.len();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![Complex64::new(0.0, 0.0); outer * m_out * inner];
    for o in 0..outer {
        for r in 0..m_out {
            let row = &mat[r];
            let dst = o * m_out * inner + r * inner;
            for k in 0..m_in {
                let c = row[k];
                let src = o * m_in * inner + k * inner;
                for i in 0..inner {
                    out[dst + i] += c * data[src + i];
                }
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = m_out;
    (out, new_shape)
}

/// Trigonometric interpolant of a sampled field.
#[derive(Debug, Clone)]
pub struct TrigInterpolant {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

impl TrigInterpolant {
    pub fn new(f: &ComplexField) -> Self {
        let mut coeffs = forward_transform(f);
        let s = 1.0 / f.grid.len() as f64;
        coeffs.iter_mut().for_each(|c| *c *= s);
        Self {
            grid: f.grid,
            coeffs,
        }
    }

    pub fn from_real(grid: GridSpec, samples: &[f64]) -> Self {
        Self::new(&ComplexField::from_real(grid, samples))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Value at an arbitrary point (periodic extension).
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        let mut data = self.coeffs.clone();
        let mut shape = vec![self.grid.points_per_axis; self.grid.dim];
        for a in (0..self.grid.dim).rev() {
            let row = vec![axis_basis(&self.grid, x[a])];
            let (d, s) = apply_along_axis(&data, &shape, a, &row);
            data = d;
            shape = s;
        }
        data[0]
    }

    /// Values at the scaled tensor grid `scale * x`, `x` ranging over `target`.
    pub fn eval_scaled(&self, scale: f64, target: &GridSpec) -> ComplexField {
        let mut data = self.coeffs.clone();
        let mut shape = vec![self.grid.points_per_axis; self.grid.dim];
        let rows: Vec<Vec<Complex64>> = (0..target.points_per_axis)
            .map(|i| axis_basis(&self.grid, scale * target.axis_coordinate(i)))
            .collect();
        for a in 0..self.grid.dim {
            let (d, s) = apply_along_axis(&data, &shape, a, &rows);
            data = d;
            shape = s;
        }
        ComplexField {
            grid: *target,
            values: data,
        }
    }
}

/// Resamples `f` at `scale * x` for every point `x` of `target`.
pub fn resample_scaled(f: &ComplexField, scale: f64, target: &GridSpec) -> Result<ComplexField> {
    if f.grid.dim != target.dim {
        return Err(Error::GridMismatch("dimension".into()));
    }
    Ok(TrigInterpolant::new(f).eval_scaled(scale, target))
}

fn bump_edge(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

fn bump_edge_derivative(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp() / (s * s)
    }
}

/// C-infinity step: 0 for `s <= 0`, 1 for `s >= 1`.
pub fn smooth_step(s: f64) -> f64 {
    let p = bump_edge(s);
    let q = bump_edge(1.0 - s);
    if p + q == 0.0 {
        return if s >= 1.0 { 1.0 } else { 0.0 };
    }
    p / (p + q)
}

pub fn smooth_step_derivative(s: f64) -> f64 {
    let p = bump_edge(s);
    let q = bump_edge(1.0 - s);
    let d = p + q;
    if d == 0.0 {
        return 0.0;
    }
    (bump_edge_derivative(s) * q + p * bump_edge_derivative(1.0 - s)) / (d * d)
}

/// Smooth radial cutoff equal to 1 for `|x| <= inner` and 0 for `|x| >= outer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialCutoff {
    pub inner: f64,
    pub outer: f64,
}

impl RadialCutoff {
    pub fn new(inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner) {
            return Err(Error::Param(format!("cutoff radii {inner}, {outer}")));
        }
        Ok(Self { inner, outer })
    }

    /// Default cutoff for a box: vanishing from 3L/4, with a wide transition
    /// starting at L/16 so that cut-off phases stay resolved.
    pub fn for_box(grid: &GridSpec) -> Self {
        Self {
            inner: grid.half_width / 16.0,
            outer: 0.75 * grid.half_width,
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        1.0 - smooth_step((r - self.inner) / (self.outer - self.inner))
    }

    /// Gradient at `x` (dimension `dim`).
    pub fn gradient(&self, x: &[f64; 3], dim: usize) -> [f64; 3] {
        let r = x[..dim].iter().map(|c| c * c).sum::<f64>().sqrt();
        let mut g = [0.0; 3];
        if r == 0.0 {
            return g;
        }
        let w = self.outer - self.inner;
        let d = -smooth_step_derivative((r - self.inner) / w) / w;
        for a in 0..dim {
            g[a] = d * x[a] / r;
        }
        g
    }
}
