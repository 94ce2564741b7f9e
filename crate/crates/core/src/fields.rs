//! Magnetic and scalar potentials, the tensor `B = DA - DA^t`, the
//! tangential field `Psi^j = sum_k x_k B_jk`, and the hypothesis constants.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    spectral_gradient, ComplexField, GridSpec, TrigInterpolant, VectorField,
};

/// Gradient generator of a pure-gauge potential `A = grad psi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GaugeGenerator {
    /// `psi = x1 x2`
    X1X2,
    /// `psi = |x|^2 / 2`
    HalfRadiusSquared,
}

impl GaugeGenerator {
    pub fn value(&self, x: &[f64; 3]) -> f64 {
        match self {
            GaugeGenerator::X1X2 => x[0] * x[1],
            GaugeGenerator::HalfRadiusSquared => 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    Zero,
    PureGauge(GaugeGenerator),
    ConstantField { strength: f64 },
    /// Curl reading: `A = (x1 x3, x2 x3, -(x1^2 + x2^2)) / |x|^2`.
    BlockField3d,
    /// Matrix reading: closed field `B = M_3 / rho^2`, `rho = |(x1, x2)|`.
    BlockMatrix3d,
    /// `A = (-x2, x1) / |x|^2`
    AharonovBohm2d,
    Custom(VectorField),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    /// Core radius for the singular kinds; `None` means `4h`.
    pub core_radius: Option<f64>,
}

/// How singular kinds are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// `|x|^2` replaced by `max(|x|^2, rho0^2)`.
    Regularized,
    /// Unregularized formulas where they are locally bounded along rays
    /// (Aharonov-Bohm and the curl block field); regularized otherwise.
    Ray,
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind) -> Self {
        Self {
            kind,
            core_radius: None,
        }
    }

    pub fn zero() -> Self {
        Self::new(PotentialKind::Zero)
    }

    pub fn pure_gauge(g: GaugeGenerator) -> Self {
        Self::new(PotentialKind::PureGauge(g))
    }

    pub fn constant_field(strength: f64) -> Self {
        Self::new(PotentialKind::ConstantField { strength })
    }

    pub fn with_core_radius(mut self, rho0: f64) -> Self {
        self.core_radius = Some(rho0);
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PotentialKind::Zero => "zero",
            PotentialKind::PureGauge(_) => "pure_gauge",
            PotentialKind::ConstantField { .. } => "constant_field",
            PotentialKind::BlockField3d => "block_field_3d",
            PotentialKind::BlockMatrix3d => "block_matrix_3d",
            PotentialKind::AharonovBohm2d => "aharonov_bohm_2d",
            PotentialKind::Custom(_) => "custom",
        }
    }

    pub fn is_singular(&self) -> bool {
        matches!(
            self.kind,
            PotentialKind::BlockField3d | PotentialKind::BlockMatrix3d | PotentialKind::AharonovBohm2d
        )
    }

    pub fn has_closed_form(&self) -> bool {
        !matches!(self.kind, PotentialKind::Custom(_))
    }

    pub fn resolved_core_radius(&self, grid: &GridSpec) -> f64 {
        self.core_radius.unwrap_or(4.0 * grid.spacing())
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        match &self.kind {
            PotentialKind::ConstantField { strength } if !strength.is_finite() => {
                return Err(Error::Potential(format!("field strength {strength} is not finite")))
            }
            PotentialKind::BlockField3d | PotentialKind::BlockMatrix3d if grid.dim != 3 => {
                return Err(Error::Potential(format!("{} needs dim = 3", self.name())))
            }
            PotentialKind::AharonovBohm2d if grid.dim != 2 => {
                return Err(Error::Potential("aharonov_bohm_2d needs dim = 2".into()))
            }
            PotentialKind::Custom(f) => {
                grid.check_same(&f.grid)?;
                if f.components.len() != grid.dim {
                    return Err(Error::Potential("custom component count".into()));
                }
                if f.components.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("custom potential".into()));
                }
            }
            _ => {}
        }
        if let Some(r) = self.core_radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Potential(format!("core radius {r} must be positive")));
            }
        }
        Ok(())
    }

    pub fn evaluator(&self, grid: &GridSpec) -> Result<PotentialEvaluator> {
        self.validate(grid)?;
        let custom = match &self.kind {
            PotentialKind::Custom(f) => {
                let a: Vec<TrigInterpolant> = f
                    .components
                    .iter()
                    .map(|c| TrigInterpolant::from_real(*grid, c))
                    .collect();
                let psi = psi_field(&spectral_tensor(f));
                let p: Vec<TrigInterpolant> = psi
                    .components
                    .iter()
                    .map(|c| TrigInterpolant::from_real(*grid, c))
                    .collect();
                Some((a, p))
            }
            _ => None,
        };
        Ok(PotentialEvaluator {
            kind: self.kind.clone(),
            dim: grid.dim,
            rho0: self.resolved_core_radius(grid),
            custom,
        })
    }
}

/// Pointwise evaluation of a potential, its Jacobian and `Psi`.
#[derive(Debug, Clone)]
pub struct PotentialEvaluator {
    kind: PotentialKind,
    dim: usize,
    rho0: f64,
    custom: Option<(Vec<TrigInterpolant>, Vec<TrigInterpolant>)>,
}

type Mat3 = [[f64; 3]; 3];

fn norm2(x: &[f64; 3]) -> f64 {
    x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
}

/// Value and Jacobian of `P / D` with `D = max(r2, floor)` and `dr2 = 2 x` (masked).
fn quotient(p: [f64; 3], dp: Mat3, r2: f64, dr2: [f64; 3], floor: f64) -> ([f64; 3], Mat3) {
    let outside = r2 > floor;
    let d = if outside { r2 } else { floor };
    let mut a = [0.0; 3];
    let mut j = [[0.0; 3]; 3];
    for k in 0..3 {
        a[k] = p[k] / d;
        for l in 0..3 {
            let dd = if outside { dr2[l] } else { 0.0 };
            j[k][l] = dp[k][l] / d - p[k] * dd / (d * d);
        }
    }
    (a, j)
}

impl PotentialEvaluator {
    pub fn core_radius(&self) -> f64 {
        self.rho0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn floor(&self, sampling: Sampling) -> f64 {
        match (sampling, &self.kind) {
            (Sampling::Ray, PotentialKind::BlockField3d | PotentialKind::AharonovBohm2d) => 0.0,
            _ => self.rho0 * self.rho0,
        }
    }

    /// `A(x)` and `J[k][j] = d_j A^k(x)`. Custom kinds return a zero Jacobian.
    pub fn value_and_jacobian(&self, x: &[f64; 3], sampling: Sampling) -> ([f64; 3], Mat3) {
        let z = [[0.0; 3]; 3];
        match &self.kind {
            PotentialKind::Zero => ([0.0; 3], z),
            PotentialKind::PureGauge(GaugeGenerator::X1X2) => {
                let mut j = z;
                j[0][1] = 1.0;
                j[1][0] = 1.0;
                ([x[1], x[0], 0.0], j)
            }
            PotentialKind::PureGauge(GaugeGenerator::HalfRadiusSquared) => {
                let mut j = z;
                let mut a = [0.0; 3];
                for k in 0..self.dim {
                    j[k][k] = 1.0;
                    a[k] = x[k];
                }
                (a, j)
            }
            PotentialKind::ConstantField { strength } => {
                let h = 0.5 * strength;
                let mut j = z;
                j[0][1] = -h;
                j[1][0] = h;
                ([-h * x[1], h * x[0], 0.0], j)
            }
            PotentialKind::AharonovBohm2d => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                if r2 == 0.0 && self.floor(sampling) == 0.0 {
                    return ([0.0; 3], z);
                }
                let mut dp = z;
                dp[0][1] = -1.0;
                dp[1][0] = 1.0;
                quotient(
                    [-x[1], x[0], 0.0],
                    dp,
                    r2,
                    [2.0 * x[0], 2.0 * x[1], 0.0],
                    self.floor(sampling),
                )
            }
            PotentialKind::BlockField3d => {
                let r2 = norm2(x);
                if r2 == 0.0 && self.floor(sampling) == 0.0 {
                    return ([0.0; 3], z);
                }
                let p = [x[0] * x[2], x[1] * x[2], -(x[0] * x[0] + x[1] * x[1])];
                let dp = [
                    [x[2], 0.0, x[0]],
                    [0.0, x[2], x[1]],
                    [-2.0 * x[0], -2.0 * x[1], 0.0],
                ];
                quotient(p, dp, r2, [2.0 * x[0], 2.0 * x[1], 2.0 * x[2]], self.floor(sampling))
            }
            PotentialKind::BlockMatrix3d => {
                let s = x[0] * x[0] + x[1] * x[1];
                let s0 = self.rho0 * self.rho0;
                let (q, dq) = if s < s0 {
                    (0.5 / s0, 0.0)
                } else {
                    let l = (s / s0).ln();
                    ((l + 1.0) / (2.0 * s), -l / (2.0 * s * s))
                };
                let a = [-x[1] * q, x[0] * q, 0.0];
                let mut j = z;
                j[0][0] = -2.0 * x[0] * x[1] * dq;
                j[0][1] = -q - 2.0 * x[1] * x[1] * dq;
                j[1][0] = q + 2.0 * x[0] * x[0] * dq;
                j[1][1] = 2.0 * x[0] * x[1] * dq;
                (a, j)
            }
            PotentialKind::Custom(_) => {
                let (a_int, _) = self.custom.as_ref().expect("custom interpolants");
                let mut a = [0.0; 3];
                for (k, it) in a_int.iter().enumerate() {
                    a[k] = it.eval(&x[..]).re;
                }
                (a, z)
            }
        }
    }

    pub fn value(&self, x: &[f64; 3], sampling: Sampling) -> [f64; 3] {
        self.value_and_jacobian(x, sampling).0
    }

    /// `B_jk = d_j A^k - d_k A^j` at `x`.
    pub fn tensor_at(&self, x: &[f64; 3], sampling: Sampling) -> Mat3 {
        let (_, j) = self.value_and_jacobian(x, sampling);
        let mut b = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                b[r][c] = j[c][r] - j[r][c];
            }
        }
        b
    }

    /// `Psi^j(x) = sum_k x_k B_jk(x)`.
    pub fn psi_at(&self, x: &[f64; 3], sampling: Sampling) -> [f64; 3] {
        if let Some((_, p_int)) = &self.custom {
            let mut p = [0.0; 3];
            for (k, it) in p_int.iter().enumerate() {
                p[k] = it.eval(&x[..]).re;
            }
            return p;
        }
        let b = self.tensor_at(x, sampling);
        let mut p = [0.0; 3];
        for j in 0..self.dim {
            for k in 0..self.dim {
                p[j] += x[k] * b[j][k];
            }
        }
        p
    }
}

/// Samples of `A` on the grid (singular kinds core-regularized).
pub fn eval_potential(spec: &PotentialSpec, grid: &GridSpec) -> Result<VectorField> {
    if let PotentialKind::Custom(f) = &spec.kind {
        spec.validate(grid)?;
        return Ok(f.clone());
    }
    let ev = spec.evaluator(grid)?;
    Ok(VectorField::from_fn(*grid, |x| ev.value(x, Sampling::Regularized)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagneticTensor {
    pub grid: GridSpec,
    /// `entries[j][k]` holds `B_jk` at every grid point.
    pub entries: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorMode {
    Analytic,
    Spectral,
}

impl MagneticTensor {
    pub fn at(&self, idx: usize) -> Mat3 {
        let mut b = [[0.0; 3]; 3];
        for j in 0..self.grid.dim {
            for k in 0..self.grid.dim {
                b[j][k] = self.entries[j][k][idx];
            }
        }
        b
    }

    /// `max |B_jk + B_kj|`
    pub fn antisymmetry_defect(&self) -> f64 {
        let d = self.grid.dim;
        let mut m: f64 = 0.0;
        for j in 0..d {
            for k in 0..d {
                for i in 0..self.grid.len() {
                    m = m.max((self.entries[j][k][i] + self.entries[k][j][i]).abs());
                }
            }
        }
        m
    }

    /// Row vector `v^t B` at every point.
    pub fn contract_left(&self, v: &[f64; 3]) -> VectorField {
        let d = self.grid.dim;
        let mut out = VectorField::zeros(self.grid);
        for k in 0..d {
            for j in 0..d {
                let e = &self.entries[j][k];
                for (o, &b) in out.components[k].iter_mut().zip(e) {
                    *o += v[j] * b;
                }
            }
        }
        out
    }
}

/// Magnetic tensor of a potential spec, analytic (closed form) or spectral.
pub fn magnetic_tensor(spec: &PotentialSpec, grid: &GridSpec, mode: TensorMode) -> Result<MagneticTensor> {
    match mode {
        TensorMode::Spectral => Ok(spectral_tensor(&eval_potential(spec, grid)?)),
        TensorMode::Analytic => {
            if !spec.has_closed_form() {
                return Err(Error::Potential("analytic tensor requested for a custom potential".into()));
            }
            let ev = spec.evaluator(grid)?;
            let d = grid.dim;
            let mut entries = vec![vec![vec![0.0; grid.len()]; d]; d];
            for i in 0..grid.len() {
                let b = ev.tensor_at(&grid.point(i), Sampling::Regularized);
                for j in 0..d {
                    for k in 0..d {
                        entries[j][k][i] = b[j][k];
                    }
                }
            }
            Ok(MagneticTensor { grid: *grid, entries })
        }
    }
}

/// `B_jk = d_j A^k - d_k A^j` with spectral derivatives of sampled `A`.
pub fn spectral_tensor(a: &VectorField) -> MagneticTensor {
    let grid = a.grid;
    let d = grid.dim;
    // jac[k][j] = d_j A^k
    let jac: Vec<Vec<Vec<f64>>> = a
        .components
        .iter()
        .map(|c| {
            spectral_gradient(&ComplexField::from_real(grid, c))
                .into_iter()
                .map(|g| g.values.iter().map(|z| z.re).collect())
                .collect()
        })
        .collect();
    let mut entries = vec![vec![vec![0.0; grid.len()]; d]; d];
    for j in 0..d {
        for k in 0..d {
            if j == k {
                continue;
            }
            entries[j][k] = jac[k][j].iter().zip(&jac[j][k]).map(|(p, q)| p - q).collect();
        }
    }
    MagneticTensor { grid, entries }
}

/// `Psi^j = sum_k x_k B_jk` at every grid point.
pub fn psi_field(b: &MagneticTensor) -> VectorField {
    let grid = b.grid;
    let d = grid.dim;
    let mut out = VectorField::zeros(grid);
    for i in 0..grid.len() {
        let x = grid.point(i);
        for j in 0..d {
            out.components[j][i] = (0..d).map(|k| x[k] * b.entries[j][k][i]).sum();
        }
    }
    out
}

/// Spatial profile of a scalar potential or forcing term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ScalarProfile {
    Zero,
    Constant { value: Complex64Repr },
    /// `value * exp(-|x|^2 / width^2)`
    Gaussian { value: Complex64Repr, width: f64 },
}

/// Serializable complex number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Complex64Repr {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for Complex64Repr {
    fn from(z: Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

impl From<Complex64Repr> for Complex64 {
    fn from(z: Complex64Repr) -> Self {
        Complex64::new(z.re, z.im)
    }
}

/// `profile(x) * exp(i frequency t)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarSpec {
    pub profile: ScalarProfile,
    pub frequency: f64,
}

impl Default for ScalarSpec {
    fn default() -> Self {
        Self::zero()
    }
}

impl ScalarSpec {
    pub fn zero() -> Self {
        Self {
            profile: ScalarProfile::Zero,
            frequency: 0.0,
        }
    }

    pub fn constant(value: Complex64) -> Self {
        Self {
            profile: ScalarProfile::Constant { value: value.into() },
            frequency: 0.0,
        }
    }

    pub fn gaussian(value: Complex64, width: f64) -> Self {
        Self {
            profile: ScalarProfile::Gaussian {
                value: value.into(),
                width,
            },
            frequency: 0.0,
        }
    }

    pub fn with_frequency(mut self, w: f64) -> Self {
        self.frequency = w;
        self
    }

    pub fn is_zero(&self) -> bool {
        match self.profile {
            ScalarProfile::Zero => true,
            ScalarProfile::Constant { value } | ScalarProfile::Gaussian { value, .. } => {
                value.re == 0.0 && value.im == 0.0
            }
        }
    }

    pub fn is_real(&self) -> bool {
        match self.profile {
            ScalarProfile::Zero => true,
            ScalarProfile::Constant { value } | ScalarProfile::Gaussian { value, .. } => {
                value.im == 0.0 && self.frequency == 0.0
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ScalarProfile::Gaussian { width, .. } = self.profile {
            if !(width.is_finite() && width > 0.0) {
                return Err(Error::Param(format!("gaussian width {width} must be positive")));
            }
        }
        if !self.frequency.is_finite() {
            return Err(Error::Param("scalar frequency is not finite".into()));
        }
        Ok(())
    }

    pub fn at(&self, x: &[f64; 3], t: f64) -> Complex64 {
        let base: Complex64 = match self.profile {
            ScalarProfile::Zero => return Complex64::new(0.0, 0.0),
            ScalarProfile::Constant { value } => value.into(),
            ScalarProfile::Gaussian { value, width } => {
                Complex64::from(value) * (-norm2(x) / (width * width)).exp()
            }
        };
        base * Complex64::from_polar(1.0, self.frequency * t)
    }

    pub fn sample(&self, grid: &GridSpec, t: f64) -> Vec<Complex64> {
        (0..grid.len()).map(|i| self.at(&grid.point(i), t)).collect()
    }

    pub fn sample_real(&self, grid: &GridSpec) -> Vec<f64> {
        self.sample(grid, 0.0).iter().map(|z| z.re).collect()
    }

    /// `sup |value|` over space and time.
    pub fn sup(&self) -> f64 {
        match self.profile {
            ScalarProfile::Zero => 0.0,
            ScalarProfile::Constant { value } | ScalarProfile::Gaussian { value, .. } => {
                Complex64::from(value).norm()
            }
        }
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    /// `sup |Psi|` over grid points outside the regularization core.
    pub sup_xtB: f64,
    /// Same supremum including the core.
    pub sup_xtB_with_core: f64,
    pub M_A: f64,
    pub transversality_defect: f64,
    pub kernel_defect: f64,
    pub M1: f64,
    pub M2: f64,
    pub N1: f64,
    pub excluded_core_radius: f64,
}

/// Grid suprema of the quantities entering the rigidity hypotheses.
#[allow(clippy::too_many_arguments)]
pub fn hypothesis_report(
    spec: &PotentialSpec,
    grid: &GridSpec,
    v: &[f64; 3],
    v1: &ScalarSpec,
    v2: &ScalarSpec,
    alpha: f64,
    beta: f64,
) -> Result<HypothesisReport> {
    let vn = norm2(v).sqrt();
    if (vn - 1.0).abs() > 1e-12 {
        return Err(Error::Param(format!("v must be a unit vector, |v| = {vn}")));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Param("alpha and beta must be positive".into()));
    }
    if !v1.is_real() {
        return Err(Error::Param("V1 must be real and static".into()));
    }
    v1.validate()?;
    v2.validate()?;
    let tensor = if spec.has_closed_form() {
        magnetic_tensor(spec, grid, TensorMode::Analytic)?
    } else {
        spectral_tensor(&eval_potential(spec, grid)?)
    };
    let psi = psi_field(&tensor);
    let a = eval_potential(spec, grid)?;
    let excluded = if spec.is_singular() {
        2.0 * spec.resolved_core_radius(grid)
    } else {
        0.0
    };
    let kernel = tensor.contract_left(v);
    let xa = a.radial_component();
    let mut sup_out: f64 = 0.0;
    let mut sup_all: f64 = 0.0;
    let mut kernel_defect: f64 = 0.0;
    let mut transversality: f64 = 0.0;
    for i in 0..grid.len() {
        let x = grid.point(i);
        let p = psi.at(i);
        let m = norm2(&p).sqrt();
        sup_all = sup_all.max(m);
        if norm2(&x).sqrt() >= excluded {
            sup_out = sup_out.max(m);
        }
        let k = kernel.at(i);
        kernel_defect = kernel_defect.max(norm2(&k).sqrt());
        transversality = transversality.max(xa[i].abs());
    }
    let m1 = v1.sample_real(grid).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut weighted_sup: f64 = 0.0;
    let mut im_sup: f64 = 0.0;
    for &t in &[0.0, 0.5, 1.0] {
        let scale = alpha * t + beta * (1.0 - t);
        for i in 0..grid.len() {
            let x = grid.point(i);
            let val = v2.at(&x, t);
            im_sup = im_sup.max(val.im.abs());
            if val.norm() > 0.0 {
                let lw = norm2(&x) / (scale * scale) + val.norm().ln();
                weighted_sup = weighted_sup.max(lw.exp());
            }
        }
    }
    Ok(HypothesisReport {
        sup_xtB: sup_out,
        sup_xtB_with_core: sup_all,
        M_A: 4.0 * sup_out * sup_out,
        transversality_defect: transversality,
        kernel_defect,
        M1: m1,
        M2: weighted_sup * im_sup.exp(),
        N1: im_sup.exp(),
        excluded_core_radius: excluded,
    })
}
