//! The four-step chain (gauge reduction, heat regularization, Appell
//! transformation, weighted monitors) run as one numerical experiment.

pub mod cli;
pub mod config;
pub mod report;

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::carleman::{
    carleman_sweep, cutoff_product, sweep_cases, unit_times, CarlemanField, CarlemanRow, CARLEMAN_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::evolve::{evolve, FlowParams, Potentials, Trajectory};
use crate::fields::{eval_potential, hypothesis_report, HypothesisReport, PotentialKind, PotentialSpec, ScalarSpec};
use crate::gauge::{reduce, GaugeDefects};
use crate::grid::{l2_norm, ComplexField, GridSpec, VectorField};
use crate::monitors::{
    convexity_check, exp_weighted_norm, gradient_bound_check, monitor_rows, weighted_H, ConvexityVerdict,
    MonitorRow, WeightSpec,
};
use crate::transform::{
    appell_potentials, appell_residual, pointwise_norm_identities, transformed_trajectory, AppellParams, Appelled,
    SourceTerms,
};

pub use config::ExperimentConfig;
pub use report::{Pair, PipelineReport};

/// `u0 = exp(-|x|^2 / width^2)`
pub fn initial_datum(cfg: &ExperimentConfig) -> Result<ComplexField> {
    let grid = cfg.grid_spec()?;
    let w2 = cfg.initial.width * cfg.initial.width;
    Ok(ComplexField::from_fn(grid, |x| {
        Complex64::new((-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / w2).exp(), 0.0)
    }))
}

fn time_field(spec: ScalarSpec, grid: GridSpec) -> crate::evolve::TimeField {
    Arc::new(move |t| spec.sample(&grid, t))
}

/// `A`, `V1`, `V2` and `F` of a config on its grid.
pub fn potentials_for(spec: &PotentialSpec, cfg: &ExperimentConfig) -> Result<Potentials> {
    let grid = cfg.grid_spec()?;
    let mut pot = Potentials::free(grid).with_spec(spec)?.with_v1(cfg.v1()?.sample_real(&grid));
    let v2 = cfg.v2()?;
    if !v2.is_zero() {
        pot = pot.with_v2(time_field(v2, grid));
    }
    let f = cfg.forcing()?;
    if !f.is_zero() {
        pot = pot.with_forcing(time_field(f, grid));
    }
    Ok(pot)
}

/// `e^{tau (Delta_A + V1)} u` by RK4 on the heat flow (`V2`, `F` ignored).
pub fn heat_semigroup(u: &ComplexField, pot: &Potentials, tau: f64) -> Result<ComplexField> {
    if tau == 0.0 {
        return Ok(u.clone());
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Param(format!("heat time {tau} must lie in (0, 1]")));
    }
    let heat = Potentials {
        v2: None,
        forcing: None,
        ..pot.clone()
    };
    let probe = FlowParams::new(1.0, 0.0, 1.0, tau, 1);
    let dt = (0.25 * probe.stability_bound(&u.grid)).min(tau);
    let mut p = FlowParams::new(1.0, 0.0, dt, tau, 1);
    p.store_every = p.steps();
    Ok(evolve(u, &heat, &p)?.final_state().clone())
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize)]
pub struct GaugeSummary {
    pub kind: String,
    pub reduced_kind: String,
    pub defects: GaugeDefects,
    /// `max |A~ - A|`
    pub fixed_point_defect: f64,
    /// `max |A~|`
    pub reduced_sup: f64,
}

/// Gauge reduction. The reduced potential is returned as a closed-form spec when the
/// sampled reduction matches one (zero, or `A` itself) to `gauge_tol`.
pub fn gauge_stage(cfg: &ExperimentConfig) -> Result<(PotentialSpec, GaugeSummary)> {
    let grid = cfg.grid_spec()?;
    let spec = cfg.potential_spec()?;
    let (t, defects) = reduce(&spec, &grid, cfg.potential.quadrature_nodes)?;
    let a = eval_potential(&spec, &grid)?;
    let reduced = &t.transformed_potential;
    let fixed = reduced.sub(&a).max_norm();
    let sup = reduced.max_norm();
    let tol = cfg.pipeline.gauge_tol;
    let out = if sup <= tol {
        PotentialSpec::zero()
    } else if fixed <= tol * (1.0 + a.max_norm()) {
        spec.clone()
    } else {
        PotentialSpec::new(PotentialKind::Custom(reduced.clone()))
    };
    let summary = GaugeSummary {
        kind: spec.name().into(),
        reduced_kind: out.name().into(),
        defects,
        fixed_point_defect: fixed,
        reduced_sup: sup,
    };
    Ok((out, summary))
}

/// `u_eps(t) = e^{eps t L} u(t)` and `F_eps(t) = (i/(eps+i)) e^{eps t L}(V2 u(t))`.
pub struct Regularized {
    pub eps: f64,
    pub u: Trajectory,
    pub forcing: Option<Trajectory>,
}

pub fn regularize(u: &Trajectory, pot: &Potentials, eps: f64) -> Result<Regularized> {
    let flow = FlowParams { a: eps, ..u.params };
    let mut us = Vec::with_capacity(u.times.len());
    let mut fs = Vec::new();
    let c = Complex64::i() / Complex64::new(eps, 1.0);
    for (&t, snap) in u.times.iter().zip(&u.snapshots) {
        us.push(heat_semigroup(snap, pot, eps * t)?);
        if let Some(v2) = &pot.v2 {
            let prod = snap.mul(&v2(t));
            fs.push(heat_semigroup(&prod, pot, eps * t)?.scale(c));
        }
    }
    let forcing = (!fs.is_empty()).then(|| Trajectory {
        times: u.times.clone(),
        snapshots: fs,
        params: flow,
    });
    Ok(Regularized {
        eps,
        u: Trajectory {
            times: u.times.clone(),
            snapshots: us,
            params: flow,
        },
        forcing,
    })
}

fn gaussian_exponent(grid: &GridSpec, c: f64) -> Vec<f64> {
    grid.radius_squared().iter().map(|r| c * r).collect()
}

fn sup_abs(v: &[Complex64]) -> f64 {
    v.iter().fold(0.0, |m, z| m.max(z.norm()))
}

fn nearest_index(times: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (k, &s) in times.iter().enumerate() {
        if (s - t).abs() < (times[best] - t).abs() {
            best = k;
        }
    }
    best
}

/// `alpha_eps^2 = alpha^2 + 4 eps`
pub fn regularized_parameters(alpha: f64, beta: f64, eps: f64) -> (f64, f64) {
    ((alpha * alpha + 4.0 * eps).sqrt(), (beta * beta + 4.0 * eps).sqrt())
}

/// The five regularization inequalities as `(lhs, rhs)` pairs.
pub fn regularization_pairs(
    cfg: &ExperimentConfig,
    u: &Trajectory,
    reg: &Regularized,
    pot: &Potentials,
) -> Result<Vec<Pair>> {
    let grid = u.grid();
    let (alpha, beta) = (cfg.weights.alpha, cfg.weights.beta);
    let eps = reg.eps;
    let (ae, be) = regularized_parameters(alpha, beta, eps);
    let tol = cfg.pipeline.pair_tol;
    let v1_sup = pot.v1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let growth = (eps * v1_sup).exp();
    let last = u.times.len() - 1;
    let mut pairs = vec![
        Pair::new(
            "regularized-initial-decay",
            exp_weighted_norm(&reg.u.snapshots[0], &gaussian_exponent(&grid, 1.0 / (be * be)))?,
            exp_weighted_norm(&u.snapshots[0], &gaussian_exponent(&grid, 1.0 / (beta * beta)))?,
            tol,
        ),
        Pair::new(
            "regularized-final-decay",
            exp_weighted_norm(&reg.u.snapshots[last], &gaussian_exponent(&grid, 1.0 / (ae * ae)))?,
            growth * exp_weighted_norm(&u.snapshots[last], &gaussian_exponent(&grid, 1.0 / (alpha * alpha)))?,
            tol,
        ),
    ];
    for q in [0.25, 0.5, 0.75, 1.0] {
        let k = nearest_index(&u.times, q * u.t_end());
        let t = u.times[k];
        let un = l2_norm(&u.snapshots[k]);
        pairs.push(Pair::new(
            format!("regularized-mass@t={t}"),
            l2_norm(&reg.u.snapshots[k]),
            growth * un,
            tol,
        ));
        if let (Some(f), Some(v2)) = (&reg.forcing, &pot.v2) {
            let v2t = v2(t);
            pairs.push(Pair::new(
                format!("regularized-forcing-mass@t={t}"),
                l2_norm(&f.snapshots[k]),
                growth * sup_abs(&v2t) * un,
                tol,
            ));
            let d = ae * t + be * (1.0 - t);
            let phi = gaussian_exponent(&grid, 1.0 / (d * d));
            let weighted_sup = v2t
                .iter()
                .zip(&phi)
                .filter(|(v, _)| v.norm() > 0.0)
                .map(|(v, p)| v.norm().ln() + p)
                .fold(f64::NEG_INFINITY, f64::max)
                .exp();
            pairs.push(Pair::new(
                format!("regularized-forcing-decay@t={t}"),
                exp_weighted_norm(&f.snapshots[k], &phi)?,
                growth * weighted_sup * un,
                tol,
            ));
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularizationSummary {
    pub eps: f64,
    pub alpha_eps: f64,
    pub beta_eps: f64,
    pub gamma_eps: f64,
    pub schrodinger_mass_drift: f64,
    /// Relative gap to a direct `(eps + i)` evolution, when `V2 = 0`.
    pub direct_flow_gap: Option<f64>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize)]
pub struct AppellSummary {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub target_half_width: f64,
    pub residual: f64,
    pub x_dot_A: f64,
    pub x_dot_dA_dt: f64,
    pub identity_gaps: Vec<(String, f64)>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize)]
pub struct MonitorSummary {
    pub weight_scale: f64,
    pub gamma: f64,
    pub verdict: ConvexityVerdict,
    pub gradient_lhs: f64,
    pub gradient_bracket: f64,
    pub gradient_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundEntry {
    pub eps: f64,
    pub min_norm: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundSummary {
    pub n1: f64,
    pub entries: Vec<LowerBoundEntry>,
    /// Largest sampled `eps` for which the bound held.
    pub eps0: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CarlemanSummary {
    pub sup_xtb: f64,
    pub admissible_cells: usize,
    pub max_admissible_ratio: f64,
}

/// Everything a pipeline run produces.
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub monitors: Vec<MonitorRow>,
    pub carleman: Vec<CarlemanRow>,
}

fn magnetic_at(terms: &SourceTerms, params: &AppellParams, t: f64, target: &GridSpec) -> Result<Option<VectorField>> {
    Ok(appell_potentials(terms, params, t, target)?.magnetic)
}

/// Grid of the transformed solution: same resolution, box shrunk by the
/// largest spatial scale of the map.
pub fn appell_target(grid: &GridSpec, params: &AppellParams) -> Result<GridSpec> {
    GridSpec::new(grid.dim, grid.half_width / params.max_scale() * (1.0 - 1e-12), grid.points_per_axis)
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn hypotheses(cfg: &ExperimentConfig, spec: &PotentialSpec) -> Result<HypothesisReport> {
    let grid = cfg.grid_spec()?;
    let mut v = [0.0; 3];
    v[cfg.carleman.v - 1] = 1.0;
    hypothesis_report(spec, &grid, &v, &cfg.v1()?, &cfg.v2()?, cfg.weights.alpha, cfg.weights.beta)
}

pub fn run_hypotheses(cfg: &ExperimentConfig) -> Result<HypothesisReport> {
    hypotheses(cfg, &cfg.potential_spec()?)
}

fn check_pipeline_config(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.flow.a != 0.0 || cfg.flow.b != 1.0 {
        return Err(Error::Config(format!(
            "pipeline runs the Schrodinger flow: [flow] needs a = 0 and b = 1, got a = {}, b = {}",
            cfg.flow.a, cfg.flow.b
        )));
    }
    if cfg.flow.t_end != 1.0 {
        return Err(Error::Config(format!("pipeline needs [flow] t_end = 1, got {}", cfg.flow.t_end)));
    }
    if !cfg.forcing()?.is_zero() {
        return Err(Error::Config(
            "pipeline takes F = V2 u; set [scalar] forcing_kind = zero".into(),
        ));
    }
    Ok(())
}

/// Gauge reduction, regularization, Appell transform and monitors, plus the optional Carleman sweep.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    check_pipeline_config(cfg)?;
    let mut report = PipelineReport::new(cfg.hash());

    let hyp = stage("hypotheses", run_hypotheses(cfg))?;
    report.push_stage("hypotheses", true, &hyp)?;

    // gauge reduction
    let (reduced, gsum) = stage("gauge", gauge_stage(cfg))?;
    report.defect("gauge.transversality", gsum.defects.transversality_defect);
    report.defect("gauge.dA_transversality", gsum.defects.dA_transversality_defect);
    report.defect("gauge.cross_identity", gsum.defects.cross_identity_defect);
    report.defect("gauge.fixed_point", gsum.fixed_point_defect);
    let gauge_pass = gsum.defects.transversality_defect <= cfg.pipeline.gauge_tol;
    report.push_stage("gauge", gauge_pass, &gsum)?;

    // heat regularization
    let eps = cfg.flow.eps_reg;
    let pot = stage("regularization", potentials_for(&reduced, cfg))?;
    let u0 = initial_datum(cfg)?;
    let u = stage("regularization", evolve(&u0, &pot, &cfg.flow_params()?))?;
    let reg = stage("regularization", regularize(&u, &pot, eps))?;
    let pairs = stage("regularization", regularization_pairs(cfg, &u, &reg, &pot))?;
    let n0 = l2_norm(&u0);
    let drift = u.snapshots.iter().fold(0.0f64, |m, s| m.max((l2_norm(s) - n0).abs() / n0));
    let direct_flow_gap = if pot.v2.is_none() {
        let p = FlowParams { a: eps, ..cfg.flow_params()? };
        let d = stage("regularization", evolve(&u0, &pot, &p))?;
        let gap = d
            .snapshots
            .iter()
            .zip(&reg.u.snapshots)
            .fold(0.0f64, |m, (x, y)| m.max(l2_norm(&x.sub(y)) / l2_norm(y)));
        report.defect("regularization.direct_flow_gap", gap);
        Some(gap)
    } else {
        None
    };
    let (alpha_eps, beta_eps) = regularized_parameters(cfg.weights.alpha, cfg.weights.beta, eps);
    let gamma_eps = 1.0 / (alpha_eps * beta_eps);
    let reg_pass = pairs.iter().all(|p| p.pass);
    report.pairs.extend(pairs);
    report.defect("regularization.schrodinger_mass_drift", drift);
    report.push_stage(
        "regularization",
        reg_pass,
        RegularizationSummary {
            eps,
            alpha_eps,
            beta_eps,
            gamma_eps,
            schrodinger_mass_drift: drift,
            direct_flow_gap,
        },
    )?;

    // Appell transform
    let params = AppellParams::new(alpha_eps, beta_eps, eps, 1.0)?;
    let grid = cfg.grid_spec()?;
    let target = appell_target(&grid, &params)?;
    let terms = SourceTerms {
        magnetic: reduced.clone(),
        v1: cfg.v1()?,
        v2: ScalarSpec::zero(),
        forcing: reg.forcing.as_ref().map(|f| f as &dyn crate::transform::Solution),
    };
    let times = unit_times(cfg.pipeline.appell_samples);
    let appell = stage("appell", appell_stage(&reg, &terms, &params, &target, &times, gamma_eps))?;
    report.defect("appell.residual", appell.residual);
    report.defect("appell.x_dot_A", appell.x_dot_A);
    report.defect("appell.x_dot_dA_dt", appell.x_dot_dA_dt);
    for (name, gap) in &appell.identity_gaps {
        report.defect(&format!("appell.identity.{name}"), *gap);
    }
    report.push_stage("appell", true, &appell)?;

    // monitors and lower bound
    let flow = FlowParams { a: eps, ..cfg.flow_params()? };
    let tilde = stage("monitors", transformed_trajectory(&reg.u, &params, &times, &target, flow))?;
    let scale = (alpha_eps * beta_eps).sqrt();
    let weight = WeightSpec::interpolating(scale, scale)?;
    let conv = stage("monitors", weighted_H(&tilde, &weight))?;
    let verdict = stage("monitors", convexity_check(&conv, cfg.pipeline.convexity_tol))?;
    let magnetic = |t: f64| magnetic_at(&terms, &params, t, &target).ok().flatten();
    let grad = stage("monitors", gradient_bound_check(&tilde, scale, scale, &magnetic))?;
    report.defect("monitors.min_d2_logH", verdict.min_d2_logH);
    report.defect("monitors.gradient_ratio", grad.ratio);
    let monitors = monitor_rows(&conv, Some(&grad.series));
    report.push_stage(
        "monitors",
        verdict.pass,
        MonitorSummary {
            weight_scale: scale,
            gamma: gamma_eps,
            verdict: verdict.clone(),
            gradient_lhs: grad.lhs,
            gradient_bracket: grad.bracket,
            gradient_ratio: grad.ratio,
        },
    )?;

    let lower = stage("lower_bound", lower_bound_stage(cfg, &u, &pot))?;
    if let Some(e) = lower.eps0 {
        report.defect("lower_bound.eps0", e);
    }
    report.push_stage("lower_bound", true, &lower)?;

    let mut carleman = Vec::new();
    if cfg.carleman.enabled {
        let src = Appelled {
            source: &reg.u,
            params,
            target,
        };
        let sup = hyp.sup_xtB * params.max_scale().powi(2);
        let rows = stage("carleman", carleman_on_solution(cfg, &src, &terms, &params, &target, sup))?;
        let summary = carleman_summary(&rows, sup);
        let pass = rows.iter().all(|r| r.passes(CARLEMAN_TOLERANCE));
        report.push_stage("carleman", pass, &summary)?;
        carleman = rows;
    }
    Ok(PipelineOutput {
        report,
        monitors,
        carleman,
    })
}

pub fn carleman_summary(rows: &[CarlemanRow], sup: f64) -> CarlemanSummary {
    CarlemanSummary {
        sup_xtb: sup,
        admissible_cells: rows.iter().filter(|r| r.admissible).count(),
        max_admissible_ratio: rows
            .iter()
            .filter(|r| r.admissible)
            .map(|r| r.ratio)
            .fold(0.0, f64::max),
    }
}

#[allow(non_snake_case)]
fn appell_stage(
    reg: &Regularized,
    terms: &SourceTerms,
    params: &AppellParams,
    target: &GridSpec,
    times: &[f64],
    gamma: f64,
) -> Result<AppellSummary> {
    let probe = [0.25, 0.5, 0.75];
    let residual = appell_residual(&reg.u, terms, params, &probe, target, 1e-3)?;
    let h = 1e-4;
    let mut x_dot_A: f64 = 0.0;
    let mut x_dot_dA: f64 = 0.0;
    for &t in times {
        if let Some(a) = magnetic_at(terms, params, t, target)? {
            x_dot_A = x_dot_A.max(a.radial_component().iter().fold(0.0, |m, v| m.max(v.abs())));
            let (lo, hi) = ((t - h).max(0.0), (t + h).min(1.0));
            let ap = magnetic_at(terms, params, hi, target)?.expect("nonzero potential");
            let am = magnetic_at(terms, params, lo, target)?.expect("nonzero potential");
            let dr: Vec<f64> = ap
                .radial_component()
                .iter()
                .zip(am.radial_component())
                .map(|(p, m)| (p - m) / (hi - lo))
                .collect();
            x_dot_dA = x_dot_dA.max(dr.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    let ids = pointwise_norm_identities(&reg.u, terms, params, gamma, 0.5, target)?;
    Ok(AppellSummary {
        alpha: params.alpha,
        beta: params.beta,
        a: params.a,
        b: params.b,
        target_half_width: target.half_width,
        residual,
        x_dot_A,
        x_dot_dA_dt: x_dot_dA,
        identity_gaps: ids.iter().map(|p| (p.name.clone(), p.relative_gap())).collect(),
    })
}

/// `||u~_eps(t)|| >= ||u(0)|| / (2 N1)` for each sampled `eps`, using
/// `||u~_eps(t)|| = ||e^{c(s)|x|^2} u_eps(s)||` at the stored `s`.
pub fn lower_bound_stage(cfg: &ExperimentConfig, u: &Trajectory, pot: &Potentials) -> Result<LowerBoundSummary> {
    let grid = u.grid();
    let hyp = run_hypotheses(cfg)?;
    let n1 = hyp.N1;
    let bound = l2_norm(&u.snapshots[0]) / (2.0 * n1);
    let mut entries = Vec::new();
    for &eps in &cfg.pipeline.eps_samples {
        let (ae, be) = regularized_parameters(cfg.weights.alpha, cfg.weights.beta, eps);
        let params = AppellParams::new(ae, be, eps, 1.0)?;
        let mut min_norm = f64::INFINITY;
        for (&s, snap) in u.times.iter().zip(&u.snapshots) {
            let ue = heat_semigroup(snap, pot, eps * s)?;
            let phi = gaussian_exponent(&grid, params.source_weight(0.0, s));
            min_norm = min_norm.min(exp_weighted_norm(&ue, &phi)?);
        }
        entries.push(LowerBoundEntry {
            eps,
            min_norm,
            bound,
            holds: min_norm >= bound,
        });
    }
    let eps0 = entries.iter().filter(|e| e.holds).map(|e| e.eps).fold(None, |m: Option<f64>, e| {
        Some(m.map_or(e, |m| m.max(e)))
    });
    Ok(LowerBoundSummary { n1, entries, eps0 })
}

/// Carleman sweep on `theta_M eta_R u~` over the configured `(mu, R)` grid.
pub fn carleman_on_solution(
    cfg: &ExperimentConfig,
    src: &dyn crate::transform::Solution,
    terms: &SourceTerms,
    params: &AppellParams,
    target: &GridSpec,
    sup: f64,
) -> Result<Vec<CarlemanRow>> {
    let c = &cfg.carleman;
    let fam = cutoff_product(src, c.cutoff_m, c.cutoff_r_time, &unit_times(c.time_samples))?;
    let cases = sweep_cases("pipeline", &c.mu, &c.r, c.eps, c.v - 1)?;
    let free = Potentials::free(*target);
    if matches!(terms.magnetic.kind, PotentialKind::Zero) {
        return carleman_sweep(&fam, CarlemanField::Static(&free), &cases, sup);
    }
    let timed = |t: f64| -> Result<Potentials> {
        let tt = appell_potentials(terms, params, t, target)?;
        match tt.magnetic {
            None => Ok(Potentials::free(*target)),
            Some(a) => Potentials::free(*target).with_magnetic(a, Some(tt.div_a)),
        }
    };
    carleman_sweep(&fam, CarlemanField::Timed(&timed), &cases, sup)
}
