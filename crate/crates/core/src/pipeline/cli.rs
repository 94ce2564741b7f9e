//! Command-line front end. Exit status: 0 when every check passes, 1 for
//! configuration, usage and I/O errors, 2 for failed checks or numerical
//! failures.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::config::ExperimentConfig;
use super::report::write_csv;
use super::{
    carleman_summary, gauge_stage, initial_datum, potentials_for, run_hypotheses, run_pipeline,
};
use crate::carleman::{
    carleman_sweep, cutoff_factory, cutoff_product, random_test_specs, sweep_cases, unit_times, write_carleman_csv,
    CarlemanField, CarlemanRow, CARLEMAN_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::evolve::evolve;
use crate::grid::{boundary_mass, l2_norm};
use crate::monitors::{convexity_check, monitor_rows, weighted_H, write_monitors_csv, WeightSpec};
use crate::transform::{appell_residual, pointwise_norm_identities, Analytic, AppellParams, SourceTerms};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "covflow", version, about = "Magnetic Schrodinger flows: simulation and inequality checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// INI experiment file; built-in defaults when omitted
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `[output] directory`
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Seed for randomized Carleman test families
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        self != Format::Json
    }

    fn json(self) -> bool {
        self != Format::Csv
    }
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Evolve the configured flow and record norms
    Evolve,
    /// Reduce the potential to the transversal gauge
    Gauge,
    /// Appell-transform the evolved solution and check the transformed equation
    Appell,
    /// Weighted log-convexity monitors on the evolved solution
    Convexity,
    /// Carleman inequality sweep over cutoffs of the evolved solution
    Carleman,
    /// Gauge reduction, regularization, Appell transform and monitors
    Pipeline,
    /// Suprema entering the rigidity hypotheses
    Hypotheses,
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    format: Format,
    seed: u64,
    quiet: bool,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        if self.format.json() {
            fs::create_dir_all(&self.out)?;
            let s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            fs::write(self.out.join(name), s + "\n")?;
        }
        Ok(())
    }

    fn path(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)?;
        Ok(self.out.join(name))
    }
}

/// Parses `args` (program name first) and runs; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    match execute(&cli) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io(_) => EXIT_CONFIG,
        Error::Stage { source, .. } => exit_code(source),
        _ => EXIT_FAIL,
    }
}

/// `COVFLOW_THREADS` sizes the rayon pool.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("COVFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("COVFLOW_THREADS must be a positive integer, got {v:?}")))?;
    // a pool built earlier in this process wins; that is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load(cli: &Cli) -> Result<Ctx> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir().to_path_buf());
    let format = match cli.format {
        Some(f) => f,
        None => Format::from_str(&cfg.output.formats, true).map_err(Error::Config)?,
    };
    Ok(Ctx {
        cfg,
        out,
        format,
        seed: cli.seed,
        quiet: cli.quiet,
    })
}

fn execute(cli: &Cli) -> Result<bool> {
    let ctx = load(cli)?;
    match cli.command {
        Command::Evolve => cmd_evolve(&ctx),
        Command::Gauge => cmd_gauge(&ctx),
        Command::Appell => cmd_appell(&ctx),
        Command::Convexity => cmd_convexity(&ctx),
        Command::Carleman => cmd_carleman(&ctx),
        Command::Pipeline => cmd_pipeline(&ctx),
        Command::Hypotheses => cmd_hypotheses(&ctx),
    }
}

#[derive(Serialize)]
struct EvolveRow {
    t: f64,
    norm: f64,
    boundary_mass: f64,
}

fn evolve_config(ctx: &Ctx) -> Result<crate::evolve::Trajectory> {
    let pot = potentials_for(&ctx.cfg.potential_spec()?, &ctx.cfg)?;
    evolve(&initial_datum(&ctx.cfg)?, &pot, &ctx.cfg.flow_params()?)
}

fn cmd_evolve(ctx: &Ctx) -> Result<bool> {
    let traj = evolve_config(ctx)?;
    let rows: Vec<EvolveRow> = traj
        .times
        .iter()
        .zip(&traj.snapshots)
        .map(|(&t, u)| EvolveRow {
            t,
            norm: l2_norm(u),
            boundary_mass: boundary_mass(u).0,
        })
        .collect();
    if ctx.format.csv() {
        write_csv(&ctx.path("evolve.csv")?, &rows)?;
    }
    ctx.json("evolve.json", &traj.manifest())?;
    let last = rows.last().expect("trajectory stores t = 0");
    ctx.say(format!("evolve: t = {} norm = {:.12e}", last.t, last.norm));
    Ok(true)
}

fn cmd_gauge(ctx: &Ctx) -> Result<bool> {
    let (_, summary) = gauge_stage(&ctx.cfg)?;
    ctx.json("gauge.json", &summary)?;
    let pass = summary.defects.transversality_defect <= ctx.cfg.pipeline.gauge_tol;
    ctx.say(format!(
        "gauge: {} -> {} transversality {:.3e} {}",
        summary.kind,
        summary.reduced_kind,
        summary.defects.transversality_defect,
        verdict(pass)
    ));
    Ok(pass)
}

#[derive(Serialize)]
struct AppellOut {
    alpha: f64,
    beta: f64,
    a: f64,
    b: f64,
    residual: f64,
    identity_gaps: Vec<(String, f64)>,
}

fn cmd_appell(ctx: &Ctx) -> Result<bool> {
    let cfg = &ctx.cfg;
    let traj = evolve_config(ctx)?;
    let params = AppellParams::new(cfg.weights.alpha, cfg.weights.beta, cfg.flow.a, cfg.flow.b)?;
    let target = super::appell_target(&traj.grid(), &params)?;
    let forcing_spec = cfg.forcing()?;
    let grid = traj.grid();
    let forcing = Analytic {
        grid,
        f: move |x: &[f64; 3], s: f64| forcing_spec.at(x, s),
    };
    let terms = SourceTerms {
        magnetic: cfg.potential_spec()?,
        v1: cfg.v1()?,
        v2: cfg.v2()?,
        forcing: (!forcing_spec.is_zero()).then_some(&forcing as &dyn crate::transform::Solution),
    };
    let residual = appell_residual(&traj, &terms, &params, &[0.25, 0.5, 0.75], &target, 1e-3)?;
    let ids = pointwise_norm_identities(&traj, &terms, &params, cfg.weights.gamma, 0.5, &target)?;
    let out = AppellOut {
        alpha: params.alpha,
        beta: params.beta,
        a: params.a,
        b: params.b,
        residual,
        identity_gaps: ids.iter().map(|p| (p.name.clone(), p.relative_gap())).collect(),
    };
    ctx.json("appell.json", &out)?;
    ctx.say(format!("appell: residual {residual:.3e}"));
    Ok(true)
}

fn cmd_convexity(ctx: &Ctx) -> Result<bool> {
    let cfg = &ctx.cfg;
    let traj = evolve_config(ctx)?;
    let weight = WeightSpec::interpolating(cfg.weights.alpha, cfg.weights.beta)?;
    let report = weighted_H(&traj, &weight)?;
    let v = convexity_check(&report, cfg.pipeline.convexity_tol)?;
    if ctx.format.csv() {
        write_monitors_csv(BufWriter::new(File::create(ctx.path("monitors.csv")?)?), &monitor_rows(&report, None))?;
    }
    ctx.json("convexity.json", &v)?;
    ctx.say(format!(
        "convexity: min d2 log H {:.3e} min d2 theta {:.3e} {}",
        v.min_d2_logH,
        v.min_d2_theta,
        verdict(v.pass)
    ));
    Ok(v.pass)
}

fn cmd_carleman(ctx: &Ctx) -> Result<bool> {
    let cfg = &ctx.cfg;
    let c = &cfg.carleman;
    let spec = cfg.potential_spec()?;
    let traj = evolve_config(ctx)?;
    let grid = traj.grid();
    let times = unit_times(c.time_samples);
    let sup = run_hypotheses(cfg)?.sup_xtB;
    let pot = crate::evolve::Potentials::free(grid).with_spec(&spec)?;
    let mut rows: Vec<CarlemanRow> = Vec::new();
    let fam = cutoff_product(&traj, c.cutoff_m, c.cutoff_r_time, &times)?;
    let cases = sweep_cases("solution", &c.mu, &c.r, c.eps, c.v - 1)?;
    rows.extend(carleman_sweep(&fam, CarlemanField::Static(&pot), &cases, sup)?);
    let extra = c.families.saturating_sub(1);
    for (k, t) in random_test_specs(ctx.seed, extra, &grid, c.cutoff_m).iter().enumerate() {
        let mut t = t.clone();
        t.cutoff_r_time = c.cutoff_r_time;
        let fam = cutoff_factory(&t, &grid, &times)?;
        let cases = sweep_cases(&format!("random{}", k + 1), &c.mu, &c.r, c.eps, c.v - 1)?;
        rows.extend(carleman_sweep(&fam, CarlemanField::Static(&pot), &cases, sup)?);
    }
    if ctx.format.csv() {
        write_carleman_csv(BufWriter::new(File::create(ctx.path("carleman.csv")?)?), &rows)?;
    }
    let summary = carleman_summary(&rows, sup);
    ctx.json("carleman.json", &summary)?;
    let pass = rows.iter().all(|r| r.passes(CARLEMAN_TOLERANCE));
    ctx.say(format!(
        "carleman: {} rows, {} admissible, max ratio {:.3e} {}",
        rows.len(),
        summary.admissible_cells,
        summary.max_admissible_ratio,
        verdict(pass)
    ));
    Ok(pass)
}

fn cmd_pipeline(ctx: &Ctx) -> Result<bool> {
    let out = run_pipeline(&ctx.cfg)?;
    if ctx.format.json() {
        out.report.write(&ctx.out)?;
    }
    if ctx.format.csv() {
        write_monitors_csv(BufWriter::new(File::create(ctx.path("monitors.csv")?)?), &out.monitors)?;
        write_csv(&ctx.path("pairs.csv")?, &out.report.pairs)?;
        if ctx.cfg.carleman.enabled {
            write_carleman_csv(BufWriter::new(File::create(ctx.path("carleman.csv")?)?), &out.carleman)?;
        }
    }
    for s in &out.report.stages {
        ctx.say(format!("{:<15} {}", s.name, verdict(s.pass)));
    }
    for p in out.report.pairs.iter().filter(|p| !p.pass) {
        ctx.say(format!("pair {} failed: {:.6e} > {:.6e}", p.anchor, p.lhs, p.rhs));
    }
    let pass = out.report.pass();
    ctx.say(format!("pipeline {}", verdict(pass)));
    Ok(pass)
}

fn cmd_hypotheses(ctx: &Ctx) -> Result<bool> {
    let h = run_hypotheses(&ctx.cfg)?;
    ctx.json("hypotheses.json", &h)?;
    ctx.say(format!("hypotheses: sup |x^t B| = {:.6e}, N1 = {:.6e}", h.sup_xtB, h.N1));
    Ok(true)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
