//! Flat INI experiment configuration.

use std::path::Path;

use ini::Ini;
use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolve::FlowParams;
use crate::fields::{GaugeGenerator, PotentialKind, PotentialSpec, ScalarProfile, ScalarSpec};
use crate::grid::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSection {
    pub dim: usize,
    pub n_points: usize,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSection {
    pub a: f64,
    pub b: f64,
    pub eps_reg: f64,
    pub dt: f64,
    pub t_end: f64,
    pub store_every: usize,
}

/// `u0 = exp(-|x|^2 / width^2)`, given in the reduced gauge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialSection {
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialSection {
    pub kind: String,
    pub strength: f64,
    pub generator: String,
    pub core_radius: Option<f64>,
    pub quadrature_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarEntry {
    pub kind: String,
    pub re: f64,
    pub im: f64,
    pub width: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarSection {
    pub v1: ScalarEntry,
    pub v2: ScalarEntry,
    pub forcing: ScalarEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightsSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSection {
    pub eps_samples: Vec<f64>,
    pub appell_samples: usize,
    pub convexity_tol: f64,
    pub pair_tol: f64,
    pub gauge_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarlemanSection {
    pub enabled: bool,
    pub mu: Vec<f64>,
    pub eps: f64,
    pub r: Vec<f64>,
    /// One-based basis index of `v`.
    pub v: usize,
    pub cutoff_m: f64,
    pub cutoff_r_time: f64,
    pub time_samples: usize,
    pub families: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSection {
    pub directory: String,
    pub formats: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub flow: FlowSection,
    pub initial: InitialSection,
    pub potential: PotentialSection,
    pub scalar: ScalarSection,
    pub weights: WeightsSection,
    pub pipeline: PipelineSection,
    pub carleman: CarlemanSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let zero = ScalarEntry {
            kind: "zero".into(),
            re: 0.0,
            im: 0.0,
            width: 1.0,
            frequency: 0.0,
        };
        Self {
            grid: GridSection {
                dim: 2,
                n_points: 64,
                half_width: 16.0,
            },
            flow: FlowSection {
                a: 0.0,
                b: 1.0,
                eps_reg: 1e-3,
                dt: 2e-3,
                t_end: 1.0,
                store_every: 10,
            },
            initial: InitialSection { width: 2.0 },
            potential: PotentialSection {
                kind: "zero".into(),
                strength: 1.0,
                generator: "x1x2".into(),
                core_radius: None,
                quadrature_nodes: 32,
            },
            scalar: ScalarSection {
                v1: zero.clone(),
                v2: zero.clone(),
                forcing: zero,
            },
            weights: WeightsSection {
                alpha: 4.0,
                beta: 5.0,
                gamma: 0.05,
            },
            pipeline: PipelineSection {
                eps_samples: vec![1e-2, 1e-3, 1e-4],
                appell_samples: 40,
                convexity_tol: 1e-3,
                pair_tol: 1e-6,
                gauge_tol: 1e-8,
            },
            carleman: CarlemanSection {
                enabled: false,
                mu: vec![0.25, 0.5, 1.0],
                eps: 1.0,
                r: vec![4.0, 8.0, 16.0],
                v: 1,
                cutoff_m: 2.0,
                cutoff_r_time: 4.0,
                time_samples: 200,
                families: 1,
            },
            output: OutputSection {
                directory: "runs/default".into(),
                formats: "both".into(),
            },
        }
    }
}

fn cfg(msg: String) -> Error {
    Error::Config(msg)
}

struct Reader<'a> {
    ini: &'a Ini,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.section(Some(section)).and_then(|s| s.get(key)).map(str::trim)
    }

    fn parse<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| cfg(format!("[{section}] {key} = {v:?} is not a valid value"))),
        }
    }

    fn string(&self, section: &str, key: &str, default: &str) -> String {
        self.raw(section, key).unwrap_or(default).to_string()
    }

    fn list(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| cfg(format!("[{section}] {key}: {p:?} is not a number")))
                })
                .collect(),
        }
    }

    fn boolean(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.raw(section, key) {
            None => Ok(default),
            Some("true" | "yes" | "1" | "on") => Ok(true),
            Some("false" | "no" | "0" | "off") => Ok(false),
            Some(v) => Err(cfg(format!("[{section}] {key} = {v:?} is not a boolean"))),
        }
    }

    fn scalar(&self, prefix: &str, d: &ScalarEntry) -> Result<ScalarEntry> {
        Ok(ScalarEntry {
            kind: self.string("scalar", &format!("{prefix}_kind"), &d.kind),
            re: self.parse("scalar", &format!("{prefix}_re"), d.re)?,
            im: self.parse("scalar", &format!("{prefix}_im"), d.im)?,
            width: self.parse("scalar", &format!("{prefix}_width"), d.width)?,
            frequency: self.parse("scalar", &format!("{prefix}_frequency"), d.frequency)?,
        })
    }
}

const KNOWN: &[(&str, &[&str])] = &[
    ("grid", &["dim", "n_points", "half_width"]),
    ("flow", &["a", "b", "eps_reg", "dt", "t_end", "store_every"]),
    ("initial", &["width"]),
    ("potential", &["kind", "strength", "generator", "core_radius", "quadrature_nodes"]),
    (
        "scalar",
        &[
            "v1_kind", "v1_re", "v1_im", "v1_width", "v1_frequency", "v2_kind", "v2_re", "v2_im", "v2_width",
            "v2_frequency", "forcing_kind", "forcing_re", "forcing_im", "forcing_width", "forcing_frequency",
        ],
    ),
    ("weights", &["alpha", "beta", "gamma"]),
    ("pipeline", &["eps_samples", "appell_samples", "convexity_tol", "pair_tol", "gauge_tol"]),
    (
        "carleman",
        &["enabled", "mu", "eps", "R", "v", "cutoff_m", "cutoff_r_time", "time_samples", "families"],
    ),
    ("output", &["directory", "formats"]),
];

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| cfg(format!("malformed config: {e}")))?;
        for (section, props) in ini.iter() {
            let Some(name) = section else {
                if props.iter().next().is_some() {
                    return Err(cfg("keys outside a section".into()));
                }
                continue;
            };
            let Some((_, keys)) = KNOWN.iter().find(|(s, _)| *s == name) else {
                return Err(cfg(format!("unknown section [{name}]")));
            };
            for (k, _) in props.iter() {
                if !keys.contains(&k) {
                    return Err(cfg(format!("unknown key {k:?} in [{name}]")));
                }
            }
        }
        let r = Reader { ini: &ini };
        let d = Self::default();
        let core = match r.raw("potential", "core_radius") {
            None | Some("") | Some("none") => None,
            Some(v) => Some(v.parse().map_err(|_| cfg(format!("[potential] core_radius = {v:?} is not a number")))?),
        };
        let c = Self {
            grid: GridSection {
                dim: r.parse("grid", "dim", d.grid.dim)?,
                n_points: r.parse("grid", "n_points", d.grid.n_points)?,
                half_width: r.parse("grid", "half_width", d.grid.half_width)?,
            },
            flow: FlowSection {
                a: r.parse("flow", "a", d.flow.a)?,
                b: r.parse("flow", "b", d.flow.b)?,
                eps_reg: r.parse("flow", "eps_reg", d.flow.eps_reg)?,
                dt: r.parse("flow", "dt", d.flow.dt)?,
                t_end: r.parse("flow", "t_end", d.flow.t_end)?,
                store_every: r.parse("flow", "store_every", d.flow.store_every)?,
            },
            initial: InitialSection {
                width: r.parse("initial", "width", d.initial.width)?,
            },
            potential: PotentialSection {
                kind: r.string("potential", "kind", &d.potential.kind),
                strength: r.parse("potential", "strength", d.potential.strength)?,
                generator: r.string("potential", "generator", &d.potential.generator),
                core_radius: core,
                quadrature_nodes: r.parse("potential", "quadrature_nodes", d.potential.quadrature_nodes)?,
            },
            scalar: ScalarSection {
                v1: r.scalar("v1", &d.scalar.v1)?,
                v2: r.scalar("v2", &d.scalar.v2)?,
                forcing: r.scalar("forcing", &d.scalar.forcing)?,
            },
            weights: WeightsSection {
                alpha: r.parse("weights", "alpha", d.weights.alpha)?,
                beta: r.parse("weights", "beta", d.weights.beta)?,
                gamma: r.parse("weights", "gamma", d.weights.gamma)?,
            },
            pipeline: PipelineSection {
                eps_samples: r.list("pipeline", "eps_samples", &d.pipeline.eps_samples)?,
                appell_samples: r.parse("pipeline", "appell_samples", d.pipeline.appell_samples)?,
                convexity_tol: r.parse("pipeline", "convexity_tol", d.pipeline.convexity_tol)?,
                pair_tol: r.parse("pipeline", "pair_tol", d.pipeline.pair_tol)?,
                gauge_tol: r.parse("pipeline", "gauge_tol", d.pipeline.gauge_tol)?,
            },
            carleman: CarlemanSection {
                enabled: r.boolean("carleman", "enabled", d.carleman.enabled)?,
                mu: r.list("carleman", "mu", &d.carleman.mu)?,
                eps: r.parse("carleman", "eps", d.carleman.eps)?,
                r: r.list("carleman", "R", &d.carleman.r)?,
                v: r.parse("carleman", "v", d.carleman.v)?,
                cutoff_m: r.parse("carleman", "cutoff_m", d.carleman.cutoff_m)?,
                cutoff_r_time: r.parse("carleman", "cutoff_r_time", d.carleman.cutoff_r_time)?,
                time_samples: r.parse("carleman", "time_samples", d.carleman.time_samples)?,
                families: r.parse("carleman", "families", d.carleman.families)?,
            },
            output: OutputSection {
                directory: r.string("output", "directory", &d.output.directory),
                formats: r.string("output", "formats", &d.output.formats),
            },
        };
        c.validate()?;
        Ok(c)
    }

    /// Canonical INI text; parsing it gives back an equal config.
    pub fn to_ini(&self) -> String {
        let mut ini = Ini::new();
        let f = |x: f64| format!("{x:?}");
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        ini.with_section(Some("grid"))
            .set("dim", self.grid.dim.to_string())
            .set("n_points", self.grid.n_points.to_string())
            .set("half_width", f(self.grid.half_width));
        ini.with_section(Some("flow"))
            .set("a", f(self.flow.a))
            .set("b", f(self.flow.b))
            .set("eps_reg", f(self.flow.eps_reg))
            .set("dt", f(self.flow.dt))
            .set("t_end", f(self.flow.t_end))
            .set("store_every", self.flow.store_every.to_string());
        ini.with_section(Some("initial")).set("width", f(self.initial.width));
        ini.with_section(Some("potential"))
            .set("kind", self.potential.kind.clone())
            .set("strength", f(self.potential.strength))
            .set("generator", self.potential.generator.clone())
            .set(
                "core_radius",
                self.potential.core_radius.map(f).unwrap_or_else(|| "none".into()),
            )
            .set("quadrature_nodes", self.potential.quadrature_nodes.to_string());
        for (prefix, e) in [("v1", &self.scalar.v1), ("v2", &self.scalar.v2), ("forcing", &self.scalar.forcing)] {
            ini.with_section(Some("scalar"))
                .set(format!("{prefix}_kind"), e.kind.clone())
                .set(format!("{prefix}_re"), f(e.re))
                .set(format!("{prefix}_im"), f(e.im))
                .set(format!("{prefix}_width"), f(e.width))
                .set(format!("{prefix}_frequency"), f(e.frequency));
        }
        ini.with_section(Some("weights"))
            .set("alpha", f(self.weights.alpha))
            .set("beta", f(self.weights.beta))
            .set("gamma", f(self.weights.gamma));
        ini.with_section(Some("pipeline"))
            .set("eps_samples", list(&self.pipeline.eps_samples))
            .set("appell_samples", self.pipeline.appell_samples.to_string())
            .set("convexity_tol", f(self.pipeline.convexity_tol))
            .set("pair_tol", f(self.pipeline.pair_tol))
            .set("gauge_tol", f(self.pipeline.gauge_tol));
        ini.with_section(Some("carleman"))
            .set("enabled", self.carleman.enabled.to_string())
            .set("mu", list(&self.carleman.mu))
            .set("eps", f(self.carleman.eps))
            .set("R", list(&self.carleman.r))
            .set("v", self.carleman.v.to_string())
            .set("cutoff_m", f(self.carleman.cutoff_m))
            .set("cutoff_r_time", f(self.carleman.cutoff_r_time))
            .set("time_samples", self.carleman.time_samples.to_string())
            .set("families", self.carleman.families.to_string());
        ini.with_section(Some("output"))
            .set("directory", self.output.directory.clone())
            .set("formats", self.output.formats.clone());
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ini output is utf-8")
    }

    /// SHA-256 of the canonical INI text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_ini().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_spec()?;
        self.flow_params()?.validate(&self.grid_spec()?).map_err(|e| cfg(format!("[flow] {e}")))?;
        if !(self.flow.eps_reg > 0.0) {
            return Err(cfg(format!("[flow] eps_reg must be positive, got {}", self.flow.eps_reg)));
        }
        if !(self.initial.width > 0.0) {
            return Err(cfg("[initial] width must be positive".into()));
        }
        let spec = self.potential_spec()?;
        spec.validate(&self.grid_spec()?).map_err(|e| cfg(format!("[potential] {e}")))?;
        if self.potential.quadrature_nodes == 0 {
            return Err(cfg("[potential] quadrature_nodes must be positive".into()));
        }
        for (name, s) in [("v1", self.v1()?), ("v2", self.v2()?), ("forcing", self.forcing()?)] {
            s.validate().map_err(|e| cfg(format!("[scalar] {name}: {e}")))?;
        }
        if !self.v1()?.is_real() {
            return Err(cfg("[scalar] v1 must be real and static (v1_im = 0, v1_frequency = 0)".into()));
        }
        if !(self.weights.alpha > 0.0 && self.weights.beta > 0.0) {
            return Err(cfg("[weights] alpha and beta must be positive".into()));
        }
        if !(self.weights.gamma >= 0.0) {
            return Err(cfg("[weights] gamma must be nonnegative".into()));
        }
        let p = &self.pipeline;
        if p.eps_samples.is_empty() || p.eps_samples.iter().any(|e| !(*e > 0.0)) {
            return Err(cfg("[pipeline] eps_samples must be a nonempty list of positive numbers".into()));
        }
        if p.appell_samples < 4 {
            return Err(cfg("[pipeline] appell_samples must be at least 4".into()));
        }
        // a negative convexity_tol demands a strictly positive margin
        if !p.convexity_tol.is_finite() {
            return Err(cfg("[pipeline] convexity_tol must be finite".into()));
        }
        for (name, v) in [("pair_tol", p.pair_tol), ("gauge_tol", p.gauge_tol)] {
            if !(v >= 0.0) {
                return Err(cfg(format!("[pipeline] {name} must be nonnegative")));
            }
        }
        let c = &self.carleman;
        if c.mu.is_empty() || c.r.is_empty() || c.mu.iter().chain(&c.r).any(|x| !(*x > 0.0)) || !(c.eps > 0.0) {
            return Err(cfg("[carleman] mu, R lists and eps must be positive".into()));
        }
        if !(1..=3).contains(&c.v) || c.v > self.grid.dim {
            return Err(cfg(format!("[carleman] v = {} must index an axis in 1..={}", c.v, self.grid.dim)));
        }
        if c.time_samples < 8 || c.families == 0 {
            return Err(cfg("[carleman] time_samples must be at least 8 and families positive".into()));
        }
        if !["csv", "json", "both"].contains(&self.output.formats.as_str()) {
            return Err(cfg(format!("[output] formats must be csv, json or both, got {:?}", self.output.formats)));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.dim, self.grid.half_width, self.grid.n_points).map_err(|e| cfg(format!("[grid] {e}")))
    }

    pub fn flow_params(&self) -> Result<FlowParams> {
        Ok(FlowParams::new(
            self.flow.a,
            self.flow.b,
            self.flow.dt,
            self.flow.t_end,
            self.flow.store_every,
        ))
    }

    pub fn potential_spec(&self) -> Result<PotentialSpec> {
        let p = &self.potential;
        let kind = match p.kind.as_str() {
            "zero" => PotentialKind::Zero,
            "pure_gauge" => PotentialKind::PureGauge(match p.generator.as_str() {
                "x1x2" => GaugeGenerator::X1X2,
                "half_radius_squared" => GaugeGenerator::HalfRadiusSquared,
                g => return Err(cfg(format!("[potential] unknown generator {g:?} (x1x2, half_radius_squared)"))),
            }),
            "constant_field" => PotentialKind::ConstantField { strength: p.strength },
            "block_field_3d" => PotentialKind::BlockField3d,
            "block_matrix_3d" => PotentialKind::BlockMatrix3d,
            "aharonov_bohm_2d" => PotentialKind::AharonovBohm2d,
            k => {
                return Err(cfg(format!(
                    "[potential] unknown kind {k:?} (zero, pure_gauge, constant_field, block_field_3d, block_matrix_3d, aharonov_bohm_2d)"
                )))
            }
        };
        let mut spec = PotentialSpec::new(kind);
        if let Some(r) = p.core_radius {
            if !(r > 0.0) {
                return Err(cfg("[potential] core_radius must be positive".into()));
            }
            spec = spec.with_core_radius(r);
        }
        Ok(spec)
    }

    fn scalar_spec(e: &ScalarEntry, name: &str) -> Result<ScalarSpec> {
        let value = Complex64::new(e.re, e.im);
        let s = match e.kind.as_str() {
            "zero" => ScalarSpec::zero(),
            "constant" => ScalarSpec::constant(value),
            "gaussian" => ScalarSpec::gaussian(value, e.width),
            k => return Err(cfg(format!("[scalar] {name}_kind = {k:?} (zero, constant, gaussian)"))),
        };
        Ok(if matches!(s.profile, ScalarProfile::Zero) {
            s
        } else {
            s.with_frequency(e.frequency)
        })
    }

    pub fn v1(&self) -> Result<ScalarSpec> {
        Self::scalar_spec(&self.scalar.v1, "v1")
    }

    pub fn v2(&self) -> Result<ScalarSpec> {
        Self::scalar_spec(&self.scalar.v2, "v2")
    }

    pub fn forcing(&self) -> Result<ScalarSpec> {
        Self::scalar_spec(&self.scalar.forcing, "forcing")
    }

    pub fn output_dir(&self) -> &Path {
        Path::new(&self.output.directory)
    }
}
