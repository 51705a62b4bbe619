//! Flat `key = value` run configuration with dotted section names.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown or repeated keys are rejected with their position.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// How a datum is generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    /// Cosine series with seeded coefficients.
    Seeded,
    /// `sin(πx) + 1/2`.
    Sine,
    Zero,
}

impl DataKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "seeded" => Some(Self::Seeded),
            "sine" => Some(Self::Sine),
            "zero" => Some(Self::Zero),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Seeded => "seeded",
            Self::Sine => "sine",
            Self::Zero => "zero",
        }
    }
}

/// Rule fixing the step count of each sweep level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    /// `Δt ≤ min(T⁻²h^μ, 1/(4γ))`.
    Coupled,
    /// `mesh.N` at every level.
    Fixed,
}

/// Gramian evaluation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GramianChoice {
    Auto,
    Stepping,
    Spectral,
}

/// Every setting of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Interior node count `M`.
    pub m: usize,
    /// Time step count `N`.
    pub n: usize,
    pub t_final: f64,
    pub observation: (f64, f64),
    pub weight_core: (f64, f64),
    pub b: f64,
    pub b_left: f64,
    pub b_right: f64,
    /// CSV of `N` rows with `M + 2` potentials each; overrides the constants.
    pub potentials_file: Option<PathBuf>,
    pub initial: DataKind,
    pub terminal: DataKind,
    pub source: DataKind,
    /// Cosine modes of seeded data.
    pub modes: usize,
    pub lambda: f64,
    pub tau0: f64,
    pub tau2: f64,
    pub delta1: f64,
    pub k_offset: f64,
    pub epsilon0: f64,
    /// Fixed `δ` for single Carleman runs; coupled to `h` when absent.
    pub delta: Option<f64>,
    pub runs: usize,
    pub band: f64,
    pub c1: f64,
    pub mu: f64,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
    pub gramian: GramianChoice,
    pub levels: Vec<f64>,
    pub coupling: Coupling,
    pub sweep_hum: bool,
    pub sweep_carleman: bool,
    pub identity_tolerance: f64,
    pub identity_cases: usize,
    pub gronwall_gamma: f64,
    pub probes: bool,
    pub probe_lambda: f64,
    pub probe_tau: f64,
    pub probe_delta: f64,
    pub out_dir: PathBuf,
    pub trajectories: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            m: 20,
            n: 40,
            t_final: 1.0,
            observation: (0.3, 0.7),
            weight_core: (0.4, 0.6),
            b: 0.0,
            b_left: 0.0,
            b_right: 0.0,
            potentials_file: None,
            initial: DataKind::Seeded,
            terminal: DataKind::Seeded,
            source: DataKind::Zero,
            modes: 8,
            lambda: 2.0,
            tau0: 1.0,
            tau2: 1.0,
            delta1: 0.45,
            k_offset: 0.1,
            epsilon0: 0.5,
            delta: None,
            runs: 20,
            band: 10.0,
            c1: 1.0,
            mu: 4.0,
            cg_tolerance: 1e-10,
            cg_max_iterations: 500,
            gramian: GramianChoice::Auto,
            levels: vec![0.1, 0.05, 0.025],
            coupling: Coupling::Coupled,
            sweep_hum: true,
            sweep_carleman: true,
            identity_tolerance: 1e-12,
            identity_cases: 1000,
            gronwall_gamma: 0.5,
            probes: true,
            probe_lambda: 1.0,
            probe_tau: 1.0,
            probe_delta: 0.4,
            out_dir: PathBuf::from("heatdbc-out"),
            trajectories: false,
        }
    }
}

/// Keys in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "mesh.M",
    "mesh.N",
    "mesh.T",
    "regions.observation",
    "regions.weight_core",
    "potentials.b",
    "potentials.b_left",
    "potentials.b_right",
    "potentials.file",
    "data.initial",
    "data.terminal",
    "data.source",
    "data.modes",
    "carleman.lambda",
    "carleman.tau0",
    "carleman.tau2",
    "carleman.delta1",
    "carleman.k_offset",
    "carleman.epsilon0",
    "carleman.delta",
    "carleman.runs",
    "carleman.band",
    "hum.C1",
    "hum.mu",
    "hum.tol",
    "hum.max_iter",
    "hum.gramian",
    "sweep.levels",
    "sweep.coupling",
    "sweep.hum",
    "sweep.carleman",
    "check.tolerance",
    "check.cases",
    "check.gronwall_gamma",
    "check.probes",
    "check.probe_lambda",
    "check.probe_tau",
    "check.probe_delta",
    "output.dir",
    "output.trajectories",
];

fn parse_f64(v: &str) -> Option<f64> {
    v.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn parse_interval(v: &str) -> Option<(f64, f64)> {
    let (a, b) = v.split_once(',')?;
    Some((parse_f64(a.trim())?, parse_f64(b.trim())?))
}

/// Mesh widths written as `1/n` or decimals, comma separated.
pub fn parse_levels(v: &str) -> Option<Vec<f64>> {
    v.split(',')
        .map(|item| {
            let item = item.trim();
            match item.split_once('/') {
                Some((num, den)) => {
                    let (num, den) = (parse_f64(num.trim())?, parse_f64(den.trim())?);
                    (den != 0.0).then(|| num / den)
                }
                None => parse_f64(item),
            }
        })
        .collect::<Option<Vec<f64>>>()
        .filter(|l| !l.is_empty())
}

fn format_levels(levels: &[f64]) -> String {
    levels
        .iter()
        .map(|h| {
            let inv = 1.0 / h;
            if (inv - inv.round()).abs() < 1e-9 && (1.0 / inv.round() == *h) {
                format!("1/{}", inv.round() as u64)
            } else {
                format!("{h}")
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Parse configuration text; `base` resolves relative file paths.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, CliError> {
        let mut config = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let trimmed = raw.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let key_col = raw.len() - trimmed.len() + 1;
            let Some(eq) = raw.find('=') else {
                return Err(CliError::config(line, key_col, "expected `key = value`"));
            };
            let key = raw[..eq].trim();
            let after = &raw[eq + 1..];
            let value_col = eq + 2 + (after.len() - after.trim_start().len());
            let mut value = after.trim();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = &value[1..value.len() - 1];
            }
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(CliError::config(line, key_col, format!("unknown key `{key}`")));
            };
            if seen.contains(&known) {
                return Err(CliError::config(line, key_col, format!("duplicate key `{key}`")));
            }
            seen.push(known);
            config
                .set(known, value, base)
                .map_err(|msg| CliError::config(line, value_col, format!("{key}: {msg}")))?;
        }
        Ok(config)
    }

    fn set(&mut self, key: &str, v: &str, base: Option<&Path>) -> Result<(), String> {
        let num = || parse_f64(v).ok_or_else(|| format!("`{v}` is not a finite number"));
        let int = || v.parse::<usize>().map_err(|_| format!("`{v}` is not a nonnegative integer"));
        let flag = || parse_bool(v).ok_or_else(|| format!("`{v}` is not true or false"));
        let interval = || parse_interval(v).ok_or_else(|| format!("`{v}` is not `a,b`"));
        let data = || {
            DataKind::parse(v).ok_or_else(|| format!("`{v}` is not one of seeded, sine, zero"))
        };
        match key {
            "seed" => self.seed = v.parse().map_err(|_| format!("`{v}` is not a u64"))?,
            "mesh.M" => self.m = int()?,
            "mesh.N" => self.n = int()?,
            "mesh.T" => self.t_final = num()?,
            "regions.observation" => self.observation = interval()?,
            "regions.weight_core" => self.weight_core = interval()?,
            "potentials.b" => self.b = num()?,
            "potentials.b_left" => self.b_left = num()?,
            "potentials.b_right" => self.b_right = num()?,
            "potentials.file" => {
                self.potentials_file = if v.is_empty() {
                    None
                } else {
                    let p = PathBuf::from(v);
                    Some(match base {
                        Some(dir) if p.is_relative() => dir.join(p),
                        _ => p,
                    })
                }
            }
            "data.initial" => self.initial = data()?,
            "data.terminal" => self.terminal = data()?,
            "data.source" => self.source = data()?,
            "data.modes" => self.modes = int()?,
            "carleman.lambda" => self.lambda = num()?,
            "carleman.tau0" => self.tau0 = num()?,
            "carleman.tau2" => self.tau2 = num()?,
            "carleman.delta1" => self.delta1 = num()?,
            "carleman.k_offset" => self.k_offset = num()?,
            "carleman.epsilon0" => self.epsilon0 = num()?,
            "carleman.delta" => self.delta = if v == "coupled" { None } else { Some(num()?) },
            "carleman.runs" => self.runs = int()?,
            "carleman.band" => self.band = num()?,
            "hum.C1" => self.c1 = num()?,
            "hum.mu" => self.mu = num()?,
            "hum.tol" => self.cg_tolerance = num()?,
            "hum.max_iter" => self.cg_max_iterations = int()?,
            "hum.gramian" => {
                self.gramian = match v {
                    "auto" => GramianChoice::Auto,
                    "stepping" => GramianChoice::Stepping,
                    "spectral" => GramianChoice::Spectral,
                    _ => return Err(format!("`{v}` is not one of auto, stepping, spectral")),
                }
            }
            "sweep.levels" => {
                self.levels = parse_levels(v).ok_or_else(|| format!("`{v}` is not a list of mesh widths"))?
            }
            "sweep.coupling" => {
                self.coupling = match v {
                    "coupled" => Coupling::Coupled,
                    "fixed" => Coupling::Fixed,
                    _ => return Err(format!("`{v}` is not one of coupled, fixed")),
                }
            }
            "sweep.hum" => self.sweep_hum = flag()?,
            "sweep.carleman" => self.sweep_carleman = flag()?,
            "check.tolerance" => self.identity_tolerance = num()?,
            "check.cases" => self.identity_cases = int()?,
            "check.gronwall_gamma" => self.gronwall_gamma = num()?,
            "check.probes" => self.probes = flag()?,
            "check.probe_lambda" => self.probe_lambda = num()?,
            "check.probe_tau" => self.probe_tau = num()?,
            "check.probe_delta" => self.probe_delta = num()?,
            "output.dir" => self.out_dir = PathBuf::from(v),
            "output.trajectories" => self.trajectories = flag()?,
            _ => unreachable!("key table and setter disagree on `{key}`"),
        }
        Ok(())
    }

    /// Every key with its effective value; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "seed" => self.seed.to_string(),
                "mesh.M" => self.m.to_string(),
                "mesh.N" => self.n.to_string(),
                "mesh.T" => self.t_final.to_string(),
                "regions.observation" => format!("{},{}", self.observation.0, self.observation.1),
                "regions.weight_core" => format!("{},{}", self.weight_core.0, self.weight_core.1),
                "potentials.b" => self.b.to_string(),
                "potentials.b_left" => self.b_left.to_string(),
                "potentials.b_right" => self.b_right.to_string(),
                "potentials.file" => self
                    .potentials_file
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                "data.initial" => self.initial.name().into(),
                "data.terminal" => self.terminal.name().into(),
                "data.source" => self.source.name().into(),
                "data.modes" => self.modes.to_string(),
                "carleman.lambda" => self.lambda.to_string(),
                "carleman.tau0" => self.tau0.to_string(),
                "carleman.tau2" => self.tau2.to_string(),
                "carleman.delta1" => self.delta1.to_string(),
                "carleman.k_offset" => self.k_offset.to_string(),
                "carleman.epsilon0" => self.epsilon0.to_string(),
                "carleman.delta" => self.delta.map_or("coupled".into(), |d| d.to_string()),
                "carleman.runs" => self.runs.to_string(),
                "carleman.band" => self.band.to_string(),
                "hum.C1" => self.c1.to_string(),
                "hum.mu" => self.mu.to_string(),
                "hum.tol" => self.cg_tolerance.to_string(),
                "hum.max_iter" => self.cg_max_iterations.to_string(),
                "hum.gramian" => match self.gramian {
                    GramianChoice::Auto => "auto",
                    GramianChoice::Stepping => "stepping",
                    GramianChoice::Spectral => "spectral",
                }
                .into(),
                "sweep.levels" => format_levels(&self.levels),
                "sweep.coupling" => match self.coupling {
                    Coupling::Coupled => "coupled",
                    Coupling::Fixed => "fixed",
                }
                .into(),
                "sweep.hum" => self.sweep_hum.to_string(),
                "sweep.carleman" => self.sweep_carleman.to_string(),
                "check.tolerance" => self.identity_tolerance.to_string(),
                "check.cases" => self.identity_cases.to_string(),
                "check.gronwall_gamma" => self.gronwall_gamma.to_string(),
                "check.probes" => self.probes.to_string(),
                "check.probe_lambda" => self.probe_lambda.to_string(),
                "check.probe_tau" => self.probe_tau.to_string(),
                "check.probe_delta" => self.probe_delta.to_string(),
                "output.dir" => self.out_dir.display().to_string(),
                "output.trajectories" => self.trajectories.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("", None).unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# note\n\n   \n", None).unwrap(), RunConfig::default());
    }

    #[test]
    fn values_are_read() {
        let c = RunConfig::parse(
            "mesh.M = 12\nhum.C1 = 2.5\nsweep.levels = 1/8, 0.0625\nregions.observation = 0.2,0.9\ncarleman.delta = 0.3\n",
            None,
        )
        .unwrap();
        assert_eq!(c.m, 12);
        assert_eq!(c.c1, 2.5);
        assert_eq!(c.levels, vec![0.125, 0.0625]);
        assert_eq!(c.observation, (0.2, 0.9));
        assert_eq!(c.delta, Some(0.3));
    }

    #[test]
    fn unknown_key_reports_position() {
        let err = RunConfig::parse("mesh.M = 4\n  mesh.Q = 3\n", None).unwrap_err();
        match err {
            CliError::Config { line, column, ref message } => {
                assert_eq!((line, column), (2, 3));
                assert!(message.contains("mesh.Q"));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_value_and_syntax_are_rejected() {
        let err = RunConfig::parse("mesh.M = many", None).unwrap_err();
        assert!(matches!(err, CliError::Config { line: 1, column: 10, .. }), "{err:?}");
        let err = RunConfig::parse("\nmesh.M 4", None).unwrap_err();
        assert!(matches!(err, CliError::Config { line: 2, column: 1, .. }));
        let err = RunConfig::parse("seed = 1\nseed = 2", None).unwrap_err();
        assert!(matches!(err, CliError::Config { line: 2, .. }));
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.seed = 17;
        c.levels = vec![0.2, 0.1, 0.03];
        c.delta = Some(0.25);
        c.cg_tolerance = 3.3e-11;
        c.potentials_file = Some(PathBuf::from("/tmp/p.csv"));
        let back = RunConfig::parse(&c.to_text(), None).unwrap();
        assert_eq!(back, c);
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.to_text(), None).unwrap(), d);
    }
}
