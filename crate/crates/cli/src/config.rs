//! Flat `key=value` experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use voterlab_core::dynamics::InitialCondition;
use voterlab_core::{Boundary, Colors};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Theta,
    Critical,
    Box,
    Enhance,
    Couple,
    Qinf,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Theta,
        Command::Critical,
        Command::Box,
        Command::Enhance,
        Command::Couple,
        Command::Qinf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Theta => "theta",
            Command::Critical => "critical",
            Command::Box => "box",
            Command::Enhance => "enhance",
            Command::Couple => "couple",
            Command::Qinf => "qinf",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

impl FromStr for Format {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(CliError::Usage(format!("unknown format {s:?}"))),
        }
    }
}

/// What `qinf` computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum QinfMode {
    Decay,
    Perm,
    Couple,
}

impl fmt::Display for QinfMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QinfMode::Decay => "decay",
            QinfMode::Perm => "perm",
            QinfMode::Couple => "couple",
        })
    }
}

impl FromStr for QinfMode {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "decay" => Ok(QinfMode::Decay),
            "perm" => Ok(QinfMode::Perm),
            "couple" => Ok(QinfMode::Couple),
            _ => Err(CliError::Usage(format!("unknown qinf mode {s:?}"))),
        }
    }
}

/// Text form of an initial row: `constant:C`, `iid`, `blocks:N`,
/// `explicit:A;B;C`.
pub fn format_init(init: &InitialCondition) -> String {
    match init {
        InitialCondition::Constant(c) => format!("constant:{c}"),
        InitialCondition::IidUniform => "iid".into(),
        InitialCondition::Blocks { size } => format!("blocks:{size}"),
        InitialCondition::Explicit(v) => {
            let parts: Vec<String> = v.iter().map(u64::to_string).collect();
            format!("explicit:{}", parts.join(";"))
        }
    }
}

pub fn parse_init(s: &str) -> Result<InitialCondition, CliError> {
    let bad = || CliError::Usage(format!("bad initial condition {s:?}"));
    let (head, tail) = s.split_once(':').unwrap_or((s, ""));
    match head {
        "iid" if tail.is_empty() => Ok(InitialCondition::IidUniform),
        "constant" => tail.parse().map(InitialCondition::Constant).map_err(|_| bad()),
        "blocks" => tail.parse().map(|size| InitialCondition::Blocks { size }).map_err(|_| bad()),
        "explicit" if tail.is_empty() => Ok(InitialCondition::Explicit(vec![])),
        "explicit" => tail
            .split(';')
            .map(|x| x.parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map(InitialCondition::Explicit)
            .map_err(|_| bad()),
        _ => Err(bad()),
    }
}

/// Every knob of one run. `threads` is deliberately absent: results do not
/// depend on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub delta: f64,
    pub epsilon: f64,
    pub q: Colors,
    pub width: usize,
    pub height: usize,
    pub boundary: Boundary,
    pub seed: u64,
    pub replicas: u64,
    pub depth: usize,
    pub s: f64,
    /// Box half-size; 0 picks `floor(depth * delta / 4)`.
    pub k: usize,
    /// Finite-difference step of the Russo check.
    pub h: f64,
    /// Survival threshold (`critical`) or extinction target (`couple`).
    pub threshold: f64,
    pub exact: bool,
    pub init: InitialCondition,
    pub init_b: InitialCondition,
    /// `couple`: activation bits coupled to the fresh colors (`s = 1/q`)
    /// instead of independent with probability `s`.
    pub standard_coupling: bool,
    /// `couple`: also bisect for the ergodicity threshold.
    pub bisect: bool,
    /// `box`: also search `epsilon = 2^-j` for a passing certificate.
    pub positive_search: bool,
    pub qinf_mode: QinfMode,
    pub radius: i64,
    pub eps_grid: Vec<f64>,
    pub s_grid: Vec<f64>,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub image: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(command: Command) -> Self {
        Self {
            command,
            delta: 0.5,
            epsilon: 0.5,
            q: Colors::Finite(3),
            width: 64,
            height: 64,
            boundary: Boundary::Periodic,
            seed: 1,
            replicas: 1000,
            depth: 10,
            s: 0.5,
            k: 0,
            h: 1e-4,
            threshold: match command {
                Command::Couple => 0.99,
                _ => 0.01,
            },
            exact: false,
            init: InitialCondition::IidUniform,
            init_b: InitialCondition::IidUniform,
            standard_coupling: true,
            bisect: false,
            positive_search: false,
            qinf_mode: QinfMode::Decay,
            radius: 10,
            eps_grid: vec![],
            s_grid: vec![],
            format: Format::Json,
            out: None,
            image: None,
        }
    }

    pub fn emit(&self) -> String {
        let grid = |g: &[f64]| g.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("command", self.command.to_string()),
            ("delta", self.delta.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("q", self.q.to_string()),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("boundary", self.boundary.to_string()),
            ("seed", self.seed.to_string()),
            ("replicas", self.replicas.to_string()),
            ("depth", self.depth.to_string()),
            ("s", self.s.to_string()),
            ("k", self.k.to_string()),
            ("h", self.h.to_string()),
            ("threshold", self.threshold.to_string()),
            ("exact", self.exact.to_string()),
            ("init", format_init(&self.init)),
            ("init_b", format_init(&self.init_b)),
            ("standard_coupling", self.standard_coupling.to_string()),
            ("bisect", self.bisect.to_string()),
            ("positive_search", self.positive_search.to_string()),
            ("qinf_mode", self.qinf_mode.to_string()),
            ("radius", self.radius.to_string()),
            ("eps_grid", grid(&self.eps_grid)),
            ("s_grid", grid(&self.s_grid)),
            ("format", self.format.to_string()),
            ("out", path(&self.out)),
            ("image", path(&self.image)),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped and
    /// missing keys keep the command's defaults.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        let mut command = None;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key=value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "command" {
                command = Some(v.parse()?);
            } else {
                entries.push((k.to_string(), v.to_string()));
            }
        }
        let command = command.ok_or_else(|| CliError::Usage("config has no command".into()))?;
        let mut cfg = Self::defaults(command);
        for (k, v) in entries {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
            v.parse().map_err(|_| CliError::Usage(format!("{key}: cannot parse {v:?}")))
        }
        let grid = |v: &str| -> Result<Vec<f64>, CliError> {
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',').map(|x| num(key, x.trim())).collect()
        };
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "delta" => self.delta = num(key, v)?,
            "epsilon" => self.epsilon = num(key, v)?,
            "q" => self.q = v.parse().map_err(|_| CliError::Usage(format!("q: cannot parse {v:?}")))?,
            "width" => self.width = num(key, v)?,
            "height" => self.height = num(key, v)?,
            "boundary" => self.boundary = v.parse().map_err(|_| CliError::Usage(format!("boundary: {v:?}")))?,
            "seed" => self.seed = num(key, v)?,
            "replicas" => self.replicas = num(key, v)?,
            "depth" => self.depth = num(key, v)?,
            "s" => self.s = num(key, v)?,
            "k" => self.k = num(key, v)?,
            "h" => self.h = num(key, v)?,
            "threshold" => self.threshold = num(key, v)?,
            "exact" => self.exact = num(key, v)?,
            "init" => self.init = parse_init(v)?,
            "init_b" => self.init_b = parse_init(v)?,
            "standard_coupling" => self.standard_coupling = num(key, v)?,
            "bisect" => self.bisect = num(key, v)?,
            "positive_search" => self.positive_search = num(key, v)?,
            "qinf_mode" => self.qinf_mode = v.parse()?,
            "radius" => self.radius = num(key, v)?,
            "eps_grid" => self.eps_grid = grid(v)?,
            "s_grid" => self.s_grid = grid(v)?,
            "format" => self.format = v.parse()?,
            "out" => self.out = path(v),
            "image" => self.image = path(v),
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Range checks shared by every command.
    pub fn validate(&self) -> Result<(), CliError> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(CliError::Usage(format!("{name} = {x} is not in [0, 1]")))
            }
        };
        unit("delta", self.delta)?;
        unit("epsilon", self.epsilon)?;
        unit("s", self.s)?;
        unit("threshold", self.threshold)?;
        for &e in &self.eps_grid {
            unit("eps_grid entry", e)?;
        }
        for &s in &self.s_grid {
            unit("s_grid entry", s)?;
        }
        if let Colors::Finite(q) = self.q {
            if q < 2 {
                return Err(CliError::Usage(format!("q = {q} must be at least 2")));
            }
        }
        if self.width == 0 || self.width % 2 != 0 {
            return Err(CliError::Usage(format!("width {} must be even and positive", self.width)));
        }
        if self.height == 0 {
            return Err(CliError::Usage("height must be positive".into()));
        }
        if self.replicas == 0 {
            return Err(CliError::Usage("replicas must be positive".into()));
        }
        if !(self.h > 0.0 && self.h < 0.5) {
            return Err(CliError::Usage(format!("h = {} must lie in (0, 0.5)", self.h)));
        }
        if self.radius < 0 {
            return Err(CliError::Usage("radius must be non-negative".into()));
        }
        Ok(())
    }
}
