//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mbtrack::admm::AdmmParams;
use mbtrack::synthlab::Preset;
use mbtrack::tracker::{Method, TrackerConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key '{key}' given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for '{key}': {msg}")]
    Value {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Every knob of a run. Defaults follow the published parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    /// Odd patch side length in pixels.
    pub patch: usize,
    pub levels: usize,
    pub max_taylor: usize,
    pub eps_outer: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub rho0: f64,
    pub rho_max: f64,
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Noise variance injected into frames before tracking (0 for none).
    pub sigma2: f64,
    pub seed: u64,
    /// Tracking-error tolerance in pixels.
    pub eps: f64,
    /// Number of motions for segmentation.
    pub k: usize,
    pub preset: Preset,
    pub input: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub overlays: bool,
    pub baseline: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrackerConfig::default();
        Self {
            method: t.method,
            patch: 2 * t.half + 1,
            levels: t.levels,
            max_taylor: t.max_taylor,
            eps_outer: t.eps_outer,
            gamma: t.admm.gamma,
            lambda: t.admm.lambda,
            rho0: t.admm.rho0,
            rho_max: t.admm.rho_max,
            eta: t.admm.eta,
            tol: t.admm.tol,
            max_iter: t.admm.max_iter,
            sigma2: 0.0,
            seed: 0,
            eps: 5.0,
            k: 2,
            preset: Preset::TwoBody,
            input: None,
            features: None,
            truth: None,
            out: None,
            overlays: false,
            baseline: false,
        }
    }
}

const KEYS: [&str; 23] = [
    "method",
    "patch",
    "levels",
    "max_taylor",
    "eps_outer",
    "gamma",
    "lambda",
    "rho0",
    "rho_max",
    "eta",
    "tol",
    "max_iter",
    "sigma2",
    "seed",
    "eps",
    "k",
    "preset",
    "input",
    "features",
    "truth",
    "out",
    "overlays",
    "baseline",
];

fn parse_value<T: FromStr>(raw: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| e.to_string())
}

fn path_value(raw: &str) -> Option<PathBuf> {
    (!raw.is_empty()).then(|| PathBuf::from(raw))
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), String> {
        match key {
            "method" => self.method = parse_value(raw)?,
            "patch" => self.patch = parse_value(raw)?,
            "levels" => self.levels = parse_value(raw)?,
            "max_taylor" => self.max_taylor = parse_value(raw)?,
            "eps_outer" => self.eps_outer = parse_value(raw)?,
            "gamma" => self.gamma = parse_value(raw)?,
            "lambda" => self.lambda = parse_value(raw)?,
            "rho0" => self.rho0 = parse_value(raw)?,
            "rho_max" => self.rho_max = parse_value(raw)?,
            "eta" => self.eta = parse_value(raw)?,
            "tol" => self.tol = parse_value(raw)?,
            "max_iter" => self.max_iter = parse_value(raw)?,
            "sigma2" => self.sigma2 = parse_value(raw)?,
            "seed" => self.seed = parse_value(raw)?,
            "eps" => self.eps = parse_value(raw)?,
            "k" => self.k = parse_value(raw)?,
            "preset" => self.preset = Preset::from_name(raw).map_err(|e| e.to_string())?,
            "input" => self.input = path_value(raw),
            "features" => self.features = path_value(raw),
            "truth" => self.truth = path_value(raw),
            "out" => self.out = path_value(raw),
            "overlays" => self.overlays = parse_value(raw)?,
            "baseline" => self.baseline = parse_value(raw)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or(String::new(), |p| p.display().to_string())
        };
        match key {
            "method" => self.method.name().to_string(),
            "patch" => self.patch.to_string(),
            "levels" => self.levels.to_string(),
            "max_taylor" => self.max_taylor.to_string(),
            "eps_outer" => self.eps_outer.to_string(),
            "gamma" => self.gamma.to_string(),
            "lambda" => self.lambda.to_string(),
            "rho0" => self.rho0.to_string(),
            "rho_max" => self.rho_max.to_string(),
            "eta" => self.eta.to_string(),
            "tol" => self.tol.to_string(),
            "max_iter" => self.max_iter.to_string(),
            "sigma2" => self.sigma2.to_string(),
            "seed" => self.seed.to_string(),
            "eps" => self.eps.to_string(),
            "k" => self.k.to_string(),
            "preset" => self.preset.name().to_string(),
            "input" => path(&self.input),
            "features" => path(&self.features),
            "truth" => path(&self.truth),
            "out" => path(&self.out),
            "overlays" => self.overlays.to_string(),
            "baseline" => self.baseline.to_string(),
            _ => unreachable!("KEYS lists every field"),
        }
    }

    /// Applies a config file on top of `self`. Blank lines and `#` comments are skipped.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            if seen.contains(&key) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            seen.push(key);
            self.set(key, value).map_err(|msg| ConfigError::Value {
                line,
                key: key.to_string(),
                msg,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    /// Every key, one per line, in a fixed order. `parse(dump())` gives back `self`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key)).expect("writing to a String");
        }
        out
    }

    pub fn admm(&self) -> AdmmParams {
        AdmmParams {
            gamma: self.gamma,
            lambda: self.lambda,
            rho0: self.rho0,
            rho_max: self.rho_max,
            eta: self.eta,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn tracker(&self) -> Result<TrackerConfig, ConfigError> {
        if self.patch.is_multiple_of(2) || self.patch < 3 {
            return Err(ConfigError::Invalid(format!(
                "patch must be an odd size of at least 3, got {}",
                self.patch
            )));
        }
        let cfg = TrackerConfig {
            method: self.method,
            levels: self.levels,
            max_taylor: self.max_taylor,
            eps_outer: self.eps_outer,
            half: self.patch / 2,
            admm: self.admm(),
            ..TrackerConfig::default()
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Range checks that do not depend on the command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tracker()?;
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "sigma2 must be >= 0, got {}",
                self.sigma2
            )));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "eps must be >= 0, got {}",
                self.eps
            )));
        }
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        Ok(())
    }

    /// Reads the `run.cfg` written next to a command's outputs, if any.
    pub fn sidecar(dir: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(dir.join(RUN_CONFIG_FILE)).ok()?;
        Self::parse(&text).ok()
    }
}

pub const RUN_CONFIG_FILE: &str = "run.cfg";
