//! Flat `key=value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key has a declared type and
//! default. Environment variables `TEXLAB_<KEY>` override file values, with `__`
//! standing for `.` (`TEXLAB_GAN__STEPS=10` sets `gan.steps`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_PREFIX: &str = "TEXLAB_";
/// Variables under the prefix that are not config keys.
pub const RESERVED_ENV: &[&str] = &["TEXLAB_ACCEPTANCE_CACHE", "TEXLAB_ACCEPTANCE_STRICT"];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("config key `{key}` expects {expected}, got `{got}`")]
    Type { key: String, expected: String, got: String },
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kind {
    Int,
    Float,
    Bool,
    Str,
    /// Comma-separated unsigned integers.
    IntList,
    Choice(&'static [&'static str]),
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Int => write!(f, "a non-negative integer"),
            Kind::Float => write!(f, "a finite number"),
            Kind::Bool => write!(f, "true or false"),
            Kind::Str => write!(f, "a string"),
            Kind::IntList => write!(f, "a comma-separated list of integers"),
            Kind::Choice(opts) => write!(f, "one of {}", opts.join("|")),
        }
    }
}

/// `(key, kind, default)` for every configurable.
pub const SCHEMA: &[(&str, Kind, &str)] = &[
    ("seed", Kind::Int, "0"),
    ("output_dir", Kind::Str, "runs"),
    ("corpus.crop_size", Kind::Int, "32"),
    ("corpus.base_size", Kind::Int, "128"),
    ("corpus.families_per_kind", Kind::Int, "2"),
    ("corpus.crops_per_family", Kind::Int, "40"),
    ("corpus.input_dir", Kind::Str, ""),
    ("model.latent_dim", Kind::Int, "32"),
    ("model.synthesis_width", Kind::Int, "32"),
    ("model.discriminator_width", Kind::Int, "16"),
    ("model.encoder_width", Kind::Int, "32"),
    ("model.feature_channels", Kind::IntList, "16,32,64,64"),
    ("gan.steps", Kind::Int, "3000"),
    ("gan.batch_size", Kind::Int, "16"),
    ("gan.lr_g", Kind::Float, "0.002"),
    ("gan.lr_d", Kind::Float, "0.002"),
    ("gan.mapping_lr_mul", Kind::Float, "0.01"),
    ("gan.beta1", Kind::Float, "0"),
    ("gan.beta2", Kind::Float, "0.99"),
    ("gan.r1_weight", Kind::Float, "1"),
    ("gan.r1_interval", Kind::Int, "4"),
    ("gan.loss_form", Kind::Choice(&["nonsaturating", "wasserstein"]), "nonsaturating"),
    ("gan.checkpoint_every", Kind::Int, "500"),
    ("encoder.steps", Kind::Int, "10000"),
    ("encoder.batch_size", Kind::Int, "32"),
    ("encoder.lr", Kind::Float, "0.0001"),
    ("encoder.lr_decay_factor", Kind::Float, "0.2"),
    ("encoder.lr_decay_every", Kind::Int, "4000"),
    ("encoder.checkpoint_every", Kind::Int, "2000"),
    ("encoder.mean_w_samples", Kind::Int, "4096"),
    ("invert.init", Kind::Choice(&["encoder", "mean_w", "random"]), "encoder"),
    ("invert.loss", Kind::Choice(&["style", "pixel", "content"]), "style"),
    ("invert.max_iters", Kind::Int, "500"),
    ("invert.lr", Kind::Float, "0.01"),
    ("invert.tol", Kind::Float, "0.00001"),
    ("invert.update_rule", Kind::Choice(&["adam", "gradient"]), "adam"),
    ("invert.restarts", Kind::Int, "0"),
    ("invert.input", Kind::Str, ""),
    ("interpolate.mode", Kind::Choice(&["global", "local", "gram"]), "global"),
    ("interpolate.steps", Kind::Int, "8"),
    ("interpolate.transform", Kind::Str, "scale:2"),
    ("interpolate.pixel_iters", Kind::Int, "500"),
    ("interpolate.pixel_lr", Kind::Float, "0.01"),
    ("interpolate.noise_std", Kind::Float, "0.2"),
    ("crops.count", Kind::Int, "8"),
    ("crops.sigma", Kind::Float, "0.1"),
    ("eval.protocol", Kind::Choice(&["table1", "table2", "fig9", "all"]), "all"),
    ("eval.crops", Kind::Int, "20"),
    ("eval.generated", Kind::Int, "50"),
    ("eval.error_samples", Kind::Int, "1000"),
    ("eval.histogram_bins", Kind::Int, "40"),
];

fn kind_of(key: &str) -> Option<Kind> {
    SCHEMA.iter().find(|(k, _, _)| *k == key).map(|(_, kind, _)| *kind)
}

/// Canonical text of `raw` for `kind`, or a type error.
fn normalize(key: &str, kind: Kind, raw: &str) -> Result<String, ConfigError> {
    let bad = || ConfigError::Type { key: key.into(), expected: kind.to_string(), got: raw.into() };
    let v = raw.trim();
    Ok(match kind {
        Kind::Int => v.parse::<u64>().map_err(|_| bad())?.to_string(),
        Kind::Float => {
            let f = v.parse::<f64>().map_err(|_| bad())?;
            if !f.is_finite() {
                return Err(bad());
            }
            format!("{f:?}")
        }
        Kind::Bool => v.parse::<bool>().map_err(|_| bad())?.to_string(),
        Kind::Str => v.to_string(),
        Kind::IntList => {
            let items = v.split(',').map(|s| s.trim().parse::<u64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad())?;
            if items.is_empty() {
                return Err(bad());
            }
            items.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
        }
        Kind::Choice(opts) => {
            if !opts.contains(&v) {
                return Err(bad());
            }
            v.to_string()
        }
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = SCHEMA
            .iter()
            .map(|(k, kind, d)| (k.to_string(), normalize(k, *kind, d).expect("schema defaults are valid")))
            .collect();
        Self { values }
    }
}

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse { line: line_no, message: format!("expected key=value, got `{content}`") })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Parse { line: line_no, message: "empty key".into() });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Parse { line: line_no, message: format!("duplicate key `{key}`") });
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.normalized())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let kind = kind_of(key).ok_or_else(|| ConfigError::UnknownKey { key: key.into() })?;
        self.values.insert(key.to_string(), normalize(key, kind, value)?);
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse { line: 0, message: format!("override `{pair}` is not key=value") })?;
        self.set(k.trim(), v)
    }

    /// Applies `TEXLAB_*` variables from `vars`; names outside the schema are rejected.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), ConfigError> {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| !RESERVED_ENV.contains(&k.as_str()))
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_ascii_lowercase().replace("__", "."), v)))
            .collect();
        pairs.sort();
        for (k, v) in pairs {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Sorted `key=value` lines.
    pub fn normalized(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.normalized().as_bytes()))
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("`{key}` is not a config key"))
    }

    pub fn int(&self, key: &str) -> usize {
        self.raw(key).parse().expect("validated integer")
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.raw(key).parse().expect("validated integer")
    }

    pub fn float(&self, key: &str) -> f64 {
        self.raw(key).parse().expect("validated number")
    }

    pub fn string(&self, key: &str) -> String {
        self.raw(key).to_string()
    }

    pub fn int_list(&self, key: &str) -> Vec<usize> {
        self.raw(key).split(',').map(|s| s.parse().expect("validated list")).collect()
    }

    pub fn seed(&self) -> u64 {
        self.u64("seed")
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("output_dir"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}
