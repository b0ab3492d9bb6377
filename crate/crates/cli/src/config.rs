//! Experiment configuration: a plain `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mlgface::features::WindowGeometry;
use mlgface::filterbank::FilterParams;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("bad value for `{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Whitened PCA on grey values.
    Pca,
    /// Whitened PCA on log-Gabor magnitudes.
    LgPca,
    /// As `LgPca` with expression masks restricting the feature locations.
    MlgPca,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::LgPca => "lg-pca",
            Method::MlgPca => "mlg-pca",
        }
    }

    pub fn default_mask_mode(self) -> MaskMode {
        match self {
            Method::Pca | Method::LgPca => MaskMode::Elliptical,
            Method::MlgPca => MaskMode::Expression,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(Method::Pca),
            "lg-pca" | "lgpca" => Ok(Method::LgPca),
            "mlg-pca" | "mlgpca" => Ok(Method::MlgPca),
            _ => Err(format!("expected pca, lg-pca or mlg-pca, got {s:?}")),
        }
    }
}

/// Which pixels may contribute features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// The whole 128x128 frame.
    None,
    Elliptical,
    /// Per-orientation expression masks (log-Gabor methods only).
    Expression,
}

impl FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(MaskMode::None),
            "elliptical" | "elliptical-only" => Ok(MaskMode::Elliptical),
            "expression" => Ok(MaskMode::Expression),
            _ => Err(format!(
                "expected none, elliptical or expression, got {s:?}"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub mask_mode: MaskMode,
    pub filter: FilterParams,
    pub window: WindowGeometry,
    pub components: usize,
    /// Root for the image paths listed in the manifests.
    pub images: PathBuf,
    pub landmarks: PathBuf,
    pub train: PathBuf,
    pub gallery: PathBuf,
    pub probes: PathBuf,
    /// `person,expression,image` rows for expression-mask training.
    pub groups: Option<PathBuf>,
    /// Pre-trained expression masks, used instead of `groups`.
    pub mask_file: Option<PathBuf>,
    pub seed: u64,
    pub trials: usize,
    /// Training images sampled per trial; 0 takes the whole training list.
    pub train_size: usize,
    pub targets: Vec<f64>,
    pub out: PathBuf,
}

const KEYS: &[&str] = &[
    "method",
    "mask_mode",
    "lambda0",
    "s_lambda",
    "beta",
    "n_scales",
    "n_orients",
    "s_theta",
    "window",
    "step",
    "components",
    "images",
    "landmarks",
    "train",
    "gallery",
    "probes",
    "groups",
    "mask_file",
    "seed",
    "trials",
    "train_size",
    "targets",
    "out",
];

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        let key = k.trim().to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ConfigError::Duplicate(key));
        }
    }
    Ok(map)
}

fn value<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    map.get(key)
        .map(|s| {
            s.parse::<T>().map_err(|e| ConfigError::Value {
                key: key.to_string(),
                reason: e.to_string(),
            })
        })
        .transpose()
}

pub fn parse_targets(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let map = parse_pairs(text)?;
        let path = |key: &'static str| -> Option<PathBuf> { map.get(key).map(|p| base.join(p)) };
        let required = |key: &'static str| path(key).ok_or(ConfigError::Missing(key));

        let method: Method = value(&map, "method")?.ok_or(ConfigError::Missing("method"))?;
        let mask_mode = value(&map, "mask_mode")?.unwrap_or(method.default_mask_mode());
        let d = FilterParams::default();
        let filter = FilterParams {
            lambda0: value(&map, "lambda0")?.unwrap_or(d.lambda0),
            s_lambda: value(&map, "s_lambda")?.unwrap_or(d.s_lambda),
            beta: value(&map, "beta")?.unwrap_or(d.beta),
            n_scales: value(&map, "n_scales")?.unwrap_or(d.n_scales),
            n_orients: value(&map, "n_orients")?.unwrap_or(d.n_orients),
            s_theta: value(&map, "s_theta")?.unwrap_or(d.s_theta),
            width: d.width,
            height: d.height,
        };
        let side: usize = value(&map, "window")?.unwrap_or(4);
        let window = WindowGeometry {
            width: side,
            height: side,
            step: value(&map, "step")?.unwrap_or(side),
        };
        let targets = match map.get("targets") {
            Some(s) => parse_targets(s).map_err(|reason| ConfigError::Value {
                key: "targets".into(),
                reason,
            })?,
            None => vec![97.0, 98.0, 99.0, 100.0],
        };
        let cfg = ExperimentConfig {
            method,
            mask_mode,
            filter,
            window,
            components: value(&map, "components")?.ok_or(ConfigError::Missing("components"))?,
            images: path("images").unwrap_or_else(|| base.to_path_buf()),
            landmarks: required("landmarks")?,
            train: required("train")?,
            gallery: required("gallery")?,
            probes: required("probes")?,
            groups: path("groups"),
            mask_file: path("mask_file"),
            seed: value(&map, "seed")?.unwrap_or(0),
            trials: value(&map, "trials")?.unwrap_or(1),
            train_size: value(&map, "train_size")?.unwrap_or(0),
            targets,
            out: path("out").unwrap_or_else(|| base.join("out")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.components == 0 {
            return bad("components must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if let Err(e) = self.filter.validate() {
            return bad(e.to_string());
        }
        if self.method != Method::Pca && !self.window.is_disjoint() {
            return bad(format!(
                "step {} is smaller than the {}x{} window; feature vectors of different images \
                 would not line up",
                self.window.step, self.window.width, self.window.height
            ));
        }
        if self.window.width == 0 || self.window.step == 0 {
            return bad("window and step must be at least 1".into());
        }
        match (self.method, self.mask_mode) {
            (Method::MlgPca, MaskMode::Expression) => {
                if self.groups.is_none() && self.mask_file.is_none() {
                    return bad("expression masks need `groups` or `mask_file`".into());
                }
            }
            (Method::MlgPca, m) => {
                return bad(format!("mlg-pca requires expression masks, got {m:?}"))
            }
            (_, MaskMode::Expression) => {
                return bad(format!("{} does not use expression masks", self.method))
            }
            _ => {}
        }
        if let Some(t) = self.targets.iter().find(|t| !(**t > 0.0 && **t <= 100.0)) {
            return bad(format!("target {t} outside (0, 100]"));
        }
        let mut files = vec![&self.landmarks, &self.train, &self.gallery, &self.probes];
        files.extend(self.groups.iter());
        files.extend(self.mask_file.iter());
        for f in files {
            if !f.is_file() {
                return bad(format!("{} does not exist", f.display()));
            }
        }
        Ok(())
    }
}
