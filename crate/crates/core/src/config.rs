//! TOML run configuration.
//!
//! ```toml
//! [domain]
//! d = 1
//! L = 1.0
//! M = 64
//!
//! [model]
//! m0 = 0.05        # or mu = ...
//! kappa = 0.4
//!
//! [kernel]
//! family = "smoothed_indicator"
//! amplitude = 1.0
//! radius = 0.15
//! mollifier_width = 0.05
//!
//! [integrator]
//! kind = "imex"    # rk4 | jko | imex_canonical | rk4_canonical
//! h = 1e-3         # optional
//! T = 1.0
//!
//! [initial]
//! kind = "single_mode"
//! k = [1]
//! eps = 0.05
//! ```
//!
//! `[jko]` and `[output]` are optional. Unknown keys are errors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Ensemble, Integrator};
use crate::experiments::InitialCondition;
use crate::jko::JkoSettings;
use crate::kernels::{build_kernel, KernelFamily};
use crate::spectral::Grid;
use crate::thermo::ModelParams;

/// Schema identifier reported by `--version`.
pub const CONFIG_SCHEMA_VERSION: &str = "gcflow-config/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error{}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default(), if field.is_empty() { String::new() } else { format!(" in `{field}`") })]
    Parse { line: Option<usize>, field: String, message: String },
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Validation { field: field.into(), reason: reason.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "M")]
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    pub kappa: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    Imex,
    Rk4,
    Jko,
    ImexCanonical,
    Rk4Canonical,
}

impl IntegratorKind {
    pub fn name(self) -> &'static str {
        match self {
            IntegratorKind::Imex => "imex",
            IntegratorKind::Rk4 => "rk4",
            IntegratorKind::Jko => "jko",
            IntegratorKind::ImexCanonical => "imex_canonical",
            IntegratorKind::Rk4Canonical => "rk4_canonical",
        }
    }

    pub fn ensemble(self) -> Ensemble {
        match self {
            IntegratorKind::ImexCanonical | IntegratorKind::Rk4Canonical => Ensemble::Canonical,
            _ => Ensemble::Grand,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub kind: IntegratorKind,
    /// Falls back to the default step for the model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(rename = "T")]
    pub t_final: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub stride: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { stride: 1, out_dir: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub model: ModelConfig,
    pub kernel: KernelFamily,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub jko: JkoSettings<f64>,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub output: OutputConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn field_of(path: &serde_path_to_error::Path) -> String {
    let p = path.to_string();
    if p == "." { String::new() } else { p }
}

/// Parses the value of a `key=value` override as TOML, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl RunConfig {
    /// Parses and validates a configuration document.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg = Self::parse_unchecked(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_unchecked(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse {
            line: e.span().map(|s| line_of(text, s.start)),
            field: String::new(),
            message: e.message().to_string(),
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = field_of(e.path());
            let inner = e.into_inner();
            ConfigError::Parse {
                line: inner.span().map(|s| line_of(text, s.start)),
                field,
                message: inner.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with_overrides(path, &[])
    }

    /// Loads `path` and applies `key=value` overrides with dotted keys, e.g. `model.kappa=0.3`.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return Self::from_toml_str(text);
        }
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            line: e.span().map(|s| line_of(text, s.start)),
            field: String::new(),
            message: e.message().to_string(),
        })?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::invalid(item, "override must have the form key=value"))?;
            let key = key.trim();
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigError::invalid(key, "empty key"))?;
            let mut node = &mut table;
            for part in parts {
                let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
                node = entry
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::invalid(key, format!("`{part}` is not a table")))?;
            }
            node.insert(leaf.to_string(), override_value(raw.trim()));
        }
        let cfg: Self = serde_path_to_error::deserialize(table).map_err(|e| ConfigError::Parse {
            line: None,
            field: field_of(e.path()),
            message: e.into_inner().message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configurations always serialize")
    }

    pub fn grid(&self) -> Result<Grid<f64>, ConfigError> {
        Grid::new(self.domain.d, self.domain.length, self.domain.points)
            .map_err(|e| ConfigError::invalid("domain", e.to_string()))
    }

    pub fn model_params(&self) -> Result<ModelParams<f64>, ConfigError> {
        let grid = self.grid()?;
        let kernel = Arc::new(build_kernel(&self.kernel, &grid).map_err(|e| ConfigError::invalid("kernel", e.to_string()))?);
        let m = &self.model;
        let params = match (m.mu, m.m0) {
            (Some(mu), None) => ModelParams::from_mu(kernel, mu, m.kappa),
            (None, Some(m0)) => ModelParams::from_m0(kernel, m0, m.kappa),
            _ => return Err(ConfigError::invalid("model", "give exactly one of `mu` and `m0`")),
        };
        params.map_err(|e| ConfigError::invalid("model", e.to_string()))
    }

    pub fn integrator_for(&self) -> Integrator<f64> {
        match self.integrator.kind {
            IntegratorKind::Imex => Integrator::Imex,
            IntegratorKind::Rk4 => Integrator::Rk4,
            IntegratorKind::ImexCanonical => Integrator::ImexCanonical,
            IntegratorKind::Rk4Canonical => Integrator::Rk4Canonical,
            IntegratorKind::Jko => Integrator::Jko(self.jko.clone()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let dom = &self.domain;
        if !(1..=2).contains(&dom.d) {
            return Err(ConfigError::invalid("domain.d", format!("must be 1 or 2, got {}", dom.d)));
        }
        if !(dom.length.is_finite() && dom.length > 0.0) {
            return Err(ConfigError::invalid("domain.L", format!("must be positive, got {}", dom.length)));
        }
        if dom.points < 8 || !dom.points.is_power_of_two() {
            return Err(ConfigError::invalid("domain.M", format!("must be a power of two >= 8, got {}", dom.points)));
        }
        let m = &self.model;
        if !(m.kappa > 0.0 && m.kappa < 0.5) {
            return Err(ConfigError::invalid("model.kappa", format!("must lie in (0, 1/2), got {}", m.kappa)));
        }
        match (m.mu, m.m0) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(ConfigError::invalid("model", "give exactly one of `mu` and `m0`"))
            }
            (None, Some(m0)) if !(m0.is_finite() && m0 > 0.0) => {
                return Err(ConfigError::invalid("model.m0", format!("must be positive, got {m0}")))
            }
            (Some(mu), None) if !mu.is_finite() => return Err(ConfigError::invalid("model.mu", "must be finite")),
            _ => {}
        }
        let it = &self.integrator;
        if !(it.t_final.is_finite() && it.t_final > 0.0) {
            return Err(ConfigError::invalid("integrator.T", format!("must be positive, got {}", it.t_final)));
        }
        if let Some(h) = it.h {
            if !(h.is_finite() && h > 0.0 && h <= it.t_final) {
                return Err(ConfigError::invalid("integrator.h", format!("must lie in (0, T], got {h}")));
            }
        }
        self.jko.validate().map_err(|r| ConfigError::invalid("jko", r))?;
        if self.output.stride == 0 {
            return Err(ConfigError::invalid("output.stride", "must be at least 1"));
        }
        self.initial.validate(dom.d, m.kappa).map_err(|r| ConfigError::invalid("initial", r))?;
        self.model_params()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[domain]
d = 1
L = 1.0
M = 64

[model]
m0 = 0.05
kappa = 0.4

[kernel]
family = "smoothed_indicator"
amplitude = 1.0
radius = 0.15
mollifier_width = 0.05

[integrator]
kind = "imex"
h = 1e-3
T = 1.0

[initial]
kind = "single_mode"
k = [1]
eps = 0.05
"#;

    #[test]
    fn load_dump_load_is_identity() {
        let cfg = RunConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.jko, JkoSettings::default());
        assert_eq!(cfg.output.stride, 1);
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_report_field_and_line() {
        let text = BASE.replace("kappa = 0.4", "kappa = 0.4\nkapa = 0.3");
        match RunConfig::from_toml_str(&text).unwrap_err() {
            ConfigError::Parse { line, field, message } => {
                assert_eq!(line, Some(10));
                assert_eq!(field, "model.kapa");
                assert!(message.contains("kapa"), "{message}");
            }
            e => panic!("{e}"),
        }
        let text = BASE.replace("M = 64", "M = \"big\"");
        match RunConfig::from_toml_str(&text).unwrap_err() {
            ConfigError::Parse { line, field, .. } => {
                assert_eq!(line, Some(5));
                assert_eq!(field, "domain.M");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn validation_errors_name_the_field() {
        let field = |text: &str| match RunConfig::from_toml_str(text).unwrap_err() {
            ConfigError::Validation { field, .. } => field,
            e => panic!("{e}"),
        };
        assert_eq!(field(&BASE.replace("M = 64", "M = 48")), "domain.M");
        assert_eq!(field(&BASE.replace("kappa = 0.4", "kappa = 0.5")), "model.kappa");
        assert_eq!(field(&BASE.replace("m0 = 0.05", "m0 = 0.05\nmu = -3.0")), "model");
        assert_eq!(field(&BASE.replace("radius = 0.15", "radius = 0.3")), "kernel");
        assert_eq!(field(&BASE.replace("eps = 0.05", "eps = 1.5")), "initial");
    }

    #[test]
    fn overrides_apply_dotted_keys() {
        let sets = vec!["model.kappa=0.3".to_string(), "integrator.kind=rk4".into(), "jko.max_inner = 50".into()];
        let cfg = RunConfig::from_toml_with_overrides(BASE, &sets).unwrap();
        assert_eq!(cfg.model.kappa, 0.3);
        assert_eq!(cfg.integrator.kind, IntegratorKind::Rk4);
        assert_eq!(cfg.jko.max_inner, 50);
        let err = RunConfig::from_toml_with_overrides(BASE, &["model.kapa=0.3".into()]).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { ref field, .. } if field == "model.kapa"), "{err}");
        assert!(RunConfig::from_toml_with_overrides(BASE, &["noequals".into()]).is_err());
    }

    #[test]
    fn mu_and_m0_agree() {
        let cfg = RunConfig::from_toml_str(BASE).unwrap();
        let p = cfg.model_params().unwrap();
        let by_mu = BASE.replace("m0 = 0.05", &format!("mu = {}", p.mu()));
        let q = RunConfig::from_toml_str(&by_mu).unwrap().model_params().unwrap();
        assert!((q.m0() - 0.05).abs() < 1e-14);
    }
}
