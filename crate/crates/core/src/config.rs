//! JSON experiment configuration and its translation into library types.
//!
//! A config file is either a full [`ExperimentConfig`] object or a bare model
//! object (recognised by its top-level `"type"` key). Diagnostics carry the
//! JSON field path and, for syntax and type errors, the line and column.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arrivals::{BaseProcessSpec, PeriodicIntensity};
use crate::error::Error;
use crate::expansions::ServiceModel;
use crate::markov_env::CtmcModel;

pub const DEFAULT_REPS: u64 = 100_000;
pub const DEFAULT_MASTER_SEED: u64 = 0;
pub const DEFAULT_TRUNCATION_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", try_from = "RawModel")]
pub enum ModelConfig {
    Mmpp {
        generator: Vec<Vec<f64>>,
        rates: Vec<f64>,
        initial_state: usize,
    },
    Periodic {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    Constant {
        rate: f64,
    },
    RenewalGamma {
        shape: f64,
        rate: f64,
    },
    Poisson {
        rate: f64,
    },
}

/// Flat form of a model object. Deserializing through a plain struct keeps
/// exact field paths in type errors; the per-type field sets are checked
/// afterwards.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(rename = "type")]
    kind: String,
    generator: Option<Vec<Vec<f64>>>,
    rates: Option<Vec<f64>>,
    initial_state: Option<usize>,
    breakpoints: Option<Vec<f64>>,
    values: Option<Vec<f64>>,
    rate: Option<f64>,
    shape: Option<f64>,
}

impl RawModel {
    fn present(&self) -> [(&'static str, bool); 7] {
        [
            ("generator", self.generator.is_some()),
            ("rates", self.rates.is_some()),
            ("initial_state", self.initial_state.is_some()),
            ("breakpoints", self.breakpoints.is_some()),
            ("values", self.values.is_some()),
            ("rate", self.rate.is_some()),
            ("shape", self.shape.is_some()),
        ]
    }
}

fn required<T>(value: Option<T>, kind: &str, field: &str) -> Result<T, String> {
    value.ok_or_else(|| format!("{kind} models require `{field}`"))
}

impl TryFrom<RawModel> for ModelConfig {
    type Error = String;

    fn try_from(raw: RawModel) -> Result<Self, String> {
        let allowed: &[&str] = match raw.kind.as_str() {
            "mmpp" => &["generator", "rates", "initial_state"],
            "periodic" => &["breakpoints", "values"],
            "constant" | "poisson" => &["rate"],
            "renewal_gamma" => &["shape", "rate"],
            other => {
                return Err(format!(
                    "unknown model type `{other}`, expected one of mmpp, periodic, constant, renewal_gamma, poisson"
                ))
            }
        };
        if let Some((field, _)) = raw
            .present()
            .into_iter()
            .find(|(f, set)| *set && !allowed.contains(f))
        {
            return Err(format!("{} models do not take `{field}`", raw.kind));
        }
        let kind = raw.kind.as_str();
        Ok(match kind {
            "mmpp" => ModelConfig::Mmpp {
                generator: required(raw.generator, kind, "generator")?,
                rates: required(raw.rates, kind, "rates")?,
                initial_state: raw.initial_state.unwrap_or(0),
            },
            "periodic" => ModelConfig::Periodic {
                breakpoints: required(raw.breakpoints, kind, "breakpoints")?,
                values: required(raw.values, kind, "values")?,
            },
            "constant" => ModelConfig::Constant {
                rate: required(raw.rate, kind, "rate")?,
            },
            "poisson" => ModelConfig::Poisson {
                rate: required(raw.rate, kind, "rate")?,
            },
            _ => ModelConfig::RenewalGamma {
                shape: required(raw.shape, kind, "shape")?,
                rate: required(raw.rate, kind, "rate")?,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    #[default]
    Count,
    Queue,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Count => "count",
            Kind::Queue => "queue",
        }
    }
}

/// Experiment description. After [`ExperimentConfig::resolve`] every defaulted
/// field is filled in; `output` and `workers` never appear in serialized
/// form since they do not affect results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<ServiceModel>,
    #[serde(default)]
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kmax: Option<usize>,
    #[serde(default, skip_serializing)]
    pub output: Option<String>,
    /// Worker threads; 0 picks the number of available cores.
    #[serde(default, skip_serializing)]
    pub workers: usize,
    #[serde(default)]
    pub tv_limit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_mass: Option<f64>,
}

/// A config problem located at a JSON field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn from_json_error<T>(
    result: Result<T, serde_path_to_error::Error<serde_json::Error>>,
    prefix: &str,
) -> Result<T, ConfigError> {
    result.map_err(|e| {
        let path = e.path().to_string();
        let path = match (prefix, path.as_str()) {
            (p, ".") => p.to_string(),
            ("", q) => q.to_string(),
            (p, q) => format!("{p}.{q}"),
        };
        let inner = e.inner();
        ConfigError::new(path, format!("{inner}"))
    })
}

/// Parses a config document, accepting a bare model object as shorthand.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| ConfigError::new("", format!("malformed JSON: {e}")))?;
    let bare = value.as_object().is_some_and(|o| o.contains_key("type"));
    let mut de = serde_json::Deserializer::from_str(text);
    if bare {
        let model = from_json_error(serde_path_to_error::deserialize(&mut de), "model")?;
        Ok(ExperimentConfig::bare(model))
    } else {
        from_json_error(serde_path_to_error::deserialize(&mut de), "")
    }
}

impl ExperimentConfig {
    pub fn bare(model: ModelConfig) -> Self {
        ExperimentConfig {
            model,
            service: None,
            kind: Kind::Count,
            eps: None,
            eps_grid: None,
            t: None,
            reps: None,
            master_seed: None,
            kmax: None,
            output: None,
            workers: 0,
            tv_limit: false,
            truncation_mass: None,
        }
    }

    /// Fills defaults for replication count, seed and truncation mass.
    pub fn resolve(mut self) -> Self {
        self.reps.get_or_insert(DEFAULT_REPS);
        self.master_seed.get_or_insert(DEFAULT_MASTER_SEED);
        self.truncation_mass.get_or_insert(DEFAULT_TRUNCATION_MASS);
        self
    }

    pub fn reps(&self) -> u64 {
        self.reps.unwrap_or(DEFAULT_REPS)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed.unwrap_or(DEFAULT_MASTER_SEED)
    }

    pub fn truncation_mass(&self) -> f64 {
        self.truncation_mass.unwrap_or(DEFAULT_TRUNCATION_MASS)
    }

    pub fn require_t(&self) -> Result<f64, ConfigError> {
        match self.t {
            Some(t) if t.is_finite() && t >= 0.0 => Ok(t),
            Some(t) => Err(ConfigError::new(
                "t",
                format!("{t} must be finite and nonnegative"),
            )),
            None => Err(ConfigError::new("t", "missing field")),
        }
    }

    pub fn require_eps(&self) -> Result<f64, ConfigError> {
        match self.eps {
            Some(e) if (0.0..=1.0).contains(&e) => Ok(e),
            Some(e) => Err(ConfigError::new("eps", format!("{e} is not in [0, 1]"))),
            None if self.eps_grid.is_some() => Err(ConfigError::new(
                "eps",
                "missing field (eps_grid is only used by validate)",
            )),
            None => Err(ConfigError::new("eps", "missing field")),
        }
    }

    pub fn require_eps_grid(&self) -> Result<&[f64], ConfigError> {
        let grid = self
            .eps_grid
            .as_deref()
            .ok_or_else(|| ConfigError::new("eps_grid", "missing field"))?;
        if grid.is_empty() {
            return Err(ConfigError::new("eps_grid", "must not be empty"));
        }
        for (i, &e) in grid.iter().enumerate() {
            if !(e > 0.0 && e <= 1.0) {
                return Err(ConfigError::new(
                    format!("eps_grid[{i}]"),
                    format!("{e} is not in (0, 1]"),
                ));
            }
            if i > 0 && e >= grid[i - 1] {
                return Err(ConfigError::new(
                    format!("eps_grid[{i}]"),
                    "grid must be strictly decreasing",
                ));
            }
        }
        Ok(grid)
    }

    /// The service spec, required for queue experiments and validated.
    pub fn service(&self) -> Result<Option<ServiceModel>, ConfigError> {
        match (&self.service, self.kind) {
            (None, Kind::Queue) => Err(ConfigError::new(
                "service",
                "queue experiments require a service spec",
            )),
            (Some(s), _) => {
                s.validate().map_err(|e| service_error(&e))?;
                Ok(Some(*s))
            }
            (None, Kind::Count) => Ok(None),
        }
    }

    /// Rejects option combinations that do not apply to the model type.
    pub fn check_consistency(&self) -> Result<(), ConfigError> {
        let modulated = matches!(
            self.model,
            ModelConfig::Mmpp { .. } | ModelConfig::Constant { .. }
        );
        if !modulated {
            if self.service.is_some() {
                return Err(ConfigError::new(
                    "service",
                    format!("not supported for {} models", self.model.type_name()),
                ));
            }
            if self.kind == Kind::Queue {
                return Err(ConfigError::new(
                    "kind",
                    format!(
                        "queue experiments need an mmpp or constant model, got {}",
                        self.model.type_name()
                    ),
                ));
            }
            if self.tv_limit {
                return Err(ConfigError::new(
                    "tv_limit",
                    format!(
                        "only defined for mmpp or constant models, got {}",
                        self.model.type_name()
                    ),
                ));
            }
        }
        if let Some(m) = self.truncation_mass {
            if !(m > 0.0 && m < 1.0) {
                return Err(ConfigError::new(
                    "truncation_mass",
                    format!("{m} is not in (0, 1)"),
                ));
            }
        }
        if self.reps == Some(0) {
            return Err(ConfigError::new("reps", "must be at least 1"));
        }
        Ok(())
    }
}

fn service_error(e: &Error) -> ConfigError {
    match e {
        Error::InvalidParameter { name, reason } => {
            ConfigError::new(format!("service.{name}"), reason.clone())
        }
        other => ConfigError::new("service", other.to_string()),
    }
}

fn model_error(e: Error) -> ConfigError {
    let path = match &e {
        Error::NonSquare { bad_row, .. } => format!("model.generator[{bad_row}]"),
        Error::NonFinite { row, col } | Error::NegativeOffDiagonal { row, col, .. } => {
            format!("model.generator[{row}][{col}]")
        }
        Error::RowSumNonzero { row, .. } => format!("model.generator[{row}]"),
        Error::Reducible { .. } => "model.generator".to_string(),
        Error::ZeroMeanRate => "model.values".to_string(),
        Error::InvalidParameter { name, .. } => format!("model.{name}"),
        _ => "model".to_string(),
    };
    let message = match e {
        Error::InvalidParameter { reason, .. } => reason,
        other => other.to_string(),
    };
    ConfigError::new(path, message)
}

impl ModelConfig {
    pub fn type_name(&self) -> &'static str {
        match self {
            ModelConfig::Mmpp { .. } => "mmpp",
            ModelConfig::Periodic { .. } => "periodic",
            ModelConfig::Constant { .. } => "constant",
            ModelConfig::RenewalGamma { .. } => "renewal_gamma",
            ModelConfig::Poisson { .. } => "poisson",
        }
    }

    /// The Markov-modulated model, for `mmpp` and `constant` types.
    pub fn ctmc(&self) -> Result<CtmcModel, ConfigError> {
        match self {
            ModelConfig::Mmpp {
                generator,
                rates,
                initial_state,
            } => {
                CtmcModel::from_rows(generator, rates.clone(), *initial_state).map_err(model_error)
            }
            ModelConfig::Constant { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(ConfigError::new(
                        "model.rate",
                        format!("{rate} must be positive and finite"),
                    ));
                }
                CtmcModel::constant(*rate).map_err(model_error)
            }
            other => Err(ConfigError::new(
                "model.type",
                format!("expected mmpp or constant, got {}", other.type_name()),
            )),
        }
    }

    pub fn periodic(&self) -> Result<Option<PeriodicIntensity>, ConfigError> {
        match self {
            ModelConfig::Periodic {
                breakpoints,
                values,
            } => PeriodicIntensity::new(breakpoints.clone(), values.clone())
                .map(Some)
                .map_err(model_error),
            _ => Ok(None),
        }
    }

    /// Renewal-type base processes; `None` for the other model types.
    pub fn base(&self) -> Result<Option<BaseProcessSpec>, ConfigError> {
        let base = match self {
            ModelConfig::RenewalGamma { shape, rate } => BaseProcessSpec::RenewalGamma {
                shape: *shape,
                rate: *rate,
            },
            ModelConfig::Poisson { rate } => BaseProcessSpec::Poisson { rate: *rate },
            _ => return Ok(None),
        };
        base.validate().map_err(model_error)?;
        Ok(Some(base))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_and_bare_configs() {
        let bare =
            parse_config(r#"{"type":"mmpp","generator":[[-1,1],[1,-1]],"rates":[0,2]}"#).unwrap();
        assert_eq!(bare.kind, Kind::Count);
        assert!(bare.t.is_none());
        bare.model.ctmc().unwrap();

        let full = parse_config(
            r#"{"model":{"type":"periodic","breakpoints":[0,0.5],"values":[2,0]},
                "eps":0.1,"t":2.0,"reps":10}"#,
        )
        .unwrap();
        assert_eq!(full.reps(), 10);
        assert!(full.model.periodic().unwrap().is_some());
    }

    #[test]
    fn diagnostics_carry_field_paths() {
        let e = parse_config(
            r#"{"model":{"type":"mmpp","generator":[[-1,1],[1,-1]],"rates":[0,"x"]}}"#,
        )
        .unwrap_err();
        assert_eq!(e.path, "model.rates[1]");
        assert!(e.message.contains("line"));

        let e =
            parse_config(r#"{"model":{"type":"constant","rate":1},"epsilon":0.1}"#).unwrap_err();
        assert!(e.message.contains("epsilon"), "{e}");

        let e =
            parse_config(r#"{"type":"periodic","breakpoints":[0],"values":[1],"initial_state":0}"#)
                .unwrap_err();
        assert!(e.message.contains("initial_state"), "{e}");

        let e = parse_config("{\"model\": ").unwrap_err();
        assert!(e.message.starts_with("malformed JSON"));
    }

    #[test]
    fn semantic_errors_are_located() {
        let cfg =
            parse_config(r#"{"type":"mmpp","generator":[[-1,1],[-1,1]],"rates":[0,2]}"#).unwrap();
        let e = cfg.model.ctmc().unwrap_err();
        assert_eq!(e.path, "model.generator[1][0]");

        let cfg =
            parse_config(r#"{"model":{"type":"constant","rate":1},"kind":"queue","t":1}"#).unwrap();
        assert_eq!(cfg.service().unwrap_err().path, "service");

        let cfg =
            parse_config(r#"{"model":{"type":"constant","rate":1},"eps_grid":[0.1,0.2]}"#).unwrap();
        assert_eq!(cfg.require_eps_grid().unwrap_err().path, "eps_grid[1]");

        let cfg = parse_config(
            r#"{"model":{"type":"poisson","rate":1},"service":{"type":"exponential","rate":1}}"#,
        )
        .unwrap();
        assert_eq!(cfg.check_consistency().unwrap_err().path, "service");
    }

    #[test]
    fn resolved_config_omits_runtime_fields() {
        let mut cfg = parse_config(
            r#"{"model":{"type":"constant","rate":1},"t":1,"workers":8,"output":"x.csv"}"#,
        )
        .unwrap()
        .resolve();
        let a = serde_json::to_string(&cfg).unwrap();
        cfg.workers = 1;
        cfg.output = None;
        assert_eq!(a, serde_json::to_string(&cfg).unwrap());
        assert!(!a.contains("workers") && !a.contains("output"));
        assert!(a.contains("\"reps\":100000"));
    }
}
