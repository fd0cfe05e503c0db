//! TOML run configuration.
//!
//! Relative paths are resolved against the directory of the config file.
//! Input files must exist when the config is loaded; state, output and outbox
//! locations are created on demand.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ccl_core::analytics::Granularity;
use ccl_core::engine::DEFAULT_COMPLETION;
use ccl_core::event::{parse_timestamp, Timestamp};
use ccl_core::network::{LayoutParams, DEFAULT_SYSTEMIC_THRESHOLD};
use serde::Deserialize;
use thiserror::Error;

use crate::dispatch::validate_endpoint;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config {path}: {what} `{target}` does not exist")]
    MissingPath { path: String, what: &'static str, target: String },
}

impl ConfigError {
    pub fn exit_code(&self) -> u8 {
        match self {
            ConfigError::Parse { .. } => 2,
            ConfigError::Io { .. } | ConfigError::MissingPath { .. } => 3,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    registry: PathBuf,
    #[serde(default = "default_state")]
    state: PathBuf,
    #[serde(default = "default_output")]
    output_dir: PathBuf,
    outbox: Option<PathBuf>,
    #[serde(default = "default_completion")]
    completion: Vec<String>,
    clock: Option<String>,
    #[serde(default)]
    dry_run: bool,
    #[serde(default = "default_granularity")]
    granularity: String,
    #[serde(default = "default_threshold")]
    systemic_threshold: usize,
    events: RawEvents,
    #[serde(default)]
    dispatch: RawDispatch,
    #[serde(default)]
    layout: RawLayout,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvents {
    #[serde(default)]
    business_flow: Vec<PathBuf>,
    #[serde(default)]
    compliance_check: Vec<PathBuf>,
    case_attributes: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDispatch {
    reports: bool,
    ticket_endpoint: Option<String>,
    rpa_endpoint: Option<String>,
    timeout_secs: u64,
}

impl Default for RawDispatch {
    fn default() -> Self {
        RawDispatch { reports: true, ticket_endpoint: None, rpa_endpoint: None, timeout_secs: 10 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawLayout {
    attraction: f64,
    repulsion: f64,
    max_iterations: usize,
    epsilon: f64,
    seed: u64,
}

impl Default for RawLayout {
    fn default() -> Self {
        let p = LayoutParams::default();
        RawLayout {
            attraction: p.attraction,
            repulsion: p.repulsion,
            max_iterations: p.max_iterations,
            epsilon: p.epsilon,
            seed: p.seed,
        }
    }
}

fn default_state() -> PathBuf {
    "ccl-state.json".into()
}
fn default_output() -> PathBuf {
    "out".into()
}
fn default_completion() -> Vec<String> {
    vec![DEFAULT_COMPLETION.into()]
}
fn default_granularity() -> String {
    "week".into()
}
fn default_threshold() -> usize {
    DEFAULT_SYSTEMIC_THRESHOLD
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchConfig {
    /// Write a report to the outbox for unreported violations.
    pub reports: bool,
    pub ticket_endpoint: Option<String>,
    pub rpa_endpoint: Option<String>,
    pub timeout: Duration,
}

/// Resolved configuration. All paths are absolute or relative to the
/// process working directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub business_flow: Vec<PathBuf>,
    pub compliance_check: Vec<PathBuf>,
    pub case_attributes: Option<PathBuf>,
    pub registry: PathBuf,
    pub state: PathBuf,
    pub output_dir: PathBuf,
    pub outbox: PathBuf,
    pub completion: Vec<String>,
    pub clock: Option<Timestamp>,
    pub dry_run: bool,
    pub granularity: Granularity,
    pub systemic_threshold: usize,
    pub dispatch: DispatchConfig,
    pub layout: LayoutParams,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml(&text, base, &path.display().to_string())
    }

    /// Parses `text`, resolving relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path, name: &str) -> Result<Self, ConfigError> {
        let parse = |message: String| ConfigError::Parse { path: name.into(), message };
        let raw: RawConfig = toml::from_str(text).map_err(|e| parse(e.message().to_string()))?;
        let at = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let must_exist = |what: &'static str, p: PathBuf| {
            if p.exists() {
                Ok(p)
            } else {
                Err(ConfigError::MissingPath { path: name.into(), what, target: p.display().to_string() })
            }
        };

        if raw.events.business_flow.is_empty() && raw.events.compliance_check.is_empty() {
            return Err(parse("[events] lists no event files".into()));
        }
        let business_flow = raw.events.business_flow.iter().map(|p| must_exist("events file", at(p))).collect::<Result<_, _>>()?;
        let compliance_check =
            raw.events.compliance_check.iter().map(|p| must_exist("events file", at(p))).collect::<Result<_, _>>()?;
        let case_attributes = raw.events.case_attributes.as_ref().map(|p| must_exist("case attributes file", at(p))).transpose()?;
        let registry = must_exist("registry", at(&raw.registry))?;

        let completion: Vec<String> = raw.completion.iter().map(|s| s.trim().to_string()).collect();
        if completion.iter().any(String::is_empty) {
            return Err(parse("completion activities must not be empty".into()));
        }
        let clock = raw
            .clock
            .as_deref()
            .map(parse_timestamp)
            .transpose()
            .map_err(|e| parse(format!("invalid clock `{}`", e.0)))?;
        let granularity = raw.granularity.parse().map_err(|e: ccl_core::analytics::UnknownGranularity| parse(e.to_string()))?;
        for endpoint in [&raw.dispatch.ticket_endpoint, &raw.dispatch.rpa_endpoint].into_iter().flatten() {
            validate_endpoint(endpoint).map_err(|e| parse(e.to_string()))?;
        }
        if raw.dispatch.timeout_secs == 0 {
            return Err(parse("dispatch.timeout_secs must be >= 1".into()));
        }
        let layout = LayoutParams {
            attraction: raw.layout.attraction,
            repulsion: raw.layout.repulsion,
            max_iterations: raw.layout.max_iterations,
            epsilon: raw.layout.epsilon,
            seed: raw.layout.seed,
        };
        layout.validate().map_err(|e| parse(e.to_string()))?;
        let output_dir = at(&raw.output_dir);
        let outbox = raw.outbox.as_ref().map_or_else(|| output_dir.join("outbox"), at);

        Ok(RunConfig {
            business_flow,
            compliance_check,
            case_attributes,
            registry,
            state: at(&raw.state),
            output_dir,
            outbox,
            completion,
            clock,
            dry_run: raw.dry_run,
            granularity,
            systemic_threshold: raw.systemic_threshold,
            dispatch: DispatchConfig {
                reports: raw.dispatch.reports,
                ticket_endpoint: raw.dispatch.ticket_endpoint,
                rpa_endpoint: raw.dispatch.rpa_endpoint,
                timeout: Duration::from_secs(raw.dispatch.timeout_secs),
            },
            layout,
        })
    }
}
