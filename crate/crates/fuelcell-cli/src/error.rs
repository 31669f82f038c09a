//! Structured command-line diagnostics.
//!
//! Every operational failure is reported on stderr as a single JSON object
//! `{"code": ..., "message": ..., "field": ...}` so that scripted callers can
//! branch on `code` without parsing prose. `field` names the configuration
//! key at fault when one can be identified, and is `null` otherwise.

use std::fmt;
use std::path::Path;

use fuelcell_core::analytics::AnalyticsError;
use fuelcell_core::cluster::ClusterError;
use fuelcell_core::dynamics::DynamicsError;
use fuelcell_core::generator::GeneratorError;
use fuelcell_core::hilbert::HilbertError;

/// An error that aborts the current command with exit status 1.
#[derive(Debug)]
pub struct CliError {
    /// Stable machine-readable discriminant.
    pub code: &'static str,
    /// Human-readable description.
    pub message: String,
    /// Offending configuration field, when identifiable.
    pub field: Option<String>,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            field: None,
        }
    }

    pub fn with_field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    /// Wraps an I/O failure with the path it happened on.
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new("io", format!("{}: {err}", path.display()))
    }

    /// Wraps a JSON syntax/shape failure from a configuration file. The
    /// parser's message already names unknown or missing fields, so it is
    /// passed through verbatim.
    pub fn config_parse(path: &Path, err: serde_json::Error) -> Self {
        Self::new("config_parse", format!("{}: {err}", path.display()))
    }

    /// A structurally valid configuration with inconsistent content.
    pub fn config_invalid(message: impl Into<String>, field: impl Into<String>) -> Self {
        Self::new("config_invalid", message).with_field(field)
    }

    /// The stderr JSON form.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "code": self.code,
            "message": self.message,
            "field": self.field,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "[{}] {} (field: {field})", self.code, self.message),
            None => write!(f, "[{}] {}", self.code, self.message),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        Self::new("invalid_state", e.to_string())
    }
}

impl From<HilbertError> for CliError {
    fn from(e: HilbertError) -> Self {
        Self::new("hilbert", e.to_string())
    }
}

impl From<GeneratorError> for CliError {
    fn from(e: GeneratorError) -> Self {
        Self::new("generator", e.to_string())
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        let code = match &e {
            DynamicsError::NoSteadyState(_) => "no_steady_state",
            _ => "dynamics",
        };
        Self::new(code, e.to_string())
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        let code = match &e {
            AnalyticsError::AboveThreshold { .. } => "above_threshold",
            _ => "analytics",
        };
        Self::new(code, e.to_string())
    }
}
