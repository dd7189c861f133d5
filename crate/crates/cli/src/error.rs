use std::fmt;

use isomerge_core::merge::{MergeError, SweepError};
use isomerge_core::metrics::MetricError;
use isomerge_core::report::ReportError;
use isomerge_core::synth::SynthError;
use isomerge_core::BundleError;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// A failure plus the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }

    /// Prefixes the message, keeping the exit status.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self {
            code: self.code,
            message: format!("{what}: {}", self.message),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<MergeError> for CliError {
    fn from(e: MergeError) -> Self {
        match e {
            MergeError::Numerical { .. } => CliError::numerical(e.to_string()),
            _ => CliError::input(e.to_string()),
        }
    }
}

fn metric_is_input(e: &MetricError) -> bool {
    match e {
        MetricError::KOutOfRange { .. }
        | MetricError::InvalidBeta(_)
        | MetricError::Misaligned(_)
        | MetricError::LengthMismatch(..)
        | MetricError::NoTwoDLayers => true,
        MetricError::Layer { source, .. } => metric_is_input(source),
        _ => false,
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        if metric_is_input(&e) {
            CliError::input(e.to_string())
        } else {
            CliError::numerical(e.to_string())
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Bundle(b) => b.into(),
            SweepError::EmptyGrid => CliError::input(e.to_string()),
            SweepError::EvaluatorFailure { .. } => CliError::numerical(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Merge(m) => m.into(),
            SynthError::Metric(m) => m.into(),
            SynthError::Sweep(s) => s.into(),
            SynthError::Bundle(b) => b.into(),
            other => CliError::input(other.to_string()),
        }
    }
}
