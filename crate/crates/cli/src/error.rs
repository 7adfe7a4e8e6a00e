use std::fmt;
use std::path::Path;

use bezsketch_core::eval::EvalError;
use bezsketch_core::fit_oracle::FitError;
use bezsketch_core::sketch_io::SketchError;
use bezsketch_core::BezierError;
use bezsketch_diffgraph::GraphError;
use bezsketch_models::sketch_generator::GeneratorError;
use bezsketch_models::stroke_encoder::EncoderError;
use serde::Serialize;

/// Failure class reported on stderr and through the exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Config,
    Io,
    Numeric,
    Model,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Numeric => 4,
            ErrorCategory::Model => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Io => "io",
            ErrorCategory::Numeric => "numeric",
            ErrorCategory::Model => "model",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub category: ErrorCategory,
    pub message: String,
}

impl CliError {
    pub fn new(category: ErrorCategory, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorCategory::Config, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(ErrorCategory::Io, message)
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self::new(ErrorCategory::Numeric, message)
    }

    pub fn model(message: impl Into<String>) -> Self {
        Self::new(ErrorCategory::Model, message)
    }

    /// Prefixes the message with a file path.
    pub fn at(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    /// One-line JSON record for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": { "category": self.category, "message": self.message } })
            .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.category.as_str(), self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<SketchError> for CliError {
    fn from(e: SketchError) -> Self {
        match e {
            SketchError::NonFinite(_) | SketchError::Bezier(_) => CliError::numeric(e.to_string()),
            _ => CliError::io(e.to_string()),
        }
    }
}

impl From<BezierError> for CliError {
    fn from(e: BezierError) -> Self {
        CliError::numeric(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        CliError::numeric(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Spec(_) => CliError::config(e.to_string()),
            _ => CliError::numeric(e.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io(e) => CliError::io(e.to_string()),
            GraphError::NonFiniteGradient => CliError::numeric(e.to_string()),
            _ => CliError::model(e.to_string()),
        }
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::NonFinite | EncoderError::Diverged { .. } | EncoderError::Bezier(_) => {
                CliError::numeric(e.to_string())
            }
            EncoderError::DegreeRange { .. } => CliError::config(e.to_string()),
            EncoderError::Graph(g) => g.into(),
            _ => CliError::model(e.to_string()),
        }
    }
}

impl From<GeneratorError> for CliError {
    fn from(e: GeneratorError) -> Self {
        match e {
            GeneratorError::Diverged { .. } => CliError::numeric(e.to_string()),
            GeneratorError::Config(_) | GeneratorError::Temperature => {
                CliError::config(e.to_string())
            }
            GeneratorError::Graph(g) => g.into(),
            _ => CliError::model(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_have_distinct_nonzero_codes() {
        let cats = [
            ErrorCategory::Config,
            ErrorCategory::Io,
            ErrorCategory::Numeric,
            ErrorCategory::Model,
        ];
        let mut codes: Vec<i32> = cats.iter().map(|c| c.exit_code()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 4);
        assert!(codes.iter().all(|&c| c != 0 && c != 1));
    }

    #[test]
    fn json_line_names_the_category() {
        let line = CliError::numeric("boom").to_json_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"]["category"], "numeric");
        assert_eq!(v["error"]["message"], "boom");
    }

    #[test]
    fn diverged_training_is_numeric() {
        let e: CliError = EncoderError::Diverged { epoch: 1, step: 2 }.into();
        assert_eq!(e.category, ErrorCategory::Numeric);
        let e: CliError = GeneratorError::Untrained.into();
        assert_eq!(e.category, ErrorCategory::Model);
    }
}
