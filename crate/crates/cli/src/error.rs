use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use cbir_core::{DescFileError, EvalError, FeatureIoError, FusionError, IndexError};

/// Stable exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    InputFormat = 2,
    Config = 3,
    Labeling = 4,
    Usage = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(Category::InputFormat, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Category::Config, message)
    }

    pub fn labeling(message: impl Into<String>) -> Self {
        Self::new(Category::Labeling, message)
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Category::Usage, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::input(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.category as u8)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn fmap_error(path: &Path, err: FeatureIoError) -> CliError {
    CliError::input(format!("{}: malformed FMAP: {err}", path.display()))
}

pub fn desc_error(path: &Path, err: DescFileError) -> CliError {
    CliError::input(format!("{}: malformed DESC: {err}", path.display()))
}

pub fn fusion_error(context: &str, err: FusionError) -> CliError {
    CliError::config(format!("{context}: {err}"))
}

pub fn index_error(context: &str, err: IndexError) -> CliError {
    let msg = format!("{context}: {err}");
    match err {
        IndexError::DimensionMismatch { .. }
        | IndexError::KOutOfRange { .. }
        | IndexError::UnknownClass(_)
        | IndexError::NoCandidates => CliError::usage(msg),
        _ => CliError::input(msg),
    }
}

pub fn eval_error(err: EvalError) -> CliError {
    match err {
        EvalError::MissingTruth(_)
        | EvalError::MissingResult(_)
        | EvalError::TruthParse { .. }
        | EvalError::DuplicateLabel(_) => CliError::labeling(err.to_string()),
        EvalError::Fusion { image_id, source } => fusion_error(&format!("image {image_id:?}"), source),
        EvalError::Index(e) => index_error("index", e),
        EvalError::InvalidK => CliError::usage(err.to_string()),
        EvalError::WrongStage(_) | EvalError::NoQueries | EvalError::DuplicateImageId(_) => {
            CliError::input(err.to_string())
        }
    }
}
