use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("layer {layer} has zero variance; its density is undefined")]
    UndefinedDensity { layer: usize },

    #[error("layer {layer}: {message}")]
    LayerKind { layer: usize, message: String },

    #[error("settling diverged at step {step}")]
    SettleDivergence { step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("environment misuse: {0}")]
    EnvUsage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            got,
        })
    }
}
