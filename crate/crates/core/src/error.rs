use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates an invariant. `field` is the dotted
    /// path of the offending key.
    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{quantity} = {value} is outside the valid domain {domain}")]
    Domain {
        quantity: &'static str,
        value: f64,
        domain: String,
    },

    #[error("time step {dt_s} s violates the CFL bound {bound_s} s")]
    Cfl { dt_s: f64, bound_s: f64 },

    #[error("length mismatch: {what} ({left} vs {right})")]
    Length {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("negative concentration {value} for species {species}")]
    NegativeConcentration { species: &'static str, value: f64 },

    #[error("stiff integrator failed at t = {t_s} s: step size {h_s} s underflowed")]
    StepUnderflow { t_s: f64, h_s: f64 },

    #[error("chemistry failed in cell {cell}: {source}")]
    Cell {
        cell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("singular linear system (pivot {pivot} at row {row})")]
    Singular { row: usize, pivot: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("trajectory ingest: {0}")]
    Ingest(String),

    #[error("stage `{stage}` failed{}: {source}", step.map(|n| format!(" at step {n}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        step: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("config serialize error: {0}")]
    TomlSerialize(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage it came from. Errors that
    /// already carry a stage are left alone.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                step: None,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn at_step(self, stage: &'static str, step: usize) -> Self {
        Error::Stage {
            stage,
            step: Some(step),
            source: Box::new(self),
        }
    }
}
