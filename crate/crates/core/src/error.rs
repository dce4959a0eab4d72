use thiserror::Error;

/// Errors raised by the numerical routines and the simulation harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the region where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested model or operation is not covered by the catalog.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A numerical procedure did not reach its convergence gate.
    #[error("numeric failure in {routine}: {detail}")]
    Numeric { routine: &'static str, detail: String },

    /// A simulation budget was exceeded or left empty.
    #[error("resource limit `{field}`: {detail}")]
    Resource { field: String, detail: String },

    /// Invalid configuration (model file, experiment spec, CLI flags).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }

    pub(crate) fn numeric(routine: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric {
            routine,
            detail: detail.into(),
        }
    }

    pub(crate) fn resource(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Resource {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
