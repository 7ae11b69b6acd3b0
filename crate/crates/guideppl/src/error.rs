//! One error type for the whole crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes incompatible for an operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Input outside an operation's domain (log of a nonpositive number,
    /// division by zero, probability outside [0,1], ...).
    #[error("domain violation in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// Guide support differs from model support, or an observed value lies
    /// outside the distribution's support.
    #[error("support mismatch{}: {detail}", at(.addr))]
    Support { addr: Option<String>, detail: String },

    /// Parameter store problem: dims conflict, unknown name, bad file.
    #[error("parameter '{name}': {detail}")]
    Param { name: String, detail: String },

    /// Missing or ill-typed data binding, malformed dataset file.
    #[error("data: {detail}")]
    Data { detail: String },

    /// A log-probability, surrogate, or gradient became NaN/infinite.
    #[error("non-finite value at {at}")]
    NonFinite { at: String },

    /// Bad run configuration (zero batch size, unknown experiment, ...).
    #[error("invalid config: {detail}")]
    Config { detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at(addr: &Option<String>) -> String {
    match addr {
        Some(a) => format!(" at {a}"),
        None => String::new(),
    }
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { op, detail: detail.into() }
    }

    pub fn support(addr: Option<String>, detail: impl Into<String>) -> Self {
        Error::Support { addr, detail: detail.into() }
    }

    pub fn data(detail: impl Into<String>) -> Self {
        Error::Data { detail: detail.into() }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config { detail: detail.into() }
    }

    pub fn param(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Param { name: name.into(), detail: detail.into() }
    }

    /// Attach a trace address to a support error that lacks one.
    pub fn with_addr(self, addr: &str) -> Self {
        match self {
            Error::Support { addr: None, detail } => {
                Error::Support { addr: Some(addr.to_string()), detail }
            }
            e => e,
        }
    }
}
