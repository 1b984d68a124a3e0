use std::path::PathBuf;

use chrono::NaiveDate;
use seaice_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error in {field}: {msg}")]
    Format { field: String, msg: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("gap error: missing dates {}", fmt_dates(.0))]
    Gap(Vec<NaiveDate>),
    #[error("missing channel `{0}`")]
    MissingChannel(String),
    #[error("degenerate channel `{0}`: {1}")]
    DegenerateChannel(String, String),
    #[error("history error: {0}")]
    History(String),
    #[error("state error: {0}")]
    State(String),
    #[error("incomplete forecast: {0}")]
    IncompleteForecast(String),
    #[error("empty domain: no active cells")]
    EmptyDomain,
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("diverged training: {0}")]
    Diverged(String),
    #[error("precondition error: {0}")]
    Precondition(String),
    #[error("incompatible checkpoint: differing fields {}", .0.join(", "))]
    Incompatible(Vec<String>),
    #[error("nn error: {0}")]
    Nn(NnError),
    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn fmt_dates(dates: &[NaiveDate]) -> String {
    dates
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl From<NnError> for Error {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Diverged(p) => Error::Diverged(format!("non-finite gradient in `{p}`")),
            NnError::Shape(m) => Error::Shape(m),
            NnError::EmptyDomain => Error::EmptyDomain,
            other => Error::Nn(other),
        }
    }
}

impl Error {
    /// Stable machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Shape(_) => "shape",
            Error::Gap(_) => "gap",
            Error::MissingChannel(_) => "missing-channel",
            Error::DegenerateChannel(..) => "degenerate-channel",
            Error::History(_) => "history",
            Error::State(_) => "state",
            Error::IncompleteForecast(_) => "incomplete-forecast",
            Error::EmptyDomain => "empty-domain",
            Error::UndefinedRatio(_) => "undefined-ratio",
            Error::UndefinedCorrelation(_) => "undefined-correlation",
            Error::Diverged(_) => "diverged",
            Error::Precondition(_) => "precondition",
            Error::Incompatible(_) => "incompatible",
            Error::Nn(_) => "nn",
            Error::Io { .. } => "io",
        }
    }

    /// The message without the category label, for `category: detail` lines.
    pub fn detail(&self) -> String {
        match self {
            Error::Domain(m)
            | Error::Config(m)
            | Error::Shape(m)
            | Error::History(m)
            | Error::State(m)
            | Error::IncompleteForecast(m)
            | Error::UndefinedRatio(m)
            | Error::UndefinedCorrelation(m)
            | Error::Diverged(m)
            | Error::Precondition(m) => m.clone(),
            Error::Format { field, msg } => format!("{field}: {msg}"),
            Error::Gap(dates) => format!("missing dates {}", fmt_dates(dates)),
            Error::MissingChannel(c) => format!("`{c}`"),
            Error::DegenerateChannel(c, m) => format!("`{c}`: {m}"),
            Error::EmptyDomain => "no active cells".into(),
            Error::Incompatible(f) => format!("differing fields {}", f.join(", ")),
            Error::Nn(e) => e.to_string(),
            Error::Io { path, source } => format!("{}: {source}", path.display()),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
