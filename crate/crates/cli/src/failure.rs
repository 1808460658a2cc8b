//! Error classification: every failure leaves the process with a distinct
//! exit code and a one-line JSON object on stderr.

use serde::Serialize;

use cfs_core::Error as CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Internal,
    Usage,
    Io,
    Config,
    Data,
    Degenerate,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Internal => 1,
            Kind::Usage => 2,
            Kind::Io => 3,
            Kind::Config => 4,
            Kind::Data => 5,
            Kind::Degenerate => 6,
        }
    }
}

/// An error that already knows its category.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Failure { kind, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> anyhow::Error {
        Failure::new(Kind::Config, message).into()
    }

    pub fn data(message: impl Into<String>) -> anyhow::Error {
        Failure::new(Kind::Data, message).into()
    }
}

fn core_kind(e: &CoreError) -> Kind {
    match e {
        CoreError::Io(_) => Kind::Io,
        CoreError::InvalidConfig(_) => Kind::Config,
        CoreError::SingleClass
        | CoreError::DegenerateTreatment(_)
        | CoreError::EmptyGroup(_)
        | CoreError::MissingGroundTruth(_) => Kind::Degenerate,
        CoreError::EmptyCorpus
        | CoreError::EmptyDataset
        | CoreError::Dimension(_)
        | CoreError::InvalidInput(_)
        | CoreError::Json(_)
        | CoreError::Csv(_) => Kind::Data,
        CoreError::Optimizer(_) | CoreError::NotPositiveDefinite | CoreError::Leakage(_) => Kind::Internal,
    }
}

pub fn classify(err: &anyhow::Error) -> Kind {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_kind(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return Kind::Io;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return Kind::Data;
        }
    }
    Kind::Internal
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: Kind,
    exit_code: i32,
    message: &'a str,
}

/// Write the JSON error line and return the exit code.
pub fn report(kind: Kind, message: &str) -> i32 {
    let code = kind.exit_code();
    let line = serde_json::to_string(&ErrorReport { error: kind, exit_code: code, message }).expect("serializable");
    eprintln!("{line}");
    code
}
