use std::path::PathBuf;

use crate::grammar::Diagnostic;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grammar spec: {0}")]
    InvalidSpec(String),

    #[error("parse graph failed validation: {}", summarize(.0))]
    InvalidGraph(Vec<Diagnostic>),

    #[error("unknown symbol: {0}")]
    UnknownSymbol(String),

    #[error("invalid relation type index {index} (grammar has {count} relation types)")]
    UnknownRelationType { index: usize, count: usize },

    #[error("invalid chain configuration: {0}")]
    InvalidChain(String),

    #[error("point is at or behind the camera plane (view depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("object {index} is behind the camera")]
    ObjectBehindCamera { index: usize },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("label index {0} is outside the embeddable range 0..64")]
    LabelOutOfRange(usize),

    #[error("cannot fit: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} count {count} exceeds the codec limit {limit}")]
    Overflow {
        what: &'static str,
        count: usize,
        limit: usize,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("scene {scene}: unknown {field} '{value}'")]
    UnknownLabel {
        scene: usize,
        field: &'static str,
        value: String,
    },

    #[error("coordinate convention check failed: {violations} of {checked} relations contradict their direction vectors")]
    Convention { violations: usize, checked: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn summarize(diags: &[Diagnostic]) -> String {
    match diags {
        [] => "no diagnostics".to_string(),
        [one] => one.to_string(),
        [first, rest @ ..] => format!("{first} (and {} more)", rest.len()),
    }
}
