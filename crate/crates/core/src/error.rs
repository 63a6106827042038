use std::fmt;

/// A problem with a single feature inside a GeoJSON collection.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct FeatureIssue {
    /// Zero-based position of the feature in the collection.
    pub index: usize,
    pub id: Option<String>,
    pub message: String,
}

impl fmt::Display for FeatureIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "feature #{} ({}): {}", self.index, id, self.message),
            None => write!(f, "feature #{}: {}", self.index, self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("{} invalid feature(s); first: {}", .0.len(), .0.first().map(|i| i.to_string()).unwrap_or_default())]
    Features(Vec<FeatureIssue>),

    #[error("config error: {0}")]
    Config(String),

    #[error("no compliance rules defined for state {0:?}")]
    UnknownState(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown kiln {0:?}")]
    UnknownKiln(String),

    #[error("kiln {0:?} is discarded; no further actions are accepted")]
    Discarded(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("inconsistent oracle: {0}")]
    InconsistentOracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::InvalidBox(_) => "invalid_box",
            Error::FrameMismatch(_) => "frame_mismatch",
            Error::Json { .. } => "malformed_json",
            Error::Line { .. } => "parse_error",
            Error::Features(_) => "invalid_features",
            Error::Config(_) => "config",
            Error::UnknownState(_) => "unknown_state",
            Error::Invalid(_) => "invalid",
            Error::UnknownKiln(_) => "unknown_kiln",
            Error::Discarded(_) => "discarded",
            Error::Conflict(_) => "conflict",
            Error::InconsistentOracle(_) => "inconsistent_oracle",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    /// Converts a serde_json error into a located [`Error::Json`] using the
    /// source text to turn line/column into a byte offset.
    pub(crate) fn json(src: &[u8], err: serde_json::Error) -> Self {
        let offset = byte_offset(src, err.line(), err.column());
        Error::Json {
            offset,
            message: err.to_string(),
        }
    }
}

fn byte_offset(src: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut start = 0;
    for (i, b) in src.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            start = i + 1;
        }
    }
    (start + column.saturating_sub(1)).min(src.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_offset_points_into_source() {
        let src = b"{\n  \"a\": 1,\n  \"b\": ]\n}";
        let err = serde_json::from_slice::<serde_json::Value>(src).unwrap_err();
        match Error::json(src, err) {
            Error::Json { offset, .. } => assert_eq!(src[offset], b']'),
            other => panic!("unexpected {other:?}"),
        }
    }
}
