//! Embedding record formats: CSV, the fixed-width `DFE1` binary layout and
//! the JSON line stream, plus detector model files.

mod binary;
mod csv_format;
mod detector;
mod stream;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binary::{
    read_embeddings_binary, read_embeddings_binary_path, record_size, write_embeddings_binary,
    write_embeddings_binary_path, BINARY_HEADER_LEN, BINARY_MAGIC, BINARY_VERSION,
};
pub use csv_format::{
    read_embeddings_csv, read_embeddings_csv_path, write_embeddings_csv, write_embeddings_csv_path,
};
pub use detector::{
    detector_from_json, detector_from_value, detector_to_json, load_detector, save_detector,
    DETECTOR_FORMAT_VERSION,
};
pub use stream::{parse_stream_record, parse_stream_value, to_stream_line, StreamError};

/// Classifier output / ground-truth class code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassCode(pub u8);

impl ClassCode {
    pub const NON_DEFECT: ClassCode = ClassCode(0);
    pub const DEFECT: ClassCode = ClassCode(1);
    /// Ground-truth marker for synthetic out-of-distribution samples.
    pub const OOD: ClassCode = ClassCode(2);
    pub const UNKNOWN: ClassCode = ClassCode(255);

    pub fn is_known(self) -> bool {
        self != Self::UNKNOWN
    }

    pub fn label(self) -> Option<&'static str> {
        match self {
            Self::NON_DEFECT => Some("non-defect"),
            Self::DEFECT => Some("defect"),
            Self::UNKNOWN => Some("unknown"),
            _ => None,
        }
    }
}

impl fmt::Display for ClassCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for ClassCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "non-defect" => Ok(Self::NON_DEFECT),
            "defect" => Ok(Self::DEFECT),
            "unknown" => Ok(Self::UNKNOWN),
            other => other
                .parse::<u8>()
                .map(ClassCode)
                .map_err(|_| format!("invalid class code {other:?}")),
        }
    }
}

/// One training or production sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: u64,
    pub pred: ClassCode,
    pub truth: ClassCode,
    pub features: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(id: u64, pred: ClassCode, truth: ClassCode, features: Vec<f32>) -> Self {
        Self {
            id,
            pred,
            truth,
            features,
        }
    }

    /// Ground truth when known, otherwise the prediction.
    pub fn designated_class(&self) -> ClassCode {
        if self.truth.is_known() {
            self.truth
        } else {
            self.pred
        }
    }
}

/// Records sharing one declared dimensionality.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("bad magic bytes {found:02x?}, expected \"DFE1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported binary version {found}, expected {expected}")]
    BinaryVersion { found: u16, expected: u16 },
    #[error("truncated file: header declares {count} records ({expected} bytes), found {actual} bytes")]
    Truncated { count: u64, expected: u64, actual: u64 },
    #[error("file has {extra} trailing bytes after {count} records")]
    TrailingBytes { count: u64, extra: u64 },
    #[error("record {id}: {message}")]
    Record { id: u64, message: String },
    #[error("incompatible detector format_version {found}, this build reads version {supported}")]
    UnsupportedVersion { found: u64, supported: u32 },
    #[error("detector was saved with {found} scalars, loading as {expected}")]
    ScalarMismatch { found: String, expected: &'static str },
    #[error("tree {tree}: {reason}")]
    MalformedTree { tree: usize, reason: String },
    #[error("invalid detector document: {0}")]
    Detector(String),
}

fn validate_features(id: u64, dim: usize, features: &[f32]) -> Result<(), String> {
    if features.len() != dim {
        return Err(format!("expected {dim} features, found {}", features.len()));
    }
    if let Some(i) = features.iter().position(|v| !v.is_finite()) {
        return Err(format!("record {id}: feature f{i} is not finite"));
    }
    Ok(())
}
