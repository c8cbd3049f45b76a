//! One JSON object per line:
//! `{"id": 1, "pred": "non-defect", "features": [0.1, 0.2]}`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{ClassCode, EmbeddingRecord};

/// A line that could not be turned into a record. Carries the id when the
/// line got far enough to expose one.
#[derive(Debug, Clone, Error, PartialEq, Serialize)]
#[error("{message}")]
pub struct StreamError {
    pub id: Option<u64>,
    pub message: String,
}

impl StreamError {
    fn new(id: Option<u64>, message: impl Into<String>) -> Self {
        Self {
            id,
            message: message.into(),
        }
    }
}

#[derive(Deserialize)]
struct WireRecord {
    id: u64,
    pred: String,
    features: Vec<f64>,
}

#[derive(Serialize)]
struct WireRecordOut<'a> {
    id: u64,
    pred: &'a str,
    features: &'a [f32],
}

/// Parses one stream line. `expected_dim`, when given, is checked against
/// the feature count.
pub fn parse_stream_record(line: &str, expected_dim: Option<usize>) -> Result<EmbeddingRecord, StreamError> {
    let value: Value = serde_json::from_str(line.trim())
        .map_err(|e| StreamError::new(None, format!("malformed JSON: {e}")))?;
    parse_stream_value(value, expected_dim)
}

/// As [`parse_stream_record`], for an already-decoded JSON value.
pub fn parse_stream_value(value: Value, expected_dim: Option<usize>) -> Result<EmbeddingRecord, StreamError> {
    let id = value.get("id").and_then(Value::as_u64);
    let wire: WireRecord =
        serde_json::from_value(value).map_err(|e| StreamError::new(id, format!("invalid record: {e}")))?;
    let pred = match wire.pred.as_str() {
        "non-defect" => ClassCode::NON_DEFECT,
        "defect" => ClassCode::DEFECT,
        other => {
            return Err(StreamError::new(
                Some(wire.id),
                format!("pred must be \"non-defect\" or \"defect\", got {other:?}"),
            ))
        }
    };
    if let Some(dim) = expected_dim {
        if wire.features.len() != dim {
            return Err(StreamError::new(
                Some(wire.id),
                format!("expected {dim} features, found {}", wire.features.len()),
            ));
        }
    }
    let mut features = Vec::with_capacity(wire.features.len());
    for (i, v) in wire.features.iter().enumerate() {
        let f = *v as f32;
        if !f.is_finite() {
            return Err(StreamError::new(Some(wire.id), format!("feature f{i} is not a finite f32")));
        }
        features.push(f);
    }
    Ok(EmbeddingRecord::new(wire.id, pred, ClassCode::UNKNOWN, features))
}

/// Encodes a record as one stream line (no trailing newline). Only
/// non-defect / defect predictions are representable.
pub fn to_stream_line(record: &EmbeddingRecord) -> Result<String, StreamError> {
    let pred = match record.pred {
        ClassCode::NON_DEFECT => "non-defect",
        ClassCode::DEFECT => "defect",
        other => {
            return Err(StreamError::new(
                Some(record.id),
                format!("class code {other} has no stream representation"),
            ))
        }
    };
    let out = WireRecordOut {
        id: record.id,
        pred,
        features: &record.features,
    };
    serde_json::to_string(&out).map_err(|e| StreamError::new(Some(record.id), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_record() {
        let r = parse_stream_record(r#"{"id":1,"pred":"non-defect","features":[0.1,0.2]}"#, None).unwrap();
        assert_eq!(r, EmbeddingRecord::new(1, ClassCode::NON_DEFECT, ClassCode::UNKNOWN, vec![0.1, 0.2]));
    }

    #[test]
    fn missing_pred_is_an_error_with_id() {
        let e = parse_stream_record(r#"{"id":4,"features":[0.1]}"#, None).unwrap_err();
        assert_eq!(e.id, Some(4));
        assert!(e.message.contains("pred"), "{}", e.message);
    }

    #[test]
    fn wrong_dim_names_expected() {
        let e = parse_stream_record(r#"{"id":2,"pred":"defect","features":[1,2,3]}"#, Some(2)).unwrap_err();
        assert!(e.message.contains("expected 2"), "{}", e.message);
    }

    #[test]
    fn garbage_and_bad_labels() {
        assert_eq!(parse_stream_record("not json", None).unwrap_err().id, None);
        assert!(parse_stream_record(r#"{"id":1,"pred":"maybe","features":[]}"#, None).is_err());
        assert!(parse_stream_record(r#"{"id":1,"pred":"defect","features":[1e300]}"#, None).is_err());
    }

    #[test]
    fn line_round_trip() {
        let r = EmbeddingRecord::new(8, ClassCode::DEFECT, ClassCode::OOD, vec![0.1, -2.5e-3, 7.0]);
        let line = to_stream_line(&r).unwrap();
        let back = parse_stream_record(&line, Some(3)).unwrap();
        assert_eq!(back.features, r.features);
        assert_eq!(back.pred, r.pred);
        assert_eq!(back.truth, ClassCode::UNKNOWN);
    }
}
