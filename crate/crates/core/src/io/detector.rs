//! Detector model files: a JSON document with the forest's flat node arrays
//! (`[feature, split, left, right]` for internal nodes, `[size]` for leaves),
//! the MAD summary and the baseline flag rate.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::FormatError;
use crate::forest::{ForestConfig, IsolationForest, IsolationTree, Node};
use crate::pipeline::{DetectorMeta, DriftDetector};
use crate::scalar::Scalar;
use crate::stats::MadSummary;

pub const DETECTOR_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRepr<F> {
    Internal(usize, F, usize, usize),
    Leaf([usize; 1]),
}

#[derive(Serialize, Deserialize)]
struct ForestDoc<F> {
    n_trees: usize,
    psi: usize,
    seed: u64,
    dim: usize,
    effective_psi: usize,
    c_psi: F,
    trees: Vec<Vec<NodeRepr<F>>>,
}

#[derive(Serialize, Deserialize)]
struct DetectorDoc<F> {
    format_version: u32,
    scalar: String,
    dim: usize,
    n_train: usize,
    created_at: String,
    #[serde(default)]
    warnings: Vec<String>,
    forest: ForestDoc<F>,
    mad: MadSummary<F>,
    baseline_flag_rate: F,
}

fn to_doc<F: Scalar>(detector: &DriftDetector<F>) -> DetectorDoc<F> {
    let forest = detector.forest();
    let cfg = forest.config();
    let trees = forest
        .trees()
        .iter()
        .map(|t| {
            t.nodes()
                .iter()
                .map(|n| match *n {
                    Node::Internal {
                        feature,
                        split,
                        left,
                        right,
                    } => NodeRepr::Internal(feature, split, left, right),
                    Node::Leaf { size } => NodeRepr::Leaf([size]),
                })
                .collect()
        })
        .collect();
    let meta = detector.meta();
    DetectorDoc {
        format_version: DETECTOR_FORMAT_VERSION,
        scalar: F::NAME.to_string(),
        dim: cfg.dim,
        n_train: meta.n_train,
        created_at: meta.created_at.clone(),
        warnings: meta.warnings.clone(),
        forest: ForestDoc {
            n_trees: cfg.n_trees,
            psi: cfg.psi,
            seed: cfg.seed,
            dim: cfg.dim,
            effective_psi: forest.effective_psi(),
            c_psi: forest.c_psi(),
            trees,
        },
        mad: *detector.mad(),
        baseline_flag_rate: detector.baseline_flag_rate(),
    }
}

/// Serializes a detector to its JSON document (single line, newline
/// terminated). Output is a pure function of the detector.
pub fn detector_to_json<F: Scalar>(detector: &DriftDetector<F>) -> String {
    let mut s = serde_json::to_string(&to_doc(detector)).expect("detector document serializes");
    s.push('\n');
    s
}

/// Parses and validates a detector document.
pub fn detector_from_json<F: Scalar>(text: &str) -> Result<DriftDetector<F>, FormatError> {
    let value: Value = serde_json::from_str(text).map_err(|e| FormatError::Detector(e.to_string()))?;
    detector_from_value(value)
}

pub fn detector_from_value<F: Scalar>(value: Value) -> Result<DriftDetector<F>, FormatError> {
    let version = value
        .get("format_version")
        .ok_or_else(|| FormatError::Detector("missing format_version".into()))?;
    let version = version
        .as_u64()
        .ok_or_else(|| FormatError::Detector("format_version must be an unsigned integer".into()))?;
    if version != u64::from(DETECTOR_FORMAT_VERSION) {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: DETECTOR_FORMAT_VERSION,
        });
    }
    if let Some(scalar) = value.get("scalar").and_then(Value::as_str) {
        if scalar != F::NAME {
            return Err(FormatError::ScalarMismatch {
                found: scalar.to_string(),
                expected: F::NAME,
            });
        }
    }
    let doc: DetectorDoc<F> = serde_json::from_value(value).map_err(|e| FormatError::Detector(e.to_string()))?;

    let f = doc.forest;
    if f.dim != doc.dim {
        return Err(FormatError::Detector(format!(
            "forest dim {} differs from detector dim {}",
            f.dim, doc.dim
        )));
    }
    let config = ForestConfig {
        n_trees: f.n_trees,
        psi: f.psi,
        seed: f.seed,
        dim: f.dim,
    };
    let mut trees = Vec::with_capacity(f.trees.len());
    for (t, nodes) in f.trees.into_iter().enumerate() {
        let nodes = nodes
            .into_iter()
            .map(|n| match n {
                NodeRepr::Internal(feature, split, left, right) => Node::Internal {
                    feature,
                    split,
                    left,
                    right,
                },
                NodeRepr::Leaf([size]) => Node::Leaf { size },
            })
            .collect();
        let tree = IsolationTree::from_nodes(nodes, f.dim)
            .map_err(|reason| FormatError::MalformedTree { tree: t, reason })?;
        trees.push(tree);
    }
    let forest = IsolationForest::from_parts(config, f.effective_psi, trees)
        .map_err(|e| FormatError::Detector(e.to_string()))?;
    let stored = f.c_psi.as_f64();
    let expected = forest.c_psi().as_f64();
    if (stored - expected).abs() > 1e-6 * expected.abs().max(1.0) {
        return Err(FormatError::Detector(format!(
            "c_psi {stored} inconsistent with effective psi {} (expected {expected})",
            f.effective_psi
        )));
    }
    let meta = DetectorMeta {
        n_train: doc.n_train,
        created_at: doc.created_at,
        warnings: doc.warnings,
    };
    DriftDetector::from_parts(forest, doc.mad, doc.baseline_flag_rate, meta)
        .map_err(|e| FormatError::Detector(e.to_string()))
}

pub fn save_detector<F: Scalar>(detector: &DriftDetector<F>, path: impl AsRef<Path>) -> Result<(), FormatError> {
    fs::write(path, detector_to_json(detector))?;
    Ok(())
}

pub fn load_detector<F: Scalar>(path: impl AsRef<Path>) -> Result<DriftDetector<F>, FormatError> {
    detector_from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mad_summary;

    fn single_split_detector() -> DriftDetector<f64> {
        let tree = IsolationTree::from_nodes(
            vec![
                Node::Internal {
                    feature: 0,
                    split: 0.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { size: 1 },
                Node::Leaf { size: 1 },
            ],
            1,
        )
        .unwrap();
        let cfg = ForestConfig::new(1).with_trees(1).with_psi(2);
        let forest = IsolationForest::from_parts(cfg, 2, vec![tree]).unwrap();
        let mad = mad_summary(&[0.5, 0.5, 0.6], 3.5).unwrap();
        DriftDetector::from_parts(forest, mad, 0.0, DetectorMeta::default()).unwrap()
    }

    #[test]
    fn hand_built_tree_serializes_three_nodes() {
        let json = detector_to_json(&single_split_detector());
        let v: Value = serde_json::from_str(&json).unwrap();
        let trees = v["forest"]["trees"].as_array().unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0], serde_json::json!([[0, 0.5, 1, 2], [1], [1]]));
        assert_eq!(v["format_version"], 1);
    }

    #[test]
    fn round_trip_is_exact() {
        let d = single_split_detector();
        let back: DriftDetector<f64> = detector_from_json(&detector_to_json(&d)).unwrap();
        assert_eq!(back.forest(), d.forest());
        assert_eq!(back.mad(), d.mad());
        assert_eq!(detector_to_json(&back), detector_to_json(&d));
    }

    #[test]
    fn unknown_version_is_incompatible() {
        let json = detector_to_json(&single_split_detector()).replace("\"format_version\":1", "\"format_version\":7");
        assert!(matches!(
            detector_from_json::<f64>(&json),
            Err(FormatError::UnsupportedVersion { found: 7, .. })
        ));
    }

    #[test]
    fn corrupted_child_names_tree_and_node() {
        let json = detector_to_json(&single_split_detector()).replace("[0,0.5,1,2]", "[0,0.5,1,9]");
        match detector_from_json::<f64>(&json) {
            Err(FormatError::MalformedTree { tree, reason }) => {
                assert_eq!(tree, 0);
                assert!(reason.contains("node 0"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scalar_mismatch() {
        let json = detector_to_json(&single_split_detector());
        assert!(matches!(
            detector_from_json::<f32>(&json),
            Err(FormatError::ScalarMismatch { .. })
        ));
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(detector_from_json::<f64>("{"), Err(FormatError::Detector(_))));
        assert!(matches!(detector_from_json::<f64>("{}"), Err(FormatError::Detector(_))));
        let json = detector_to_json(&single_split_detector()).replace("\"c_psi\":1.0", "\"c_psi\":3.0");
        assert!(matches!(detector_from_json::<f64>(&json), Err(FormatError::Detector(_))));
    }
}
