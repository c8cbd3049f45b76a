//! Drift supervision for deployed classifiers.
//!
//! An Isolation Forest is fitted on the feature embeddings of a classifier's
//! "non-defect" training samples. Production samples the classifier labels
//! "non-defect" are scored against it; scores beyond a median + k·MAD
//! threshold flag likely false negatives, and a sliding window over those
//! flags raises drift alarms.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the precision used by the command-line tool and the service.

pub mod forest;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use forest::{ForestConfig, ForestError, IsolationForest, IsolationTree, Node};
pub use io::{ClassCode, EmbeddingRecord, FormatError};
pub use pipeline::{
    DriftDetector, EvalReport, MonitorConfig, MonitorEvent, MonitorState, PipelineError,
    ScoredRecord,
};
pub use scalar::Scalar;
pub use stats::{KsResult, MadSummary, StatsError};

pub type Forest = IsolationForest<f64>;
pub type Forest32 = IsolationForest<f32>;
pub type Tree = IsolationTree<f64>;
pub type Tree32 = IsolationTree<f32>;
pub type Detector = DriftDetector<f64>;
pub type Detector32 = DriftDetector<f32>;
pub type Mad = MadSummary<f64>;
pub type Mad32 = MadSummary<f32>;
pub type Ks = KsResult<f64>;
pub type Report = EvalReport<f64>;
pub type Monitor = MonitorState<f64>;
pub type Scored = ScoredRecord<f64>;
