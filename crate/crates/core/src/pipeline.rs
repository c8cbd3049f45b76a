//! Supervision workflow: fit a detector on non-defect training embeddings,
//! flag suspicious non-defect predictions, track windowed flag rates and
//! evaluate against labeled data.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{ForestConfig, ForestError, IsolationForest};
use crate::io::{ClassCode, EmbeddingRecord};
use crate::scalar::Scalar;
use crate::stats::{ks_test, KsResult, MadSummary, StatsError};

pub const DEFAULT_WINDOW: usize = 200;
pub const MIN_ALARM_RATE: f64 = 0.05;
pub const ALARM_BASELINE_MULTIPLIER: f64 = 3.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("need at least 2 non-defect training records, found {0}")]
    TooFewNonDefect(usize),
    #[error("record {id}: expected {expected} features, found {got}")]
    Dimension { id: u64, expected: usize, got: usize },
    #[error("record {id}: feature f{feature} is not finite")]
    NonFinite { id: u64, feature: usize },
    #[error("invalid detector: {0}")]
    Invalid(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Provenance stored alongside a fitted detector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectorMeta {
    pub n_train: usize,
    pub created_at: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitOptions<F> {
    pub forest: ForestConfig,
    pub k: F,
    pub consistency: F,
    pub created_at: String,
}

impl<F: Scalar> FitOptions<F> {
    pub fn new(forest: ForestConfig) -> Self {
        Self {
            forest,
            k: F::of(crate::stats::DEFAULT_MAD_K),
            consistency: F::one(),
            created_at: "unspecified".to_string(),
        }
    }

    pub fn with_k(mut self, k: F) -> Self {
        self.k = k;
        self
    }
}

/// A forest fitted on non-defect embeddings plus the MAD threshold of its
/// own training scores.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDetector<F> {
    forest: IsolationForest<F>,
    mad: MadSummary<F>,
    baseline_flag_rate: F,
    meta: DetectorMeta,
}

/// Converts record features to the detector scalar, checking width and
/// finiteness.
fn features_as<F: Scalar>(record: &EmbeddingRecord, dim: usize) -> Result<Vec<F>, PipelineError> {
    if record.features.len() != dim {
        return Err(PipelineError::Dimension {
            id: record.id,
            expected: dim,
            got: record.features.len(),
        });
    }
    if let Some(feature) = record.features.iter().position(|v| !v.is_finite()) {
        return Err(PipelineError::NonFinite { id: record.id, feature });
    }
    Ok(record.features.iter().map(|&v| F::of_f32(v)).collect())
}

fn rate<F: Scalar>(num: usize, den: usize) -> Option<F> {
    (den > 0).then(|| F::of(num as f64 / den as f64))
}

impl<F: Scalar> DriftDetector<F> {
    /// Fits on the records whose designated class (truth if known, else
    /// prediction) is non-defect.
    pub fn fit(records: &[EmbeddingRecord], config: ForestConfig, k: F) -> Result<Self, PipelineError> {
        Self::fit_with(records, &FitOptions::new(config).with_k(k)).map(|(d, _)| d)
    }

    /// Fits and also returns the training scores the threshold was derived
    /// from.
    pub fn fit_with(
        records: &[EmbeddingRecord],
        opts: &FitOptions<F>,
    ) -> Result<(Self, Vec<F>), PipelineError> {
        let train: Vec<&EmbeddingRecord> = records
            .iter()
            .filter(|r| r.designated_class() == ClassCode::NON_DEFECT)
            .collect();
        if train.len() < 2 {
            return Err(PipelineError::TooFewNonDefect(train.len()));
        }
        let dim = opts.forest.dim;
        let rows = train
            .iter()
            .map(|r| features_as::<F>(r, dim))
            .collect::<Result<Vec<_>, _>>()?;
        let forest = IsolationForest::fit(&rows, opts.forest).map_err(|e| match e {
            ForestError::NonFinite { row, feature } => PipelineError::NonFinite {
                id: train[row].id,
                feature,
            },
            other => other.into(),
        })?;
        let scores = forest.score_batch(&rows)?;
        let mad = MadSummary::with_consistency(&scores, opts.k, opts.consistency)?;
        let flagged = scores.iter().filter(|&&s| mad.exceeds(s)).count();
        let mut warnings = Vec::new();
        if mad.degenerate {
            warnings.push(format!(
                "training scores have zero MAD; threshold set to median + {}",
                crate::stats::EPSILON_FLOOR
            ));
        }
        let detector = Self {
            forest,
            mad,
            baseline_flag_rate: F::of(flagged as f64 / scores.len() as f64),
            meta: DetectorMeta {
                n_train: train.len(),
                created_at: opts.created_at.clone(),
                warnings,
            },
        };
        Ok((detector, scores))
    }

    pub fn from_parts(
        forest: IsolationForest<F>,
        mad: MadSummary<F>,
        baseline_flag_rate: F,
        meta: DetectorMeta,
    ) -> Result<Self, PipelineError> {
        if !mad.threshold.is_finite() {
            return Err(PipelineError::Invalid("threshold is not finite".into()));
        }
        if !(baseline_flag_rate >= F::zero() && baseline_flag_rate <= F::one()) {
            return Err(PipelineError::Invalid(format!(
                "baseline_flag_rate {baseline_flag_rate} outside [0, 1]"
            )));
        }
        Ok(Self {
            forest,
            mad,
            baseline_flag_rate,
            meta,
        })
    }

    pub fn forest(&self) -> &IsolationForest<F> {
        &self.forest
    }

    pub fn mad(&self) -> &MadSummary<F> {
        &self.mad
    }

    pub fn threshold(&self) -> F {
        self.mad.threshold
    }

    pub fn baseline_flag_rate(&self) -> F {
        self.baseline_flag_rate
    }

    pub fn meta(&self) -> &DetectorMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.forest.dim()
    }

    /// `max(0.05, 3 × baseline_flag_rate)`.
    pub fn default_alarm_rate(&self) -> F {
        let r = ALARM_BASELINE_MULTIPLIER * self.baseline_flag_rate.as_f64();
        F::of(r.max(MIN_ALARM_RATE))
    }

    /// Scores a record. Every record gets a score; only non-defect
    /// predictions at or above the threshold are flagged.
    pub fn score_record(&self, record: &EmbeddingRecord) -> Result<ScoredRecord<F>, PipelineError> {
        let x = features_as::<F>(record, self.dim())?;
        let score = self.forest.score(&x)?;
        Ok(ScoredRecord {
            id: record.id,
            pred: record.pred,
            score,
            flagged: record.pred == ClassCode::NON_DEFECT && self.mad.exceeds(score),
        })
    }

    pub fn score_records(&self, records: &[EmbeddingRecord]) -> Result<Vec<ScoredRecord<F>>, PipelineError> {
        records.iter().map(|r| self.score_record(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord<F> {
    pub id: u64,
    pub pred: ClassCode,
    pub score: F,
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig<F> {
    pub window: usize,
    pub alarm_rate: F,
}

impl<F: Scalar> MonitorConfig<F> {
    /// Default window with the detector's default alarm rate.
    pub fn for_detector(detector: &DriftDetector<F>) -> Self {
        Self {
            window: DEFAULT_WINDOW,
            alarm_rate: detector.default_alarm_rate(),
        }
    }
}

/// Monitor output. `index` is the 0-based position in the input stream,
/// counting malformed entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MonitorEvent<F> {
    Flag { index: u64, id: u64, score: F },
    AlarmRaised { index: u64, window_flag_rate: F },
    AlarmCleared { index: u64, window_flag_rate: F },
    Error { index: u64, id: Option<u64>, message: String },
}

/// Sliding window over the flags of the last `window` non-defect
/// predictions. The alarm is active iff the window is full and its flag
/// rate is at least `alarm_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorState<F> {
    config: MonitorConfig<F>,
    window: VecDeque<bool>,
    window_flags: usize,
    alarm_active: bool,
    seen: u64,
    scored: u64,
    flagged: u64,
    errors: u64,
    alarms_raised: u64,
}

/// Point-in-time view of a monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorSnapshot<F> {
    pub window_size: usize,
    pub window_len: usize,
    pub window_flags: usize,
    pub window_flag_rate: F,
    pub alarm_rate: F,
    pub alarm_active: bool,
    pub seen: u64,
    pub scored: u64,
    pub flagged: u64,
    pub errors: u64,
    pub alarms_raised: u64,
}

impl<F: Scalar> MonitorState<F> {
    pub fn new(config: MonitorConfig<F>) -> Self {
        assert!(config.window > 0, "monitor window must be positive");
        Self {
            config,
            window: VecDeque::with_capacity(config.window),
            window_flags: 0,
            alarm_active: false,
            seen: 0,
            scored: 0,
            flagged: 0,
            errors: 0,
            alarms_raised: 0,
        }
    }

    pub fn config(&self) -> &MonitorConfig<F> {
        &self.config
    }

    pub fn alarm_active(&self) -> bool {
        self.alarm_active
    }

    pub fn window_flag_rate(&self) -> F {
        if self.window.is_empty() {
            F::zero()
        } else {
            F::of(self.window_flags as f64 / self.window.len() as f64)
        }
    }

    pub fn window(&self) -> impl Iterator<Item = bool> + '_ {
        self.window.iter().copied()
    }

    pub fn snapshot(&self) -> MonitorSnapshot<F> {
        MonitorSnapshot {
            window_size: self.config.window,
            window_len: self.window.len(),
            window_flags: self.window_flags,
            window_flag_rate: self.window_flag_rate(),
            alarm_rate: self.config.alarm_rate,
            alarm_active: self.alarm_active,
            seen: self.seen,
            scored: self.scored,
            flagged: self.flagged,
            errors: self.errors,
            alarms_raised: self.alarms_raised,
        }
    }

    /// Folds one scored record into the window. A single step can produce a
    /// flag and an alarm transition, so events come back as a list.
    pub fn step(&mut self, scored: &ScoredRecord<F>) -> Vec<MonitorEvent<F>> {
        let index = self.seen;
        self.seen += 1;
        self.scored += 1;
        if scored.pred != ClassCode::NON_DEFECT {
            return Vec::new();
        }

        let mut events = Vec::new();
        if scored.flagged {
            self.flagged += 1;
            events.push(MonitorEvent::Flag {
                index,
                id: scored.id,
                score: scored.score,
            });
        }
        self.window.push_back(scored.flagged);
        self.window_flags += usize::from(scored.flagged);
        if self.window.len() > self.config.window {
            if let Some(true) = self.window.pop_front() {
                self.window_flags -= 1;
            }
        }

        let rate = self.window_flag_rate();
        let should_alarm = self.window.len() == self.config.window && rate >= self.config.alarm_rate;
        if should_alarm && !self.alarm_active {
            self.alarm_active = true;
            self.alarms_raised += 1;
            events.push(MonitorEvent::AlarmRaised {
                index,
                window_flag_rate: rate,
            });
        } else if !should_alarm && self.alarm_active {
            self.alarm_active = false;
            events.push(MonitorEvent::AlarmCleared {
                index,
                window_flag_rate: rate,
            });
        }
        events
    }

    /// Records an entry that could not be scored; the window is untouched.
    pub fn record_error(&mut self, id: Option<u64>, message: impl Into<String>) -> MonitorEvent<F> {
        let index = self.seen;
        self.seen += 1;
        self.errors += 1;
        MonitorEvent::Error {
            index,
            id,
            message: message.into(),
        }
    }

    /// Scores a record with `detector` and folds it in, or records the
    /// scoring failure.
    pub fn observe(
        &mut self,
        detector: &DriftDetector<F>,
        record: &EmbeddingRecord,
    ) -> (Option<ScoredRecord<F>>, Vec<MonitorEvent<F>>) {
        match detector.score_record(record) {
            Ok(s) => {
                let events = self.step(&s);
                (Some(s), events)
            }
            Err(e) => (None, vec![self.record_error(Some(record.id), e.to_string())]),
        }
    }
}

/// Evaluation of a detector against held-out non-defect data and
/// out-of-distribution data with classifier predictions. Rates are `None`
/// when their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<F> {
    pub threshold: F,
    pub baseline_flag_rate: F,
    pub n_test: usize,
    pub n_test_nondefect_pred: usize,
    pub n_test_flagged: usize,
    pub false_flag_rate: Option<F>,
    pub n_ood: usize,
    pub n_type_ii: usize,
    pub type_ii_rate: Option<F>,
    pub n_detected: usize,
    pub detection_rate: Option<F>,
    pub ks_train_vs_test: Option<KsResult<F>>,
    pub ks_train_vs_ood: Option<KsResult<F>>,
}

const REPORT_COLUMNS: &[&str] = &[
    "threshold",
    "baseline_flag_rate",
    "n_test",
    "n_test_nondefect_pred",
    "n_test_flagged",
    "false_flag_rate",
    "n_ood",
    "n_type_ii",
    "type_ii_rate",
    "n_detected",
    "detection_rate",
    "ks_test_d",
    "ks_test_p",
    "ks_ood_d",
    "ks_ood_p",
];

/// Plain decimal, except exponent notation for magnitudes below 1e-4 so
/// tiny p-values stay readable.
fn cell<F: Scalar>(x: F) -> String {
    let v = x.as_f64();
    if v != 0.0 && v.abs() < 1e-4 {
        format!("{v:e}")
    } else {
        x.to_string()
    }
}

fn opt_cell<F: Scalar>(v: Option<F>) -> String {
    v.map_or_else(|| "NA".to_string(), cell)
}

impl<F: Scalar> EvalReport<F> {
    pub fn csv_header() -> String {
        REPORT_COLUMNS.join(",")
    }

    /// One CSV row in [`EvalReport::csv_header`] order; undefined values
    /// are written as `NA`.
    pub fn csv_row(&self) -> String {
        let cells = [
            cell(self.threshold),
            cell(self.baseline_flag_rate),
            self.n_test.to_string(),
            self.n_test_nondefect_pred.to_string(),
            self.n_test_flagged.to_string(),
            opt_cell(self.false_flag_rate),
            self.n_ood.to_string(),
            self.n_type_ii.to_string(),
            opt_cell(self.type_ii_rate),
            self.n_detected.to_string(),
            opt_cell(self.detection_rate),
            opt_cell(self.ks_train_vs_test.map(|k| k.d_statistic)),
            opt_cell(self.ks_train_vs_test.map(|k| k.p_value)),
            opt_cell(self.ks_train_vs_ood.map(|k| k.d_statistic)),
            opt_cell(self.ks_train_vs_ood.map(|k| k.p_value)),
        ];
        cells.join(",")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluates `detector`.
///
/// * `train_scores`: the detector's training scores (reference distribution).
/// * `test_nondefect`: held-out non-defect records; flagged ones are false flags.
/// * `ood`: out-of-distribution records carrying classifier predictions;
///   those predicted non-defect are type II errors.
pub fn evaluate<F: Scalar>(
    detector: &DriftDetector<F>,
    train_scores: &[F],
    test_nondefect: &[EmbeddingRecord],
    ood: &[EmbeddingRecord],
) -> Result<EvalReport<F>, PipelineError> {
    let test = detector.score_records(test_nondefect)?;
    let test_scores: Vec<F> = test.iter().map(|s| s.score).collect();
    let n_test_nondefect_pred = test.iter().filter(|s| s.pred == ClassCode::NON_DEFECT).count();
    let n_test_flagged = test.iter().filter(|s| s.flagged).count();

    let type_ii: Vec<ScoredRecord<F>> = ood
        .iter()
        .filter(|r| r.pred == ClassCode::NON_DEFECT)
        .map(|r| detector.score_record(r))
        .collect::<Result<_, _>>()?;
    let n_detected = type_ii.iter().filter(|s| s.flagged).count();
    let ood_scores: Vec<F> = type_ii.iter().map(|s| s.score).collect();

    let ks_against = |other: &[F]| -> Result<Option<KsResult<F>>, PipelineError> {
        if train_scores.is_empty() || other.is_empty() {
            Ok(None)
        } else {
            Ok(Some(ks_test(train_scores, other)?))
        }
    };

    Ok(EvalReport {
        threshold: detector.threshold(),
        baseline_flag_rate: detector.baseline_flag_rate(),
        n_test: test.len(),
        n_test_nondefect_pred,
        n_test_flagged,
        false_flag_rate: rate(n_test_flagged, n_test_nondefect_pred),
        n_ood: ood.len(),
        n_type_ii: type_ii.len(),
        type_ii_rate: rate(type_ii.len(), ood.len()),
        n_detected,
        detection_rate: rate(n_detected, type_ii.len()),
        ks_train_vs_test: ks_against(&test_scores)?,
        ks_train_vs_ood: ks_against(&ood_scores)?,
    })
}

/// Two-sample KS comparison of score distributions.
pub fn compare_distributions<F: Scalar>(a: &[F], b: &[F]) -> Result<KsResult<F>, StatsError> {
    ks_test(a, b)
}
