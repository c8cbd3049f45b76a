//! Synthetic embedding streams: isotropic Gaussian classes, an
//! out-of-distribution class at a controllable distance, a simulated
//! classifier with a programmable type II error rate, and abrupt or gradual
//! drift schedules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::ForestConfig;
use crate::io::{ClassCode, EmbeddingRecord};
use crate::pipeline::{evaluate, DriftDetector, EvalReport, FitOptions, PipelineError};
use crate::scalar::Scalar;

/// Default distance of the defect class center, in units of sigma.
pub const DEFAULT_DEFECT_DISTANCE: f64 = 8.0;

// sub-stream labels
const DEFECT_DIRECTION: u64 = 1;
const TRAIN: u64 = 2;
const TEST: u64 = 3;
const STREAM: u64 = 4;
const OOD_DIRECTION: u64 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
    #[error("invalid drift schedule: {0}")]
    Schedule(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    /// Training records per class.
    pub n_train: usize,
    /// Test records per class.
    pub n_test: usize,
    pub sigma: f64,
    pub seed: u64,
    pub nondefect_center: Vec<f64>,
    pub defect_center: Vec<f64>,
    /// Probability that the simulated classifier mislabels an
    /// in-distribution sample.
    pub id_error_rate: f64,
    /// Share of defect samples among in-distribution stream samples.
    pub defect_fraction: f64,
}

fn sub_rng(seed: u64, label: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::forest::tree_seed(seed, label as usize))
}

/// Uniformly random unit vector.
fn random_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl SynthConfig {
    /// Non-defect class at the origin, defect class 8σ away in a seeded
    /// random direction; 200 train / 100 test per class.
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut cfg = Self {
            dim,
            n_train: 200,
            n_test: 100,
            sigma: 1.0,
            seed,
            nondefect_center: vec![0.0; dim],
            defect_center: Vec::new(),
            id_error_rate: 0.0,
            defect_fraction: 0.5,
        };
        cfg.reset_defect_center();
        cfg
    }

    fn reset_defect_center(&mut self) {
        let dir = random_direction(self.dim.max(1), &mut sub_rng(self.seed, DEFECT_DIRECTION));
        self.defect_center = self
            .nondefect_center
            .iter()
            .zip(dir)
            .map(|(c, d)| c + DEFAULT_DEFECT_DISTANCE * self.sigma * d)
            .collect();
    }

    pub fn with_sizes(mut self, n_train: usize, n_test: usize) -> Self {
        self.n_train = n_train;
        self.n_test = n_test;
        self
    }

    /// Sets sigma, rescaling the default defect center distance.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        if self.sigma > 0.0 {
            self.reset_defect_center();
        }
        self
    }

    /// Same generator at another dimensionality (centers regenerated).
    pub fn with_dim(&self, dim: usize) -> Self {
        let mut cfg = self.clone();
        cfg.dim = dim;
        cfg.nondefect_center = vec![0.0; dim];
        cfg.reset_defect_center();
        cfg
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.dim == 0 {
            return Err(SynthError::Config("dim must be at least 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(SynthError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.nondefect_center.len() != self.dim || self.defect_center.len() != self.dim {
            return Err(SynthError::Config("class centers must have dim components".into()));
        }
        for (name, p) in [("id_error_rate", self.id_error_rate), ("defect_fraction", self.defect_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    fn sample(&self, center: &[f64], rng: &mut ChaCha8Rng) -> Vec<f32> {
        center
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(rng);
                (c + self.sigma * z) as f32
            })
            .collect()
    }

    fn classify(&self, class: ClassCode, rng: &mut ChaCha8Rng) -> ClassCode {
        if self.id_error_rate > 0.0 && rng.random::<f64>() < self.id_error_rate {
            if class == ClassCode::NON_DEFECT {
                ClassCode::DEFECT
            } else {
                ClassCode::NON_DEFECT
            }
        } else {
            class
        }
    }

    /// Center of the OOD class for a given severity (distance in sigmas).
    pub fn ood_center(&self, severity: f64) -> Vec<f64> {
        let dir = random_direction(self.dim, &mut sub_rng(self.seed, OOD_DIRECTION));
        self.nondefect_center
            .iter()
            .zip(dir)
            .map(|(c, d)| c + severity * self.sigma * d)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    Abrupt,
    Gradual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    pub mode: DriftMode,
    pub t0: usize,
    pub t1: usize,
    pub ood_fraction_max: f64,
    /// Distance of the OOD center from the non-defect center, in sigmas.
    pub severity: f64,
    /// Probability the simulated classifier calls an OOD sample non-defect.
    pub type_ii_rate: f64,
}

impl DriftSchedule {
    pub fn abrupt(t0: usize, severity: f64, type_ii_rate: f64) -> Self {
        Self {
            mode: DriftMode::Abrupt,
            t0,
            t1: t0,
            ood_fraction_max: 1.0,
            severity,
            type_ii_rate,
        }
    }

    pub fn gradual(t0: usize, t1: usize, severity: f64, type_ii_rate: f64) -> Self {
        Self {
            mode: DriftMode::Gradual,
            t0,
            t1,
            ood_fraction_max: 1.0,
            severity,
            type_ii_rate,
        }
    }

    /// A stream with no drift at all.
    pub fn none() -> Self {
        Self {
            ood_fraction_max: 0.0,
            ..Self::abrupt(0, 0.0, 0.0)
        }
    }

    pub fn with_max_fraction(mut self, q: f64) -> Self {
        self.ood_fraction_max = q;
        self
    }

    pub fn validate(&self, length: usize) -> Result<(), SynthError> {
        if self.t0 > self.t1 || self.t1 > length {
            return Err(SynthError::Schedule(format!(
                "need t0 <= t1 <= length, got t0 = {}, t1 = {}, length = {length}",
                self.t0, self.t1
            )));
        }
        if self.mode == DriftMode::Abrupt && self.t1 != self.t0 {
            return Err(SynthError::Schedule("abrupt drift requires t1 = t0".into()));
        }
        for (name, p) in [("ood_fraction_max", self.ood_fraction_max), ("type_ii_rate", self.type_ii_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::Schedule(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.severity.is_finite() && self.severity >= 0.0) {
            return Err(SynthError::Schedule(format!("severity must be >= 0, got {}", self.severity)));
        }
        Ok(())
    }

    /// Probability that the sample at stream index `t` is OOD.
    pub fn ood_probability(&self, t: usize) -> f64 {
        if t < self.t0 {
            return 0.0;
        }
        match self.mode {
            DriftMode::Abrupt => self.ood_fraction_max,
            DriftMode::Gradual => {
                if t >= self.t1 {
                    self.ood_fraction_max
                } else {
                    self.ood_fraction_max * (t - self.t0) as f64 / (self.t1 - self.t0) as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub train: Vec<EmbeddingRecord>,
    pub test: Vec<EmbeddingRecord>,
}

impl Baseline {
    pub fn test_nondefect(&self) -> Vec<EmbeddingRecord> {
        self.test
            .iter()
            .filter(|r| r.truth == ClassCode::NON_DEFECT)
            .cloned()
            .collect()
    }
}

/// Train and test sets with `n_train` / `n_test` records per class. Train
/// ids start at 0, test ids continue after the last train id.
pub fn gen_baseline(config: &SynthConfig) -> Result<Baseline, SynthError> {
    config.validate()?;
    let mut next_id = 0u64;
    let mut make = |n: usize, label: u64| {
        let mut rng = sub_rng(config.seed, label);
        let mut out = Vec::with_capacity(2 * n);
        for (class, center) in [
            (ClassCode::NON_DEFECT, &config.nondefect_center),
            (ClassCode::DEFECT, &config.defect_center),
        ] {
            for _ in 0..n {
                let features = config.sample(center, &mut rng);
                let pred = config.classify(class, &mut rng);
                out.push(EmbeddingRecord::new(next_id, pred, class, features));
                next_id += 1;
            }
        }
        out
    };
    let train = make(config.n_train, TRAIN);
    let test = make(config.n_test, TEST);
    Ok(Baseline { train, test })
}

/// Production stream of `length` records with ids `0..length`. OOD samples
/// carry truth [`ClassCode::OOD`].
pub fn gen_stream(
    config: &SynthConfig,
    schedule: &DriftSchedule,
    length: usize,
) -> Result<Vec<EmbeddingRecord>, SynthError> {
    config.validate()?;
    schedule.validate(length)?;
    let ood_center = config.ood_center(schedule.severity);
    let mut rng = sub_rng(config.seed, STREAM);
    let mut out = Vec::with_capacity(length);
    for t in 0..length {
        let id = t as u64;
        if rng.random::<f64>() < schedule.ood_probability(t) {
            let features = config.sample(&ood_center, &mut rng);
            let pred = if rng.random::<f64>() < schedule.type_ii_rate {
                ClassCode::NON_DEFECT
            } else {
                ClassCode::DEFECT
            };
            out.push(EmbeddingRecord::new(id, pred, ClassCode::OOD, features));
        } else {
            let (class, center) = if rng.random::<f64>() < config.defect_fraction {
                (ClassCode::DEFECT, &config.defect_center)
            } else {
                (ClassCode::NON_DEFECT, &config.nondefect_center)
            };
            let features = config.sample(center, &mut rng);
            let pred = config.classify(class, &mut rng);
            out.push(EmbeddingRecord::new(id, pred, class, features));
        }
    }
    Ok(out)
}

/// Everything one synthetic fit/evaluate run produces.
#[derive(Debug, Clone)]
pub struct Experiment<F> {
    pub detector: DriftDetector<F>,
    pub train_scores: Vec<F>,
    pub report: EvalReport<F>,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Generates a baseline and an OOD stream, fits a detector on the training
/// set and evaluates it on the non-defect test records and the OOD records
/// of the stream.
pub fn run_experiment<F: Scalar>(
    config: &SynthConfig,
    schedule: &DriftSchedule,
    stream_length: usize,
    fit: &FitOptions<F>,
) -> Result<Experiment<F>, ExperimentError> {
    let baseline = gen_baseline(config)?;
    let stream = gen_stream(config, schedule, stream_length)?;
    let ood: Vec<EmbeddingRecord> = stream.into_iter().filter(|r| r.truth == ClassCode::OOD).collect();
    let mut fit = fit.clone();
    fit.forest.dim = config.dim;
    let (detector, train_scores) = DriftDetector::fit_with(&baseline.train, &fit)?;
    let report = evaluate(&detector, &train_scores, &baseline.test_nondefect(), &ood)?;
    Ok(Experiment {
        detector,
        train_scores,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow<F> {
    pub dim: usize,
    pub report: EvalReport<F>,
}

/// Runs [`run_experiment`] once per dimensionality.
pub fn dim_sweep<F: Scalar>(
    config: &SynthConfig,
    dims: &[usize],
    schedule: &DriftSchedule,
    stream_length: usize,
    forest: ForestConfig,
    k: F,
) -> Result<Vec<SweepRow<F>>, ExperimentError> {
    if dims.is_empty() {
        return Err(SynthError::Config("dimension list is empty".into()).into());
    }
    dims.iter()
        .map(|&dim| {
            let cfg = config.with_dim(dim);
            let fit = FitOptions::new(ForestConfig { dim, ..forest }).with_k(k);
            run_experiment(&cfg, schedule, stream_length, &fit).map(|e| SweepRow { dim, report: e.report })
        })
        .collect()
}

/// CSV with a leading `dim` column followed by the report columns.
pub fn sweep_csv<F: Scalar>(rows: &[SweepRow<F>]) -> String {
    let mut out = format!("dim,{}\n", EvalReport::<F>::csv_header());
    for r in rows {
        out.push_str(&format!("{},{}\n", r.dim, r.report.csv_row()));
    }
    out
}
