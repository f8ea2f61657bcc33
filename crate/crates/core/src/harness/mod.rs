//! Experiment engine: grid expansion, trial execution and reports.
//!
//! A run is the Cartesian product of scenario cells, models and replicates,
//! expanded in the fixed order (relationship, xi, phi, n_rows, n_noise,
//! model, replicate). Trials run on a worker pool and are reassembled in
//! ordinal order, so reports do not depend on the thread count.
//!
//! Seeding is content-addressed: the data seed of a trial is derived from
//! the master seed, the cell label and the replicate number, and the model
//! seed from the data seed and the model name. Every model in a
//! (cell, replicate) therefore sees the same data and split, and rerunning
//! any sub-grid reproduces the corresponding trials of a full run exactly.

mod config;
mod datasets;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{train_test_split, DataError, Dataset};
use crate::ensemble::{self, fit_ensemble, EnsembleError, EnsembleSpec};
use crate::exec::{with_threads, Execution};
use crate::metrics::{self, MetricError, TrialResult};
use crate::rng;
use crate::tweedie::{generate_sim_dataset, SimScenario, TweedieError};

pub use config::{parse_model_list, ExperimentConfig, GridAxes, GridFile, DEFAULT_REPLICATES, DEFAULT_TRAIN_FRACTION};
pub use datasets::{builtin_recipe, expected_columns, load_builtin_dataset, NamedDataset, BUILTIN_DATASETS};
pub use report::{
    emit_report, parse_results_csv, write_results_csv, write_summary_csv, CsvRow, Format, Metadata, Report,
    SummaryRow, TrialFailure, TrialRecord, CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown model {0:?} (expected v1..v7, single or mean)")]
    UnknownModel(String),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("{dataset}: header does not match the expected columns (missing: {missing:?}; unexpected: {unexpected:?})")]
    HeaderMismatch {
        dataset: String,
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("{dataset}: expected {expected} rows after cleaning, found {found}")]
    RowCount {
        dataset: String,
        expected: usize,
        found: usize,
    },
    #[error("bad config file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Tweedie(#[from] TweedieError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Errors caused by how the tool was invoked rather than by the data.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_) | HarnessError::UnknownModel(_) | HarnessError::UnknownDataset(_) | HarnessError::Toml(_)
        )
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// A model under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelId {
    /// Ensemble preset `v1`..`v7`.
    Ensemble(u8),
    /// Single KNN with cross-validated k.
    Single,
    /// Predicts the training-target mean everywhere.
    Mean,
}

impl ModelId {
    pub const PRESETS: [ModelId; 8] = [
        ModelId::Ensemble(1),
        ModelId::Ensemble(2),
        ModelId::Ensemble(3),
        ModelId::Ensemble(4),
        ModelId::Ensemble(5),
        ModelId::Ensemble(6),
        ModelId::Ensemble(7),
        ModelId::Single,
    ];

    /// The ensemble configuration, or `None` for the mean model.
    pub fn spec(self) -> Option<EnsembleSpec> {
        match self {
            ModelId::Mean => None,
            other => Some(ensemble::preset(&other.to_string()).expect("valid preset")),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::Ensemble(v) => write!(f, "v{v}"),
            ModelId::Single => f.write_str("single"),
            ModelId::Mean => f.write_str("mean"),
        }
    }
}

impl FromStr for ModelId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "single" => return Ok(ModelId::Single),
            "mean" => return Ok(ModelId::Mean),
            _ => {}
        }
        match t.strip_prefix('v').unwrap_or(&t).parse::<u8>() {
            Ok(v @ 1..=7) => Ok(ModelId::Ensemble(v)),
            _ => Err(HarnessError::UnknownModel(s.to_string())),
        }
    }
}

impl Serialize for ModelId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where a cell's data comes from.
#[derive(Debug, Clone)]
pub enum Scenario {
    Simulated(SimScenario),
    Dataset(Arc<NamedDataset>),
}

impl Scenario {
    pub fn label(&self) -> String {
        match self {
            Scenario::Simulated(s) => s.label(),
            Scenario::Dataset(d) => d.name.clone(),
        }
    }
}

/// One trial: a (cell, model, replicate) with its derived seeds.
#[derive(Debug, Clone)]
pub struct TrialDescriptor {
    pub ordinal: usize,
    pub scenario: Scenario,
    pub model: ModelId,
    pub replicate: usize,
    pub train_fraction: f64,
    /// Seeds data generation and the train/test split.
    pub data_seed: u64,
    /// Seeds the model's own randomness.
    pub model_seed: u64,
}

impl TrialDescriptor {
    pub fn trial_id(&self) -> String {
        format!("{}|{}|{}", self.scenario.label(), self.model, self.replicate)
    }
}

/// Data seed for replicate `replicate` of the cell labelled `label`.
pub fn data_seed(master_seed: u64, label: &str, replicate: usize) -> u64 {
    rng::mix(rng::mix(master_seed, rng::hash_str(label)), replicate as u64)
}

/// Model seed within a trial.
pub fn model_seed(data_seed: u64, model: ModelId) -> u64 {
    rng::mix(data_seed, rng::hash_str(&model.to_string()))
}

const SPLIT_STREAM: u64 = 1;

/// Expands the configuration into trial descriptors, cells outermost and
/// replicates innermost.
pub fn expand_grid(config: &ExperimentConfig) -> Result<Vec<TrialDescriptor>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.scenarios.len() * config.models.len() * config.replicates);
    for scenario in &config.scenarios {
        let label = scenario.label();
        for &model in &config.models {
            for replicate in 0..config.replicates {
                let ds = data_seed(config.seed, &label, replicate);
                out.push(TrialDescriptor {
                    ordinal: out.len(),
                    scenario: scenario.clone(),
                    model,
                    replicate,
                    train_fraction: config.train_fraction,
                    data_seed: ds,
                    model_seed: model_seed(ds, model),
                });
            }
        }
    }
    Ok(out)
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// Data, split, fit, predict and score for one descriptor.
pub fn run_trial(desc: &TrialDescriptor) -> Result<TrialResult> {
    let data: Arc<Dataset> = match &desc.scenario {
        Scenario::Simulated(s) => Arc::new(generate_sim_dataset(s, desc.data_seed)?),
        Scenario::Dataset(d) => Arc::new(d.dataset.clone()),
    };
    let split = train_test_split(
        data.n_rows(),
        desc.train_fraction,
        &mut rng::derive_stream(desc.data_seed, SPLIT_STREAM),
    )?;
    let train = data.select_rows(&split.train_rows)?;
    let test = data.select_rows(&split.test_rows)?;
    let train_mean = train.target_mean();

    let mut config = BTreeMap::new();
    config.insert("model_seed".to_string(), desc.model_seed.to_string());
    config.insert("data_seed".to_string(), desc.data_seed.to_string());
    config.insert("n_train".to_string(), train.n_rows().to_string());
    config.insert("n_test".to_string(), test.n_rows().to_string());

    let fit_start = Instant::now();
    let (predictions, fit_millis, predict_millis) = match desc.model.spec() {
        None => {
            let fit_millis = millis(fit_start);
            let start = Instant::now();
            let p = vec![train_mean; test.n_rows()];
            config.insert("k_effective".into(), String::new());
            (p, fit_millis, millis(start))
        }
        Some(spec) => {
            let model = fit_ensemble(&spec, &train, desc.model_seed, Execution::Parallel)?;
            let fit_millis = millis(fit_start);
            let start = Instant::now();
            let p = model.predict(&test, Execution::Parallel)?;
            let predict_millis = millis(start);
            config.insert("variant".into(), spec.variant_name.clone());
            config.insert("obs_fraction".into(), spec.obs_fraction.to_string());
            config.insert("feat_fraction".into(), spec.feat_fraction.to_string());
            config.insert("k_policy".into(), spec.k_policy.describe());
            config.insert("n_learners".into(), spec.n_learners.to_string());
            config.insert("k_effective".into(), join(model.effective_ks()));
            config.insert("k_drawn".into(), join(model.learners.iter().map(|l| l.bag.k_drawn)));
            if let Some(t) = model.learners.first().and_then(|l| l.tuning.as_ref()) {
                config.insert("cv_mse".into(), join(t.cv_mse.iter().map(|(k, m)| format!("{k}:{m}"))));
            }
            (p, fit_millis, predict_millis)
        }
    };

    let mse_test = metrics::mse(test.target(), &predictions)?;
    let mse_mean = metrics::mean_model_mse(test.target(), train_mean)?;
    let r2_test = match metrics::r_squared_from_mse(mse_test, mse_mean) {
        Ok(r) => Some(r),
        Err(MetricError::DegenerateBaseline) => {
            config.insert("r2".into(), "undefined: mean model has zero error".into());
            None
        }
        Err(e) => return Err(e.into()),
    };
    Ok(TrialResult {
        model_name: desc.model.to_string(),
        replicate: desc.replicate,
        r2_test,
        mse_test: Some(mse_test),
        mse_mean_model: Some(mse_mean),
        fit_millis,
        predict_millis,
        effective_config: config,
    })
}

/// Runs every trial of `config` and assembles the report. Failed trials are
/// recorded in the report's failure list; they never abort the run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    let started = Metadata::now();
    let descriptors = expand_grid(config)?;
    let outcomes = with_threads(config.threads, || {
        Execution::Parallel.map_range(descriptors.len(), |i| run_trial(&descriptors[i]))
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (desc, outcome) in descriptors.iter().zip(outcomes) {
        match outcome {
            Ok(result) => rows.push(TrialRecord::new(desc, result)),
            Err(e) => failures.push(TrialFailure::new(desc, &e)),
        }
    }
    Ok(Report::assemble(config, started, rows, failures))
}
