//! Scoring: mean squared error, R² against the training-mean model, and
//! grouped replicate summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} targets vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("mean model has zero squared error; R² is undefined")]
    DegenerateBaseline,
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn sse(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Mean of squared residuals.
pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(sse(y, yhat) / y.len() as f64)
}

/// Squared error of the mean model: every test row predicted by the
/// training-target mean.
pub fn mean_model_mse(y_test: &[f64], y_train_mean: f64) -> Result<f64> {
    if y_test.is_empty() {
        return Err(MetricError::Empty);
    }
    let s: f64 = y_test.iter().map(|y| (y - y_train_mean) * (y - y_train_mean)).sum();
    Ok(s / y_test.len() as f64)
}

/// `1 - SSE(model) / SSE(mean model)`, where the mean model predicts
/// `y_train_mean` everywhere. Negative values are returned unclipped.
pub fn r_squared(y_test: &[f64], yhat: &[f64], y_train_mean: f64) -> Result<f64> {
    check(y_test, yhat)?;
    let model = mse(y_test, yhat)?;
    let baseline = mean_model_mse(y_test, y_train_mean)?;
    r_squared_from_mse(model, baseline)
}

/// R² from already computed model and mean-model MSEs.
pub fn r_squared_from_mse(model_mse: f64, mean_model_mse: f64) -> Result<f64> {
    if mean_model_mse.is_nan() || mean_model_mse <= 0.0 {
        return Err(MetricError::DegenerateBaseline);
    }
    Ok(1.0 - model_mse / mean_model_mse)
}

/// One scored trial. `r2_test` is `None` when the mean-model error is zero
/// or the trial failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub model_name: String,
    pub replicate: usize,
    pub r2_test: Option<f64>,
    pub mse_test: Option<f64>,
    pub mse_mean_model: Option<f64>,
    pub fit_millis: f64,
    pub predict_millis: f64,
    /// Free-form echo of the fitted configuration (k values, seeds).
    pub effective_config: BTreeMap<String, String>,
}

/// Mean, sample standard deviation, minimum and maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    /// Sample (n - 1) standard deviation; 0 for a single value.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self {
            count: n,
            mean,
            sd,
            min,
            max,
        })
    }
}

/// Summary of one group of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub group: Vec<String>,
    pub trials: usize,
    pub r2: Option<Stats>,
    pub mse: Option<Stats>,
}

/// Groups `results` by `key` and summarizes R² and MSE per group. Groups are
/// returned in ascending key order; missing metrics are skipped.
pub fn aggregate<T, K>(results: &[T], key: K, metrics: impl Fn(&T) -> (Option<f64>, Option<f64>)) -> Result<Vec<Summary>>
where
    K: Fn(&T) -> Vec<String>,
{
    if results.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut groups: BTreeMap<Vec<String>, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in results {
        let entry = groups.entry(key(r)).or_default();
        entry.0 += 1;
        let (r2, m) = metrics(r);
        entry.1.extend(r2);
        entry.2.extend(m);
    }
    Ok(groups
        .into_iter()
        .map(|(group, (trials, r2, m))| Summary {
            group,
            trials,
            r2: Stats::of(&r2),
            mse: Stats::of(&m),
        })
        .collect())
}

/// [`aggregate`] over [`TrialResult`]s grouped by model name.
pub fn aggregate_by_model(results: &[TrialResult]) -> Result<Vec<Summary>> {
    aggregate(results, |r| vec![r.model_name.clone()], |r| (r.r2_test, r.mse_test))
}
