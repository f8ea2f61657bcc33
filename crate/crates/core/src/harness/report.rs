//! Report assembly and emission.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError, Result, Scenario, TrialDescriptor};
use crate::ensemble::DEFAULT_TUNE_CANDIDATES;
use crate::metrics::{Stats, TrialResult};
use crate::tweedie::Relationship;

pub const CSV_HEADER: &str =
    "trial_id,scenario,relationship,xi,phi,n_rows,n_noise,model,replicate,seed,r2_test,mse_test,k_effective,fit_ms,predict_ms";

/// One successful trial with its descriptor fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub ordinal: usize,
    pub scenario: String,
    pub relationship: Option<Relationship>,
    pub xi: Option<f64>,
    pub phi: Option<f64>,
    pub n_rows: usize,
    pub n_noise: Option<usize>,
    pub seed: u64,
    pub result: TrialResult,
}

fn describe(desc: &TrialDescriptor) -> (Option<Relationship>, Option<f64>, Option<f64>, usize, Option<usize>) {
    match &desc.scenario {
        Scenario::Simulated(s) => (Some(s.relationship), Some(s.xi), Some(s.phi), s.n_rows, Some(s.n_noise)),
        Scenario::Dataset(d) => (None, None, None, d.dataset.n_rows(), None),
    }
}

impl TrialRecord {
    pub fn new(desc: &TrialDescriptor, result: TrialResult) -> Self {
        let (relationship, xi, phi, n_rows, n_noise) = describe(desc);
        Self {
            trial_id: desc.trial_id(),
            ordinal: desc.ordinal,
            scenario: desc.scenario.label(),
            relationship,
            xi,
            phi,
            n_rows,
            n_noise,
            seed: desc.data_seed,
            result,
        }
    }

    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            trial_id: self.trial_id.clone(),
            scenario: self.scenario.clone(),
            relationship: self.relationship.map(|r| r.as_str().to_string()),
            xi: self.xi,
            phi: self.phi,
            n_rows: self.n_rows,
            n_noise: self.n_noise,
            model: self.result.model_name.clone(),
            replicate: self.result.replicate,
            seed: self.seed,
            r2_test: self.result.r2_test,
            mse_test: self.result.mse_test,
            k_effective: self.result.effective_config.get("k_effective").cloned().unwrap_or_default(),
            fit_ms: self.result.fit_millis,
            predict_ms: self.result.predict_millis,
        }
    }
}

/// The flat results-table row. Missing values are empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub trial_id: String,
    pub scenario: String,
    pub relationship: Option<String>,
    pub xi: Option<f64>,
    pub phi: Option<f64>,
    pub n_rows: usize,
    pub n_noise: Option<usize>,
    pub model: String,
    pub replicate: usize,
    pub seed: u64,
    pub r2_test: Option<f64>,
    pub mse_test: Option<f64>,
    pub k_effective: String,
    pub fit_ms: f64,
    pub predict_ms: f64,
}

/// A trial that raised an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial_id: String,
    pub ordinal: usize,
    pub scenario: String,
    pub model: String,
    pub replicate: usize,
    pub seed: u64,
    pub error: String,
}

impl TrialFailure {
    pub fn new(desc: &TrialDescriptor, error: &HarnessError) -> Self {
        Self {
            trial_id: desc.trial_id(),
            ordinal: desc.ordinal,
            scenario: desc.scenario.label(),
            model: desc.model.to_string(),
            replicate: desc.replicate,
            seed: desc.data_seed,
            error: error.to_string(),
        }
    }
}

/// Replicate summary for one (cell, model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub model: String,
    pub trials: usize,
    pub failures: usize,
    pub r2: Option<Stats>,
    pub mse: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub scenarios: Vec<String>,
    pub models: Vec<String>,
    pub replicates: usize,
    pub train_fraction: f64,
    pub master_seed: u64,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub config: ConfigEcho,
    /// Modelling choices that are not implied by the configuration.
    pub decisions: BTreeMap<String, String>,
    /// Unix seconds.
    pub started_at: u64,
    pub finished_at: u64,
    pub parallel_build: bool,
}

impl Metadata {
    pub fn now() -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }
}

fn decisions() -> BTreeMap<String, String> {
    let mut d = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        d.insert(k.to_string(), v);
    };
    put(
        "standardization",
        "z-score per feature with training-row mean and population sd; constant columns centered only".into(),
    );
    put("mean_model", "predicts the training-target mean on test rows".into());
    put(
        "r2",
        "1 - SSE(model)/SSE(mean model); negative values kept; null when the mean model has zero error".into(),
    );
    put("link", "log".into());
    for r in Relationship::ALL {
        put(&format!("mean_function.{r}"), r.formula().into());
    }
    put("outcome_noise", "Binomial(5, 0.1) added to the Tweedie draw".into());
    put("predictors", "iid standard normal; 4 true columns then noise columns".into());
    put("tie_break", "equal distances resolved by ascending row index".into());
    put("row_sampling", "without replacement".into());
    put(
        "single_knn",
        format!("k tuned by 5-fold CV over {DEFAULT_TUNE_CANDIDATES:?} on standardized training data"),
    );
    put(
        "seeding",
        "data seed = mix(mix(master, hash(cell)), replicate); model seed = mix(data seed, hash(model))".into(),
    );
    d
}

/// A complete experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: Metadata,
    pub rows: Vec<TrialRecord>,
    pub summaries: Vec<SummaryRow>,
    pub failures: Vec<TrialFailure>,
}

impl Report {
    pub fn assemble(
        config: &ExperimentConfig,
        started_at: u64,
        rows: Vec<TrialRecord>,
        failures: Vec<TrialFailure>,
    ) -> Self {
        let mut summaries = Vec::new();
        for scenario in &config.scenarios {
            let label = scenario.label();
            for model in &config.models {
                let name = model.to_string();
                let mine: Vec<&TrialRecord> = rows
                    .iter()
                    .filter(|r| r.scenario == label && r.result.model_name == name)
                    .collect();
                let r2: Vec<f64> = mine.iter().filter_map(|r| r.result.r2_test).collect();
                let mse: Vec<f64> = mine.iter().filter_map(|r| r.result.mse_test).collect();
                summaries.push(SummaryRow {
                    scenario: label.clone(),
                    model: name.clone(),
                    trials: mine.len(),
                    failures: failures.iter().filter(|f| f.scenario == label && f.model == name).count(),
                    r2: Stats::of(&r2),
                    mse: Stats::of(&mse),
                });
            }
        }
        Self {
            metadata: Metadata {
                tool: "tkre".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config: ConfigEcho {
                    scenarios: config.scenarios.iter().map(Scenario::label).collect(),
                    models: config.models.iter().map(|m| m.to_string()).collect(),
                    replicates: config.replicates,
                    train_fraction: config.train_fraction,
                    master_seed: config.seed,
                    threads: config.threads,
                },
                decisions: decisions(),
                started_at,
                finished_at: Metadata::now(),
                parallel_build: crate::exec::Execution::parallel_available(),
            },
            rows,
            summaries,
            failures,
        }
    }

    /// A copy with wall-clock fields zeroed and the thread count cleared,
    /// for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.metadata.started_at = 0;
        r.metadata.finished_at = 0;
        r.metadata.config.threads = None;
        for row in &mut r.rows {
            row.result.fit_millis = 0.0;
            row.result.predict_millis = 0.0;
        }
        r
    }

    /// The summary for (`scenario`, `model`).
    pub fn summary(&self, scenario: &str, model: &str) -> Option<&SummaryRow> {
        self.summaries.iter().find(|s| s.scenario == scenario && s.model == model)
    }
}

/// Output format selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(HarnessError::Config(format!("unknown output format {other:?}"))),
        }
    }
}

/// Writes the results table (one row per successful trial).
pub fn write_results_csv<W: Write>(report: &Report, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CSV_HEADER.split(','))?;
    for r in &report.rows {
        out.serialize(r.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a results table written by [`write_results_csv`].
pub fn parse_results_csv<R: Read>(r: R) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(HarnessError::Config(format!("unexpected results header {:?}", header.join(","))));
    }
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one line per (cell, model) summary.
pub fn write_summary_csv<W: Write>(report: &Report, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "scenario", "model", "trials", "failures", "r2_mean", "r2_sd", "r2_min", "r2_max", "mse_mean", "mse_sd",
    ])?;
    for s in &report.summaries {
        out.write_record([
            s.scenario.clone(),
            s.model.clone(),
            s.trials.to_string(),
            s.failures.to_string(),
            opt(s.r2.map(|x| x.mean)),
            opt(s.r2.map(|x| x.sd)),
            opt(s.r2.map(|x| x.min)),
            opt(s.r2.map(|x| x.max)),
            opt(s.mse.map(|x| x.mean)),
            opt(s.mse.map(|x| x.sd)),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the requested formats into `dir` and, when any trial failed, a
/// `failures.txt` manifest. Returns the paths written.
pub fn emit_report(report: &Report, formats: &[Format], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            Format::Csv => {
                let p = dir.join("results.csv");
                write_results_csv(report, BufWriter::new(File::create(&p)?))?;
                written.push(p);
                let p = dir.join("summary.csv");
                write_summary_csv(report, BufWriter::new(File::create(&p)?))?;
                written.push(p);
            }
            Format::Json => {
                let p = dir.join("report.json");
                let mut w = BufWriter::new(File::create(&p)?);
                serde_json::to_writer_pretty(&mut w, report)?;
                w.write_all(b"\n")?;
                w.flush()?;
                written.push(p);
            }
        }
    }
    let manifest = dir.join("failures.txt");
    if report.failures.is_empty() {
        if manifest.exists() {
            fs::remove_file(&manifest)?;
        }
    } else {
        let mut w = BufWriter::new(File::create(&manifest)?);
        for f in &report.failures {
            writeln!(w, "{}\t{}\t{}", f.ordinal, f.trial_id, f.error)?;
        }
        w.flush()?;
        written.push(manifest);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_experiment, ModelId};
    use crate::tweedie::SimScenario;

    fn config(xi: f64) -> ExperimentConfig {
        ExperimentConfig {
            scenarios: vec![Scenario::Simulated(SimScenario {
                relationship: Relationship::Nonlinear,
                xi,
                phi: 2.0,
                n_rows: 120,
                n_noise: 2,
            })],
            models: vec![ModelId::Ensemble(2), ModelId::Single, ModelId::Mean],
            replicates: 3,
            train_fraction: 0.7,
            seed: 5,
            threads: Some(2),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let report = run_experiment(&config(1.5)).unwrap();
        let mut buf = Vec::new();
        write_results_csv(&report, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with(CSV_HEADER));
        let back = parse_results_csv(buf.as_slice()).unwrap();
        let want: Vec<CsvRow> = report.rows.iter().map(TrialRecord::csv_row).collect();
        assert_eq!(back, want);
    }

    #[test]
    fn summaries_per_cell_and_model() {
        let report = run_experiment(&config(1.5)).unwrap();
        assert_eq!(report.rows.len(), 9);
        assert_eq!(report.summaries.len(), 3);
        let s = report.summary(&report.rows[0].scenario, "mean").unwrap();
        assert_eq!(s.trials, 3);
        assert!(s.r2.unwrap().max.abs() <= 1e-12);
    }

    #[test]
    fn empty_results_write_header_and_manifest() {
        let report = run_experiment(&config(7.0)).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.failures.len(), 9);
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, &[Format::Csv, Format::Json], dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.trim_end(), CSV_HEADER);
        let manifest = fs::read_to_string(dir.path().join("failures.txt")).unwrap();
        assert_eq!(manifest.lines().count(), 9);
    }

    #[test]
    fn json_carries_decision_flags() {
        let report = run_experiment(&config(1.5)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&report).unwrap();
        let d = &v["metadata"]["decisions"];
        assert!(d["standardization"].as_str().unwrap().contains("z-score"));
        assert!(d["mean_function.mixed"].is_string());
        assert!(d["mean_model"].is_string());
        let back: Report = serde_json::from_value(v).unwrap();
        assert_eq!(back.rows.len(), report.rows.len());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut one = config(1.5);
        one.threads = Some(1);
        let mut four = config(1.5);
        four.threads = Some(4);
        let a = run_experiment(&one).unwrap().without_timings();
        let b = run_experiment(&four).unwrap().without_timings();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.summaries, b.summaries);
    }

    #[test]
    fn formats() {
        assert_eq!("CSV".parse::<Format>().unwrap(), Format::Csv);
        assert!("xml".parse::<Format>().is_err());
    }
}
