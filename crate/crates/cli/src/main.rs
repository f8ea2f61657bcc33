//! `tkre`: run KNN-ensemble simulations and benchmarks, sample Tweedie
//! variates, and fit or apply single models.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 partial failure
//! (some trials failed; a `failures.txt` manifest was written).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tkre_core::data::{load_csv, read_feature_matrix, IngestRecipe};
use tkre_core::ensemble::{self, fit_ensemble, load_model, save_model, EnsembleError};
use tkre_core::harness::{
    emit_report, load_builtin_dataset, parse_model_list, run_experiment, ExperimentConfig, Format, GridFile,
    HarnessError, Report, Scenario, DEFAULT_REPLICATES, DEFAULT_TRAIN_FRACTION,
};
use tkre_core::tweedie::{sample_tweedie, TweedieParams};
use tkre_core::{rng, Execution};

#[derive(Parser)]
#[command(name = "tkre", version, about = "KNN regression ensembles and Tweedie simulation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation grid and write reports.
    Simulate(SimulateArgs),
    /// Run replicated train/test splits on a real dataset.
    Bench(BenchArgs),
    /// Print Tweedie draws, one per line.
    SampleTweedie(SampleArgs),
    /// Fit one model on a CSV file and save it.
    Fit(FitArgs),
    /// Predict a CSV file with a saved model.
    Predict(PredictArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Comma-separated models, e.g. `v1..v7,single` (`mean` adds the dummy).
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated output formats: csv, json.
    #[arg(long, default_value = "csv,json")]
    format: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML grid file.
    #[arg(long)]
    grid: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// One of autompg, forestfires, ozone, boston, swedish-insurance, dielectric.
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    file: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    xi: f64,
    #[arg(long)]
    phi: f64,
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FitArgs {
    /// Preset: v1..v7 or single.
    #[arg(long)]
    spec: String,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    target: String,
    /// Columns to ignore, comma-separated.
    #[arg(long, value_delimiter = ',')]
    drop: Vec<String>,
    /// Cell values treated as missing (rows are dropped), comma-separated.
    #[arg(long, value_delimiter = ',')]
    missing: Vec<String>,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    pred_out: PathBuf,
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.into())
        } else {
            Failure::Data(e.into())
        }
    }
}

impl From<EnsembleError> for Failure {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::UnknownPreset(_) => Failure::Usage(e.into()),
            other => Failure::Data(other.into()),
        }
    }
}

fn data<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Data(e.into())
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow::anyhow!(msg.into()))
}

/// Successful commands report whether any trial failed.
type Outcome = Result<bool, Failure>;

fn parse_formats(text: &str) -> Result<Vec<Format>, Failure> {
    let formats = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Format>, _>>()?;
    if formats.is_empty() {
        return Err(usage("no output format given"));
    }
    Ok(formats)
}

fn finish(report: &Report, formats: &[Format], out: &Path) -> Outcome {
    let written = emit_report(report, formats, out)?;
    for p in &written {
        eprintln!("wrote {}", p.display());
    }
    eprintln!(
        "{} trials succeeded, {} failed",
        report.rows.len(),
        report.failures.len()
    );
    Ok(!report.failures.is_empty())
}

fn simulate(args: SimulateArgs) -> Outcome {
    let mut file = GridFile::load(&args.grid).map_err(|e| match e {
        HarnessError::Io(io) => Failure::Usage(anyhow::Error::new(io).context(format!("reading {}", args.grid.display()))),
        other => other.into(),
    })?;
    let run = args.run;
    if let Some(m) = run.models {
        file.models = Some(vec![m]);
    }
    file.replicates = run.replicates.or(file.replicates);
    file.seed = run.seed.or(file.seed);
    file.threads = run.threads.or(file.threads);
    let formats = parse_formats(&run.format)?;
    let config = file.into_config()?;
    let report = run_experiment(&config)?;
    finish(&report, &formats, &run.out)
}

fn bench(args: BenchArgs) -> Outcome {
    let run = args.run;
    let formats = parse_formats(&run.format)?;
    let models = parse_model_list(run.models.as_deref().unwrap_or("v1..v7,single"))?;
    let seed = run.seed.ok_or_else(|| usage("--seed is required"))?;
    // validate the name before touching the file
    tkre_core::harness::expected_columns(&args.dataset)?;
    let named = load_builtin_dataset(&args.dataset, &args.file)?;
    eprintln!(
        "{}: {} rows x {} features ({} rows dropped)",
        named.name,
        named.dataset.n_rows(),
        named.dataset.n_cols(),
        named.dropped_rows
    );
    let config = ExperimentConfig {
        scenarios: vec![Scenario::Dataset(Arc::new(named))],
        models,
        replicates: run.replicates.unwrap_or(DEFAULT_REPLICATES),
        train_fraction: DEFAULT_TRAIN_FRACTION,
        seed,
        threads: run.threads,
    };
    let report = run_experiment(&config)?;
    finish(&report, &formats, &run.out)
}

fn sample(args: SampleArgs) -> Outcome {
    let params = TweedieParams::new(args.xi, args.phi, args.mu).map_err(|e| Failure::Usage(e.into()))?;
    let mut stream = rng::stream(args.seed);
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for _ in 0..args.n {
        let y = sample_tweedie(&params, &mut stream).map_err(|e| Failure::Usage(e.into()))?;
        if let Err(e) = writeln!(out, "{y}") {
            if e.kind() == io::ErrorKind::BrokenPipe {
                return Ok(false);
            }
            return Err(data(e));
        }
    }
    out.flush().or_else(|e| if e.kind() == io::ErrorKind::BrokenPipe { Ok(()) } else { Err(data(e)) })?;
    Ok(false)
}

fn fit(args: FitArgs) -> Outcome {
    let spec = ensemble::preset(&args.spec)?;
    let recipe = IngestRecipe {
        drop_columns: args.drop,
        missing_markers: args.missing,
        ..IngestRecipe::target(args.target)
    };
    let ingested = load_csv(&args.train, &recipe)
        .with_context(|| format!("loading {}", args.train.display()))
        .map_err(Failure::Data)?;
    let ds = ingested.dataset;
    let model = fit_ensemble(&spec, &ds, args.seed, Execution::Parallel)?;
    save_model(&model, &args.model_out)?;
    eprintln!(
        "fitted {} on {} rows x {} features ({} dropped); k = {:?}",
        spec.variant_name,
        ds.n_rows(),
        ds.n_cols(),
        ingested.dropped_rows,
        model.effective_ks()
    );
    Ok(false)
}

fn predict(args: PredictArgs) -> Outcome {
    let model = load_model(&args.model)?;
    let file = File::open(&args.input)
        .with_context(|| format!("opening {}", args.input.display()))
        .map_err(Failure::Data)?;
    let x = read_feature_matrix(file, &model.feature_names)
        .with_context(|| format!("reading {}", args.input.display()))
        .map_err(Failure::Data)?;
    let predictions = model.predict_matrix(&x, Execution::Parallel)?;
    let mut w = BufWriter::new(File::create(&args.pred_out).map_err(data)?);
    writeln!(w, "prediction").map_err(data)?;
    for p in &predictions {
        writeln!(w, "{p}").map_err(data)?;
    }
    w.flush().map_err(data)?;
    eprintln!("wrote {} predictions to {}", predictions.len(), args.pred_out.display());
    Ok(false)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => bench(a),
        Command::SampleTweedie(a) => sample(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
    };
    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(3),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
