//! `streetcount`: sampling, harvesting, annotation, aggregation and model
//! fitting from one binary.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "streetcount", version, about = "Estimate travel patterns from street imagery", propagate_version = true)]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for all outputs [default: out_dir from the config, else ./out].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Log level written to stderr (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn", value_name = "LEVEL")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample road-network locations (stages 1 to 3) and write points.csv.
    Sample(SampleArgs),
    /// Resolve panorama metadata for points; writes panos.csv, harvest_report.json and tasks.csv.
    Harvest(HarvestArgs),
    /// Run the annotation service and serve the UI assets.
    Serve(ServeArgs),
    /// Collapse annotations and join Census/APS outcomes into dataset.csv.
    Aggregate(AggregateArgs),
    /// Pairwise correlation matrix of dataset columns (correlation.csv).
    Correlate(CorrelateArgs),
    /// Fit one model or every canonical model structure (fit_<model>.json).
    Fit(ModelArgs),
    /// Leave-one-out cross-validation (cv_report.json, scatter_<model>.csv).
    Cv(CvArgs),
    /// Correlation screen and PRESS-driven backward selection (selection_trace.json).
    Select(SelectArgs),
    /// Grouped male-to-female cyclist ratios (gender_report.csv).
    Gender(GenderArgs),
    /// Predictions of the published fixed-coefficient models (reproduce.csv).
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Road network as a GeoJSON FeatureCollection of LineStrings.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Random seed (required here or in the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pre-harvested panos.csv for the stage-2 points; otherwise the configured provider is queried.
    #[arg(long)]
    pub panos: Option<PathBuf>,
    /// Fixture directory for the fixture provider.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Stage-2 sample size.
    #[arg(long)]
    pub stage2_n: Option<usize>,
    /// Stage-3 target.
    #[arg(long)]
    pub stage3_target: Option<usize>,
    /// Harvest worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HarvestArgs {
    /// points.csv to resolve.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// City id written into tasks.csv.
    #[arg(long)]
    pub city: Option<String>,
    /// Fixture directory for the fixture provider.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Worker threads sharing the rate limit.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// tasks.csv files (repeatable).
    #[arg(long)]
    pub tasks: Vec<PathBuf>,
    /// Append-only event log [default: <out>/events.jsonl].
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Listen address.
    #[arg(long)]
    pub bind: Option<String>,
    /// Allowed annotator ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub annotators: Vec<String>,
    /// Directory of static UI assets.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    /// Fraction of completed images to queue for a second rating at startup.
    #[arg(long)]
    pub qa_fraction: Option<f64>,
    /// Seed for drawing the QA pool.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// tasks.csv files (repeatable).
    #[arg(long)]
    pub tasks: Vec<PathBuf>,
    /// annotations.csv export.
    #[arg(long, conflicts_with = "log")]
    pub annotations: Option<PathBuf>,
    /// Event log to export from; also writes annotations.csv and gender.csv.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Census commute counts CSV.
    #[arg(long)]
    pub census: Option<PathBuf>,
    /// Active People Survey CSV.
    #[arg(long)]
    pub aps: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// dataset.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Columns to correlate, comma separated [default: predictors and outcomes].
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// dataset.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Canonical model number (1 to 10), refitted on the data.
    #[arg(long, conflicts_with = "spec")]
    pub model: Option<u32>,
    /// Model spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Cities marked as trimmed in the scatter CSV, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub trim: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// dataset.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Outcome column.
    #[arg(long)]
    pub outcome: String,
    /// Model family: beta, ols or robust.
    #[arg(long, default_value = "beta")]
    pub family: String,
    /// Candidate predictors, comma separated; suffix `:sqrt` for a square-root term [default: all GSV counts].
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<String>,
    /// Skip month-proportion candidates.
    #[arg(long)]
    pub no_months: bool,
    /// Screening threshold on |r|.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenderArgs {
    /// dataset.csv with census_cycle_mf and optional survey ratio columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Per-city counts CSV `city_id,female,male`.
    #[arg(long, conflicts_with = "log")]
    pub counts: Option<PathBuf>,
    /// Event log with gender judgments.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// tasks.csv files used with --log (repeatable).
    #[arg(long)]
    pub tasks: Vec<PathBuf>,
    /// Number of city groups.
    #[arg(long, default_value_t = 4)]
    pub groups: usize,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// CSV with a city_id column and the predictor columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Only this canonical model.
    #[arg(long)]
    pub model: Option<u32>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::invalid(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let written = match cli.command {
        Command::Sample(a) => commands::sample(&cfg, &out, a)?,
        Command::Harvest(a) => commands::harvest(&cfg, &out, a)?,
        Command::Serve(a) => return commands::serve(&cfg, &out, a),
        Command::Aggregate(a) => commands::aggregate(&cfg, &out, a)?,
        Command::Correlate(a) => commands::correlate(&cfg, &out, a)?,
        Command::Fit(a) => commands::fit(&cfg, &out, a)?,
        Command::Cv(a) => commands::cv(&cfg, &out, a)?,
        Command::Select(a) => commands::select(&cfg, &out, a)?,
        Command::Gender(a) => commands::gender(&cfg, &out, a)?,
        Command::Reproduce(a) => commands::reproduce(&cfg, &out, a)?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
