//! Command implementations behind the `cloudmirror` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use thiserror::Error;

use cloudmirror::charging::{self, Registry, Scenario, ScenarioError};
use cloudmirror::telemetry::{parse_metrics, parse_traces, write_metrics, write_traces};
use cloudmirror::{
    detect_deviations, mirror_run, parse_snapshot, AnomalyError, DeviationParams, DeviationReport, MirrorConfig,
    TelemetryBundle, TimeSeries,
};

pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const TRACES_FILE: &str = "traces.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SIMULATED_FILE: &str = "simulated.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Parser)]
#[command(
    name = "cloudmirror",
    version,
    about = "Mirror a container cluster into a simulation and flag deviations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a charging scenario and write its snapshot, traces and observed metrics.
    Generate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a snapshot replaying recorded traces; writes per-pod utilization.
    Mirror {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Observed metrics; the simulated series are extended to cover them.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare simulated and observed metrics; exits 1 when an anomaly is found.
    Compare {
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        observed: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate, mirror and compare in one go.
    Pipeline {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic charger registry.
    Fixture {
        #[arg(long, default_value_t = charging::DEFAULT_FIXTURE_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    Anomaly,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Clean => 0,
            Outcome::Anomaly => 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, scenario, configuration or parameters.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or invalid input data.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

fn read(path: &Path, err: fn(String) -> CliError) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = read(path, CliError::Usage)?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = read(path, CliError::Usage)?;
    charging::parse_scenario(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_registry(path: &Path) -> Result<Registry, CliError> {
    let text = read(path, CliError::Data)?;
    charging::load_registry(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_metrics(path: &Path) -> Result<Vec<TimeSeries>, CliError> {
    let text = read(path, CliError::Data)?;
    parse_metrics(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn scenario_error(e: ScenarioError) -> CliError {
    match e {
        ScenarioError::EmptyRegistry | ScenarioError::Registry(_) => CliError::Data(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}

fn generate_bundle(scenario: &Path, registry: &Path) -> Result<(Scenario, TelemetryBundle), CliError> {
    let scenario = load_scenario(scenario)?;
    let registry = load_registry(registry)?;
    let snapshot = scenario.snapshot().map_err(scenario_error)?;
    let bundle = charging::run_scenario(&registry, &snapshot, &scenario).map_err(scenario_error)?;
    Ok((scenario, bundle))
}

fn write_bundle(dir: &Path, bundle: &TelemetryBundle) -> Result<(), CliError> {
    write(&dir.join(SNAPSHOT_FILE), &bundle.snapshot.to_json())?;
    write(&dir.join(TRACES_FILE), &write_traces(&bundle.spans))?;
    write(&dir.join(METRICS_FILE), &write_metrics(&bundle.metrics))
}

fn compare(sim: &[TimeSeries], observed: &[TimeSeries], params: &DeviationParams) -> Result<DeviationReport, CliError> {
    detect_deviations(sim, observed, params).map_err(|e| match e {
        AnomalyError::InvalidParams(_) => CliError::Usage(e.to_string()),
        AnomalyError::NoMatchingSubjects => CliError::Data(e.to_string()),
    })
}

fn finish_report(report: &DeviationReport, path: &Path) -> Result<Outcome, CliError> {
    write(path, &report.to_json())?;
    print!("{}", report.render_table());
    Ok(if report.anomalous {
        Outcome::Anomaly
    } else {
        Outcome::Clean
    })
}

pub fn cmd_generate(scenario: &Path, registry: &Path, out: &Path) -> Result<Outcome, CliError> {
    let (_, bundle) = generate_bundle(scenario, registry)?;
    write_bundle(out, &bundle)?;
    Ok(Outcome::Clean)
}

pub fn cmd_mirror(
    snapshot: &Path,
    traces: &Path,
    config: Option<&Path>,
    metrics: Option<&Path>,
    out: &Path,
) -> Result<Outcome, CliError> {
    let config: MirrorConfig = read_json(config)?;
    config
        .calibration
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if config.bucket_us == 0 {
        return Err(CliError::Usage("bucketMicros must be positive".into()));
    }
    let snapshot_text = read(snapshot, CliError::Data)?;
    let snapshot =
        parse_snapshot(&snapshot_text).map_err(|e| CliError::Data(format!("{}: {e}", snapshot.display())))?;
    let traces_text = read(traces, CliError::Data)?;
    let spans = parse_traces(&traces_text).map_err(|e| CliError::Data(format!("{}: {e}", traces.display())))?;
    let metrics = metrics.map(load_metrics).transpose()?.unwrap_or_default();
    let bundle = TelemetryBundle::new(spans, metrics, snapshot).map_err(|e| CliError::Data(e.to_string()))?;
    let simulated = mirror_run(&bundle, &config).map_err(|e| CliError::Data(e.to_string()))?;
    write(out, &write_metrics(&simulated))?;
    Ok(Outcome::Clean)
}

pub fn cmd_compare(sim: &Path, observed: &Path, params: Option<&Path>, report: &Path) -> Result<Outcome, CliError> {
    let params: DeviationParams = read_json(params)?;
    let sim = load_metrics(sim)?;
    let observed = load_metrics(observed)?;
    let r = compare(&sim, &observed, &params)?;
    finish_report(&r, report)
}

pub fn cmd_pipeline(scenario: &Path, registry: &Path, params: Option<&Path>, out: &Path) -> Result<Outcome, CliError> {
    let params: DeviationParams = read_json(params)?;
    let (scenario, bundle) = generate_bundle(scenario, registry)?;
    let config = MirrorConfig {
        calibration: scenario.calibration.clone(),
        bucket_us: scenario.metric_step_us,
        ..MirrorConfig::default()
    };
    let simulated = mirror_run(&bundle, &config).map_err(|e| CliError::Usage(e.to_string()))?;
    write_bundle(out, &bundle)?;
    write(&out.join(SIMULATED_FILE), &write_metrics(&simulated))?;
    let report = compare(&simulated, &bundle.metrics, &params)?;
    finish_report(&report, &out.join(REPORT_FILE))
}

pub fn cmd_fixture(rows: usize, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    write(out, &charging::generate_fixture_csv(rows, seed))?;
    Ok(Outcome::Clean)
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Generate {
            scenario,
            registry,
            out,
        } => cmd_generate(&scenario, &registry, &out),
        Command::Mirror {
            snapshot,
            traces,
            config,
            metrics,
            out,
        } => cmd_mirror(&snapshot, &traces, config.as_deref(), metrics.as_deref(), &out),
        Command::Compare {
            sim,
            observed,
            params,
            report,
        } => cmd_compare(&sim, &observed, params.as_deref(), &report),
        Command::Pipeline {
            scenario,
            registry,
            params,
            out,
        } => cmd_pipeline(&scenario, &registry, params.as_deref(), &out),
        Command::Fixture { rows, seed, out } => cmd_fixture(rows, seed, &out),
    }
}
