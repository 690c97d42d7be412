use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use predihealth::store::Durability;

#[derive(Debug, Parser)]
#[command(name = "predi", version, about = "Heart-failure telemonitoring: ingestion, alerting, risk stratification")]
pub struct Cli {
    /// TOML or JSON file with run settings.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the gateway, rules engine and HTTP/MQTT/WebSocket API.
    Serve(ServeArgs),
    /// Fit the stacked stratification model on a labeled CSV.
    Train(TrainArgs),
    /// Score a labeled CSV with a trained model.
    Evaluate(EvaluateArgs),
    /// Generate synthetic cohorts or telemetry, optionally replaying it.
    Simulate {
        #[command(subcommand)]
        what: SimulateCommand,
    },
    /// Write a patient's telemetry as a FHIR R4 Bundle.
    Export(ExportArgs),
    /// Rank candidates for telemonitoring enrollment.
    Stratify(StratifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DurabilityArg {
    Write,
    Sync,
}

impl From<DurabilityArg> for Durability {
    fn from(d: DurabilityArg) -> Self {
        match d {
            DurabilityArg::Write => Durability::Write,
            DurabilityArg::Sync => Durability::Sync,
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "ADDR")]
    pub http_addr: Option<String>,
    /// `off` disables MQTT.
    #[arg(long, value_name = "ADDR")]
    pub mqtt_addr: Option<String>,
    /// Threshold and weight overrides (JSON).
    #[arg(long, value_name = "PATH")]
    pub thresholds: Option<PathBuf>,
    /// Model artifact backing the stratification queue.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub durability: Option<DurabilityArg>,
    #[arg(long, value_name = "URL")]
    pub webhook: Option<String>,
    #[arg(long)]
    pub alert_id_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    /// Highest sensitivity subject to a precision floor.
    Sensitivity,
    /// Highest F1.
    F1,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,
    /// Where the model artifact goes.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "sensitivity")]
    pub objective: ObjectiveArg,
    #[arg(long)]
    pub precision_floor: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Also write the training report as JSON.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct StratifyArgs {
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Dataset CSV (labels ignored) or a JSON array of patient records.
    #[arg(long, value_name = "PATH")]
    pub patients: PathBuf,
    /// Keep only the first N ranked candidates.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub patient: String,
    /// RFC 3339 instant; default is the beginning of the series.
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub to: Option<String>,
    /// Defaults to stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Synthetic stratification cohort with a planted risk signal.
    Cohort(CohortArgs),
    /// Synthetic telemetry for one patient, written to a file or replayed
    /// into a running gateway.
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
pub struct CohortArgs {
    /// Cohort spec (JSON); flags override its fields.
    #[arg(long, value_name = "PATH")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub prevalence: Option<f64>,
    #[arg(long)]
    pub missing_rows: Option<usize>,
    #[arg(long)]
    pub clinical_signal: Option<f64>,
    #[arg(long)]
    pub echo_signal: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub id_prefix: Option<String>,
    /// Dataset CSV.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Planted coefficients and label threshold (JSON).
    #[arg(long, value_name = "PATH")]
    pub signal_out: Option<PathBuf>,
    /// Patient records (JSON), ready for `POST /v1/patients`.
    #[arg(long, value_name = "PATH")]
    pub records_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Trace spec (JSON); flags override its fields.
    #[arg(long, value_name = "PATH")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub patient: Option<String>,
    /// RFC 3339 instant.
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long)]
    pub days: Option<u32>,
    #[arg(long)]
    pub include_env: Option<bool>,
    #[arg(long)]
    pub device_prefix: Option<String>,
    /// `KIND,ONSET,RAMP_HOURS,MAGNITUDE`, e.g.
    /// `fluid_overload,2025-01-03T00:00:00Z,48,3`. Repeatable; replaces the
    /// spec's episodes.
    #[arg(long = "episode", value_name = "EPISODE")]
    pub episodes: Vec<String>,
    #[command(flatten)]
    pub cadence: CadenceArgs,

    /// Replay this JSON-lines stream instead of generating one.
    #[arg(long, value_name = "PATH", conflicts_with = "spec")]
    pub stream: Option<PathBuf>,
    /// Only write the stream; do not contact a gateway.
    #[arg(long)]
    pub offline: bool,
    /// Stream output (JSON lines). Required with `--offline`.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Gateway base URL.
    #[arg(long, value_name = "URL", default_value = "http://127.0.0.1:8080")]
    pub target: String,
    /// Recorded seconds per wall-clock second; omitted means as fast as possible.
    #[arg(long)]
    pub speed: Option<f64>,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Device credentials (JSON). Reused when the file exists, written after
    /// provisioning otherwise.
    #[arg(long, value_name = "PATH")]
    pub credentials: Option<PathBuf>,
    /// Patient record (JSON) used if the gateway does not know the patient.
    #[arg(long, value_name = "PATH")]
    pub record: Option<PathBuf>,
}

/// Minutes between samples, per metric group.
#[derive(Debug, Args)]
pub struct CadenceArgs {
    #[arg(long)]
    pub cadence_watch: Option<u32>,
    #[arg(long)]
    pub cadence_weight: Option<u32>,
    #[arg(long)]
    pub cadence_blood_pressure: Option<u32>,
    #[arg(long)]
    pub cadence_rhythm: Option<u32>,
    #[arg(long)]
    pub cadence_resp_rate: Option<u32>,
    #[arg(long)]
    pub cadence_body_temp: Option<u32>,
    #[arg(long)]
    pub cadence_activity: Option<u32>,
    #[arg(long)]
    pub cadence_sleep: Option<u32>,
    #[arg(long)]
    pub cadence_env: Option<u32>,
}
