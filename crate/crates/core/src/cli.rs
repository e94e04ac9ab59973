//! Command-line surface: `simulate`, `train`, `predict`, `evaluate`, `report`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{load_csv, TrainKind};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, Experiment, Protocol};
use crate::lstm::{NetworkConfig, OutputGateCell, PeepholeMode};
use crate::plot::{render_svg, render_table};
use crate::predictions::{predict_run, PredictionSet};
use crate::presets::{preset, preset_names, SOURCE_CHANNEL};
use crate::sim::{default_members, preset_train, simulate_run, Noise, SimConfig};
use crate::store;
use crate::training::{TrainConfig, TrainReport};

pub const SEED_ENV: &str = "STRAINCAST_SEED";

// Like `println!`, but a closed stdout (e.g. piped into `head`) is not an error.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "straincast", version, about = "Predict bridge member strain histories from a single gauge with a peephole LSTM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a train crossing and write a multi-channel strain CSV.
    Simulate(SimulateArgs),
    /// Train a model on one run and write the model artifact and a report.
    Train(TrainArgs),
    /// Predict the target channel for every window of a run.
    Predict(PredictArgs),
    /// Print RMSE and accuracy for a prediction table or a model on a run.
    Evaluate(EvaluateArgs),
    /// Plot target vs predicted strain as SVG, plus the plotted table as CSV.
    Report(ReportArgs),
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be > 0, got {v}"))
    }
}

fn non_negative_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be >= 0, got {v}"))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TrainArg {
    Test,
    Passenger,
}

impl From<TrainArg> for TrainKind {
    fn from(t: TrainArg) -> Self {
        match t {
            TrainArg::Test => TrainKind::Test,
            TrainArg::Passenger => TrainKind::Passenger,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PeepholeArg {
    FullMatrix,
    Diagonal,
    None,
}

impl From<PeepholeArg> for PeepholeMode {
    fn from(p: PeepholeArg) -> Self {
        match p {
            PeepholeArg::FullMatrix => PeepholeMode::FullMatrix,
            PeepholeArg::Diagonal => PeepholeMode::Diagonal,
            PeepholeArg::None => PeepholeMode::None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GateCellArg {
    Previous,
    Current,
}

impl From<GateCellArg> for OutputGateCell {
    fn from(g: GateCellArg) -> Self {
        match g {
            GateCellArg::Previous => OutputGateCell::Previous,
            GateCellArg::Current => OutputGateCell::Current,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum ProtocolArg {
    InRun,
    Holdout,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "test")]
    pub train: TrainArg,
    /// Train speed in km/h.
    #[arg(long, value_parser = positive_f64)]
    pub speed: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Noise σ as a fraction of each channel's clean peak.
    #[arg(long, value_parser = non_negative_f64, default_value_t = crate::sim::DEFAULT_NOISE_FRACTION, conflicts_with = "noise_sigma")]
    pub noise_fraction: f64,
    /// Noise σ in microstrain.
    #[arg(long, value_parser = non_negative_f64)]
    pub noise_sigma: Option<f64>,
    #[arg(long, value_parser = positive_f64, default_value_t = crate::sim::DEFAULT_SPAN_M)]
    pub span: f64,
    #[arg(long, value_parser = positive_f64, default_value_t = crate::sim::DEFAULT_DT_S)]
    pub dt: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Input run CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Named case: case1, case2, case3a, case3b, case4.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    /// LSTM layer sizes, comma separated (e.g. `80,60`).
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub dense: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum)]
    pub peephole: Option<PeepholeArg>,
    #[arg(long, value_enum)]
    pub output_gate_cell: Option<GateCellArg>,
    #[arg(long, value_enum, default_value = "in-run")]
    pub protocol: ProtocolArg,
    #[arg(long, default_value_t = Protocol::DEFAULT_TRAIN_FRACTION)]
    pub train_fraction: f64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_parser = positive_f64)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_parser = positive_f64)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Model artifact path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Report path; defaults to `<out>` with a `.report.json` suffix.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Sampling period override when the CSV lacks `# dt=`.
    #[arg(long, value_parser = positive_f64)]
    pub dt: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = positive_f64)]
    pub dt: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions CSV with a target column.
    #[arg(long, conflicts_with_all = ["model", "data"], required_unless_present_all = ["model", "data"])]
    pub predictions: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub data: Option<PathBuf>,
    /// Train report to append the result to.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_parser = positive_f64)]
    pub dt: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub svg: PathBuf,
    /// Table of the plotted values; defaults to the SVG path with a `.csv` extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "Target and predicted strain time history")]
    pub title: String,
}

/// `SOURCE_DATE_EPOCH`, when set, stamps artifacts; otherwise they carry no timestamp.
fn creation_time() -> Option<i64> {
    std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok()
}

fn default_report_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".report.json");
    out.with_file_name(name)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = SimConfig {
        span_m: a.span,
        dt_s: a.dt,
        speed_kmph: a.speed,
        noise: match a.noise_sigma {
            Some(s) => Noise::Absolute(s),
            None => Noise::RelativeToPeak(a.noise_fraction),
        },
        seed: a.seed,
    };
    let run = simulate_run(&preset_train(a.train.into()), &default_members(), &cfg)?;
    run.save_csv(&a.out)?;
    out!(
        "wrote {} ({} samples, dt={} s)",
        a.out.display(),
        run.len(),
        run.dt()
    );
    for (label, values) in run.channels() {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        out!("  {label}: n={} min={lo:.3} max={hi:.3}", values.len());
    }
    Ok(())
}

fn build_experiment(a: &TrainArgs) -> Result<Experiment> {
    let base = match &a.preset {
        Some(name) => Some(preset(name).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown preset '{name}' (available: {})",
                preset_names().join(", ")
            ))
        })?),
        None => None,
    };
    let missing = |flag: &str| {
        Error::InvalidArgument(format!("--{flag} is required when no --preset is given"))
    };
    let hidden = match (&a.hidden, &base) {
        (Some(h), _) => h.clone(),
        (None, Some(p)) => p.network.lstm_hidden_sizes.clone(),
        (None, None) => return Err(missing("hidden")),
    };
    let dense = a
        .dense
        .or(base.as_ref().map(|p| p.network.dense_hidden))
        .ok_or_else(|| missing("dense"))?;
    let window = a
        .window
        .or(base.as_ref().map(|p| p.network.window_size))
        .ok_or_else(|| missing("window"))?;
    let mut network = match &base {
        Some(p) => NetworkConfig {
            lstm_hidden_sizes: hidden,
            dense_hidden: dense,
            window_size: window,
            ..p.network.clone()
        },
        None => NetworkConfig::new(hidden, dense, window),
    };
    if let Some(p) = a.peephole {
        network.peephole_mode = p.into();
    }
    if let Some(g) = a.output_gate_cell {
        network.output_gate_cell = g.into();
    }
    network.validate()?;

    let source = a
        .source
        .clone()
        .or(base.as_ref().map(|p| p.source.to_string()))
        .unwrap_or_else(|| SOURCE_CHANNEL.to_string());
    let target = a
        .target
        .clone()
        .or(base.as_ref().map(|p| p.target.to_string()))
        .ok_or_else(|| missing("target"))?;

    let defaults = TrainConfig::default();
    let training = TrainConfig {
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        clip_norm: a.clip_norm.unwrap_or(defaults.clip_norm),
        early_stop_patience: a.patience.unwrap_or(defaults.early_stop_patience),
        seed: a.seed,
        ..defaults
    };
    training.validate()?;

    let protocol = match a.protocol {
        ProtocolArg::InRun => Protocol::InRun,
        ProtocolArg::Holdout => Protocol::Holdout {
            train_fraction: a.train_fraction,
        },
    };
    Ok(Experiment {
        source,
        target,
        network,
        training,
        protocol,
    })
}

fn write_report(report: &TrainReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    crate::io::write_atomic(path, text.as_bytes())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let exp = build_experiment(a)?;
    let run = load_csv(&a.data, a.dt)?;
    let outcome = run_experiment(&run, &exp, creation_time())?;
    store::save(&outcome.artifact, &a.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| default_report_path(&a.out));
    write_report(&outcome.report, &report_path)?;
    out!(
        "trained {} -> {} (hidden {:?}, dense {}, window {}) for {} epochs, best epoch {}",
        exp.source,
        exp.target,
        exp.network.lstm_hidden_sizes,
        exp.network.dense_hidden,
        exp.network.window_size,
        outcome.report.epochs.len(),
        outcome.report.best_epoch
    );
    out!("{}", outcome.eval);
    out!("model: {}", a.out.display());
    out!("report: {}", report_path.display());
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let artifact = store::load(&a.model)?;
    let run = load_csv(&a.data, a.dt)?;
    let set = predict_run(&artifact, &run)?;
    set.save_csv(&a.out)?;
    out!("wrote {} predictions to {}", set.len(), a.out.display());
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let set = match (&a.predictions, &a.model, &a.data) {
        (Some(p), _, _) => PredictionSet::load_csv(p)?,
        (None, Some(m), Some(d)) => predict_run(&store::load(m)?, &load_csv(d, a.dt)?)?,
        _ => {
            return Err(Error::InvalidArgument(
                "give --predictions, or both --model and --data".into(),
            ))
        }
    };
    let result = set.evaluate()?;
    out!("{result}");
    if let Some(path) = &a.report {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut report: TrainReport = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        report.evaluations.push(result);
        write_report(&report, path)?;
    }
    Ok(())
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    let set = PredictionSet::load_csv(&a.predictions)?;
    let svg = render_svg(&set, &a.title)?;
    let table = render_table(&set)?;
    let csv_path = a.csv.clone().unwrap_or_else(|| a.svg.with_extension("csv"));
    crate::io::write_atomic(&a.svg, svg.as_bytes())?;
    crate::io::write_atomic(&csv_path, table.as_bytes())?;
    out!("wrote {} and {}", a.svg.display(), csv_path.display());
    Ok(())
}
