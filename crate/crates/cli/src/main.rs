//! `climadapt`: runs the indicator, adaptation, forecast, flow
//! reconstruction and fusion pipelines over a content-addressed workspace.
//!
//! Every command prints a JSON summary on stdout and logs on stderr.
//! Exit codes: 0 success, 1 validation or config error, 2 I/O error,
//! 3 numerical failure.

mod commands;
mod config;
mod error;
mod workspace;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use climadapt_core::flowrecon::{FieldSelection, PlaneSpec};

use commands::{ForecastArgs, PodSplit, ReconArgs, ReconSplit, Variant};
use config::PipelineConfig;
use error::CliResult;
use workspace::Workspace;

#[derive(Debug, Parser)]
#[command(name = "climadapt", version, about = "Climate adaptation analytics pipelines")]
struct Cli {
    /// Workspace directory.
    #[arg(long, global = true, env = "CLIMADAPT_WORKSPACE", default_value = "workspace")]
    workspace: PathBuf,

    /// Pipeline config (JSON with sections index, calibration, forecast, flow, fusion).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Compact single-line JSON output.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create the workspace layout and an empty manifest.
    Init,
    /// Validate and register a CARB1 raster.
    Ingest { path: PathBuf },
    /// Compute green and development indices of a raster and append them to a series.
    Indices {
        #[arg(long)]
        raster: String,
        /// Existing series to extend; a new series is started when omitted.
        #[arg(long)]
        series: Option<String>,
        /// Observation time in seconds since the Unix epoch.
        #[arg(long, allow_hyphen_values = true)]
        timestamp: i64,
        #[arg(long)]
        region: Option<String>,
    },
    /// Fit the raw-to-reference calibration from an anchors CSV.
    Calibrate { anchors: PathBuf },
    /// Place the latest series entry on the adaptation diagram.
    Observe {
        #[arg(long)]
        series: String,
        #[arg(long)]
        calibration: Option<String>,
    },
    /// Fit one model per series column and forecast ahead.
    Forecast {
        #[arg(long)]
        series: String,
        #[arg(long, value_parser = ["poly", "lstm"])]
        model: String,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        degree: Option<usize>,
        /// Also compare both families with this many held-out points.
        #[arg(long)]
        holdout: Option<usize>,
        /// Standard deviation of noise added to the training prefix in the comparison.
        #[arg(long, default_value_t = 0.0, requires = "holdout")]
        noise: f64,
    },
    /// Generate a synthetic wall-mounted obstacle wake and its wall sensors.
    SynthFlow,
    /// Proper orthogonal decomposition of a stored flow.
    Pod {
        #[arg(long)]
        flow: String,
        /// Keep only the first K modes.
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long, value_enum, default_value_t = FieldArg::Velocity)]
        field: FieldArg,
        #[arg(long, value_enum, default_value_t = PodSplit::All)]
        split: PodSplit,
    },
    /// Train a sensor-based reconstruction and evaluate it on held-out snapshots.
    Recon {
        #[arg(long, value_enum)]
        variant: Variant,
        #[arg(long)]
        flow: String,
        #[arg(long)]
        sensors: String,
        /// Velocity basis for R1; its snapshots define the training set.
        #[arg(long)]
        pod: Option<String>,
        #[arg(long, default_value_t = 4)]
        n_u: usize,
        #[arg(long, default_value_t = 4)]
        n_p: usize,
        #[arg(long, default_value_t = 1e-10)]
        lambda: f64,
        /// Target plane for R2: h:<row> or v:<column>.
        #[arg(long, value_parser = commands::parse_plane, default_value = "h:6")]
        plane: PlaneSpec,
        #[arg(long, value_enum, default_value_t = ReconSplit::Interleaved)]
        split: ReconSplit,
    },
    /// Train the wide-and-deep model on a feature CSV.
    Fusion {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// List registered artifacts and their hashes.
    Report {
        /// Recompute every hash and fail if anything changed.
        #[arg(long)]
        verify: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum FieldArg {
    Velocity,
    Pressure,
}

impl From<FieldArg> for FieldSelection {
    fn from(f: FieldArg) -> Self {
        match f {
            FieldArg::Velocity => FieldSelection::Velocity,
            FieldArg::Pressure => FieldSelection::Pressure,
        }
    }
}

fn run(cli: Cli) -> CliResult<serde_json::Value> {
    let root = cli.workspace.as_path();
    if let Command::Init = cli.command {
        return commands::init(root);
    }
    if let Command::Report { verify } = cli.command {
        return commands::report(&Workspace::open(root, false)?, verify);
    }
    let cfg = PipelineConfig::load(cli.config.as_deref(), cli.seed)?;
    let mut ws = Workspace::open(root, true)?;
    match cli.command {
        Command::Init | Command::Report { .. } => unreachable!("handled above"),
        Command::Ingest { path } => commands::ingest(&mut ws, &path),
        Command::Indices {
            raster,
            series,
            timestamp,
            region,
        } => commands::indices(&mut ws, &cfg, &raster, series.as_deref(), timestamp, region.as_deref()),
        Command::Calibrate { anchors } => commands::calibrate(&mut ws, &anchors),
        Command::Observe { series, calibration } => {
            commands::observe_cmd(&mut ws, &cfg, &series, calibration.as_deref())
        }
        Command::Forecast {
            series,
            model,
            horizon,
            degree,
            holdout,
            noise,
        } => commands::forecast_cmd(
            &mut ws,
            &cfg,
            &ForecastArgs {
                series: &series,
                model: &model,
                horizon,
                degree,
                holdout,
                noise,
            },
        ),
        Command::SynthFlow => commands::synth_flow(&mut ws, &cfg),
        Command::Pod {
            flow,
            modes,
            field,
            split,
        } => commands::pod(&mut ws, &flow, modes, field.into(), split),
        Command::Recon {
            variant,
            flow,
            sensors,
            pod,
            n_u,
            n_p,
            lambda,
            plane,
            split,
        } => commands::recon(
            &mut ws,
            &ReconArgs {
                variant,
                flow: &flow,
                sensors: &sensors,
                pod: pod.as_deref(),
                n_u,
                n_p,
                lambda,
                plane,
                split,
            },
        ),
        Command::Fusion { dataset } => commands::fusion_cmd(&mut ws, &cfg, &dataset),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let compact = cli.json;
    match run(cli) {
        Ok(summary) => {
            let text = if compact {
                serde_json::to_string(&summary)
            } else {
                serde_json::to_string_pretty(&summary)
            };
            // A closed pipe on stdout is not a failure of the command.
            let _ = writeln!(std::io::stdout(), "{}", text.expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
