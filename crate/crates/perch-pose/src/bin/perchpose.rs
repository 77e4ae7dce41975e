//! Command-line harness for the perching-target pose-estimation pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Parser, Subcommand};
use perch_pose::lms::{fit_sigma_lms, CalibrationSetup, collect_calibration_run};
use perch_pose::scenario::{frames_to_csv, run_scenario, ScenarioConfig};
use perch_pose::Error;

#[derive(Parser)]
#[command(
    name = "perchpose",
    about = "Simulate, filter and fuse multi-marker perching-target pose estimates",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write frames.csv + metrics.json.
    Run {
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the stage-2 blending weights on synthetic data; writes sigma.json.
    Calibrate {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run a scenario for each value of one config field; one metrics
    /// row per run on stdout.
    Sweep {
        config: PathBuf,
        /// Dotted path into the config JSON, e.g. detector.corner_noise_sigma
        #[arg(long)]
        param: String,
        /// Values substituted at the path (parsed as JSON, else as strings).
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<String>,
    },
    /// Parse and validate a config without running anything.
    Validate { config: PathBuf },
}

/// Exit codes: 1 = configuration problem, 2 = runtime failure.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
    fn runtime(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match &e {
            Error::Config { .. } | Error::InvalidArgument(_) => CliError::config(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

#[derive(PartialEq, PartialOrd, Clone, Copy)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

fn log_level() -> LogLevel {
    static LEVEL: OnceLock<LogLevel> = OnceLock::new();
    *LEVEL.get_or_init(|| {
        match std::env::var("PERCH_POSE_LOG_LEVEL").as_deref() {
            Ok("error") => LogLevel::Error,
            Ok("warn") | Err(_) => LogLevel::Warn,
            Ok("info") => LogLevel::Info,
            Ok("debug") => LogLevel::Debug,
            Ok(other) => {
                eprintln!("warn: unknown PERCH_POSE_LOG_LEVEL '{other}', using 'warn'");
                LogLevel::Warn
            }
        }
    })
}

macro_rules! log_at {
    ($lvl:expr, $tag:literal, $($arg:tt)*) => {
        if log_level() >= $lvl {
            eprintln!(concat!($tag, ": {}"), format!($($arg)*));
        }
    };
}
macro_rules! info {
    ($($arg:tt)*) => { log_at!(LogLevel::Info, "info", $($arg)*) };
}
macro_rules! debug {
    ($($arg:tt)*) => { log_at!(LogLevel::Debug, "debug", $($arg)*) };
}

fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ScenarioConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_run(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    debug!("seed = {}", cfg.seed);
    let (log, metrics) = run_scenario(&cfg)?;
    info!(
        "{} frames, {} with fused output, {} track losses",
        metrics.frames_total, metrics.frames_with_output, metrics.track_lost_count
    );
    write_out(out_dir, "frames.csv", &frames_to_csv(&log))?;
    let json = serde_json::to_string_pretty(&metrics).map_err(Error::from)?;
    write_out(out_dir, "metrics.json", &format!("{json}\n"))?;
    Ok(())
}

fn cmd_calibrate(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let cal = &cfg.calibration;
    let setup = CalibrationSetup {
        intrinsics: cfg.intrinsics.clone(),
        target: cfg.target.clone(),
        detector: cfg.detector.clone(),
        kf: cfg.kf.clone(),
        frame_rate: cfg.frame_rate,
        z_range: (cal.z_min, cal.z_max),
        lateral_range: cal.lateral_range,
        yaw_range: cal.yaw_range,
        seed: cfg.seed,
        use_raw: cal.use_raw,
    };
    let run = collect_calibration_run(&setup, cal.n_points, cal.samples_per_point)?;
    info!(
        "{} samples collected, {} hold points skipped",
        run.samples.len(),
        run.skipped_points
    );
    let result = fit_sigma_lms(&run.samples, cal.mu, cal.epochs, cfg.seed)?;
    info!(
        "sigma = ({:.4}, {:.4}, {:.4}, {:.4})",
        result.sigma.sigma_x, result.sigma.sigma_y, result.sigma.sigma_z, result.sigma.sigma_psi
    );
    let json = serde_json::to_string_pretty(&result).map_err(Error::from)?;
    write_out(out_dir, "sigma.json", &format!("{json}\n"))?;
    Ok(())
}

/// Replace the value at a dotted path (`a.b.3.c`) inside a JSON tree.
fn set_json_path(
    root: &mut serde_json::Value,
    path: &str,
    value: serde_json::Value,
) -> Result<(), CliError> {
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::config(format!("bad --param path '{path}'")));
    }
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        match node {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert((*seg).to_string(), value);
                    return Ok(());
                }
                node = map
                    .get_mut(*seg)
                    .ok_or_else(|| CliError::config(format!("no field '{seg}' in '{path}'")))?;
            }
            serde_json::Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| {
                    CliError::config(format!("'{seg}' is not an array index in '{path}'"))
                })?;
                let slot = items.get_mut(idx).ok_or_else(|| {
                    CliError::config(format!("index {idx} out of bounds in '{path}'"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                node = slot;
            }
            _ => {
                return Err(CliError::config(format!(
                    "'{seg}' in '{path}' does not address an object or array"
                )))
            }
        }
    }
    unreachable!("loop returns on the last segment")
}

fn cmd_sweep(config: &Path, param: &str, values: &[String]) -> Result<(), CliError> {
    let text = fs::read_to_string(config)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", config.display())))?;
    let base: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", config.display())))?;

    println!(
        "{param},p2p_x_cm,p2p_y_cm,p2p_z_cm,p2p_yaw_deg,rmse_x_cm,rmse_y_cm,rmse_z_cm,\
         rmse_yaw_deg,stage_s1,stage_s2,stage_s3,stage_none,bridged_frames,track_losses,\
         frames_with_output"
    );
    for raw in values {
        let val: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let mut tree = base.clone();
        set_json_path(&mut tree, param, val)?;
        let cfg: ScenarioConfig = serde_json::from_value(tree)
            .map_err(|e| CliError::config(format!("{param}={raw}: {e}")))?;
        cfg.validate()?;
        debug!("running {param} = {raw}");
        let (_, m) = run_scenario(&cfg)?;
        println!(
            "{raw},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4},{},{},{}",
            m.peak_to_peak_cm[0],
            m.peak_to_peak_cm[1],
            m.peak_to_peak_cm[2],
            m.peak_to_peak_yaw_deg,
            m.rmse_cm[0],
            m.rmse_cm[1],
            m.rmse_cm[2],
            m.rmse_yaw_deg,
            m.stage_occupancy[0],
            m.stage_occupancy[1],
            m.stage_occupancy[2],
            m.stage_occupancy[3],
            m.dropout_bridge_frames,
            m.track_lost_count,
            m.frames_with_output,
        );
    }
    Ok(())
}

fn cmd_validate(config: &Path) -> Result<(), CliError> {
    load_config(config)?;
    println!("{}: ok", config.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap reserves exit code 2 for usage errors, but here 2 means
            // a runtime failure; remap usage problems to 1.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match &cli.command {
        Command::Run { config, out_dir, seed } => cmd_run(config, out_dir, *seed),
        Command::Calibrate { config, out_dir, seed } => cmd_calibrate(config, out_dir, *seed),
        Command::Sweep { config, param, values } => cmd_sweep(config, param, values),
        Command::Validate { config } => cmd_validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
