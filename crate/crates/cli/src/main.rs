mod config;
mod output;
mod tasks;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{Overrides, Resolved, Task};
use output::OutputDir;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Config { field: String, message: String },
    Numerical { message: String },
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn numerical(e: dpsw_core::Error) -> Self {
        CliError::Numerical { message: e.to_string() }
    }

    /// Library errors raised while setting up a run are config errors for
    /// `field`; failures during the computation are numerical.
    pub fn from_core(field: &str, e: dpsw_core::Error) -> Self {
        use dpsw_core::Error as E;
        match e {
            E::Numerical { .. } | E::NonFinite { .. } | E::NotConverged { .. } | E::DisconnectedWindows { .. } => {
                Self::numerical(e)
            }
            other => Self::config(field, other.to_string()),
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Numerical { .. } => EXIT_NUMERICAL,
            CliError::Io { .. } => 1,
        }
    }

    fn record(&self) -> serde_json::Value {
        let code = self.exit_code();
        match self {
            CliError::Config { field, message } => json!({
                "status": "error", "kind": "config", "field": field, "message": message, "exit_code": code,
            }),
            CliError::Numerical { message } => json!({
                "status": "error", "kind": "numerical", "message": message, "exit_code": code,
            }),
            CliError::Io { path, message } => json!({
                "status": "error", "kind": "io", "path": path, "message": message, "exit_code": code,
            }),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { field, message } => write!(f, "config error in `{field}`: {message}"),
            CliError::Numerical { message } => write!(f, "numerical failure: {message}"),
            CliError::Io { path, message } => write!(f, "i/o error on {}: {message}", path.display()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dpsw-lab",
    version,
    about = "Guided diffusion sampling on analytic Gaussian-mixture priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw guided samples.
    Sample(Overrides),
    /// Umbrella windows along coordinate 0 and a WHAM free-energy profile.
    Umbrella(Overrides),
    /// Posterior-sampler necessary-condition diagnostics.
    Diagnose(Overrides),
    /// Step-size weights and guidance/prior term ratios along trajectories.
    Curves(Overrides),
    /// Run a task named on the command line or in a config file.
    Run {
        /// Task name, or a config path when the task comes from the file.
        target: Option<String>,
        #[command(flatten)]
        flags: Overrides,
    },
    /// Resolve and validate a config without running it.
    ValidateConfig {
        #[arg(value_name = "CONFIG")]
        file: PathBuf,
        #[command(flatten)]
        flags: Overrides,
    },
}

fn parse_target(target: Option<String>, mut flags: Overrides) -> Result<(Option<Task>, Overrides), CliError> {
    use clap::ValueEnum;
    match target {
        None => Ok((None, flags)),
        Some(t) => match Task::from_str(&t, true) {
            Ok(task) => Ok((Some(task), flags)),
            Err(_) if flags.config.is_none() => {
                flags.config = Some(PathBuf::from(t));
                Ok((None, flags))
            }
            Err(_) => Err(CliError::config("task", format!("unknown task `{t}`"))),
        },
    }
}

fn execute(cfg: &Resolved) -> Result<(), CliError> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let result = match cfg.task {
        Task::Sample => tasks::sample(cfg, &mut out),
        Task::Umbrella => tasks::umbrella(cfg, &mut out),
        Task::Diagnose => tasks::diagnose(cfg, &mut out),
        Task::Curves => tasks::curves(cfg, &mut out),
    };
    let results = match result {
        Ok(v) => v,
        Err(e) => {
            let _ = out.json("error.json", &e.record());
            return Err(e);
        }
    };
    let mut outputs = out.written().to_vec();
    outputs.push("manifest.json".into());
    let manifest = json!({
        "tool": "dpsw-lab",
        "version": env!("CARGO_PKG_VERSION"),
        "task": cfg.task,
        "master_seed": cfg.master_seed,
        "config": cfg,
        "results": results,
        "outputs": outputs,
        "started_unix": started,
        "wall_seconds": clock.elapsed().as_secs_f64(),
    });
    out.json("manifest.json", &manifest)?;
    println!("wrote {} files to {}", outputs.len(), cfg.output_dir.display());
    Ok(())
}

fn real_main() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Sample(f) => execute(&config::resolve(Some(Task::Sample), &f)?),
        Command::Umbrella(f) => execute(&config::resolve(Some(Task::Umbrella), &f)?),
        Command::Diagnose(f) => execute(&config::resolve(Some(Task::Diagnose), &f)?),
        Command::Curves(f) => execute(&config::resolve(Some(Task::Curves), &f)?),
        Command::Run { target, flags } => {
            let (task, flags) = parse_target(target, flags)?;
            execute(&config::resolve(task, &flags)?)
        }
        Command::ValidateConfig { file, mut flags } => {
            flags.config = Some(file);
            let cfg = config::resolve(None, &flags)?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("serializable"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code())
        }
    }
}
