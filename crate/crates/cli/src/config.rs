use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dpsw_core::guidance::ZetaMode;
use dpsw_core::operators::OperatorSpec;
use dpsw_core::schedule::Process;
use dpsw_core::umbrella::{
    DEFAULT_BINS, DEFAULT_BIN_RANGE, DEFAULT_CENTER_RANGE, DEFAULT_SAMPLES_PER_WINDOW, DEFAULT_SIGMA_Y, DEFAULT_WINDOWS,
};
use dpsw_core::{GaussianMixture, GuidanceSpec, Integrator, LinearOperator, ScheduleSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUTPUT_DIR_ENV: &str = "DPSW_LAB_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sample,
    Umbrella,
    Diagnose,
    Curves,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Sample => "sample",
            Task::Umbrella => "umbrella",
            Task::Diagnose => "diagnose",
            Task::Curves => "curves",
        })
    }
}

/// Either a preset name or an inline mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorSpec {
    Preset(String),
    Mixture(GaussianMixture),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementFile {
    pub operator: Option<OperatorSpec>,
    pub sigma_y: Option<f64>,
    pub y: Option<Vec<f64>>,
    /// Draw `x₀` from the prior and `y` from the forward model with this seed.
    pub synthesize_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsFile {
    pub trajectories: Option<usize>,
    pub record_trajectories: Option<bool>,
    pub windows: Option<usize>,
    pub center_range: Option<[f64; 2]>,
    pub samples_per_window: Option<usize>,
    pub bins: Option<usize>,
    pub bin_range: Option<[f64; 2]>,
    pub min_count: Option<usize>,
    pub compare_methods: Option<bool>,
    pub conditions: Option<usize>,
    pub samples_per_condition: Option<usize>,
    pub sigma_ys: Option<Vec<f64>>,
}

/// Config file layer; every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub task: Option<Task>,
    pub prior: Option<PriorSpec>,
    pub schedule: Option<ScheduleSpec>,
    pub integrator: Option<Integrator>,
    pub guidance: Option<GuidanceSpec>,
    pub measurement: Option<MeasurementFile>,
    pub output_dir: Option<PathBuf>,
    pub master_seed: Option<u64>,
    pub jobs: Option<usize>,
    pub counts: Option<CountsFile>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProcessArg {
    Vp,
    Ve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IntegratorArg {
    Auto,
    Ancestral,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ZetaModeArg {
    Constant,
    ResidualNorm,
}

/// Flags shared by every task; they override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prior preset: doublewell2d, gauss1d or mixture1d.
    #[arg(long)]
    pub preset: Option<String>,
    /// Guidance method: none, exact, dps or dpsw.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub zeta_prime: Option<f64>,
    #[arg(long, value_enum)]
    pub zeta_mode: Option<ZetaModeArg>,
    /// Use the enhanced DPS-w step size.
    #[arg(long)]
    pub enhanced: bool,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma_y: Option<f64>,
    /// Operator: identity, mask:1,0 or diagonal:1,0.5.
    #[arg(long)]
    pub operator: Option<String>,
    /// Comma-separated measurement.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub y: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub schedule: Option<ProcessArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma_max: Option<f64>,
    #[arg(long, value_enum)]
    pub integrator: Option<IntegratorArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Defaults to $DPSW_LAB_OUTPUT_DIR, then ./dpsw-out.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Write every step of every trajectory.
    #[arg(long)]
    pub record: bool,
    #[arg(long)]
    pub windows: Option<usize>,
    #[arg(long)]
    pub samples_per_window: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Also run exact, DPS-w and DPS on the same windows and tabulate RMSE.
    #[arg(long)]
    pub compare: bool,
    #[arg(long)]
    pub conditions: Option<usize>,
    #[arg(long)]
    pub samples_per_condition: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub sigma_ys: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Measurement {
    pub operator: OperatorSpec,
    pub sigma_y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    pub synthesize_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Counts {
    pub trajectories: usize,
    pub record_trajectories: bool,
    pub windows: usize,
    pub center_range: [f64; 2],
    pub samples_per_window: usize,
    pub bins: usize,
    pub bin_range: [f64; 2],
    pub min_count: usize,
    pub compare_methods: bool,
    pub conditions: usize,
    pub samples_per_condition: usize,
    pub sigma_ys: Vec<f64>,
}

/// Fully resolved run configuration, echoed into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub task: Task,
    pub prior: PriorSpec,
    pub schedule: ScheduleSpec,
    pub integrator: Integrator,
    pub guidance: GuidanceSpec,
    pub measurement: Measurement,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    pub jobs: usize,
    pub counts: Counts,
    #[serde(skip)]
    pub gmm: GaussianMixture,
}

fn default_prior(task: Task) -> &'static str {
    match task {
        Task::Diagnose => "gauss1d",
        _ => "doublewell2d",
    }
}

fn default_schedule(task: Task, process: Option<Process>) -> ScheduleSpec {
    let p = process.unwrap_or(match task {
        Task::Sample | Task::Curves => Process::Vp,
        Task::Umbrella | Task::Diagnose => Process::Ve,
    });
    match p {
        Process::Vp => ScheduleSpec::vp(1000),
        Process::Ve => ScheduleSpec::ve(1000, 0.01, 20.0),
    }
}

fn parse_operator(text: &str) -> Result<OperatorSpec, CliError> {
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    let values = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::config("measurement.operator", e.to_string()))?
    };
    Ok(OperatorSpec {
        kind: kind.to_string(),
        values,
    })
}

/// Layers task defaults, the config file and flags, then validates.
pub fn resolve(task_hint: Option<Task>, flags: &Overrides) -> Result<Resolved, CliError> {
    let file = match &flags.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let task = match (task_hint, file.task) {
        (Some(t), _) => t,
        (None, Some(t)) => t,
        (None, None) => {
            return Err(CliError::config(
                "task",
                "no task given on the command line or in the config",
            ))
        }
    };
    let fm = file.measurement.clone().unwrap_or_default();
    let fc = file.counts.clone().unwrap_or_default();

    let prior = match (&flags.preset, &file.prior) {
        (Some(p), _) => PriorSpec::Preset(p.clone()),
        (None, Some(p)) => p.clone(),
        (None, None) => PriorSpec::Preset(default_prior(task).to_string()),
    };
    let gmm = match &prior {
        PriorSpec::Preset(name) => {
            GaussianMixture::preset(name).map_err(|e| CliError::config("prior", e.to_string()))?
        }
        PriorSpec::Mixture(g) => g.clone(),
    };

    let flag_process = flags.schedule.map(|p| match p {
        ProcessArg::Vp => Process::Vp,
        ProcessArg::Ve => Process::Ve,
    });
    let mut schedule = match (&file.schedule, flag_process) {
        (Some(s), None) => s.clone(),
        (Some(s), Some(p)) if s.process == p => s.clone(),
        (_, p) => default_schedule(task, p),
    };
    if let Some(n) = flags.steps {
        schedule.steps = n;
        if schedule.process == Process::Vp {
            schedule.base_steps = Some(schedule.base_steps.unwrap_or(1000).max(n));
        }
    }
    if flags.sigma_min.is_some() || flags.sigma_max.is_some() {
        if schedule.process != Process::Ve {
            return Err(CliError::config(
                "schedule.sigma_min",
                "sigma bounds apply to ve schedules only",
            ));
        }
        schedule.sigma_min = flags.sigma_min.or(schedule.sigma_min);
        schedule.sigma_max = flags.sigma_max.or(schedule.sigma_max);
    }
    schedule
        .build()
        .map_err(|e| CliError::config("schedule", e.to_string()))?;

    let integrator = match flags.integrator {
        Some(IntegratorArg::Auto) => Integrator::Auto,
        Some(IntegratorArg::Ancestral) => Integrator::Ancestral,
        Some(IntegratorArg::EulerMaruyama) => Integrator::EulerMaruyama,
        None => file.integrator.unwrap_or_default(),
    };
    if integrator == Integrator::Ancestral && schedule.process == Process::Ve {
        return Err(CliError::config(
            "integrator",
            "ancestral sampling requires a vp schedule",
        ));
    }

    let mut guidance = match (&flags.method, &file.guidance) {
        (Some(m), Some(g)) if *m == g.method => g.clone(),
        (Some(m), _) => GuidanceSpec::method(m),
        (None, Some(g)) => g.clone(),
        (None, None) => GuidanceSpec::method("exact"),
    };
    if flags.zeta_prime.is_some() {
        guidance.zeta_prime = flags.zeta_prime;
    }
    if let Some(mode) = flags.zeta_mode {
        guidance.zeta_mode = Some(match mode {
            ZetaModeArg::Constant => ZetaMode::Constant,
            ZetaModeArg::ResidualNorm => ZetaMode::ResidualNorm,
        });
    }
    if flags.enhanced {
        guidance.enhanced = Some(true);
    }
    guidance
        .build()
        .map_err(|e| CliError::config("guidance", e.to_string()))?;

    let sigma_y = flags.sigma_y.or(fm.sigma_y).unwrap_or(match task {
        Task::Umbrella => DEFAULT_SIGMA_Y,
        _ => 0.2,
    });
    if !sigma_y.is_finite() || sigma_y < 0.0 || (sigma_y == 0.0 && task != Task::Sample) {
        let need = if task == Task::Sample { ">= 0" } else { "> 0" };
        return Err(CliError::config(
            "measurement.sigma_y",
            format!("{sigma_y} must be finite and {need}"),
        ));
    }
    let operator = match &flags.operator {
        Some(t) => parse_operator(t)?,
        None => fm.operator.clone().unwrap_or(OperatorSpec {
            kind: "identity".into(),
            values: Vec::new(),
        }),
    };
    let op = operator
        .build()
        .map_err(|e| CliError::config("measurement.operator", e.to_string()))?;
    if let LinearOperator::Mask(v) | LinearOperator::Diagonal(v) = &op {
        if v.len() != gmm.dim() {
            return Err(CliError::config(
                "measurement.operator",
                format!("operator has {} entries, prior dimension is {}", v.len(), gmm.dim()),
            ));
        }
    }
    let y = flags.y.clone().or(fm.y.clone());
    if let Some(y) = &y {
        if y.len() != gmm.dim() {
            return Err(CliError::config(
                "measurement.y",
                format!("length {} does not match prior dimension {}", y.len(), gmm.dim()),
            ));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(CliError::config("measurement.y", "entries must be finite"));
        }
    }
    let master_seed = flags.seed.or(file.master_seed).unwrap_or(0);
    let measurement = Measurement {
        operator,
        sigma_y,
        y,
        synthesize_seed: fm.synthesize_seed.unwrap_or(master_seed),
    };

    let jobs = flags.jobs.or(file.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(CliError::config("jobs", "must be >= 1"));
    }

    let counts = Counts {
        trajectories: flags.trajectories.or(fc.trajectories).unwrap_or(100),
        record_trajectories: flags.record || fc.record_trajectories.unwrap_or(false),
        windows: flags.windows.or(fc.windows).unwrap_or(DEFAULT_WINDOWS),
        center_range: fc
            .center_range
            .unwrap_or([DEFAULT_CENTER_RANGE.0, DEFAULT_CENTER_RANGE.1]),
        samples_per_window: flags
            .samples_per_window
            .or(fc.samples_per_window)
            .unwrap_or(DEFAULT_SAMPLES_PER_WINDOW),
        bins: flags.bins.or(fc.bins).unwrap_or(DEFAULT_BINS),
        bin_range: fc.bin_range.unwrap_or([DEFAULT_BIN_RANGE.0, DEFAULT_BIN_RANGE.1]),
        min_count: fc.min_count.unwrap_or(50),
        compare_methods: flags.compare || fc.compare_methods.unwrap_or(false),
        conditions: flags.conditions.or(fc.conditions).unwrap_or(200),
        samples_per_condition: flags.samples_per_condition.or(fc.samples_per_condition).unwrap_or(40),
        sigma_ys: flags
            .sigma_ys
            .clone()
            .or(fc.sigma_ys)
            .unwrap_or_else(|| vec![0.01, 0.05, 0.2]),
    };
    validate_counts(task, &counts)?;

    let output_dir = flags
        .output_dir
        .clone()
        .or(file.output_dir)
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("dpsw-out"));

    Ok(Resolved {
        task,
        prior,
        schedule,
        integrator,
        guidance,
        measurement,
        output_dir,
        master_seed,
        jobs,
        counts,
        gmm,
    })
}

fn positive(field: &'static str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        Err(CliError::config(field, "must be >= 1"))
    } else {
        Ok(())
    }
}

fn range(field: &'static str, r: [f64; 2]) -> Result<(), CliError> {
    if r[0].is_finite() && r[1].is_finite() && r[0] < r[1] {
        Ok(())
    } else {
        Err(CliError::config(field, "needs finite lo < hi"))
    }
}

fn validate_counts(task: Task, c: &Counts) -> Result<(), CliError> {
    match task {
        Task::Sample => positive("counts.trajectories", c.trajectories),
        Task::Umbrella => {
            positive("counts.windows", c.windows)?;
            positive("counts.samples_per_window", c.samples_per_window)?;
            positive("counts.bins", c.bins)?;
            range("counts.center_range", c.center_range)?;
            range("counts.bin_range", c.bin_range)
        }
        Task::Diagnose => {
            positive("counts.conditions", c.conditions)?;
            if c.samples_per_condition < 2 {
                return Err(CliError::config("counts.samples_per_condition", "must be >= 2"));
            }
            Ok(())
        }
        Task::Curves => {
            if c.sigma_ys.is_empty() || c.sigma_ys.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(CliError::config(
                    "counts.sigma_ys",
                    "needs at least one finite value > 0",
                ));
            }
            Ok(())
        }
    }
}
