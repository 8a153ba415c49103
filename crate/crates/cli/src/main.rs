//! `gcflow` command-line front end.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use gcflow::config::{ConfigError, RunConfig, CONFIG_SCHEMA_VERSION};
use gcflow::diagnostics::{DiagnosticsRecord, DIAGNOSTICS_SCHEMA_VERSION};
use gcflow::dynamics::{self, SimState};
use gcflow::experiments::{self, ExperimentError, FitWindow, RunPlan};
use gcflow::field_io::{self, FieldIoError, FIELD_FORMAT_VERSION};
use gcflow::metric;
use gcflow::selfcheck;
use gcflow::thermo;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nconfig schema: gcflow-config/1",
    "\ndiagnostics schema: gcflow-diagnostics/1",
    "\nfield format: gcf1"
);

#[derive(Parser)]
#[command(name = "gcflow", version, long_version = LONG_VERSION, about = "Grand-canonical McKean-Vlasov relaxation on the torus")]
struct Cli {
    /// Worker threads for parallel runs (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key, e.g. `--set model.kappa=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        Ok(RunConfig::load_with_overrides(&self.config, &self.overrides)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    Volume,
    Canonical,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory; diagnostics go to stdout as NDJSON.
    Evolve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overrides `output.out_dir`; receives diag.ndjson, snapshots and the final density.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Write a density snapshot every N steps (needs an output directory).
        #[arg(long)]
        snapshot_every: Option<u64>,
        /// Start from a saved density instead of the configured initial condition.
        #[arg(long)]
        initial_field: Option<PathBuf>,
        /// Print the resolved run (derived mu/m0, step, rate constants) and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// JKO step refinement against a fine RK4 reference.
    JkoStudy {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated, strictly decreasing steps.
        #[arg(long, value_delimiter = ',', default_values_t = vec![4e-3, 2e-3, 1e-3])]
        h_list: Vec<f64>,
        /// Spacing of the comparison checkpoints.
        #[arg(long, default_value_t = 0.1)]
        checkpoint: f64,
    },
    /// Volume or canonical-contrast sweep over the side length.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Sweep axis, e.g. `L=1,2,4`.
        #[arg(long)]
        axis: String,
        #[arg(long, value_enum, default_value_t = SweepMode::Volume)]
        mode: SweepMode,
        /// Lowest-mode amplitude for the canonical contrast.
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        /// Fraction of the resolved gap history used by the rate fit.
        #[arg(long, default_value_t = experiments::DEFAULT_FIT_FRACTION)]
        fit_fraction: f64,
    },
    /// Approximate distance and straight-path upper bound between two densities.
    Distance {
        #[command(flatten)]
        config: ConfigArgs,
        /// Density file (`.csv` or binary).
        from: PathBuf,
        to: PathBuf,
        #[arg(long, default_value_t = 64)]
        segments: usize,
    },
    /// Kernel constants and rate constants of the configured model.
    KernelInfo {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Spectral and kernel self-test battery.
    Check {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn parts(&self) -> (&'static str, &str, u8) {
        match self {
            CliError::Config(m) => ("config", m, 2),
            CliError::Io(m) => ("io", m, 2),
            CliError::Numerical(m) => ("numerical", m, 1),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FieldIoError> for CliError {
    fn from(e: FieldIoError) -> Self {
        match e {
            FieldIoError::Io(e) => CliError::Io(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) | ExperimentError::BadRequest(_) | ExperimentError::BadInitialCondition(_) => {
                CliError::Config(e.to_string())
            }
            ExperimentError::Io(e) => CliError::Io(e.to_string()),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn parse_axis(axis: &str) -> Result<Vec<f64>, CliError> {
    let (name, values) = axis
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("axis `{axis}` must look like L=1,2,4")))?;
    if name.trim() != "L" {
        return Err(CliError::Config(format!("unsupported sweep axis `{}`; only L is available", name.trim())));
    }
    values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad axis value `{v}`"))))
        .collect()
}

fn evolve(
    args: &ConfigArgs,
    out_dir: Option<PathBuf>,
    snapshot_every: Option<u64>,
    initial_field: Option<PathBuf>,
    dry_run: bool,
) -> Result<(), CliError> {
    let cfg = args.load()?;
    let mut plan = RunPlan::from_config(&cfg)?;
    if let Some(path) = &initial_field {
        let n = field_io::load::<f64>(path)?;
        if n.grid() != plan.params.grid() {
            return Err(CliError::Config(format!("{} does not match the configured grid", path.display())));
        }
        plan.state = SimState::from_density(plan.params.clone(), n, 0.0)
            .map_err(|e| CliError::Config(format!("initial field: {e}")))?;
    }
    if dry_run {
        let rc = experiments::RateConstantsReport::from(thermo::rate_constants(&plan.params));
        return print_json(&json!({
            "integrator": plan.integrator.name(),
            "mu": plan.params.mu(),
            "m0": plan.params.m0(),
            "kappa": plan.params.kappa(),
            "h": plan.h,
            "steps": dynamics::step_count(plan.t_final, plan.h),
            "rk4_max_step": dynamics::rk4_max_step(&plan.params),
            "rate_constants": rc,
            "config": cfg,
        }));
    }
    let out_dir = out_dir.or_else(|| cfg.output.out_dir.clone());
    if snapshot_every.is_some() && out_dir.is_none() {
        return Err(CliError::Config("--snapshot-every needs --out-dir or output.out_dir".into()));
    }
    let mut diag_file = match &out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
            Some(BufWriter::new(fs::File::create(dir.join("diag.ndjson"))?))
        }
        None => None,
    };
    let mut stdout = BufWriter::new(io::stdout().lock());
    let mut io_error: Option<io::Error> = None;
    let mut snapshot_error: Option<FieldIoError> = None;
    let mut emit = |s: &SimState<f64>, r: &DiagnosticsRecord| {
        let line = r.to_json_line();
        let wrote = writeln!(stdout, "{line}").and_then(|_| match diag_file.as_mut() {
            Some(f) => writeln!(f, "{line}"),
            None => Ok(()),
        });
        if let Err(e) = wrote {
            io_error.get_or_insert(e);
        }
        if let (Some(every), Some(dir)) = (snapshot_every, &out_dir) {
            if every > 0 && r.step % every == 0 {
                if let Err(e) = field_io::save(s.n(), "N", &dir.join(format!("snap_{:08}.gcf", r.step))) {
                    snapshot_error.get_or_insert(e);
                }
            }
        }
    };
    let tr = plan.run(Some(&mut emit))?;
    stdout.flush()?;
    if let Some(f) = diag_file.as_mut() {
        f.flush()?;
    }
    if let Some(e) = io_error {
        return Err(e.into());
    }
    if let Some(e) = snapshot_error {
        return Err(e.into());
    }
    if let Some(dir) = &out_dir {
        field_io::save(tr.final_state.n(), "N", &dir.join("final.gcf"))?;
    }
    match tr.error {
        Some(e) => Err(CliError::Numerical(format!("stopped at t = {}: {e}", tr.final_state.t()))),
        None => Ok(()),
    }
}

fn jko_study(args: &ConfigArgs, h_list: &[f64], checkpoint: f64) -> Result<(), CliError> {
    let cfg = args.load()?;
    let rep = experiments::jko_convergence_study(&cfg, h_list, checkpoint, &cfg.jko)?;
    print_json(&rep)?;
    match rep.errors.iter().flatten().next() {
        Some(e) => Err(CliError::Numerical(format!("jko run failed: {e}"))),
        None => Ok(()),
    }
}

fn sweep(args: &ConfigArgs, axis: &str, mode: SweepMode, eps: f64, fit_fraction: f64) -> Result<(), CliError> {
    let cfg = args.load()?;
    let lengths = parse_axis(axis)?;
    let window = FitWindow::LastFraction { fraction: fit_fraction };
    let out = cfg.output.out_dir.as_deref();
    let rep = match mode {
        SweepMode::Volume => experiments::volume_sweep(&cfg, &lengths, window, out)?,
        SweepMode::Canonical => experiments::canonical_contrast(&cfg, &lengths, eps, window, out)?,
    };
    print_json(&rep)?;
    match rep.points.iter().chain(&rep.control).find_map(|p| p.error.as_ref()) {
        Some(e) => Err(CliError::Numerical(format!("sweep point failed: {e}"))),
        None => Ok(()),
    }
}

fn load_density(path: &Path, cfg: &RunConfig) -> Result<gcflow::Field64, CliError> {
    let n = field_io::load::<f64>(path)?;
    if n.grid() != &cfg.grid()? {
        return Err(CliError::Config(format!("{} does not match the configured grid", path.display())));
    }
    if !n.is_positive() {
        return Err(CliError::Config(format!("{} is not a positive density", path.display())));
    }
    Ok(n)
}

fn distance(args: &ConfigArgs, from: &Path, to: &Path, segments: usize) -> Result<(), CliError> {
    let cfg = args.load()?;
    let params = cfg.model_params()?;
    let n0 = load_density(from, &cfg)?;
    let n1 = load_density(to, &cfg)?;
    if segments < 2 {
        return Err(CliError::Config(format!("segments must be at least 2, got {segments}")));
    }
    let numerical = |e: metric::MetricError| CliError::Numerical(e.to_string());
    let (d_a, solve) = metric::approx_distance(&n0, &n1, 1.0, &params).map_err(numerical)?;
    let path = metric::path_distance_upper(&n0, &n1, segments, &params).map_err(numerical)?;
    print_json(&json!({
        "d_a": d_a,
        "path_upper_sq": path.value_sq,
        "segments": path.segments,
        "solver": {
            "d_a": solve,
            "path_max_iterations": path.max_iterations,
            "path_max_relative_residual": path.max_relative_residual,
            "tolerance": metric::SOLVER_TOL,
            "preconditioner": metric::PRECONDITIONER,
        },
        "per_segment_energy": path.per_segment_energy,
    }))
}

fn kernel_info(args: &ConfigArgs) -> Result<(), CliError> {
    let cfg = args.load()?;
    let params = cfg.model_params()?;
    let rc = experiments::RateConstantsReport::from(thermo::rate_constants(&params));
    print_json(&json!({
        "kernel": params.kernel().info(),
        "mu": params.mu(),
        "m0": params.m0(),
        "kappa": params.kappa(),
        "rate_constants": rc,
    }))
}

fn check(seed: u64) -> Result<(), CliError> {
    let rep = selfcheck::run_battery(seed).map_err(|e| CliError::Numerical(e.to_string()))?;
    print_json(&rep)?;
    let failed = rep.failures().next().map(|item| {
        CliError::Numerical(format!("check failed: {} = {:e} exceeds {:e}", item.name, item.value, item.limit))
    });
    failed.map_or(Ok(()), Err)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::Evolve { config, out_dir, snapshot_every, initial_field, dry_run } => {
            evolve(&config, out_dir, snapshot_every, initial_field, dry_run)
        }
        Command::JkoStudy { config, h_list, checkpoint } => jko_study(&config, &h_list, checkpoint),
        Command::Sweep { config, axis, mode, eps, fit_fraction } => sweep(&config, &axis, mode, eps, fit_fraction),
        Command::Distance { config, from, to, segments } => distance(&config, &from, &to, segments),
        Command::KernelInfo { config } => kernel_info(&config),
        Command::Check { seed } => check(seed),
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let line = json!({ "error": kind, "message": message.lines().next().unwrap_or_default() });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    debug_assert_eq!(CONFIG_SCHEMA_VERSION, "gcflow-config/1");
    debug_assert_eq!(DIAGNOSTICS_SCHEMA_VERSION, "gcflow-diagnostics/1");
    debug_assert_eq!(FIELD_FORMAT_VERSION, "gcf1");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", &e.to_string(), 2),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, message, code) = e.parts();
            fail(kind, message, code)
        }
    }
}
