//! Relaxation experiments: initial conditions, decay-rate fits, the rate
//! bound and corridor checks, volume and canonical sweeps, and the JKO
//! refinement study.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, IntegratorKind, RunConfig};
use crate::diagnostics::DiagnosticsRecord;
use crate::dynamics::{self, Ensemble, EvolveOptions, Integrator, SimState, StepError, Trajectory};
use crate::jko::JkoSettings;
use crate::scalar::Scalar;
use crate::spectral::{self, RealField, SpectralError};
use crate::thermo::{self, ModelParams, RateConstants};

/// Gaps at or below this are treated as numerical zero by the rate fit.
pub const GAP_FLOOR: f64 = 1e-13;
pub const DEFAULT_FIT_FRACTION: f64 = 0.6;
pub const MIN_FIT_POINTS: usize = 10;
pub const VOLUME_TOLERANCE: f64 = 1.10;
pub const CANONICAL_RATIO: [f64; 2] = [3.4, 4.6];
pub const CONTROL_RATIO: [f64; 2] = [0.9, 1.1];
pub const LAMBDA_DAGGER_SLACK: f64 = 0.95;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("need at least {needed} fit points with gap above {floor:e}, found {found}")]
    InsufficientData { found: usize, needed: usize, floor: f64 },
    #[error("invalid initial condition: {0}")]
    BadInitialCondition(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<SpectralError> for ExperimentError {
    fn from(e: SpectralError) -> Self {
        ExperimentError::Step(e.into())
    }
}

/// Initial density recipes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `N ≡ M₀`.
    #[default]
    Uniform,
    /// `N = M₀(1 + shift + eps·cos(2πn·x/L))`; `k` holds the mode numbers `n`.
    SingleMode {
        k: Vec<i64>,
        eps: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        shift: f64,
    },
    /// `Ψ = log M₀ + Σ_{|n|≤k_c} a_n cos(2πn·x/L + θ_n)` rescaled so `max|Ψ − log M₀| = amp`.
    RandomBand { k_c: u32, amp: f64, seed: u64 },
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl InitialCondition {
    pub fn validate(&self, dim: usize, kappa: f64) -> Result<(), String> {
        match self {
            InitialCondition::Uniform => Ok(()),
            InitialCondition::SingleMode { k, eps, shift } => {
                if k.len() != dim {
                    return Err(format!("k needs {dim} mode numbers, got {}", k.len()));
                }
                if !(eps.is_finite() && shift.is_finite() && 1.0 + shift - eps.abs() > 0.0) {
                    return Err(format!("density 1 + shift ± eps must stay positive (eps = {eps}, shift = {shift})"));
                }
                Ok(())
            }
            InitialCondition::RandomBand { amp, .. } => {
                let limit = (1.0 / kappa).ln();
                if !(*amp > 0.0 && *amp < limit) {
                    return Err(format!("amp must lie in (0, ln(1/kappa) = {limit}) to start inside the corridor"));
                }
                Ok(())
            }
        }
    }
}

fn band_modes(dim: usize, k_c: i64) -> Vec<[i64; 2]> {
    let mut modes = Vec::new();
    if dim == 1 {
        modes.extend((0..=k_c).map(|n| [n, 0]));
    } else {
        for n0 in 0..=k_c {
            for n1 in -k_c..=k_c {
                let half_plane = n0 > 0 || n1 >= 0;
                if half_plane && n0 * n0 + n1 * n1 <= k_c * k_c {
                    modes.push([n0, n1]);
                }
            }
        }
    }
    modes
}

/// Samples the initial density on the model's grid.
pub fn initial_density<T: Scalar>(ic: &InitialCondition, params: &ModelParams<T>) -> Result<RealField<T>, ExperimentError> {
    let grid = params.grid();
    let m0 = params.m0();
    let two_pi_over_l = T::TAU() / grid.length();
    let phase = |n: [i64; 2], x: [T; 2]| two_pi_over_l * (T::lit(n[0] as f64) * x[0] + T::lit(n[1] as f64) * x[1]);
    let field = match ic {
        InitialCondition::Uniform => RealField::constant(grid, m0),
        InitialCondition::SingleMode { k, eps, shift } => {
            ic.validate(grid.dim(), params.kappa().as_f64()).map_err(ExperimentError::BadInitialCondition)?;
            let n = [k[0], if grid.dim() == 2 { k[1] } else { 0 }];
            let (eps, shift) = (T::lit(*eps), T::lit(*shift));
            RealField::from_fn(grid, |x| m0 * (T::one() + shift + eps * phase(n, x).cos()))?
        }
        InitialCondition::RandomBand { k_c, amp, seed } => {
            ic.validate(grid.dim(), params.kappa().as_f64()).map_err(ExperimentError::BadInitialCondition)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let terms: Vec<([i64; 2], f64, f64)> = band_modes(grid.dim(), *k_c as i64)
                .into_iter()
                .map(|n| {
                    if n == [0, 0] {
                        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                        (n, sign * rng.gen_range(0.5..=1.0), 0.0)
                    } else {
                        (n, rng.gen_range(0.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU))
                    }
                })
                .collect();
            let raw = RealField::from_fn(grid, |x| {
                terms
                    .iter()
                    .map(|&(n, a, th)| T::lit(a) * (phase(n, x) + T::lit(th)).cos())
                    .fold(T::zero(), |s, v| s + v)
            })?;
            let peak = raw.sup_norm();
            let scale = if peak > T::zero() { T::lit(*amp) / peak } else { T::zero() };
            let log_m0 = m0.ln();
            raw.map(|v| (log_m0 + scale * v).exp())
        }
    };
    Ok(field)
}

/// Linearized decay rate `λ(k) = (|k|² + M₀^{−1/2})(1 + M₀Ŵ(k))` of the grid mode `flat`.
///
/// `|k|²` is the grid's Laplacian symbol, so Nyquist modes decay at the zero-mode rate scaled by `Ŵ`.
pub fn linearized_rate<T: Scalar>(params: &ModelParams<T>, flat: usize) -> T {
    let m0 = params.m0();
    (params.grid().laplacian_symbol(flat) + m0.powf(T::lit(-0.5))) * (T::one() + m0 * params.kernel().symbol()[flat])
}

/// Same rate read off a centered finite-difference Jacobian of the discrete
/// right-hand side at `N ≡ M₀`, projected on the mode's cosine.
pub fn numerical_linear_rate<T: Scalar>(params: &ModelParams<T>, mode: [i64; 2], delta: T) -> Result<T, SpectralError> {
    let grid = params.grid();
    let tpl = T::TAU() / grid.length();
    let probe = RealField::from_fn(grid, |x| {
        (tpl * (T::lit(mode[0] as f64) * x[0] + T::lit(mode[1] as f64) * x[1])).cos()
    })?;
    let base = params.uniform_state();
    let up = dynamics::rhs_for_density(&base.axpy(delta, &probe), params, Ensemble::Grand)?;
    let down = dynamics::rhs_for_density(&base.axpy(-delta, &probe), params, Ensemble::Grand)?;
    let jv = up.sub(&down).scale(T::one() / (T::lit(2.0) * delta));
    Ok(-jv.dot(&probe) / probe.dot(&probe))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWindow {
    /// The last `fraction` of the span of records whose gap is above the floor.
    LastFraction { fraction: f64 },
    Range { t_lo: f64, t_hi: f64 },
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow::LastFraction { fraction: DEFAULT_FIT_FRACTION }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub lambda_hat: f64,
    pub r_squared: f64,
    pub window: [f64; 2],
    pub points: usize,
}

/// Least-squares slope of `log gap` against `t`; `lambda_hat` is minus the slope.
///
/// Only records before the gap first reaches the floor take part.
pub fn fit_series(t: &[f64], gap: &[f64], window: FitWindow) -> Result<RateFit, ExperimentError> {
    let valid = t.iter().zip(gap).take_while(|(_, g)| g.is_finite() && **g > GAP_FLOOR).count();
    let (t, gap) = (&t[..valid], &gap[..valid]);
    let (lo, hi) = match window {
        FitWindow::LastFraction { fraction } => match (t.first(), t.last()) {
            (Some(&a), Some(&b)) => (b - fraction.clamp(0.0, 1.0) * (b - a), b),
            _ => (0.0, 0.0),
        },
        FitWindow::Range { t_lo, t_hi } => (t_lo, t_hi),
    };
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(gap)
        .filter(|(&ti, _)| ti >= lo - 1e-12 * lo.abs().max(1.0) && ti <= hi)
        .map(|(&ti, &g)| (ti, g.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(ExperimentError::InsufficientData { found: pts.len(), needed: MIN_FIT_POINTS, floor: GAP_FLOOR });
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - ym).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - ym - slope * (p.0 - tm)).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RateFit { lambda_hat: -slope + 0.0, r_squared, window: [lo, hi], points: pts.len() })
}

pub fn fit_decay_rate<'a>(
    records: impl IntoIterator<Item = &'a DiagnosticsRecord>,
    window: FitWindow,
) -> Result<RateFit, ExperimentError> {
    let (t, gap): (Vec<f64>, Vec<f64>) = records.into_iter().map(|r| (r.t, r.gap)).unzip();
    fit_series(&t, &gap, window)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Passed,
    Failed,
    NotApplicable,
    CorridorViolated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorridorReport {
    pub holds: bool,
    pub first_violation_t: Option<f64>,
    /// Extremes of `N/M₀` over the records.
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub records: usize,
}

/// Checks `κM₀ < N < M₀/κ` at every record.
pub fn bkappa_check<'a, T: Scalar>(
    records: impl IntoIterator<Item = &'a DiagnosticsRecord>,
    params: &ModelParams<T>,
) -> CorridorReport {
    let (lo, hi) = params.corridor();
    let (lo, hi, m0) = (lo.as_f64(), hi.as_f64(), params.m0().as_f64());
    let mut report = CorridorReport {
        holds: true,
        first_violation_t: None,
        min_ratio: f64::INFINITY,
        max_ratio: 0.0,
        records: 0,
    };
    for r in records {
        report.records += 1;
        report.min_ratio = report.min_ratio.min(r.n_min / m0);
        report.max_ratio = report.max_ratio.max(r.n_max / m0);
        if !(r.n_min > lo && r.n_max < hi) && report.holds {
            report.holds = false;
            report.first_violation_t = Some(r.t);
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaDaggerReport {
    pub status: CheckStatus,
    pub lambda_dagger: f64,
    pub sigma: f64,
    pub threshold: f64,
    pub fit: Option<RateFit>,
    /// `max_t ‖N_t − M₀‖² / ((1/σ)·gap(0)·e^{−λ†t})`; the bound holds when ≤ 1.
    pub l2_worst_ratio: Option<f64>,
    pub corridor: CorridorReport,
}

/// Compares the fitted decay rate with `λ†` after checking the theorem's hypotheses.
pub fn lambda_dagger_check<T: Scalar>(
    trajectory: &Trajectory<T>,
    params: &ModelParams<T>,
    window: FitWindow,
) -> Result<LambdaDaggerReport, ExperimentError> {
    let rc = thermo::rate_constants(params);
    let corridor = bkappa_check(trajectory.all_records(), params);
    let lambda_dagger = rc.lambda_dagger.as_f64();
    let sigma = rc.sigma.as_f64();
    let mut report = LambdaDaggerReport {
        status: CheckStatus::NotApplicable,
        lambda_dagger,
        sigma,
        threshold: LAMBDA_DAGGER_SLACK * lambda_dagger,
        fit: None,
        l2_worst_ratio: None,
        corridor,
    };
    if !report.corridor.holds {
        report.status = CheckStatus::CorridorViolated;
        return Ok(report);
    }
    if !rc.convex {
        return Ok(report);
    }
    let fit = fit_decay_rate(trajectory.all_records(), window)?;
    let gap0 = trajectory.initial.gap;
    let worst = trajectory
        .all_records()
        .map(|r| {
            let bound = gap0 / sigma * (-lambda_dagger * r.t).exp();
            if bound > 0.0 { r.dev_l2_sq / bound } else if r.dev_l2_sq == 0.0 { 0.0 } else { f64::INFINITY }
        })
        .fold(0.0, f64::max);
    let rate_ok = fit.lambda_hat >= report.threshold;
    report.status = if rate_ok && worst <= 1.0 + 1e-9 { CheckStatus::Passed } else { CheckStatus::Failed };
    report.fit = Some(fit);
    report.l2_worst_ratio = Some(worst);
    Ok(report)
}

/// A fully resolved run: parameters, initial state and stepping plan.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub params: Arc<ModelParams<f64>>,
    pub state: SimState<f64>,
    pub integrator: Integrator<f64>,
    pub h: f64,
    pub t_final: f64,
    pub stride: usize,
}

impl RunPlan {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, ExperimentError> {
        let params = Arc::new(cfg.model_params()?);
        let density = initial_density(&cfg.initial, &params)?;
        let state = SimState::from_density(params.clone(), density, 0.0)?;
        let h = cfg.integrator.h.unwrap_or_else(|| dynamics::default_step(&params));
        Ok(Self {
            params,
            state,
            integrator: cfg.integrator_for(),
            h,
            t_final: cfg.integrator.t_final,
            stride: cfg.output.stride,
        })
    }

    pub fn run(self, observer: Option<dynamics::Observer<'_, f64>>) -> Result<Trajectory<f64>, ExperimentError> {
        Ok(dynamics::evolve(
            self.state,
            self.t_final,
            self.h,
            &self.integrator,
            EvolveOptions { stride: self.stride },
            observer,
        )?)
    }
}

fn write_ndjson(path: &Path, trajectory: &Trajectory<f64>) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in trajectory.all_records() {
        writeln!(out, "{}", r.to_json_line())?;
    }
    out.flush()
}

/// Configuration at side length `l` with the grid spacing of `base`.
pub fn config_at_length(base: &RunConfig, l: f64) -> Result<RunConfig, ExperimentError> {
    let scale = l / base.domain.length;
    let points = base.domain.points as f64 * scale;
    let rounded = points.round();
    if !(rounded >= 8.0 && (points - rounded).abs() < 1e-9 && (rounded as usize).is_power_of_two()) {
        return Err(ExperimentError::BadRequest(format!(
            "L = {l} does not keep the grid spacing of the base config on a power-of-two grid"
        )));
    }
    let mut cfg = base.clone();
    cfg.domain.length = l;
    cfg.domain.points = rounded as usize;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "M")]
    pub points: usize,
    pub integrator: String,
    pub fit: Option<RateFit>,
    pub error: Option<String>,
    pub diagnostics: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateConstantsReport {
    pub sigma: f64,
    pub gsq: f64,
    pub lambda_dagger: f64,
    pub convex: bool,
}

impl<T: Scalar> From<RateConstants<T>> for RateConstantsReport {
    fn from(rc: RateConstants<T>) -> Self {
        Self { sigma: rc.sigma.as_f64(), gsq: rc.gsq.as_f64(), lambda_dagger: rc.lambda_dagger.as_f64(), convex: rc.convex }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub value: Option<f64>,
    pub range: [f64; 2],
    pub passed: bool,
}

impl Criterion {
    fn new(name: impl Into<String>, value: Option<f64>, range: [f64; 2]) -> Self {
        let passed = value.is_some_and(|v| v >= range[0] && v <= range[1]);
        Self { name: name.into(), value, range, passed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub mode: String,
    pub axis: String,
    pub values: Vec<f64>,
    pub points: Vec<SweepPoint>,
    /// Grand-canonical control runs of the canonical contrast.
    pub control: Vec<SweepPoint>,
    pub rate_constants: RateConstantsReport,
    pub criteria: Vec<Criterion>,
    pub passed: bool,
}

fn run_point(
    index: usize,
    cfg: Result<RunConfig, ExperimentError>,
    l: f64,
    window: FitWindow,
    out: Option<PathBuf>,
) -> SweepPoint {
    let mut point = SweepPoint {
        index,
        length: l,
        points: 0,
        integrator: String::new(),
        fit: None,
        error: None,
        diagnostics: None,
    };
    let outcome = (|| -> Result<(), ExperimentError> {
        let cfg = cfg?;
        point.points = cfg.domain.points;
        point.integrator = cfg.integrator.kind.name().to_string();
        let tr = RunPlan::from_config(&cfg)?.run(None)?;
        if let Some(path) = &out {
            write_ndjson(path, &tr)?;
            point.diagnostics = Some(path.display().to_string());
        }
        if let Some(e) = &tr.error {
            return Err(e.clone().into());
        }
        point.fit = Some(fit_decay_rate(tr.all_records(), window)?);
        Ok(())
    })();
    if let Err(e) = outcome {
        point.error = Some(e.to_string());
    }
    point
}

fn run_points(
    configs: Vec<(f64, Result<RunConfig, ExperimentError>)>,
    offset: usize,
    window: FitWindow,
    out_dir: Option<&Path>,
) -> Vec<SweepPoint> {
    configs
        .into_par_iter()
        .enumerate()
        .map(|(i, (l, cfg))| {
            let index = offset + i;
            let out = out_dir.map(|d| d.join(format!("run_{index}")).join("diag.ndjson"));
            run_point(index, cfg, l, window, out)
        })
        .collect()
}

fn rates(points: &[SweepPoint]) -> Option<Vec<f64>> {
    points.iter().map(|p| p.fit.as_ref().map(|f| f.lambda_hat)).collect()
}

fn rate_constants_of(base: &RunConfig) -> Result<RateConstantsReport, ExperimentError> {
    Ok(thermo::rate_constants(&base.model_params()?).into())
}

/// Grand-canonical runs at each side length with fixed grid spacing; the
/// fitted rates should agree to within [`VOLUME_TOLERANCE`].
pub fn volume_sweep(
    base: &RunConfig,
    lengths: &[f64],
    window: FitWindow,
    out_dir: Option<&Path>,
) -> Result<SweepReport, ExperimentError> {
    if base.integrator.kind.ensemble() != Ensemble::Grand {
        return Err(ExperimentError::BadRequest("volume sweep needs a grand-canonical integrator".into()));
    }
    let configs = lengths.iter().map(|&l| (l, config_at_length(base, l))).collect();
    let points = run_points(configs, 0, window, out_dir);
    let ratio = rates(&points).map(|r| {
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = r.iter().copied().fold(f64::INFINITY, f64::min);
        if r.len() < 2 { 1.0 } else { max / min }
    });
    let criteria = vec![Criterion::new("rate_ratio_max_over_min", ratio, [1.0, VOLUME_TOLERANCE])];
    let passed = criteria.iter().all(|c| c.passed);
    Ok(SweepReport {
        mode: "volume".into(),
        axis: "L".into(),
        values: lengths.to_vec(),
        points,
        control: Vec::new(),
        rate_constants: rate_constants_of(base)?,
        criteria,
        passed,
    })
}

/// Canonical runs from the lowest mode `eps·cos(2πx₀/L)` against grand-canonical
/// controls from the same mode plus a uniform shift of the same size.
pub fn canonical_contrast(
    base: &RunConfig,
    lengths: &[f64],
    eps: f64,
    window: FitWindow,
    out_dir: Option<&Path>,
) -> Result<SweepReport, ExperimentError> {
    let lowest = |dim: usize| {
        let mut k = vec![0; dim];
        k[0] = 1;
        k
    };
    let make = |l: f64, kind: IntegratorKind, shift: f64| -> Result<RunConfig, ExperimentError> {
        let mut cfg = config_at_length(base, l)?;
        cfg.integrator.kind = kind;
        cfg.initial = InitialCondition::SingleMode { k: lowest(cfg.domain.d), eps, shift };
        cfg.validate()?;
        Ok(cfg)
    };
    let canonical_kind = match base.integrator.kind {
        IntegratorKind::Rk4 | IntegratorKind::Rk4Canonical => IntegratorKind::Rk4Canonical,
        _ => IntegratorKind::ImexCanonical,
    };
    let grand_kind = match canonical_kind {
        IntegratorKind::Rk4Canonical => IntegratorKind::Rk4,
        _ => IntegratorKind::Imex,
    };
    let canon = lengths.iter().map(|&l| (l, make(l, canonical_kind, 0.0))).collect();
    let points = run_points(canon, 0, window, out_dir);
    let grand = lengths.iter().map(|&l| (l, make(l, grand_kind, eps))).collect();
    let control = run_points(grand, lengths.len(), window, out_dir);
    let mut criteria = Vec::new();
    for i in 0..lengths.len() {
        for j in 0..lengths.len() {
            if (lengths[j] - 2.0 * lengths[i]).abs() > 1e-12 * lengths[i] {
                continue;
            }
            let ratio = |pts: &[SweepPoint]| match (&pts[i].fit, &pts[j].fit) {
                (Some(a), Some(b)) => Some(a.lambda_hat / b.lambda_hat),
                _ => None,
            };
            let tag = format!("L={}/L={}", lengths[i], lengths[j]);
            criteria.push(Criterion::new(format!("canonical_rate_ratio {tag}"), ratio(&points), CANONICAL_RATIO));
            criteria.push(Criterion::new(format!("grand_control_ratio {tag}"), ratio(&control), CONTROL_RATIO));
        }
    }
    let passed = criteria.iter().all(|c| c.passed);
    Ok(SweepReport {
        mode: "canonical".into(),
        axis: "L".into(),
        values: lengths.to_vec(),
        points,
        control,
        rate_constants: rate_constants_of(base)?,
        criteria,
        passed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoStudyReport {
    pub h_list: Vec<f64>,
    pub reference_integrator: String,
    pub reference_h: f64,
    pub endpoint_d0: Vec<f64>,
    pub endpoint_d1: Vec<f64>,
    /// Largest `𝒟₀` error over the common checkpoints.
    pub sup_d0: Vec<f64>,
    /// `error(h_{i+1})/error(h_i)` for the endpoint `𝒟₀` error.
    pub ratios_d0: Vec<f64>,
    /// Least-squares slope of `log error` against `log h`.
    pub order_d0: f64,
    pub order_d1: f64,
    pub max_residual: f64,
    pub max_inner_iters: usize,
    pub sup_monotone: bool,
    pub within_b0: bool,
    pub growth_d2: Vec<f64>,
    pub errors: Vec<Option<String>>,
}

fn checkpoint_states(
    state: SimState<f64>,
    t_final: f64,
    h: f64,
    integrator: &Integrator<f64>,
    every: usize,
) -> Result<(Vec<RealField<f64>>, Trajectory<f64>), ExperimentError> {
    let mut snaps = Vec::new();
    let mut grab = |s: &SimState<f64>, r: &DiagnosticsRecord| {
        if r.step > 0 && r.step as usize % every == 0 {
            snaps.push(s.psi().clone());
        }
    };
    let tr = dynamics::evolve(state, t_final, h, integrator, EvolveOptions { stride: every }, Some(&mut grab))?;
    if let Some(e) = &tr.error {
        return Err(e.clone().into());
    }
    Ok((snaps, tr))
}

fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(_, &v)| v > 0.0).map(|(&a, &b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    sxy / sxx
}

/// Endpoint and sup-in-time errors of JKO runs against a fine RK4 reference.
///
/// Checkpoints are spaced `checkpoint` apart and must be a multiple of every
/// step in `h_list`. The reference step is the largest divisor of the
/// checkpoint spacing not above `min(h)/20` and the RK4 stability bound.
pub fn jko_convergence_study(
    base: &RunConfig,
    h_list: &[f64],
    checkpoint: f64,
    settings: &JkoSettings<f64>,
) -> Result<JkoStudyReport, ExperimentError> {
    if h_list.len() < 3 || h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ExperimentError::BadRequest("h_list needs at least 3 strictly decreasing steps".into()));
    }
    let plan = RunPlan::from_config(base)?;
    let t_final = plan.t_final;
    let per = |h: f64| -> Result<usize, ExperimentError> {
        let n = checkpoint / h;
        if (n - n.round()).abs() > 1e-9 * n {
            return Err(ExperimentError::BadRequest(format!("checkpoint spacing {checkpoint} is not a multiple of h = {h}")));
        }
        Ok(n.round() as usize)
    };
    let h_min = h_list[h_list.len() - 1];
    let target = (h_min / 20.0).min(0.99 * dynamics::rk4_max_step(&plan.params));
    let sub = (checkpoint / target).ceil();
    let h_ref = checkpoint / sub;
    let (reference, _) = checkpoint_states(plan.state.clone(), t_final, h_ref, &Integrator::Rk4, sub as usize)?;
    let jko = Integrator::Jko(settings.clone());
    let runs: Vec<Result<(Vec<RealField<f64>>, Trajectory<f64>), ExperimentError>> = h_list
        .par_iter()
        .map(|&h| checkpoint_states(plan.state.clone(), t_final, h, &jko, per(h)?))
        .collect();
    let mut report = JkoStudyReport {
        h_list: h_list.to_vec(),
        reference_integrator: "rk4".into(),
        reference_h: h_ref,
        endpoint_d0: Vec::new(),
        endpoint_d1: Vec::new(),
        sup_d0: Vec::new(),
        ratios_d0: Vec::new(),
        order_d0: f64::NAN,
        order_d1: f64::NAN,
        max_residual: 0.0,
        max_inner_iters: 0,
        sup_monotone: false,
        within_b0: true,
        growth_d2: Vec::new(),
        errors: Vec::new(),
    };
    for run in runs {
        match run {
            Ok((snaps, tr)) => {
                let errs: Vec<[f64; 3]> = snaps.iter().zip(&reference).map(|(a, b)| spectral::dnorms012(&a.sub(b))).collect();
                let last = errs.last().copied().unwrap_or([f64::NAN; 3]);
                report.endpoint_d0.push(last[0]);
                report.endpoint_d1.push(last[1]);
                report.sup_d0.push(errs.iter().map(|e| e[0]).fold(0.0, f64::max));
                let stats = tr.jko.expect("jko run carries stats");
                report.max_residual = report.max_residual.max(stats.max_residual);
                report.max_inner_iters = report.max_inner_iters.max(stats.max_inner_iters);
                report.within_b0 &= stats.within_b0();
                report.growth_d2.push(stats.growth_d2);
                report.errors.push(None);
            }
            Err(e) => {
                report.endpoint_d0.push(f64::NAN);
                report.endpoint_d1.push(f64::NAN);
                report.sup_d0.push(f64::NAN);
                report.growth_d2.push(f64::NAN);
                report.within_b0 = false;
                report.errors.push(Some(e.to_string()));
            }
        }
    }
    report.ratios_d0 = report.endpoint_d0.windows(2).map(|w| w[1] / w[0]).collect();
    report.order_d0 = log_log_slope(h_list, &report.endpoint_d0);
    report.order_d1 = log_log_slope(h_list, &report.endpoint_d1);
    report.sup_monotone = report.sup_d0.windows(2).all(|w| w[1] < w[0]);
    Ok(report)
}
