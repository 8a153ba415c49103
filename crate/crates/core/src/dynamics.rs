//! Direct time stepping of the grand-canonical and canonical equations.
//!
//! States are stored as `Ψ = log N` together with cached `N` and `W*N`.
//! Steppers that produce a density convert back and reject nonpositive values.

use std::sync::Arc;

use thiserror::Error;

use crate::diagnostics::{self, DiagnosticsRecord};
use crate::jko::{self, JkoConfig, JkoRunStats, JkoSettings};
use crate::scalar::Scalar;
use crate::spectral::{self, RealField, SpectralError};
use crate::thermo::{self, ModelParams, ThermoError};

/// Largest admissible `h·max|k|²` for the explicit RK4 stepper.
pub const RK4_STABILITY_LIMIT: f64 = 2.7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("positivity lost at index {index} (value {value:e}); reduce the time step")]
    PositivityLoss { index: usize, value: f64 },
    #[error("explicit step h = {h:e} exceeds the stability bound {bound:e}")]
    StabilityViolation { h: f64, bound: f64 },
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("final time must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("inner iteration diverged after {iters} iterations (increment {increment:e})")]
    InnerDivergence { iters: usize, increment: f64 },
    #[error("inner iteration did not reach tolerance in {iters} iterations (increment {increment:e})")]
    InnerNotConverged { iters: usize, increment: f64 },
    #[error("weak residual {residual:e} exceeds tolerance {tol:e}")]
    ResidualTooLarge { residual: f64, tol: f64 },
    #[error("state does not belong to this grid")]
    GridMismatch,
    #[error(transparent)]
    Thermo(#[from] ThermoError),
}

impl From<SpectralError> for StepError {
    fn from(e: SpectralError) -> Self {
        StepError::Thermo(ThermoError::Spectral(e))
    }
}

/// Which free energy drives the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ensemble {
    /// Non-conservative flow of `𝒢_μ`.
    Grand,
    /// Mass-conserving McKean–Vlasov flow of `ℱ`.
    Canonical,
}

/// One instant of a trajectory.
#[derive(Clone, Debug)]
pub struct SimState<T: Scalar> {
    t: T,
    psi: RealField<T>,
    n: RealField<T>,
    wn: RealField<T>,
    params: Arc<ModelParams<T>>,
}

impl<T: Scalar> SimState<T> {
    pub fn from_log_density(params: Arc<ModelParams<T>>, psi: RealField<T>, t: T) -> Result<Self, StepError> {
        params.grid().check_same(psi.grid()).map_err(|_| StepError::GridMismatch)?;
        let n = psi.map(|v| v.exp());
        let wn = spectral::convolve(params.kernel(), &n)?;
        Ok(Self { t, psi, n, wn, params })
    }

    pub fn from_density(params: Arc<ModelParams<T>>, n: RealField<T>, t: T) -> Result<Self, StepError> {
        params.grid().check_same(n.grid()).map_err(|_| StepError::GridMismatch)?;
        if let Some(index) = n.values().iter().position(|&v| !(v > T::zero() && v.is_finite())) {
            return Err(StepError::PositivityLoss { index, value: n.values()[index].as_f64() });
        }
        let psi = n.map(|v| v.ln());
        let wn = spectral::convolve(params.kernel(), &n)?;
        Ok(Self { t, psi, n, wn, params })
    }

    pub fn uniform(params: Arc<ModelParams<T>>) -> Self {
        let n = params.uniform_state();
        Self::from_density(params, n, T::zero()).expect("M0 is positive")
    }

    #[inline]
    pub fn t(&self) -> T {
        self.t
    }

    #[inline]
    pub fn psi(&self) -> &RealField<T> {
        &self.psi
    }

    #[inline]
    pub fn n(&self) -> &RealField<T> {
        &self.n
    }

    #[inline]
    pub fn wn(&self) -> &RealField<T> {
        &self.wn
    }

    #[inline]
    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_arc(&self) -> Arc<ModelParams<T>> {
        Arc::clone(&self.params)
    }

    fn successor(&self, n: RealField<T>, h: T) -> Result<Self, StepError> {
        Self::from_density(self.params_arc(), n, self.t + h)
    }

    pub(crate) fn successor_log(&self, psi: RealField<T>, h: T) -> Result<Self, StepError> {
        Self::from_log_density(self.params_arc(), psi, self.t + h)
    }
}

fn reaction<T: Scalar>(n: &RealField<T>, wn: &RealField<T>, mu: T) -> RealField<T> {
    let half = T::lit(0.5);
    n.zip_map(wn, |v, w| {
        let e = (half * (mu - w)).exp();
        e - v / e
    })
}

/// `∇·(N∇w_N)` plus, for the grand ensemble, the creation/annihilation term.
fn explicit_part<T: Scalar>(n: &RealField<T>, wn: &RealField<T>, params: &ModelParams<T>, ensemble: Ensemble) -> RealField<T> {
    let drift = spectral::div_a_grad(n, wn);
    match ensemble {
        Ensemble::Grand => drift.add(&reaction(n, wn, params.mu())),
        Ensemble::Canonical => drift,
    }
}

/// Right-hand side evaluated from a density that need not be positive.
pub fn rhs_for_density<T: Scalar>(
    n: &RealField<T>,
    params: &ModelParams<T>,
    ensemble: Ensemble,
) -> Result<RealField<T>, SpectralError> {
    let wn = spectral::convolve(params.kernel(), n)?;
    Ok(spectral::laplacian(n).add(&explicit_part(n, &wn, params, ensemble)))
}

/// `∇²N + ∇·(N∇w_N) − N e^{−(μ−w_N)/2} + e^{(μ−w_N)/2}`.
pub fn rhs_grand<T: Scalar>(state: &SimState<T>) -> RealField<T> {
    spectral::laplacian(&state.n).add(&explicit_part(&state.n, &state.wn, &state.params, Ensemble::Grand))
}

/// `∇·(N∇Φ_N) − Ω_N Φ_N`, the same field assembled through the potential.
pub fn rhs_grand_advective<T: Scalar>(state: &SimState<T>) -> RealField<T> {
    let phi = thermo::phi_from_parts(&state.n, &state.wn, state.params.mu());
    let om = thermo::omega_from_phi(&state.n, &phi);
    spectral::div_a_grad(&state.n, &phi).sub(&om.mul(&phi))
}

/// `∇²N + ∇·(N∇w_N)`.
pub fn rhs_canonical<T: Scalar>(state: &SimState<T>) -> RealField<T> {
    spectral::laplacian(&state.n).add(&explicit_part(&state.n, &state.wn, &state.params, Ensemble::Canonical))
}

fn check_h<T: Scalar>(h: T) -> Result<(), StepError> {
    if h > T::zero() && h.is_finite() {
        Ok(())
    } else {
        Err(StepError::BadStep(h.as_f64()))
    }
}

/// Semi-implicit Euler: diffusion implicit, interaction and reaction explicit.
pub fn step_imex<T: Scalar>(state: &SimState<T>, h: T, ensemble: Ensemble) -> Result<SimState<T>, StepError> {
    check_h(h)?;
    let explicit = explicit_part(&state.n, &state.wn, &state.params, ensemble);
    let n1 = spectral::helmholtz_inverse(&state.n.axpy(h, &explicit), h)?;
    state.successor(n1, h)
}

/// `h·max|k|²` bound for the explicit stepper on this grid.
pub fn rk4_max_step<T: Scalar>(params: &ModelParams<T>) -> T {
    T::lit(RK4_STABILITY_LIMIT) / params.grid().max_k_squared()
}

/// Classical four-stage Runge–Kutta step.
pub fn step_rk4<T: Scalar>(state: &SimState<T>, h: T, ensemble: Ensemble) -> Result<SimState<T>, StepError> {
    check_h(h)?;
    let bound = rk4_max_step(&state.params);
    if h > bound {
        return Err(StepError::StabilityViolation { h: h.as_f64(), bound: bound.as_f64() });
    }
    let p = &state.params;
    let half = T::lit(0.5) * h;
    let k1 = spectral::laplacian(&state.n).add(&explicit_part(&state.n, &state.wn, p, ensemble));
    let k2 = rhs_for_density(&state.n.axpy(half, &k1), p, ensemble)?;
    let k3 = rhs_for_density(&state.n.axpy(half, &k2), p, ensemble)?;
    let k4 = rhs_for_density(&state.n.axpy(h, &k3), p, ensemble)?;
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    let incr = k1.add(&k2.scale(two)).add(&k3.scale(two)).add(&k4);
    state.successor(state.n.axpy(sixth, &incr), h)
}

pub fn step_rk4_canonical<T: Scalar>(state: &SimState<T>, h: T) -> Result<SimState<T>, StepError> {
    step_rk4(state, h, Ensemble::Canonical)
}

/// `min(0.1·dx, 0.01/λ(k_max))` with `λ` the linearized decay rate.
pub fn default_step<T: Scalar>(params: &ModelParams<T>) -> T {
    let grid = params.grid();
    let m0 = params.m0();
    let floor = m0.powf(T::lit(-0.5));
    let fastest = (0..grid.len())
        .map(|i| (grid.k_squared(i) + floor) * (T::one() + m0 * params.kernel().symbol()[i]))
        .fold(T::zero(), T::max);
    (T::lit(0.1) * grid.dx()).min(T::lit(0.01) / fastest)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Integrator<T> {
    Imex,
    Rk4,
    ImexCanonical,
    Rk4Canonical,
    Jko(JkoSettings<T>),
}

impl<T> Integrator<T> {
    pub fn ensemble(&self) -> Ensemble {
        match self {
            Integrator::ImexCanonical | Integrator::Rk4Canonical => Ensemble::Canonical,
            _ => Ensemble::Grand,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Integrator::Imex => "imex",
            Integrator::Rk4 => "rk4",
            Integrator::ImexCanonical => "imex_canonical",
            Integrator::Rk4Canonical => "rk4_canonical",
            Integrator::Jko(_) => "jko",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvolveOptions {
    /// Emit a record every `stride` steps (the last step is always recorded).
    pub stride: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { stride: 1 }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory<T: Scalar> {
    pub integrator: &'static str,
    pub h: T,
    pub initial: DiagnosticsRecord,
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: SimState<T>,
    /// Set when stepping stopped early; `records` then hold the partial run.
    pub error: Option<StepError>,
    pub jko: Option<JkoRunStats>,
}

impl<T: Scalar> Trajectory<T> {
    /// Initial record followed by the per-step records.
    pub fn all_records(&self) -> impl Iterator<Item = &DiagnosticsRecord> {
        std::iter::once(&self.initial).chain(self.records.iter())
    }

    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }
}

pub type Observer<'a, T> = &'a mut dyn FnMut(&SimState<T>, &DiagnosticsRecord);

/// Number of steps of size `h` covering `t_final`.
pub fn step_count<T: Scalar>(t_final: T, h: T) -> usize {
    (t_final / h).round().to_usize().unwrap_or(0).max(1)
}

/// Advances `state` to `t_final` with fixed step `h`.
///
/// Stepping errors stop the run; the partial trajectory carries the error.
/// Errors evaluating the initial diagnostics are returned directly.
pub fn evolve<T: Scalar>(
    state: SimState<T>,
    t_final: T,
    h: T,
    integrator: &Integrator<T>,
    options: EvolveOptions,
    observer: Option<Observer<'_, T>>,
) -> Result<Trajectory<T>, StepError> {
    check_h(h)?;
    if !(t_final > T::zero() && t_final.is_finite()) {
        return Err(StepError::BadHorizon(t_final.as_f64()));
    }
    let ensemble = integrator.ensemble();
    let stride = options.stride.max(1);
    let steps = step_count(t_final, h);
    let t0 = state.t();
    let mut observer = observer;
    let initial = diagnostics::observe(&state, 0, ensemble)?;
    if let Some(obs) = observer.as_mut() {
        obs(&state, &initial);
    }
    let mut jko_stats = match integrator {
        Integrator::Jko(settings) => Some(jko::run_stats_for(&state, &JkoConfig { h, settings: settings.clone() })),
        _ => None,
    };
    let mut records = Vec::with_capacity(steps / stride + 1);
    let mut current = state;
    let mut error = None;
    for step in 1..=steps {
        let outcome = match integrator {
            Integrator::Imex => step_imex(&current, h, Ensemble::Grand).map(|s| (s, None)),
            Integrator::ImexCanonical => step_imex(&current, h, Ensemble::Canonical).map(|s| (s, None)),
            Integrator::Rk4 => step_rk4(&current, h, Ensemble::Grand).map(|s| (s, None)),
            Integrator::Rk4Canonical => step_rk4(&current, h, Ensemble::Canonical).map(|s| (s, None)),
            Integrator::Jko(settings) => {
                jko::jko_step(&current, &JkoConfig { h, settings: settings.clone() }).map(|(s, r)| (s, Some(r)))
            }
        };
        let (mut next, report) = match outcome {
            Ok(v) => v,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        // pin the clock to t0 + k·h so times do not accumulate rounding
        next.t = t0 + T::lit(step as f64) * h;
        if let (Some(stats), Some(r)) = (jko_stats.as_mut(), report.as_ref()) {
            stats.absorb(r, h.as_f64());
        }
        if step % stride == 0 || step == steps {
            let mut rec = match diagnostics::observe(&next, step as u64, ensemble) {
                Ok(r) => r,
                Err(e) => {
                    error = Some(e.into());
                    current = next;
                    break;
                }
            };
            if let Some(r) = report {
                rec.inner_iters = Some(r.inner_iters as u32);
                rec.residual = Some(r.residual);
            }
            if let Some(obs) = observer.as_mut() {
                obs(&next, &rec);
            }
            records.push(rec);
        }
        current = next;
    }
    Ok(Trajectory {
        integrator: integrator.name(),
        h,
        initial,
        records,
        final_state: current,
        error,
        jko: jko_stats,
    })
}
