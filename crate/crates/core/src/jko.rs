//! Implicit variational step in log variables.
//!
//! Writing `N₁ = N₀e^{hψ}`, the Euler–Lagrange equation of one step,
//! `N₁ − N₀ = h[∇·(N₀∇Φ₁) − Ω_{N₀}Φ₁]`, becomes the fixed-point problem
//! `ψ = L_h⁻¹(A + hB(ψ) − ℰ₂(hψ)/h)` with `L_h = 1 − h∇²` and
//! `ℰ₂(x) = e^x − 1 − x`. The potential keeps `μ`: `Φ₀ = Ψ₀ − μ + w₀`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{SimState, StepError};
use crate::scalar::Scalar;
use crate::spectral::{self, RealField};
use crate::thermo::{self, ModelParams, ThermoError};

/// Consecutive growing increments that count as divergence.
pub const DIVERGENCE_RUN: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct JkoSettings<T> {
    /// `𝒟₀` bound on `ψ_{j+1} − ψ_j` that stops the inner iteration.
    pub inner_tol: T,
    pub max_inner: usize,
    /// Acceptance bound on the weak residual of the step.
    pub residual_tol: T,
    /// Under-relaxation `ω ∈ (0, 1]`; `1` is the plain iteration.
    pub relaxation: T,
}

impl<T: Scalar> Default for JkoSettings<T> {
    fn default() -> Self {
        Self { inner_tol: T::tol(1e-11), max_inner: 200, residual_tol: T::tol(1e-9), relaxation: T::one() }
    }
}

impl<T: Scalar> JkoSettings<T> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.inner_tol > T::zero()) {
            return Err(format!("inner_tol must be positive, got {}", self.inner_tol));
        }
        if !(self.residual_tol > T::zero()) {
            return Err(format!("residual_tol must be positive, got {}", self.residual_tol));
        }
        if self.max_inner == 0 {
            return Err("max_inner must be at least 1".into());
        }
        if !(self.relaxation > T::zero() && self.relaxation <= T::one()) {
            return Err(format!("relaxation must lie in (0, 1], got {}", self.relaxation));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JkoConfig<T> {
    pub h: T,
    pub settings: JkoSettings<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoStepReport {
    pub inner_iters: usize,
    pub d0_psi: f64,
    pub residual: f64,
    /// `‖Ψ₁‖_{𝒟₂} − ‖Ψ₀‖_{𝒟₂}`.
    pub norm_delta_d2: f64,
    pub norm_delta_d1: f64,
    /// `𝒟₀` distance between the returned `ψ` and its image under the map.
    pub defect: f64,
}

/// Run-level bookkeeping of the inner solves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoRunStats {
    /// `𝔟₀ = 2‖A(Ψ_start)‖_{𝒟₀} + inner_tol`, fixed when the run starts.
    pub b0: f64,
    pub max_d0_psi: f64,
    /// `max_k (‖Ψ_{k+1}‖_{𝒟₂} − ‖Ψ_k‖_{𝒟₂})/h`, floored at zero.
    pub growth_d2: f64,
    pub max_residual: f64,
    pub max_defect: f64,
    pub max_inner_iters: usize,
    pub steps: usize,
}

impl JkoRunStats {
    pub fn within_b0(&self) -> bool {
        self.max_d0_psi <= self.b0
    }

    pub(crate) fn absorb(&mut self, r: &JkoStepReport, h: f64) {
        self.max_d0_psi = self.max_d0_psi.max(r.d0_psi);
        self.growth_d2 = self.growth_d2.max(r.norm_delta_d2 / h);
        self.max_residual = self.max_residual.max(r.residual);
        self.max_defect = self.max_defect.max(r.defect);
        self.max_inner_iters = self.max_inner_iters.max(r.inner_iters);
        self.steps += 1;
    }
}

pub(crate) fn run_stats_for<T: Scalar>(state: &SimState<T>, cfg: &JkoConfig<T>) -> JkoRunStats {
    let a = assemble_a(state);
    let d0 = spectral::dnorms012(&a)[0];
    JkoRunStats {
        b0: (T::lit(2.0) * d0 + cfg.settings.inner_tol).as_f64(),
        max_d0_psi: 0.0,
        growth_d2: 0.0,
        max_residual: 0.0,
        max_defect: 0.0,
        max_inner_iters: 0,
        steps: 0,
    }
}

/// Quantities of the base state reused by every inner iteration.
struct Frozen<T: Scalar> {
    grad_psi0: Vec<RealField<T>>,
    omega0: RealField<T>,
}

fn freeze<T: Scalar>(state: &SimState<T>) -> (Frozen<T>, RealField<T>) {
    let psi0 = state.psi();
    let phi0 = thermo::phi_from_parts(state.n(), state.wn(), state.params().mu());
    let half = T::lit(0.5);
    // Ω₀ = e^{−Ψ₀}Ω_{N₀} = N₀^{−1/2} sinhc(Φ₀/2)
    let omega0 = state.n().zip_map(&phi0, |v, p| thermo::sinhc(half * p) / v.sqrt());
    (Frozen { grad_psi0: spectral::gradient(psi0), omega0 }, phi0)
}

fn dot_grads<T: Scalar>(a: &[RealField<T>], b: &[RealField<T>]) -> RealField<T> {
    let mut out = RealField::zeros(a[0].grid());
    for (x, y) in a.iter().zip(b) {
        out = out.add(&x.mul(y));
    }
    out
}

/// `∇²Ψ₀ + |∇Ψ₀|² + ∇²w₀ + ∇w₀·∇Ψ₀ − Φ₀Ω₀`.
pub fn assemble_a<T: Scalar>(state: &SimState<T>) -> RealField<T> {
    let (fz, phi0) = freeze(state);
    assemble_a_with(state, &fz, &phi0)
}

fn assemble_a_with<T: Scalar>(state: &SimState<T>, fz: &Frozen<T>, phi0: &RealField<T>) -> RealField<T> {
    let grad_w0 = spectral::gradient(state.wn());
    let lap_sum = spectral::laplacian(&state.psi().add(state.wn()));
    let grads = dot_grads(&fz.grad_psi0, &fz.grad_psi0).add(&dot_grads(&grad_w0, &fz.grad_psi0));
    lap_sum.add(&grads).sub(&phi0.mul(&fz.omega0))
}

/// `h·w_ψ = W*(e^{Ψ₀}(e^{hψ} − 1))`, returned divided by `h`.
pub fn w_psi<T: Scalar>(state: &SimState<T>, psi: &RealField<T>, h: T) -> RealField<T> {
    let src = state.n().zip_map(psi, |n, p| n * (h * p).exp_m1() / h);
    spectral::convolve(state.params().kernel(), &src).expect("state and kernel share the grid")
}

/// `∇²w_ψ + ∇w_ψ·∇Ψ₀ + ∇ψ·∇Ψ₀ − ψΩ₀ − w_ψΩ₀`.
pub fn assemble_b<T: Scalar>(state: &SimState<T>, psi: &RealField<T>, h: T) -> RealField<T> {
    let (fz, _) = freeze(state);
    assemble_b_with(state, &fz, psi, h)
}

fn assemble_b_with<T: Scalar>(state: &SimState<T>, fz: &Frozen<T>, psi: &RealField<T>, h: T) -> RealField<T> {
    let wp = w_psi(state, psi, h);
    let drive = dot_grads(&spectral::gradient(&wp.add(psi)), &fz.grad_psi0);
    spectral::laplacian(&wp).add(&drive).sub(&psi.add(&wp).mul(&fz.omega0))
}

fn fixed_point_map<T: Scalar>(state: &SimState<T>, fz: &Frozen<T>, a: &RealField<T>, psi: &RealField<T>, h: T) -> RealField<T> {
    let b = assemble_b_with(state, fz, psi, h);
    let e2 = psi.map(|p| {
        let x = h * p;
        (x.exp_m1() - x) / h
    });
    let rhs = a.axpy(h, &b).sub(&e2);
    spectral::helmholtz_inverse(&rhs, h).expect("h checked positive")
}

fn d0<T: Scalar>(f: &RealField<T>) -> T {
    spectral::dnorms012(f)[0]
}

/// Weak residual of the step equation, normalized by `max(1, ‖(N₁−N₀)/h‖)`.
pub fn residual_cvda<T: Scalar>(
    n0: &RealField<T>,
    n1: &RealField<T>,
    h: T,
    params: &ModelParams<T>,
) -> Result<T, ThermoError> {
    let phi1 = thermo::potential_phi(n1, params)?;
    let om0 = thermo::omega(n0, params)?;
    let rate = n1.sub(n0).scale(T::one() / h);
    let defect = rate.sub(&spectral::div_a_grad(n0, &phi1)).add(&om0.mul(&phi1));
    Ok(defect.l2_norm() / rate.l2_norm().max(T::one()))
}

/// One implicit step; returns the new state and the inner-solve report.
pub fn jko_step<T: Scalar>(state: &SimState<T>, cfg: &JkoConfig<T>) -> Result<(SimState<T>, JkoStepReport), StepError> {
    let h = cfg.h;
    if !(h > T::zero() && h.is_finite()) {
        return Err(StepError::BadStep(h.as_f64()));
    }
    let s = &cfg.settings;
    let omega = s.relaxation;
    let (fz, phi0) = freeze(state);
    let a = assemble_a_with(state, &fz, &phi0);
    let mut psi = spectral::helmholtz_inverse(&a, h)?;
    let mut iters = 1usize;
    let mut last_incr = T::infinity();
    let mut growth_run = 0usize;
    loop {
        let image = fixed_point_map(state, &fz, &a, &psi, h);
        let next = if omega == T::one() { image } else { psi.axpy(omega, &image.sub(&psi)) };
        let incr = d0(&next.sub(&psi));
        iters += 1;
        if !incr.is_finite() || next.values().iter().any(|v| !v.is_finite()) {
            return Err(StepError::InnerDivergence { iters, increment: incr.as_f64() });
        }
        psi = next;
        if incr <= s.inner_tol {
            break;
        }
        growth_run = if incr > last_incr { growth_run + 1 } else { 0 };
        if growth_run >= DIVERGENCE_RUN {
            return Err(StepError::InnerDivergence { iters, increment: incr.as_f64() });
        }
        if iters >= s.max_inner {
            return Err(StepError::InnerNotConverged { iters, increment: incr.as_f64() });
        }
        last_incr = incr;
    }
    let defect = d0(&fixed_point_map(state, &fz, &a, &psi, h).sub(&psi));
    let psi1 = state.psi().axpy(h, &psi);
    let next = state.successor_log(psi1, h)?;
    let residual = residual_cvda(state.n(), next.n(), h, state.params())?;
    if residual > s.residual_tol {
        return Err(StepError::ResidualTooLarge { residual: residual.as_f64(), tol: s.residual_tol.as_f64() });
    }
    let before = spectral::dnorms012(state.psi());
    let after = spectral::dnorms012(next.psi());
    let report = JkoStepReport {
        inner_iters: iters,
        d0_psi: d0(&psi).as_f64(),
        residual: residual.as_f64(),
        norm_delta_d2: (after[2] - before[2]).as_f64(),
        norm_delta_d1: (after[1] - before[1]).as_f64(),
        defect: defect.as_f64(),
    };
    Ok((next, report))
}
