//! Free energies, the transport potential `Φ_N`, the mobility `Ω_N`, the
//! weighted metric form and the relaxation-rate constants.
//!
//! The entropy integrand `N log N − (1+μ)N` is minimized at `N = e^μ` with
//! value `−e^μ` per unit volume (direct evaluation). Some written accounts
//! quote `e^{−μ}` for that minimum; the code and tests use `−e^μ`.

use std::sync::Arc;

use num_complex::Complex;
use thiserror::Error;

use crate::kernels::Kernel;
use crate::scalar::Scalar;
use crate::spectral::{self, Grid, RealField, SpectralError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermoError {
    #[error("density is not positive at index {index} (value {value:e})")]
    NonpositiveDensity { index: usize, value: f64 },
    #[error("uniform-density solve did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("kappa must lie in (0, 1/2), got {0}")]
    BadKappa(f64),
    #[error("uniform density must be positive and finite, got {0}")]
    BadDensity(f64),
    #[error("chemical potential must be finite, got {0}")]
    BadChemicalPotential(f64),
    #[error("kernel integral w = {0} is negative; H-stable kernels have w >= 0")]
    NegativeW(f64),
    #[error("interpolation parameter {0} outside [0, 1]")]
    BadInterpolation(f64),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Problem definition: kernel, chemical potential, uniform density and corridor width.
#[derive(Clone, Debug)]
pub struct ModelParams<T: Scalar> {
    kernel: Arc<Kernel<T>>,
    mu: T,
    m0: T,
    kappa: T,
}

fn check_kappa<T: Scalar>(kappa: T) -> Result<(), ThermoError> {
    if kappa > T::zero() && kappa < T::lit(0.5) {
        Ok(())
    } else {
        Err(ThermoError::BadKappa(kappa.as_f64()))
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Resolves `M₀` from `μ` through `M₀ = e^{μ − wM₀}`.
    pub fn from_mu(kernel: Arc<Kernel<T>>, mu: T, kappa: T) -> Result<Self, ThermoError> {
        check_kappa(kappa)?;
        if !mu.is_finite() {
            return Err(ThermoError::BadChemicalPotential(mu.as_f64()));
        }
        let m0 = solve_uniform_density(mu, kernel.w())?;
        Ok(Self { kernel, mu, m0, kappa })
    }

    /// Resolves `μ = log M₀ + wM₀`.
    pub fn from_m0(kernel: Arc<Kernel<T>>, m0: T, kappa: T) -> Result<Self, ThermoError> {
        check_kappa(kappa)?;
        if !(m0.is_finite() && m0 > T::zero()) {
            return Err(ThermoError::BadDensity(m0.as_f64()));
        }
        let mu = chemical_potential_for(m0, kernel.w());
        Ok(Self { kernel, mu, m0, kappa })
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        self.kernel.grid()
    }

    #[inline]
    pub fn kernel(&self) -> &Kernel<T> {
        &self.kernel
    }

    pub fn kernel_arc(&self) -> Arc<Kernel<T>> {
        Arc::clone(&self.kernel)
    }

    #[inline]
    pub fn mu(&self) -> T {
        self.mu
    }

    #[inline]
    pub fn m0(&self) -> T {
        self.m0
    }

    #[inline]
    pub fn kappa(&self) -> T {
        self.kappa
    }

    /// `|M₀ − e^{μ − wM₀}|`.
    pub fn kirkwood_monroe_residual(&self) -> T {
        (self.m0 - (self.mu - self.kernel.w() * self.m0).exp()).abs()
    }

    /// Corridor bounds `(κM₀, M₀/κ)`.
    pub fn corridor(&self) -> (T, T) {
        (self.kappa * self.m0, self.m0 / self.kappa)
    }

    pub fn in_corridor(&self, n: &RealField<T>) -> bool {
        let (lo, hi) = self.corridor();
        n.values().iter().all(|&v| v > lo && v < hi)
    }

    /// The uniform equilibrium `N ≡ M₀`.
    pub fn uniform_state(&self) -> RealField<T> {
        RealField::constant(self.grid(), self.m0)
    }
}

/// `μ = log M₀ + wM₀`.
pub fn chemical_potential_for<T: Scalar>(m0: T, w: T) -> T {
    m0.ln() + w * m0
}

/// Positive root of `x e^{wx} = e^μ`.
///
/// Newton on `g(y) = y + w e^y − μ` in `y = log x`, safeguarded by bisection
/// on the bracket `[μ − w e^μ, μ]`.
pub fn solve_uniform_density<T: Scalar>(mu: T, w: T) -> Result<T, ThermoError> {
    const MAX_ITER: usize = 200;
    if w < T::zero() {
        return Err(ThermoError::NegativeW(w.as_f64()));
    }
    if !mu.is_finite() {
        return Err(ThermoError::BadChemicalPotential(mu.as_f64()));
    }
    if w == T::zero() {
        return Ok(mu.exp());
    }
    let tol = T::tol(1e-14);
    let mut hi = mu;
    let mut lo = mu - w * mu.exp();
    let mut y = mu;
    for _ in 0..MAX_ITER {
        let x = y.exp();
        let resid = x - (mu - w * x).exp();
        if resid.abs() <= tol * x.max(T::one()) {
            return Ok(x);
        }
        let g = y + w * x - mu;
        if g > T::zero() {
            hi = y;
        } else {
            lo = y;
        }
        let newton = y - g / (T::one() + w * x);
        y = if newton > lo && newton < hi { newton } else { T::lit(0.5) * (lo + hi) };
        if hi - lo <= T::epsilon() * hi.abs().max(T::one()) {
            let x = y.exp();
            return Ok(x);
        }
    }
    Err(ThermoError::NoConvergence(MAX_ITER))
}

pub(crate) fn ensure_positive<T: Scalar>(n: &RealField<T>) -> Result<(), ThermoError> {
    match n.values().iter().position(|&v| !(v > T::zero())) {
        Some(index) => Err(ThermoError::NonpositiveDensity { index, value: n.values()[index].as_f64() }),
        None => Ok(()),
    }
}

/// `½∫∫W(x−y)f(x)f(y) = (1/(2L^d)) Σ_k Ŵ(k)|f̂(k)|²`.
pub fn interaction_energy<T: Scalar>(f: &RealField<T>, kernel: &Kernel<T>) -> Result<T, ThermoError> {
    kernel.grid().check_same(f.grid())?;
    let spec = spectral::forward(f);
    let sum: T = spec
        .coeffs()
        .iter()
        .zip(kernel.symbol())
        .map(|(c, &w): (&Complex<T>, &T)| w * c.norm_sqr())
        .sum();
    Ok(T::lit(0.5) * sum / f.grid().volume())
}

/// `𝒢_μ(N) = ∫(N log N − (1+μ)N) + ½∫∫W N N`.
pub fn free_energy_grand<T: Scalar>(n: &RealField<T>, params: &ModelParams<T>) -> Result<T, ThermoError> {
    ensure_positive(n)?;
    let one_mu = T::one() + params.mu;
    let local: T = n.values().iter().map(|&v| v * v.ln() - one_mu * v).sum::<T>() * n.grid().cell_volume();
    Ok(local + interaction_energy(n, params.kernel())?)
}

/// `ℱ(N) = ∫(N log N − N) + ½∫∫W N N`.
pub fn free_energy_canonical<T: Scalar>(n: &RealField<T>, kernel: &Kernel<T>) -> Result<T, ThermoError> {
    ensure_positive(n)?;
    let local: T = n.values().iter().map(|&v| v * v.ln() - v).sum::<T>() * n.grid().cell_volume();
    Ok(local + interaction_energy(n, kernel)?)
}

/// `(1+u) log(1+u) − u`, accurate near `u = 0`.
pub fn relative_entropy_density<T: Scalar>(u: T) -> T {
    if u.abs() < T::lit(1e-3) {
        // Σ_{n≥2} (−u)^n / (n(n−1))
        let mut term = u * u;
        let mut acc = T::zero();
        for n in 2..10 {
            let nf = T::lit(n as f64);
            acc = acc + term / (nf * (nf - T::one()));
            term = -term * u;
        }
        acc
    } else {
        (T::one() + u) * u.ln_1p() - u
    }
}

/// Free-energy excess over the uniform state at `level`, assembled without
/// cancellation: `∫ level·φ(N/level − 1) + ½∫∫W n n`, `n = N − level`.
///
/// Equals `𝒢_μ(N) − 𝒢_μ(M₀)` when `level = M₀`, and `ℱ(N) − ℱ(ϑ)` when
/// `level = ϑ` is the mean of `N`.
pub fn gap_about<T: Scalar>(n: &RealField<T>, level: T, kernel: &Kernel<T>) -> Result<T, ThermoError> {
    ensure_positive(n)?;
    let local: T = n
        .values()
        .iter()
        .map(|&v| level * relative_entropy_density(v / level - T::one()))
        .sum::<T>()
        * n.grid().cell_volume();
    let dev = n.map(|v| v - level);
    Ok(local + interaction_energy(&dev, kernel)?)
}

/// `𝒢_μ(N) − 𝒢_μ(M₀)`.
pub fn free_energy_gap<T: Scalar>(n: &RealField<T>, params: &ModelParams<T>) -> Result<T, ThermoError> {
    gap_about(n, params.m0, params.kernel())
}

/// `Φ_N = log N − μ + W*N`.
pub fn potential_phi<T: Scalar>(n: &RealField<T>, params: &ModelParams<T>) -> Result<RealField<T>, ThermoError> {
    ensure_positive(n)?;
    let wn = spectral::convolve(params.kernel(), n)?;
    Ok(phi_from_parts(n, &wn, params.mu))
}

pub(crate) fn phi_from_parts<T: Scalar>(n: &RealField<T>, wn: &RealField<T>, mu: T) -> RealField<T> {
    n.zip_map(wn, |v, w| v.ln() - mu + w)
}

/// `sinh(x)/x` with the series `1 + x²/6 + x⁴/120` for `|x| < 1e−4`.
pub fn sinhc<T: Scalar>(x: T) -> T {
    if x.abs() < T::lit(1e-4) {
        let x2 = x * x;
        T::one() + x2 / T::lit(6.0) + x2 * x2 / T::lit(120.0)
    } else {
        x.sinh() / x
    }
}

/// Mobility `Ω_N = N^{1/2} sinhc(Φ_N/2)`.
pub fn omega<T: Scalar>(n: &RealField<T>, params: &ModelParams<T>) -> Result<RealField<T>, ThermoError> {
    let phi = potential_phi(n, params)?;
    Ok(omega_from_phi(n, &phi))
}

pub fn omega_from_phi<T: Scalar>(n: &RealField<T>, phi: &RealField<T>) -> RealField<T> {
    let half = T::lit(0.5);
    n.zip_map(phi, |v, p| v.sqrt() * sinhc(half * p))
}

/// `⟨⟨∇φ,∇ψ⟩⟩_N = ∫ N ∇φ·∇ψ + Ω_N φψ`.
pub fn weighted_inner<T: Scalar>(
    n: &RealField<T>,
    params: &ModelParams<T>,
    phi: &RealField<T>,
    psi: &RealField<T>,
) -> Result<T, ThermoError> {
    let om = omega(n, params)?;
    Ok(weighted_inner_with(n, &om, phi, psi))
}

pub(crate) fn weighted_inner_with<T: Scalar>(
    n: &RealField<T>,
    om: &RealField<T>,
    phi: &RealField<T>,
    psi: &RealField<T>,
) -> T {
    let grad = spectral::grad_dot(phi, psi);
    let cell = n.grid().cell_volume();
    (0..n.values().len())
        .map(|i| n.values()[i] * grad.values()[i] + om.values()[i] * phi.values()[i] * psi.values()[i])
        .sum::<T>()
        * cell
}

/// Instantaneous dissipation `⟨⟨∇Φ_N,∇Φ_N⟩⟩_N`.
pub fn dissipation<T: Scalar>(n: &RealField<T>, params: &ModelParams<T>) -> Result<T, ThermoError> {
    let phi = potential_phi(n, params)?;
    let om = omega_from_phi(n, &phi);
    Ok(weighted_inner_with(n, &om, &phi, &phi))
}

/// `d²𝒢_μ(N_s)/ds² = ∫R²/N_s + ∫∫W R R`, `N_s = (1−s)N_A + sN_B`, `R = N_B − N_A`.
pub fn convexity_quadratic_form<T: Scalar>(
    n_a: &RealField<T>,
    n_b: &RealField<T>,
    s: T,
    params: &ModelParams<T>,
) -> Result<T, ThermoError> {
    if !(s >= T::zero() && s <= T::one()) {
        return Err(ThermoError::BadInterpolation(s.as_f64()));
    }
    ensure_positive(n_a)?;
    ensure_positive(n_b)?;
    let r = n_b.sub(n_a);
    let ns = n_a.zip_map(n_b, |a, b| (T::one() - s) * a + s * b);
    let local: T = r.values().iter().zip(ns.values()).map(|(&r, &n)| r * r / n).sum::<T>() * r.grid().cell_volume();
    Ok(local + T::lit(2.0) * interaction_energy(&r, params.kernel())?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateConstants<T> {
    /// `σ = ½(κ/M₀ − 1/ϑ♯)`.
    pub sigma: T,
    /// `g² = (κM₀)^{−1/2}`.
    pub gsq: T,
    /// `λ† = σ/g²`, clamped at zero.
    pub lambda_dagger: T,
    /// `σ > 0`; when false `λ†` was clamped and the decay bound does not apply.
    pub convex: bool,
}

pub fn rate_constants_for<T: Scalar>(m0: T, kappa: T, theta_sharp: T) -> RateConstants<T> {
    let inv_theta = if theta_sharp.is_infinite() { T::zero() } else { T::one() / theta_sharp };
    let sigma = T::lit(0.5) * (kappa / m0 - inv_theta);
    let gsq = (kappa * m0).powf(T::lit(-0.5));
    let convex = sigma > T::zero();
    RateConstants { sigma, gsq, lambda_dagger: if convex { sigma / gsq } else { T::zero() }, convex }
}

pub fn rate_constants<T: Scalar>(params: &ModelParams<T>) -> RateConstants<T> {
    rate_constants_for(params.m0, params.kappa, params.kernel().stats().theta_sharp)
}
