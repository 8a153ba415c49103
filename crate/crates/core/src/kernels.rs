//! Interaction kernels `W`: construction on the grid, Fourier modes and the
//! regularity/stability constants derived from them.
//!
//! Kernels are grid-resident. `v_m`, `‖W‖_{𝒟₂}` and `ϑ♯` are maxima over the
//! grid's wavenumbers, so they are grid-relative quantities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::Composite;
use crate::scalar::Scalar;
use crate::spectral::{self, Grid, RealField, SpectralError, Spectrum};

/// Modes or samples more negative than this count as negative.
pub const SIGN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("support radius {radius} + mollifier {mollifier} must stay below L/4 = {limit}")]
    RangeTooLarge { radius: f64, mollifier: f64, limit: f64 },
    #[error("mollifier width {0} must lie in (0, radius)")]
    BadMollifier(f64),
    #[error("Gaussian width {width} must be positive and below L/8 = {limit}")]
    WidthTooLarge { width: f64, limit: f64 },
    #[error("amplitude must be positive and finite, got {0}")]
    BadAmplitude(f64),
    #[error("kernel samples are not even: max |W(x) - W(-x)| = {0:e}")]
    NotEven(f64),
    #[error("sampled kernels cannot be rebuilt from a family description")]
    NotConstructible,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelFamily {
    SmoothedIndicator { amplitude: f64, radius: f64, mollifier_width: f64 },
    PositiveType { amplitude: f64, width: f64 },
    Zero,
    Sampled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelStats<T: Scalar> {
    /// `v_m = max_k |k|^m |Ŵ(k)|` for `m = 0..=4`.
    pub v: [T; 5],
    pub d2norm: T,
    /// `+∞` when no mode is negative.
    pub theta_sharp: T,
    pub positive_type: bool,
    pub pointwise_nonneg: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct HStabilityReport {
    pub pointwise_nonneg: bool,
    pub positive_type: bool,
    /// Either sufficient condition holds. `false` means undetermined, not unstable.
    pub certified: bool,
}

/// JSON view of a kernel's constants.
#[derive(Clone, Debug, Serialize)]
pub struct KernelInfo {
    pub kernel: KernelFamily,
    pub d: usize,
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "M")]
    pub points: usize,
    pub w: f64,
    pub range: Option<f64>,
    pub v: [f64; 5],
    pub d2norm: f64,
    /// `null` encodes `+∞`.
    pub theta_sharp: Option<f64>,
    pub positive_type: bool,
    pub pointwise_nonneg: bool,
    pub hstability_certified: bool,
    pub grid_relative: bool,
}

#[derive(Clone, Debug)]
pub struct Kernel<T: Scalar> {
    grid: Grid<T>,
    values: RealField<T>,
    spectrum: Spectrum<T>,
    symbol: Vec<T>,
    range: Option<T>,
    stats: KernelStats<T>,
    family: KernelFamily,
}

impl<T: Scalar> Kernel<T> {
    /// Builds a kernel from even samples. `range` is the support radius when known.
    pub fn from_values(values: RealField<T>, range: Option<T>) -> Result<Self, KernelError> {
        Self::assemble(values, range, KernelFamily::Sampled)
    }

    /// `W ≡ 0`.
    pub fn zero(grid: &Grid<T>) -> Self {
        Self::assemble(RealField::zeros(grid), Some(T::zero()), KernelFamily::Zero)
            .expect("zero kernel is even")
    }

    fn assemble(values: RealField<T>, range: Option<T>, family: KernelFamily) -> Result<Self, KernelError> {
        let grid = values.grid().clone();
        let scale = values.sup_norm().max(T::min_positive_value());
        let odd = (0..grid.len())
            .map(|i| (values.values()[i] - values.values()[grid.negated_index(i)]).abs())
            .fold(T::zero(), T::max);
        if odd > T::tol(SIGN_TOLERANCE) * scale {
            return Err(KernelError::NotEven((odd / scale).as_f64()));
        }
        let spectrum = spectral::forward(&values);
        let coeffs = spectrum.coeffs();
        let half = T::lit(0.5);
        let symbol: Vec<T> = (0..grid.len())
            .map(|i| half * (coeffs[i].re + coeffs[grid.negated_index(i)].re))
            .collect();
        let stats = compute_stats(&grid, &values, &symbol);
        Ok(Self { grid, values, spectrum, symbol, range, stats, family })
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &RealField<T> {
        &self.values
    }

    #[inline]
    pub fn spectrum(&self) -> &Spectrum<T> {
        &self.spectrum
    }

    /// Real, even `Ŵ(k)` per flat mode index.
    #[inline]
    pub fn symbol(&self) -> &[T] {
        &self.symbol
    }

    /// `w = Ŵ(0) = ∫W`.
    #[inline]
    pub fn w(&self) -> T {
        self.symbol[0]
    }

    #[inline]
    pub fn range(&self) -> Option<T> {
        self.range
    }

    #[inline]
    pub fn stats(&self) -> &KernelStats<T> {
        &self.stats
    }

    #[inline]
    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn info(&self) -> KernelInfo {
        let s = &self.stats;
        KernelInfo {
            kernel: self.family.clone(),
            d: self.grid.dim(),
            length: self.grid.length().as_f64(),
            points: self.grid.points(),
            w: self.w().as_f64(),
            range: self.range.map(Scalar::as_f64),
            v: s.v.map(Scalar::as_f64),
            d2norm: s.d2norm.as_f64(),
            theta_sharp: if s.theta_sharp.is_finite() { Some(s.theta_sharp.as_f64()) } else { None },
            positive_type: s.positive_type,
            pointwise_nonneg: s.pointwise_nonneg,
            hstability_certified: hstability_report(self).certified,
            grid_relative: true,
        }
    }
}

fn compute_stats<T: Scalar>(grid: &Grid<T>, values: &RealField<T>, symbol: &[T]) -> KernelStats<T> {
    let mut v = [T::zero(); 5];
    let mut d2 = T::zero();
    for (i, &s) in symbol.iter().enumerate() {
        let k = grid.k_squared(i).sqrt();
        for (m, vm) in v.iter_mut().enumerate() {
            *vm = vm.max(k.powi(m as i32) * s.abs());
        }
        d2 = d2 + k * k * s.abs();
    }
    let min_mode = symbol.iter().copied().fold(T::infinity(), T::min);
    KernelStats {
        v,
        d2norm: d2 / grid.volume(),
        theta_sharp: theta_sharp_from_modes(symbol),
        positive_type: min_mode >= -T::lit(SIGN_TOLERANCE),
        pointwise_nonneg: values.min() >= -T::lit(SIGN_TOLERANCE),
    }
}

/// `1/ϑ♯ = max{|Ŵ(k)| : Ŵ(k) < 0}`; `+∞` if no mode is negative.
pub fn theta_sharp_from_modes<T: Scalar>(modes: &[T]) -> T {
    let worst = modes
        .iter()
        .copied()
        .filter(|&m| m < -T::lit(SIGN_TOLERANCE))
        .fold(T::zero(), |a, m| a.max(-m));
    if worst > T::zero() {
        T::one() / worst
    } else {
        T::infinity()
    }
}

pub fn theta_sharp<T: Scalar>(kernel: &Kernel<T>) -> T {
    kernel.stats.theta_sharp
}

pub fn hstability_report<T: Scalar>(kernel: &Kernel<T>) -> HStabilityReport {
    let s = &kernel.stats;
    HStabilityReport {
        pointwise_nonneg: s.pointwise_nonneg,
        positive_type: s.positive_type,
        certified: s.pointwise_nonneg || s.positive_type,
    }
}

fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

/// Samples `f` at minimal-image offsets `n·dx`, `n ∈ [-M/2, M/2)` per axis,
/// so that evenness in `f` carries over exactly to the samples.
fn sample_even<T: Scalar>(grid: &Grid<T>, f: impl Fn([f64; 2]) -> f64) -> Result<RealField<T>, SpectralError> {
    let dx = grid.dx().as_f64();
    let values = (0..grid.len())
        .map(|i| {
            let n = grid.mode(i);
            T::lit(f([n[0] as f64 * dx, n[1] as f64 * dx]))
        })
        .collect();
    RealField::new(grid.clone(), values)
}

/// `A·(𝟙_{|x|≤a} * η_ε)` periodized, with `η_ε` the normalized `C^∞` bump of radius `ε`.
pub fn make_smoothed_indicator<T: Scalar>(
    grid: &Grid<T>,
    amplitude: f64,
    radius: f64,
    mollifier_width: f64,
) -> Result<Kernel<T>, KernelError> {
    if !(amplitude.is_finite() && amplitude > 0.0) {
        return Err(KernelError::BadAmplitude(amplitude));
    }
    if !(mollifier_width > 0.0 && mollifier_width < radius) {
        return Err(KernelError::BadMollifier(mollifier_width));
    }
    let limit = grid.length().as_f64() / 4.0;
    if radius + mollifier_width >= limit {
        return Err(KernelError::RangeTooLarge { radius, mollifier: mollifier_width, limit });
    }
    let (a, eps) = (radius, mollifier_width);
    let quad = Composite::new(20, 16);
    let values = if grid.dim() == 1 {
        let norm = quad.integrate(-1.0, 1.0, bump);
        let lower = |u: f64| if u <= -1.0 { 0.0 } else { quad.integrate(-1.0, u, bump) / norm };
        // reflect so that the samples inherit F(-u) = 1 - F(u) exactly
        let cdf = |u: f64| if u > 0.0 { 1.0 - lower(-u) } else { lower(u) };
        sample_even(grid, |x| amplitude * (cdf((x[0] + a) / eps) - cdf((x[0] - a) / eps)))?
    } else {
        let norm = std::f64::consts::TAU * quad.integrate(0.0, 1.0, |r| bump(r) * r);
        sample_even(grid, |x| {
            let rho = x[0].hypot(x[1]);
            if rho >= a + eps {
                return 0.0;
            }
            if rho <= a - eps {
                return amplitude;
            }
            // angular measure of the circle of radius r about x inside the disk |y| ≤ a
            let arc = |u: f64| {
                let r = u * eps;
                if rho == 0.0 {
                    return if r <= a { std::f64::consts::TAU } else { 0.0 };
                }
                let c = (rho * rho + r * r - a * a) / (2.0 * rho * r);
                if c <= -1.0 {
                    std::f64::consts::TAU
                } else if c >= 1.0 {
                    0.0
                } else {
                    2.0 * c.acos()
                }
            };
            let mut cuts = vec![0.0, 1.0];
            for kink in [(rho - a).abs() / eps, (rho + a) / eps] {
                if kink > 0.0 && kink < 1.0 {
                    cuts.push(kink);
                }
            }
            cuts.sort_by(f64::total_cmp);
            let total: f64 = cuts
                .windows(2)
                .map(|w| quad.integrate(w[0], w[1], |u| bump(u) * arc(u) * u))
                .sum();
            amplitude * total / norm
        })?
    };
    Kernel::assemble(
        values,
        Some(T::lit(a + eps)),
        KernelFamily::SmoothedIndicator { amplitude, radius, mollifier_width },
    )
}

/// Builds the kernel a family description names on `grid`.
pub fn build_kernel<T: Scalar>(family: &KernelFamily, grid: &Grid<T>) -> Result<Kernel<T>, KernelError> {
    match *family {
        KernelFamily::SmoothedIndicator { amplitude, radius, mollifier_width } => {
            make_smoothed_indicator(grid, amplitude, radius, mollifier_width)
        }
        KernelFamily::PositiveType { amplitude, width } => make_positive_type(grid, amplitude, width),
        KernelFamily::Zero => Ok(Kernel::zero(grid)),
        KernelFamily::Sampled => Err(KernelError::NotConstructible),
    }
}

/// Periodized Gaussian `A·exp(-|x|²/(2s²))`; every Fourier mode is positive.
pub fn make_positive_type<T: Scalar>(grid: &Grid<T>, amplitude: f64, width: f64) -> Result<Kernel<T>, KernelError> {
    if !(amplitude.is_finite() && amplitude > 0.0) {
        return Err(KernelError::BadAmplitude(amplitude));
    }
    let l = grid.length().as_f64();
    let limit = l / 8.0;
    if !(width > 0.0 && width < limit) {
        return Err(KernelError::WidthTooLarge { width, limit });
    }
    let reach = (10.0 * width / l).ceil() as i64 + 1;
    let dim = grid.dim();
    let values = sample_even(grid, |x| {
        let mut total = 0.0;
        let second = if dim == 2 { reach } else { 0 };
        for n0 in -reach..=reach {
            for n1 in -second..=second {
                let y0 = x[0] + n0 as f64 * l;
                let y1 = x[1] + n1 as f64 * l;
                total += (-(y0 * y0 + y1 * y1) / (2.0 * width * width)).exp();
            }
        }
        amplitude * total
    })?;
    Kernel::assemble(values, None, KernelFamily::PositiveType { amplitude, width })
}
