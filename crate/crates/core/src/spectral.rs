//! Fourier-space machinery on the periodic box `[0, L)^d`.
//!
//! Coefficients use the continuum normalization
//! `f̂(k) = ∫ f(x) e^{-ik·x} dx`, i.e. the DFT scaled by the cell volume
//! `(L/M)^d`, so that `f(x) = L^{-d} Σ_k f̂(k) e^{ik·x}`.
//!
//! Differential operators act per axis with the Nyquist row zeroed, which
//! keeps odd derivatives real and makes `laplacian = divergence ∘ gradient`
//! hold exactly on the grid.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::kernels::Kernel;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("unsupported dimension {0} (expected 1 or 2)")]
    UnsupportedDimension(usize),
    #[error("grid size {0} must be a power of two and at least 8")]
    BadGridSize(usize),
    #[error("side length must be positive and finite")]
    BadLength,
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("spectrum is not Hermitian: relative imaginary residue {0:e}")]
    NonHermitianInput(f64),
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("Helmholtz parameter must be positive, got {0}")]
    NonpositiveH(f64),
    #[error("norm order {0} exceeds the supported maximum of 4")]
    NormOrderTooLarge(u32),
}

/// Highest `m` accepted by [`dnorm`].
pub const MAX_NORM_ORDER: u32 = 4;

struct GridData<T: Scalar> {
    dim: usize,
    length: T,
    points: usize,
    forward: Arc<dyn Fft<T>>,
    backward: Arc<dyn Fft<T>>,
    modes: Vec<[i64; 2]>,
    wavevectors: Vec<[T; 2]>,
    // per-axis differentiation symbols (Nyquist zeroed)
    deriv: Vec<[T; 2]>,
    ksq: Vec<T>,
    // -laplacian symbol, equal to |deriv|^2
    lap: Vec<T>,
}

/// Uniform collocation grid on the `d`-torus of side `L` with `M` points per axis.
#[derive(Clone)]
pub struct Grid<T: Scalar> {
    inner: Arc<GridData<T>>,
}

impl<T: Scalar> fmt::Debug for Grid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.inner.dim)
            .field("length", &self.inner.length)
            .field("points", &self.inner.points)
            .finish()
    }
}

impl<T: Scalar> PartialEq for Grid<T> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.dim == other.inner.dim
                && self.inner.points == other.inner.points
                && self.inner.length == other.inner.length)
    }
}

impl<T: Scalar> Grid<T> {
    pub fn new(dim: usize, length: T, points: usize) -> Result<Self, SpectralError> {
        if !(1..=2).contains(&dim) {
            return Err(SpectralError::UnsupportedDimension(dim));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(SpectralError::BadGridSize(points));
        }
        if !(length.is_finite() && length > T::zero()) {
            return Err(SpectralError::BadLength);
        }

        let mut planner = FftPlanner::<T>::new();
        let forward = planner.plan_fft_forward(points);
        let backward = planner.plan_fft_inverse(points);

        let half = (points / 2) as i64;
        let signed = |i: usize| -> i64 {
            let i = i as i64;
            if i < half {
                i
            } else {
                i - points as i64
            }
        };
        let unit = T::TAU() / length;
        let total = points.pow(dim as u32);
        let mut modes = Vec::with_capacity(total);
        for flat in 0..total {
            let mode = if dim == 1 {
                [signed(flat), 0]
            } else {
                [signed(flat / points), signed(flat % points)]
            };
            modes.push(mode);
        }
        let wavevectors: Vec<[T; 2]> = modes
            .iter()
            .map(|m| [unit * T::lit(m[0] as f64), unit * T::lit(m[1] as f64)])
            .collect();
        let deriv: Vec<[T; 2]> = modes
            .iter()
            .zip(&wavevectors)
            .map(|(m, k)| {
                let mut d = *k;
                for axis in 0..2 {
                    if m[axis] == -half {
                        d[axis] = T::zero();
                    }
                }
                d
            })
            .collect();
        let ksq = wavevectors.iter().map(|k| k[0] * k[0] + k[1] * k[1]).collect();
        let lap = deriv.iter().map(|k| k[0] * k[0] + k[1] * k[1]).collect();

        Ok(Self {
            inner: Arc::new(GridData {
                dim,
                length,
                points,
                forward,
                backward,
                modes,
                wavevectors,
                deriv,
                ksq,
                lap,
            }),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    #[inline]
    pub fn length(&self) -> T {
        self.inner.length
    }

    /// Points per axis.
    #[inline]
    pub fn points(&self) -> usize {
        self.inner.points
    }

    /// Total number of samples, `M^d`.
    #[inline]
    pub fn len(&self) -> usize {
        self.inner.modes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dx(&self) -> T {
        self.inner.length / T::lit(self.inner.points as f64)
    }

    /// `dx^d`, the collocation quadrature weight.
    #[inline]
    pub fn cell_volume(&self) -> T {
        self.dx().powi(self.inner.dim as i32)
    }

    /// `L^d`.
    #[inline]
    pub fn volume(&self) -> T {
        self.inner.length.powi(self.inner.dim as i32)
    }

    /// Collocation point of a flat index. The unused second coordinate is zero in 1-D.
    pub fn coords(&self, flat: usize) -> [T; 2] {
        let dx = self.dx();
        let m = self.inner.points;
        if self.inner.dim == 1 {
            [dx * T::lit(flat as f64), T::zero()]
        } else {
            [dx * T::lit((flat / m) as f64), dx * T::lit((flat % m) as f64)]
        }
    }

    /// Signed mode numbers `n` with `k = 2πn/L`.
    #[inline]
    pub fn mode(&self, flat: usize) -> [i64; 2] {
        self.inner.modes[flat]
    }

    #[inline]
    pub fn wavevector(&self, flat: usize) -> [T; 2] {
        self.inner.wavevectors[flat]
    }

    /// `|k|^2` including the Nyquist rows.
    #[inline]
    pub fn k_squared(&self, flat: usize) -> T {
        self.inner.ksq[flat]
    }

    /// Symbol of `-∇²` as used by [`laplacian`] and [`helmholtz_inverse`].
    #[inline]
    pub fn laplacian_symbol(&self, flat: usize) -> T {
        self.inner.lap[flat]
    }

    /// Largest `|k|^2` on the grid.
    pub fn max_k_squared(&self) -> T {
        self.inner.ksq.iter().fold(T::zero(), |a, &b| a.max(b))
    }

    pub fn is_nyquist(&self, flat: usize) -> bool {
        let half = (self.inner.points / 2) as i64;
        let m = self.inner.modes[flat];
        m[0] == -half || (self.inner.dim == 2 && m[1] == -half)
    }

    /// Flat index of a signed mode number (wrapped onto the grid).
    pub fn index_of_mode(&self, mode: [i64; 2]) -> usize {
        let m = self.inner.points as i64;
        let wrap = |n: i64| n.rem_euclid(m) as usize;
        if self.inner.dim == 1 {
            wrap(mode[0])
        } else {
            wrap(mode[0]) * self.inner.points + wrap(mode[1])
        }
    }

    /// Flat index of `-k` for the mode at `flat`.
    pub fn negated_index(&self, flat: usize) -> usize {
        let m = self.inner.modes[flat];
        self.index_of_mode([-m[0], -m[1]])
    }

    fn transform(&self, buf: &mut [Complex<T>], inverse: bool) {
        let plan = if inverse { &self.inner.backward } else { &self.inner.forward };
        plan.process(buf);
        if self.inner.dim == 2 {
            let m = self.inner.points;
            transpose_square(buf, m);
            plan.process(buf);
            transpose_square(buf, m);
        }
    }

    pub(crate) fn check_same(&self, other: &Grid<T>) -> Result<(), SpectralError> {
        if self == other {
            Ok(())
        } else {
            Err(SpectralError::GridMismatch)
        }
    }
}

fn transpose_square<T: Copy>(buf: &mut [T], m: usize) {
    for i in 0..m {
        for j in (i + 1)..m {
            buf.swap(i * m + j, j * m + i);
        }
    }
}

/// Real samples on the collocation grid, row-major.
#[derive(Clone, Debug)]
pub struct RealField<T: Scalar> {
    grid: Grid<T>,
    values: Vec<T>,
}

impl<T: Scalar> RealField<T> {
    pub fn new(grid: Grid<T>, values: Vec<T>) -> Result<Self, SpectralError> {
        if values.len() != grid.len() {
            return Err(SpectralError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    /// Skips the finiteness scan; used for results of operations on valid fields.
    pub(crate) fn from_raw(grid: Grid<T>, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: &Grid<T>, value: T) -> Self {
        Self::from_raw(grid.clone(), vec![value; grid.len()])
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        Self::constant(grid, T::zero())
    }

    /// Samples `f` at the collocation points.
    pub fn from_fn(grid: &Grid<T>, f: impl Fn([T; 2]) -> T) -> Result<Self, SpectralError> {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self::new(grid.clone(), values)
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination. Panics if the grids differ in size.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "zip_map on mismatched grids");
        Self::from_raw(
            self.grid.clone(),
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: T, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + s * b)
    }

    /// Collocation quadrature `Σ f dx^d`.
    pub fn integral(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::lit(self.values.len() as f64)
    }

    pub fn dot(&self, other: &Self) -> T {
        self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum::<T>()
            * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |a, v| a.max(v.abs()))
    }

    pub fn is_positive(&self) -> bool {
        self.values.iter().all(|&v| v > T::zero())
    }
}

/// Fourier coefficients under the continuum normalization.
#[derive(Clone, Debug)]
pub struct Spectrum<T: Scalar> {
    grid: Grid<T>,
    coeffs: Vec<Complex<T>>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn new(grid: Grid<T>, coeffs: Vec<Complex<T>>) -> Result<Self, SpectralError> {
        if coeffs.len() != grid.len() {
            return Err(SpectralError::LengthMismatch { expected: grid.len(), got: coeffs.len() });
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        Self { grid: grid.clone(), coeffs: vec![Complex::new(T::zero(), T::zero()); grid.len()] }
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.coeffs
    }

    /// Coefficient at a signed mode number.
    pub fn at(&self, mode: [i64; 2]) -> Complex<T> {
        self.coeffs[self.grid.index_of_mode(mode)]
    }

    /// Largest `|f̂(-k) - conj f̂(k)|` relative to the largest coefficient.
    pub fn hermitian_defect(&self) -> T {
        let scale = self.coeffs.iter().fold(T::zero(), |a, c| a.max(c.norm()));
        if scale == T::zero() {
            return T::zero();
        }
        let worst = (0..self.coeffs.len()).fold(T::zero(), |a, i| {
            let j = self.grid.negated_index(i);
            a.max((self.coeffs[j] - self.coeffs[i].conj()).norm())
        });
        worst / scale
    }

    fn scaled(mut self, f: impl Fn(usize) -> Complex<T>) -> Self {
        for (i, c) in self.coeffs.iter_mut().enumerate() {
            *c = *c * f(i);
        }
        self
    }

    /// Inverse transform keeping only the real part.
    pub(crate) fn into_field_lossy(self) -> RealField<T> {
        let grid = self.grid.clone();
        let values = inverse_complex(self).into_iter().map(|c| c.re).collect();
        RealField::from_raw(grid, values)
    }
}

pub fn forward<T: Scalar>(field: &RealField<T>) -> Spectrum<T> {
    let grid = field.grid.clone();
    let w = grid.cell_volume();
    let mut buf: Vec<Complex<T>> = field.values.iter().map(|&v| Complex::new(v, T::zero())).collect();
    grid.transform(&mut buf, false);
    for c in buf.iter_mut() {
        *c = *c * w;
    }
    Spectrum { grid, coeffs: buf }
}

fn inverse_complex<T: Scalar>(spec: Spectrum<T>) -> Vec<Complex<T>> {
    let Spectrum { grid, mut coeffs } = spec;
    grid.transform(&mut coeffs, true);
    let s = T::one() / grid.volume();
    for c in coeffs.iter_mut() {
        *c = *c * s;
    }
    coeffs
}

/// Inverse transform. Imaginary residue above `1e-12` relative to the real
/// part signals a non-Hermitian input.
pub fn inverse<T: Scalar>(spec: &Spectrum<T>) -> Result<RealField<T>, SpectralError> {
    let grid = spec.grid.clone();
    let raw = inverse_complex(spec.clone());
    let re_max = raw.iter().fold(T::zero(), |a, c| a.max(c.re.abs()));
    let im_max = raw.iter().fold(T::zero(), |a, c| a.max(c.im.abs()));
    if im_max > T::zero() {
        let rel = if re_max > T::zero() { im_max / re_max } else { T::infinity() };
        if rel > T::tol(1e-12) {
            return Err(SpectralError::NonHermitianInput(rel.as_f64()));
        }
    }
    RealField::new(grid, raw.into_iter().map(|c| c.re).collect())
}

/// Multiplies every coefficient by a real symbol and transforms back.
pub fn apply_symbol<T: Scalar>(field: &RealField<T>, symbol: impl Fn(usize) -> T) -> RealField<T> {
    forward(field).scaled(|i| Complex::new(symbol(i), T::zero())).into_field_lossy()
}

/// Spectral gradient, one field per axis.
pub fn gradient<T: Scalar>(field: &RealField<T>) -> Vec<RealField<T>> {
    let spec = forward(field);
    let grid = field.grid.clone();
    (0..grid.dim())
        .map(|axis| {
            spec.clone()
                .scaled(|i| Complex::new(T::zero(), grid.inner.deriv[i][axis]))
                .into_field_lossy()
        })
        .collect()
}

/// Spectral divergence of a vector field given per axis.
pub fn divergence<T: Scalar>(components: &[RealField<T>]) -> RealField<T> {
    let grid = components[0].grid.clone();
    assert_eq!(components.len(), grid.dim(), "divergence needs one component per axis");
    let mut acc = Spectrum::zeros(&grid);
    for (axis, comp) in components.iter().enumerate() {
        let s = forward(comp);
        for (i, (a, c)) in acc.coeffs.iter_mut().zip(&s.coeffs).enumerate() {
            *a = *a + *c * Complex::new(T::zero(), grid.inner.deriv[i][axis]);
        }
    }
    acc.into_field_lossy()
}

pub fn laplacian<T: Scalar>(field: &RealField<T>) -> RealField<T> {
    let grid = field.grid.clone();
    apply_symbol(field, |i| -grid.inner.lap[i])
}

/// `∇·(a ∇b)` with both derivatives spectral and the product pointwise.
pub fn div_a_grad<T: Scalar>(a: &RealField<T>, b: &RealField<T>) -> RealField<T> {
    let flux: Vec<RealField<T>> = gradient(b).iter().map(|g| g.mul(a)).collect();
    divergence(&flux)
}

/// `Σ_axis ∇f·∇g` pointwise.
pub fn grad_dot<T: Scalar>(f: &RealField<T>, g: &RealField<T>) -> RealField<T> {
    let gf = gradient(f);
    let gg = gradient(g);
    let mut out = RealField::zeros(f.grid());
    for (a, b) in gf.iter().zip(&gg) {
        out = out.add(&a.mul(b));
    }
    out
}

pub fn convolve<T: Scalar>(kernel: &Kernel<T>, field: &RealField<T>) -> Result<RealField<T>, SpectralError> {
    kernel.grid().check_same(field.grid())?;
    let symbol = kernel.symbol();
    Ok(apply_symbol(field, |i| symbol[i]))
}

/// `(1 - h∇²)^{-1} f`.
pub fn helmholtz_inverse<T: Scalar>(field: &RealField<T>, h: T) -> Result<RealField<T>, SpectralError> {
    if !(h > T::zero()) {
        return Err(SpectralError::NonpositiveH(h.as_f64()));
    }
    let grid = field.grid.clone();
    Ok(apply_symbol(field, |i| T::one() / (T::one() + h * grid.inner.lap[i])))
}

/// `‖f‖_{𝒟_m} = L^{-d} Σ_k |k|^m |f̂(k)|`, `|k|` the Euclidean modulus.
pub fn dnorm<T: Scalar>(field: &RealField<T>, m: u32) -> Result<T, SpectralError> {
    dnorm_spectrum(&forward(field), m)
}

pub fn dnorm_spectrum<T: Scalar>(spec: &Spectrum<T>, m: u32) -> Result<T, SpectralError> {
    if m > MAX_NORM_ORDER {
        return Err(SpectralError::NormOrderTooLarge(m));
    }
    let grid = &spec.grid;
    let sum: T = spec
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let weight = if m == 0 { T::one() } else { grid.inner.ksq[i].sqrt().powi(m as i32) };
            weight * c.norm()
        })
        .sum();
    Ok(sum / grid.volume())
}

/// `𝒟_0`, `𝒟_1`, `𝒟_2` norms from a single transform.
pub fn dnorms012<T: Scalar>(field: &RealField<T>) -> [T; 3] {
    let spec = forward(field);
    let grid = &spec.grid;
    let mut acc = [T::zero(); 3];
    for (i, c) in spec.coeffs.iter().enumerate() {
        let a = c.norm();
        let ksq = grid.inner.ksq[i];
        acc[0] = acc[0] + a;
        acc[1] = acc[1] + ksq.sqrt() * a;
        acc[2] = acc[2] + ksq * a;
    }
    let v = grid.volume();
    [acc[0] / v, acc[1] / v, acc[2] / v]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(m: usize, l: f64) -> Grid<f64> {
        Grid::new(1, l, m).unwrap()
    }

    fn smooth(grid: &Grid<f64>) -> RealField<f64> {
        let l = grid.length();
        RealField::from_fn(grid, |x| {
            let t = std::f64::consts::TAU * x[0] / l;
            let s = std::f64::consts::TAU * x[1] / l;
            (t.sin() + 0.3 * (2.0 * t + s).cos()).exp()
        })
        .unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert_eq!(Grid::<f64>::new(3, 1.0, 8).unwrap_err(), SpectralError::UnsupportedDimension(3));
        assert_eq!(Grid::<f64>::new(1, 1.0, 12).unwrap_err(), SpectralError::BadGridSize(12));
        assert_eq!(Grid::<f64>::new(1, 1.0, 4).unwrap_err(), SpectralError::BadGridSize(4));
        assert_eq!(Grid::<f64>::new(1, -1.0, 8).unwrap_err(), SpectralError::BadLength);
    }

    #[test]
    fn constant_field_lives_in_zero_mode() {
        let g = grid1(16, 3.0);
        let s = forward(&RealField::constant(&g, 2.5));
        assert!((s.at([0, 0]).re - 2.5 * 3.0).abs() < 1e-12);
        for (i, c) in s.coeffs().iter().enumerate().skip(1) {
            assert!(c.norm() < 1e-12, "mode {i}");
        }
    }

    #[test]
    fn cosine_coefficients_are_half_length() {
        let l = 2.0;
        let g = grid1(32, l);
        let f = RealField::from_fn(&g, |x| (std::f64::consts::TAU * x[0] / l).cos()).unwrap();
        let s = forward(&f);
        assert!((s.at([1, 0]).re - l / 2.0).abs() < 1e-12);
        assert!((s.at([-1, 0]).re - l / 2.0).abs() < 1e-12);
        let rest: f64 = s
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(i, _)| g.mode(*i)[0].abs() != 1)
            .map(|(_, c)| c.norm())
            .sum();
        assert!(rest < 1e-12);
        assert!((dnorm(&f, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!((dnorm(&f, 1).unwrap() - std::f64::consts::TAU / l).abs() < 1e-12);
    }

    #[test]
    fn inverse_of_simple_spectra() {
        let g = grid1(16, 2.0);
        assert_eq!(inverse(&Spectrum::zeros(&g)).unwrap().sup_norm(), 0.0);
        let mut s = Spectrum::zeros(&g);
        s.coeffs_mut()[0] = Complex::new(2.0, 0.0);
        let f = inverse(&s).unwrap();
        assert!(f.values().iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn non_hermitian_spectrum_is_rejected() {
        let g = grid1(16, 1.0);
        let mut s = Spectrum::zeros(&g);
        s.coeffs_mut()[1] = Complex::new(1.0, 0.0);
        assert!(matches!(inverse(&s), Err(SpectralError::NonHermitianInput(_))));
    }

    #[test]
    fn round_trip_1d_and_2d() {
        for d in [1, 2] {
            let g = Grid::new(d, 1.7, 16).unwrap();
            let f = smooth(&g);
            let back = inverse(&forward(&f)).unwrap();
            let err = back.sub(&f).sup_norm() / f.sup_norm();
            assert!(err < 1e-12, "d={d}: {err}");
        }
    }

    #[test]
    fn derivatives_of_constants_vanish_and_cosine_is_eigenfunction() {
        let l = 2.0;
        let g = grid1(32, l);
        let c = RealField::constant(&g, 3.0);
        assert!(gradient(&c)[0].sup_norm() < 1e-12);
        assert!(laplacian(&c).sup_norm() < 1e-12);
        let k = 3.0 * std::f64::consts::TAU / l;
        let f = RealField::from_fn(&g, |x| (k * x[0]).cos()).unwrap();
        let expect = f.scale(-k * k);
        assert!(laplacian(&f).sub(&expect).sup_norm() < 1e-10);
    }

    #[test]
    fn gradient_matches_centered_differences_at_second_order() {
        // Oracle: centered differences of the analytic function on refining meshes.
        let l = 1.0;
        let g = grid1(64, l);
        let f = RealField::from_fn(&g, |x| (std::f64::consts::TAU * x[0]).sin().exp()).unwrap();
        let grad = &gradient(&f)[0];
        let fx = |x: f64| (std::f64::consts::TAU * x).sin().exp();
        let mut errs = Vec::new();
        for eps in [1e-2, 5e-3] {
            let e = (0..g.len())
                .map(|i| {
                    let x = g.coords(i)[0];
                    ((fx(x + eps) - fx(x - eps)) / (2.0 * eps) - grad.values()[i]).abs()
                })
                .fold(0.0, f64::max);
            errs.push(e);
        }
        let ratio = errs[1] / errs[0];
        assert!((ratio - 0.25).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn laplacian_is_divergence_of_gradient() {
        let g = Grid::new(2, 1.0, 16).unwrap();
        let f = smooth(&g);
        let a = laplacian(&f);
        let b = divergence(&gradient(&f));
        assert!(a.sub(&b).sup_norm() < 1e-10 * a.sup_norm());
    }

    #[test]
    fn helmholtz_inverse_properties() {
        let g = grid1(32, 2.0);
        assert_eq!(
            helmholtz_inverse(&RealField::constant(&g, 1.0), 0.0).unwrap_err(),
            SpectralError::NonpositiveH(0.0)
        );
        let c = helmholtz_inverse(&RealField::constant(&g, 4.0), 0.3).unwrap();
        assert!(c.values().iter().all(|v| (v - 4.0).abs() < 1e-13));

        let k = std::f64::consts::TAU * 2.0 / 2.0;
        let f = RealField::from_fn(&g, |x| (k * x[0]).cos()).unwrap();
        let h = 0.05;
        let u = helmholtz_inverse(&f, h).unwrap();
        assert!(u.sub(&f.scale(1.0 / (1.0 + h * k * k))).sup_norm() < 1e-12);

        let f = smooth(&Grid::new(1, 2.0, 32).unwrap());
        let u = helmholtz_inverse(&f, h).unwrap();
        let back = u.sub(&laplacian(&u).scale(h));
        assert!(back.sub(&f).sup_norm() < 1e-10);
        let a = laplacian(&helmholtz_inverse(&f, h).unwrap());
        let b = helmholtz_inverse(&laplacian(&f), h).unwrap();
        assert!(a.sub(&b).sup_norm() < 1e-10);
    }

    #[test]
    fn dnorm_of_constant_and_order_cap() {
        let g = Grid::<f64>::new(2, 1.5, 8).unwrap();
        let f = RealField::constant(&g, -2.0);
        assert!((dnorm(&f, 0).unwrap() - 2.0).abs() < 1e-12);
        for m in 1..=4 {
            assert!(dnorm(&f, m).unwrap() < 1e-12);
        }
        assert_eq!(dnorm(&f, 5).unwrap_err(), SpectralError::NormOrderTooLarge(5));
    }

    #[test]
    fn dnorms012_agrees_with_dnorm() {
        let g = Grid::new(2, 1.0, 16).unwrap();
        let f = smooth(&g);
        let all = dnorms012(&f);
        for m in 0..3 {
            let single = dnorm(&f, m as u32).unwrap();
            assert!((all[m] - single).abs() < 1e-12 * single.max(1.0));
        }
    }

    #[test]
    fn works_in_single_precision() {
        let g = Grid::<f32>::new(1, 1.0, 32).unwrap();
        let f = RealField::from_fn(&g, |x| (std::f32::consts::TAU * x[0]).cos()).unwrap();
        let back = inverse(&forward(&f)).unwrap();
        assert!(back.sub(&f).sup_norm() < 1e-5);
        assert!((dnorm(&f, 0).unwrap() - 1.0).abs() < 1e-5);
    }
}
