//! Non-conservative transport metric: static driving potentials, the
//! approximate distance `𝔻_A` and the straight-line upper bound on `𝔻²`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::spectral::{self, RealField};
use crate::thermo::{self, ModelParams, ThermoError};

/// Relative residual accepted by the conjugate-gradient solve.
pub const SOLVER_TOL: f64 = 1e-10;
pub const PRECONDITIONER: &str = "mean_inverse_helmholtz";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("conjugate gradient stopped after {iterations} iterations at relative residual {relative_residual:e}")]
    NoConvergence { iterations: usize, relative_residual: f64 },
    #[error("path needs at least 2 segments, got {0}")]
    BadSegments(usize),
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
}

impl From<spectral::SpectralError> for MetricError {
    fn from(e: spectral::SpectralError) -> Self {
        MetricError::Thermo(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticSolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub preconditioner: String,
    /// Upper bound on the condition number of the preconditioned operator.
    pub condition_estimate: f64,
}

/// The operator `Q ↦ ∇·(N∇Q) − ΩQ` at a fixed density.
pub struct EllipticOperator<T: Scalar> {
    n: RealField<T>,
    omega: RealField<T>,
}

impl<T: Scalar> EllipticOperator<T> {
    pub fn new(n: &RealField<T>, params: &ModelParams<T>) -> Result<Self, ThermoError> {
        Ok(Self { n: n.clone(), omega: thermo::omega(n, params)? })
    }

    pub fn omega(&self) -> &RealField<T> {
        &self.omega
    }

    pub fn apply(&self, q: &RealField<T>) -> RealField<T> {
        spectral::div_a_grad(&self.n, q).sub(&self.omega.mul(q))
    }

    /// `⟨⟨∇φ,∇ψ⟩⟩_N`.
    pub fn form(&self, phi: &RealField<T>, psi: &RealField<T>) -> T {
        thermo::weighted_inner_with(&self.n, &self.omega, phi, psi)
    }

    fn condition_estimate(&self, nbar: T, obar: T) -> T {
        let ratios = |a: &RealField<T>, m: T| (a.min() / m, a.max() / m);
        let (n_lo, n_hi) = ratios(&self.n, nbar);
        let (o_lo, o_hi) = ratios(&self.omega, obar);
        n_hi.max(o_hi) / n_lo.min(o_lo)
    }

    /// Solves `∇·(N∇Q) − ΩQ = target` by preconditioned CG on the negated operator.
    pub fn solve(&self, target: &RealField<T>) -> Result<(RealField<T>, EllipticSolveReport), MetricError> {
        let grid = self.n.grid().clone();
        let nbar = self.n.mean();
        let obar = self.omega.mean();
        let precondition = |r: &RealField<T>| {
            let g = grid.clone();
            spectral::apply_symbol(r, move |i| T::one() / (nbar * g.laplacian_symbol(i) + obar))
        };
        let mut report = EllipticSolveReport {
            iterations: 0,
            relative_residual: 0.0,
            preconditioner: PRECONDITIONER.to_string(),
            condition_estimate: self.condition_estimate(nbar, obar).as_f64(),
        };
        // A = −(∇·N∇ − Ω) is symmetric positive definite; solve AQ = b with b = −target
        let b = target.scale(-T::one());
        let b_norm = b.l2_norm();
        let mut q = RealField::zeros(&grid);
        if b_norm == T::zero() {
            return Ok((q, report));
        }
        let tol = T::tol(SOLVER_TOL);
        let cap = 10 * grid.len();
        let mut r = b.clone();
        let mut z = precondition(&r);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        let mut rel = T::one();
        for it in 1..=cap {
            let ap = self.apply(&p).scale(-T::one());
            let alpha = rz / p.dot(&ap);
            q = q.axpy(alpha, &p);
            r = r.axpy(-alpha, &ap);
            rel = r.l2_norm() / b_norm;
            report.iterations = it;
            if rel <= tol {
                // confirm against the true residual to rule out drift in the recurrence
                let true_rel = self.apply(&q).sub(target).l2_norm() / b_norm;
                report.relative_residual = true_rel.as_f64();
                if true_rel <= tol * T::lit(10.0) {
                    return Ok((q, report));
                }
                r = b.add(&self.apply(&q));
            }
            z = precondition(&r);
            let rz_next = r.dot(&z);
            p = z.axpy(rz_next / rz, &p);
            rz = rz_next;
        }
        Err(MetricError::NoConvergence { iterations: cap, relative_residual: rel.as_f64() })
    }
}

pub fn solve_driving_potential<T: Scalar>(
    n0: &RealField<T>,
    target_rate: &RealField<T>,
    params: &ModelParams<T>,
) -> Result<(RealField<T>, EllipticSolveReport), MetricError> {
    EllipticOperator::new(n0, params)?.solve(target_rate)
}

/// `𝔻_A(N₀,N₁) = h⟨⟨∇φ,∇φ⟩⟩_{N₀}^{1/2}` with `φ` the static potential driving `(N₁−N₀)/h`.
pub fn approx_distance<T: Scalar>(
    n0: &RealField<T>,
    n1: &RealField<T>,
    h: T,
    params: &ModelParams<T>,
) -> Result<(T, EllipticSolveReport), MetricError> {
    if !(h > T::zero()) {
        return Err(MetricError::BadStep(h.as_f64()));
    }
    thermo::ensure_positive(n1)?;
    let op = EllipticOperator::new(n0, params)?;
    let rate = n1.sub(n0).scale(T::one() / h);
    let (phi, report) = op.solve(&rate)?;
    Ok((h * op.form(&phi, &phi).max(T::zero()).sqrt(), report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathDistanceResult {
    pub value_sq: f64,
    pub segments: usize,
    /// `⟨⟨∇Q_s,∇Q_s⟩⟩_{N_s}` at the `S + 1` nodes `s = j/S`.
    pub per_segment_energy: Vec<f64>,
    pub max_iterations: usize,
    pub max_relative_residual: f64,
}

fn node_energy<T: Scalar>(
    n0: &RealField<T>,
    n1: &RealField<T>,
    delta: &RealField<T>,
    s: T,
    params: &ModelParams<T>,
) -> Result<(T, EllipticSolveReport), MetricError> {
    let ns = n0.zip_map(n1, |a, b| (T::one() - s) * a + s * b);
    let op = EllipticOperator::new(&ns, params)?;
    let (q, rep) = op.solve(delta)?;
    Ok((op.form(&q, &q), rep))
}

/// Trapezoid rule for the energy of the straight path `N_s = (1−s)N₀ + sN₁`.
pub fn path_distance_upper<T: Scalar>(
    n0: &RealField<T>,
    n1: &RealField<T>,
    segments: usize,
    params: &ModelParams<T>,
) -> Result<PathDistanceResult, MetricError> {
    if segments < 2 {
        return Err(MetricError::BadSegments(segments));
    }
    thermo::ensure_positive(n0)?;
    thermo::ensure_positive(n1)?;
    let delta = n1.sub(n0);
    let nodes: Vec<Result<(T, EllipticSolveReport), MetricError>> = (0..=segments)
        .into_par_iter()
        .map(|j| node_energy(n0, n1, &delta, T::lit(j as f64 / segments as f64), params))
        .collect();
    let mut energies = Vec::with_capacity(segments + 1);
    let mut max_iterations = 0;
    let mut max_relative_residual = 0.0f64;
    for node in nodes {
        let (e, rep) = node?;
        energies.push(e);
        max_iterations = max_iterations.max(rep.iterations);
        max_relative_residual = max_relative_residual.max(rep.relative_residual);
    }
    let ds = T::one() / T::lit(segments as f64);
    let interior: T = energies[1..segments].iter().copied().sum();
    let value = ds * (T::lit(0.5) * (energies[0] + energies[segments]) + interior);
    Ok(PathDistanceResult {
        value_sq: value.as_f64(),
        segments,
        per_segment_energy: energies.iter().map(|e| e.as_f64()).collect(),
        max_iterations,
        max_relative_residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub i: usize,
    pub j: usize,
    pub forward: f64,
    pub reverse: f64,
    /// `‖ΔN‖²/max_s λ_max(N_s)`, a lower bound for the path energy.
    pub coercivity_bound: f64,
    pub positive: bool,
    pub symmetric: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    /// Path energy from each sample to itself.
    pub self_distances: Vec<f64>,
    pub pairs: Vec<PairCheck>,
    pub passed: bool,
}

/// Largest eigenvalue bound of `−∇·(N∇·) + Ω` over the straight path.
fn top_of_spectrum<T: Scalar>(n0: &RealField<T>, n1: &RealField<T>, segments: usize, params: &ModelParams<T>) -> T {
    let kmax = n0.grid().max_k_squared();
    (0..=segments)
        .filter_map(|j| {
            let s = T::lit(j as f64 / segments as f64);
            let ns = n0.zip_map(n1, |a, b| (T::one() - s) * a + s * b);
            thermo::omega(&ns, params).ok().map(|om| ns.max() * kmax + om.max())
        })
        .fold(T::zero(), T::max)
}

pub fn metric_axiom_checks<T: Scalar>(
    samples: &[RealField<T>],
    segments: usize,
    params: &ModelParams<T>,
) -> Result<AxiomReport, MetricError> {
    let mut passed = true;
    let mut self_distances = Vec::with_capacity(samples.len());
    for s in samples {
        let d = path_distance_upper(s, s, segments, params)?.value_sq;
        passed &= d.abs() <= 1e-10;
        self_distances.push(d);
    }
    let mut pairs = Vec::new();
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let (a, b) = (&samples[i], &samples[j]);
            let forward = path_distance_upper(a, b, segments, params)?.value_sq;
            let reverse = path_distance_upper(b, a, segments, params)?.value_sq;
            let delta = b.sub(a);
            let bound = (delta.dot(&delta) / top_of_spectrum(a, b, segments, params)).as_f64();
            let positive = forward > 0.0 && forward >= bound * (1.0 - 1e-8);
            let symmetric = (forward - reverse).abs() <= 1e-8 * forward.abs().max(1e-300);
            passed &= positive && symmetric;
            pairs.push(PairCheck { i, j, forward, reverse, coercivity_bound: bound, positive, symmetric });
        }
    }
    Ok(AxiomReport { self_distances, pairs, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::make_smoothed_indicator;
    use crate::spectral::Grid;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn params(m: usize) -> ModelParams<f64> {
        let g = Grid::new(1, 1.0, m).unwrap();
        let k = Arc::new(make_smoothed_indicator(&g, 1.0, 0.15, 0.05).unwrap());
        ModelParams::from_m0(k, 0.05, 0.4).unwrap()
    }

    fn field(p: &ModelParams<f64>, f: impl Fn(f64) -> f64) -> RealField<f64> {
        RealField::from_fn(p.grid(), |x| f(x[0])).unwrap()
    }

    #[test]
    fn zero_target_gives_zero_potential() {
        let p = params(32);
        let (q, rep) = solve_driving_potential(&p.uniform_state(), &RealField::zeros(p.grid()), &p).unwrap();
        assert_eq!(q.sup_norm(), 0.0);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn diagonal_solve_at_uniform_density() {
        let p = params(64);
        let eps = 1e-2;
        let k = 2.0 * PI * 2.0;
        let target = field(&p, |x| eps * (k * x).cos());
        let (q, rep) = solve_driving_potential(&p.uniform_state(), &target, &p).unwrap();
        assert!(rep.relative_residual <= 1e-9);
        let spec = spectral::forward(&q);
        let expected = -eps * 0.5 / (0.05 * k * k + 0.05f64.sqrt());
        assert!((spec.at([2, 0]).re - expected).abs() < 1e-12);
        assert!((spec.at([-2, 0]).re - expected).abs() < 1e-12);
        let others: f64 = spec
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(i, _)| ![2usize, 62].contains(i))
            .map(|(_, c)| c.norm())
            .fold(0.0, f64::max);
        assert!(others < 1e-12);
    }

    #[test]
    fn approx_distance_examples() {
        let p = params(64);
        let n0 = field(&p, |x| 0.05 * (1.0 + 0.3 * (2.0 * PI * x).sin()));
        let dn = field(&p, |x| 0.01 * (4.0 * PI * x).cos() + 0.002);
        assert_eq!(approx_distance(&n0, &n0, 0.1, &p).unwrap().0, 0.0);
        let base = approx_distance(&n0, &n0.add(&dn), 0.1, &p).unwrap().0;
        for s in [0.5, 2.0, -0.7] {
            let scaled = approx_distance(&n0, &n0.axpy(s, &dn), 0.1, &p).unwrap().0;
            assert!((scaled - s.abs() * base).abs() <= 1e-10 * base);
        }
        let other_h = approx_distance(&n0, &n0.add(&dn), 0.01, &p).unwrap().0;
        assert!((other_h - base).abs() <= 1e-10 * base);
        // 𝔻_A² = −∫ΔN·Q with Q = hφ
        let (q, _) = solve_driving_potential(&n0, &dn, &p).unwrap();
        assert!((base * base + dn.dot(&q)).abs() <= 1e-9 * base * base);
    }

    #[test]
    fn uniform_density_distance_closed_form() {
        let p = params(64);
        let m0 = p.m0();
        let dn = field(&p, |x| 1e-3 * (2.0 * PI * x).cos() + 2e-3 * (6.0 * PI * 3.0 * x).sin());
        let d = approx_distance(&p.uniform_state(), &p.uniform_state().add(&dn), 1.0, &p).unwrap().0;
        let spec = spectral::forward(&dn);
        let l = p.grid().length();
        let closed: f64 = (0..p.grid().len())
            .map(|i| spec.coeffs()[i].norm_sqr() / (l * (m0 * p.grid().laplacian_symbol(i) + m0.sqrt())))
            .sum();
        assert!((d * d - closed).abs() <= 1e-10 * closed);
    }

    #[test]
    fn operator_is_self_adjoint() {
        let p = params(64);
        let n0 = field(&p, |x| 0.05 * (1.0 + 0.4 * (2.0 * PI * x).cos()));
        let f = field(&p, |x| (2.0 * PI * x).sin() + 0.3 * (6.0 * PI * x).cos());
        let g = field(&p, |x| 0.5 - (4.0 * PI * x).cos());
        let (qf, _) = solve_driving_potential(&n0, &f, &p).unwrap();
        let (qg, _) = solve_driving_potential(&n0, &g, &p).unwrap();
        assert!((f.dot(&qg) - g.dot(&qf)).abs() < 1e-9 * f.dot(&qg).abs().max(1.0));
    }

    #[test]
    fn potential_bound_toward_equilibrium() {
        let p = params(64);
        let n0 = field(&p, |x| 0.05 * (1.0 + 0.4 * (2.0 * PI * x).cos() + 0.15 * (6.0 * PI * x).sin()));
        assert!(p.in_corridor(&n0));
        let dn = p.uniform_state().sub(&n0);
        let (q, rep) = solve_driving_potential(&n0, &dn, &p).unwrap();
        assert!(q.l2_norm() <= (p.kappa() * p.m0()).powf(-0.5) * dn.l2_norm());
        // CG needs about ½√κ·ln(2/tol) iterations; allow twice that
        let budget = rep.condition_estimate.sqrt() * (2.0 / SOLVER_TOL).ln();
        assert!((rep.iterations as f64) <= budget, "{rep:?}");
    }

    #[test]
    fn path_bound_and_refinement() {
        let p = params(64);
        let n0 = field(&p, |x| 0.05 * (1.0 + 0.5 * (2.0 * PI * x).cos()));
        let m0 = p.uniform_state();
        let r = path_distance_upper(&n0, &m0, 64, &p).unwrap();
        assert_eq!(r.per_segment_energy.len(), 65);
        let dev = n0.sub(&m0);
        let gsq = (p.kappa() * p.m0()).powf(-0.5);
        assert!(r.value_sq <= gsq * dev.dot(&dev) * 1.02);
        let fine = path_distance_upper(&n0, &m0, 128, &p).unwrap();
        assert!((fine.value_sq - r.value_sq).abs() <= 1e-3 * r.value_sq);
        assert_eq!(path_distance_upper(&n0, &n0, 4, &p).unwrap().value_sq, 0.0);
        assert!(matches!(path_distance_upper(&n0, &m0, 1, &p), Err(MetricError::BadSegments(1))));
    }

    #[test]
    fn axiom_battery() {
        let p = params(32);
        let samples = vec![
            p.uniform_state(),
            field(&p, |x| 0.05 * (1.0 + 0.3 * (2.0 * PI * x).cos())),
            field(&p, |x| 0.05 * (1.0 - 0.2 * (4.0 * PI * x).sin())),
        ];
        let rep = metric_axiom_checks(&samples, 16, &p).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.pairs.len(), 3);
    }
}
