use std::f64::consts::TAU;
use std::sync::Arc;

use proptest::prelude::*;

use gcflow::config::RunConfig;
use gcflow::dynamics::{self, Ensemble, SimState};
use gcflow::experiments::{fit_series, FitWindow};
use gcflow::kernels::{make_positive_type, make_smoothed_indicator};
use gcflow::spectral::{self, Grid, RealField};
use gcflow::thermo::{self, ModelParams};

fn band_field(grid: &Grid<f64>, coeffs: &[(f64, f64)]) -> RealField<f64> {
    RealField::from_fn(grid, |x| {
        coeffs
            .iter()
            .enumerate()
            .map(|(n, (a, b))| a * (TAU * n as f64 * x[0] / grid.length()).cos() + b * (TAU * n as f64 * x[0] / grid.length()).sin())
            .sum()
    })
    .unwrap()
}

fn coeffs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..12)
}

fn params() -> Arc<ModelParams<f64>> {
    let g = Grid::new(1, 1.0, 64).unwrap();
    let k = Arc::new(make_smoothed_indicator(&g, 1.0, 0.15, 0.05).unwrap());
    Arc::new(ModelParams::from_m0(k, 0.05, 0.4).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_and_parseval(c in coeffs(), l in 0.5..8.0f64) {
        let g = Grid::new(1, l, 64).unwrap();
        let f = band_field(&g, &c);
        let spec = spectral::forward(&f);
        let back = spectral::inverse(&spec).unwrap();
        let scale = f.sup_norm().max(1e-300);
        prop_assert!(back.sub(&f).sup_norm() <= 1e-12 * scale);
        let energy: f64 = spec.coeffs().iter().map(|z| z.norm_sqr()).sum::<f64>() / l;
        let direct = f.dot(&f);
        prop_assert!((energy - direct).abs() <= 1e-10 * direct.max(1e-300));
        prop_assert!(spec.hermitian_defect() <= 1e-12 * spec.coeffs().iter().map(|z| z.norm()).fold(0.0, f64::max));
    }

    #[test]
    fn norm_inequalities(c1 in coeffs(), c2 in coeffs()) {
        let g = Grid::new(1, 1.0, 128).unwrap();
        let (f, h) = (band_field(&g, &c1), band_field(&g, &c2));
        let [f0, f1, f2] = spectral::dnorms012(&f);
        let [h0, h1, _] = spectral::dnorms012(&h);
        prop_assert!(f1 * f1 <= f2 * f0 * (1.0 + 1e-12) + 1e-300);
        let fh1 = spectral::dnorm(&f.mul(&h), 1).unwrap();
        prop_assert!(fh1 <= (f1 * h0 + f0 * h1) * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn convolution_is_symmetric_and_exact_on_constants(c1 in coeffs(), c2 in coeffs(), s in 0.02..0.1f64) {
        let g = Grid::new(1, 1.0, 64).unwrap();
        let k = make_positive_type(&g, 1.0, s).unwrap();
        let (f, h) = (band_field(&g, &c1), band_field(&g, &c2));
        let a = spectral::convolve(&k, &f).unwrap().dot(&h);
        let b = spectral::convolve(&k, &h).unwrap().dot(&f);
        prop_assert!((a - b).abs() <= 1e-10 * (a.abs().max(b.abs()) + 1e-12));
        let n = RealField::constant(&g, 0.7);
        prop_assert!(spectral::convolve(&k, &n).unwrap().sub(&n.scale(k.w())).sup_norm() < 1e-13);
    }

    #[test]
    fn helmholtz_inverts_and_commutes(c in coeffs(), h in 1e-5..1.0f64) {
        let g = Grid::new(1, 2.0, 64).unwrap();
        let f = band_field(&g, &c);
        let u = spectral::helmholtz_inverse(&f, h).unwrap();
        let scale = f.sup_norm().max(1e-300);
        prop_assert!(u.axpy(-h, &spectral::laplacian(&u)).sub(&f).sup_norm() <= 1e-10 * scale);
        let a = spectral::laplacian(&u);
        let b = spectral::helmholtz_inverse(&spectral::laplacian(&f), h).unwrap();
        prop_assert!(a.sub(&b).sup_norm() <= 1e-10 * a.sup_norm().max(1e-12));
    }

    #[test]
    fn gap_and_mobility_are_nonnegative(c in coeffs(), amp in 0.0..0.9f64) {
        let p = params();
        let raw = band_field(p.grid(), &c);
        let scale = if raw.sup_norm() > 0.0 { amp / raw.sup_norm() } else { 0.0 };
        let n = raw.map(|v| 0.05 * (scale * v).exp());
        prop_assert!(thermo::free_energy_gap(&n, &p).unwrap() >= -1e-15);
        prop_assert!(thermo::omega(&n, &p).unwrap().min() > 0.0);
        prop_assert!(thermo::dissipation(&n, &p).unwrap() >= 0.0);
    }

    #[test]
    fn sinhc_is_even_and_at_least_one(x in -50.0..50.0f64) {
        let s = thermo::sinhc(x);
        prop_assert!(s >= 1.0);
        prop_assert_eq!(s, thermo::sinhc(-x));
    }

    #[test]
    fn imex_step_keeps_positivity_and_lowers_energy(c in coeffs(), amp in 0.05..0.8f64) {
        let p = params();
        let raw = band_field(p.grid(), &c);
        prop_assume!(raw.sup_norm() > 0.0);
        let n = raw.map(|v| 0.05 * (amp * v / raw.sup_norm()).exp());
        let s0 = SimState::from_density(p.clone(), n, 0.0).unwrap();
        let s1 = dynamics::step_imex(&s0, 1e-3, Ensemble::Grand).unwrap();
        prop_assert!(s1.n().min() > 0.0);
        let g0 = thermo::free_energy_grand(s0.n(), &p).unwrap();
        let g1 = thermo::free_energy_grand(s1.n(), &p).unwrap();
        prop_assert!(g1 <= g0 + 1e-10 * g0.abs());
    }

    #[test]
    fn canonical_imex_conserves_mass(c in coeffs(), amp in 0.05..0.8f64) {
        let p = params();
        let raw = band_field(p.grid(), &c);
        prop_assume!(raw.sup_norm() > 0.0);
        let n = raw.map(|v| 0.05 * (amp * v / raw.sup_norm()).exp());
        let s0 = SimState::from_density(p.clone(), n, 0.0).unwrap();
        let s1 = dynamics::step_imex(&s0, 1e-3, Ensemble::Canonical).unwrap();
        let (m0, m1) = (s0.n().integral(), s1.n().integral());
        prop_assert!((m1 - m0).abs() <= 1e-12 * m0);
    }

    #[test]
    fn fitted_rate_ignores_amplitude(rate in 0.1..20.0f64, a in 1e-6..1e3f64) {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.5 / rate).collect();
        let g1: Vec<f64> = t.iter().map(|t| (-rate * t).exp()).collect();
        let g2: Vec<f64> = g1.iter().map(|v| a * v).collect();
        let f1 = fit_series(&t, &g1, FitWindow::default()).unwrap();
        let f2 = fit_series(&t, &g2, FitWindow::default()).unwrap();
        prop_assert!((f1.lambda_hat - rate).abs() <= 1e-9 * rate);
        prop_assert!((f1.lambda_hat - f2.lambda_hat).abs() <= 1e-9 * rate);
    }

    #[test]
    fn config_round_trips(m in 3u32..8, kappa in 0.05..0.49f64, m0 in 0.001..1.0f64, t in 0.1..10.0f64, stride in 1usize..50) {
        let text = format!(
            "[domain]\nd = 1\nL = 2.0\nM = {}\n[model]\nm0 = {m0}\nkappa = {kappa}\n[kernel]\nfamily = \"positive_type\"\namplitude = 1.0\nwidth = 0.1\n[integrator]\nkind = \"jko\"\nT = {t}\n[output]\nstride = {stride}\n",
            1usize << m
        );
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        prop_assert_eq!(again, cfg);
    }
}
