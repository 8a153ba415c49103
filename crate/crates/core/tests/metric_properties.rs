use std::f64::consts::TAU;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gcflow::kernels::make_smoothed_indicator;
use gcflow::metric::{self, EllipticOperator};
use gcflow::selfcheck::random_band_field;
use gcflow::spectral::{self, Grid, RealField};
use gcflow::thermo::{self, ModelParams};

fn params(m: usize) -> ModelParams<f64> {
    let g = Grid::new(1, 1.0, m).unwrap();
    let k = Arc::new(make_smoothed_indicator(&g, 1.0, 0.15, 0.05).unwrap());
    ModelParams::from_m0(k, 0.05, 0.4).unwrap()
}

fn density(p: &ModelParams<f64>, a: f64, b: f64) -> RealField<f64> {
    RealField::from_fn(p.grid(), |x| 0.05 * (1.0 + a * (TAU * x[0]).cos() + b * (2.0 * TAU * x[0] + 0.4).sin())).unwrap()
}

#[test]
fn solve_is_self_adjoint() {
    let p = params(64);
    let n0 = density(&p, 0.4, 0.15);
    let op = EllipticOperator::new(&n0, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let f = random_band_field(p.grid(), 8, &mut rng).unwrap();
        let g = random_band_field(p.grid(), 8, &mut rng).unwrap();
        let (qf, _) = op.solve(&f).unwrap();
        let (qg, _) = op.solve(&g).unwrap();
        let (a, b) = (f.dot(&qg), g.dot(&qf));
        assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()), "{a} vs {b}");
    }
}

#[test]
fn zero_target_gives_zero_potential() {
    let p = params(32);
    let n0 = density(&p, 0.3, 0.1);
    let (q, rep) = metric::solve_driving_potential(&n0, &RealField::zeros(p.grid()), &p).unwrap();
    assert_eq!(q.sup_norm(), 0.0);
    assert_eq!(rep.iterations, 0);
}

#[test]
fn uniform_density_solve_is_diagonal() {
    let p = params(64);
    let flat = p.uniform_state();
    let eps = 0.01;
    for n in 1..4 {
        let k = TAU * n as f64;
        let target = RealField::from_fn(p.grid(), |x| eps * (k * x[0]).cos()).unwrap();
        let (q, rep) = metric::solve_driving_potential(&flat, &target, &p).unwrap();
        assert!(rep.relative_residual <= 1e-9);
        let spec = spectral::forward(&q);
        let expected = -eps * 0.5 / (0.05 * k * k + 0.05f64.sqrt());
        for (i, c) in spec.coeffs().iter().enumerate() {
            let mode = p.grid().mode(i)[0];
            let want = if mode.abs() == n { expected } else { 0.0 };
            assert!((c.re - want).abs() < 1e-12 && c.im.abs() < 1e-12, "mode {mode}: {c}");
        }
    }
}

#[test]
fn approx_distance_matches_diagonal_closed_form() {
    let p = params(64);
    let flat = p.uniform_state();
    let h = 0.02;
    let dn = RealField::from_fn(p.grid(), |x| 1e-3 * ((TAU * x[0]).cos() + 0.5 * (3.0 * TAU * x[0]).sin())).unwrap();
    let (d, _) = metric::approx_distance(&flat, &flat.add(&dn), h, &p).unwrap();
    let spec = spectral::forward(&dn);
    let m0: f64 = 0.05;
    let form: f64 = spec
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| c.norm_sqr() / (h * h) / (m0 * p.grid().laplacian_symbol(i) + m0.sqrt()))
        .sum();
    let closed = h * form.sqrt();
    assert!((d - closed).abs() <= 1e-10 * closed, "{d} vs {closed}");
}

#[test]
fn squared_distance_equals_pairing_with_potential() {
    let p = params(64);
    let n0 = density(&p, 0.4, 0.15);
    let n1 = density(&p, 0.35, 0.2);
    let h = 0.05;
    let (d, _) = metric::approx_distance(&n0, &n1, h, &p).unwrap();
    let rate = n1.sub(&n0).scale(1.0 / h);
    let (phi, _) = metric::solve_driving_potential(&n0, &rate, &p).unwrap();
    let pairing = -h * h * rate.dot(&phi);
    assert!((d * d - pairing).abs() <= 1e-9 * pairing, "{} vs {pairing}", d * d);
}

#[test]
fn potential_norm_bounded_toward_uniform() {
    let p = params(64);
    let bound = 1.0 / (p.kappa() * p.m0()).sqrt();
    for (a, b) in [(0.4, 0.15), (0.3, 0.3), (-0.45, 0.1)] {
        let n0 = density(&p, a, b);
        assert!(p.in_corridor(&n0));
        let delta = p.uniform_state().sub(&n0);
        let (q, _) = metric::solve_driving_potential(&n0, &delta, &p).unwrap();
        assert!(q.l2_norm() <= bound * delta.l2_norm());
    }
}

#[test]
fn path_bound_refines_and_stays_under_corridor_estimate() {
    let p = params(64);
    let n0 = density(&p, 0.4, 0.15);
    let flat = p.uniform_state();
    let coarse = metric::path_distance_upper(&n0, &flat, 64, &p).unwrap();
    let fine = metric::path_distance_upper(&n0, &flat, 128, &p).unwrap();
    assert!((fine.value_sq - coarse.value_sq).abs() <= 1e-3 * coarse.value_sq);
    let dev = n0.sub(&flat);
    let gsq = thermo::rate_constants(&p).gsq;
    assert!(coarse.value_sq <= gsq * dev.dot(&dev) * 1.02);
    assert_eq!(coarse.per_segment_energy.len(), 65);
    assert!(metric::path_distance_upper(&n0, &n0, 8, &p).unwrap().value_sq == 0.0);
}

#[test]
fn axiom_report_passes_on_corridor_samples() {
    let p = params(32);
    let samples = vec![density(&p, 0.4, 0.15), density(&p, -0.3, 0.2), p.uniform_state()];
    let rep = metric::metric_axiom_checks(&samples, 16, &p).unwrap();
    assert!(rep.passed, "{rep:?}");
    assert_eq!(rep.pairs.len(), 3);
    for pair in &rep.pairs {
        assert!(pair.forward >= pair.coercivity_bound && pair.coercivity_bound > 0.0);
    }
}
