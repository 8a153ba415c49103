//! Property battery for the spectral layer and the kernel families; run by `gcflow check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::kernels::{make_positive_type, make_smoothed_indicator, Kernel, KernelError};
use crate::spectral::{self, Grid, RealField, SpectralError};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckItem {
    pub name: String,
    /// The measured quantity; passes when `value <= limit`.
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub items: Vec<CheckItem>,
    pub passed: bool,
}

impl CheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckItem> {
        self.items.iter().filter(|i| !i.passed)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

struct Battery {
    items: Vec<CheckItem>,
}

impl Battery {
    fn push(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        let passed = value.is_finite() && value <= limit;
        self.items.push(CheckItem { name: name.into(), value, limit, passed });
    }
}

fn rel(a: &RealField<f64>, b: &RealField<f64>) -> f64 {
    a.sub(b).sup_norm() / b.sup_norm().max(f64::MIN_POSITIVE)
}

/// Random real field whose modes satisfy `|n| ≤ band`.
pub fn random_band_field(grid: &Grid<f64>, band: i64, rng: &mut impl Rng) -> Result<RealField<f64>, SpectralError> {
    let tpl = std::f64::consts::TAU / grid.length();
    let mut terms = Vec::new();
    for n0 in -band..=band {
        for n1 in if grid.dim() == 2 { -band..=band } else { 0..=0 } {
            if n0 * n0 + n1 * n1 <= band * band {
                terms.push(([n0 as f64, n1 as f64], rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU)));
            }
        }
    }
    RealField::from_fn(grid, |x| {
        terms.iter().map(|(n, a, th)| a * (tpl * (n[0] * x[0] + n[1] * x[1]) + th).cos()).sum()
    })
}

/// Direct real-space quadrature `Σ_y W(x−y) f(y) dx^d`.
pub fn convolve_direct(kernel: &Kernel<f64>, f: &RealField<f64>) -> RealField<f64> {
    let g = f.grid();
    let m = g.points();
    let w = kernel.values().values();
    let fv = f.values();
    let dv = g.cell_volume();
    let values = if g.dim() == 1 {
        (0..m).map(|i| (0..m).map(|j| w[(i + m - j) % m] * fv[j]).sum::<f64>() * dv).collect()
    } else {
        (0..m * m)
            .map(|p| {
                let (i0, i1) = (p / m, p % m);
                let mut s = 0.0;
                for q in 0..m * m {
                    let (j0, j1) = (q / m, q % m);
                    s += w[((i0 + m - j0) % m) * m + (i1 + m - j1) % m] * fv[q];
                }
                s * dv
            })
            .collect()
    };
    RealField::new(g.clone(), values).expect("finite quadrature")
}

fn spectral_items(b: &mut Battery, grid: &Grid<f64>, rng: &mut ChaCha8Rng) -> Result<(), CheckError> {
    let tag = format!("d={} L={} M={}", grid.dim(), grid.length(), grid.points());
    let l = grid.length();
    let vol = grid.volume();
    let tpl = std::f64::consts::TAU / l;

    let c = RealField::constant(grid, 1.7);
    let spec = spectral::forward(&c);
    let off: f64 = spec.coeffs().iter().skip(1).map(|z| z.norm()).fold(0.0, f64::max);
    b.push(format!("constant transform {tag}"), (spec.coeffs()[0].re - 1.7 * vol).abs().max(off) / vol, 1e-13);

    let cosx = RealField::from_fn(grid, |x| (tpl * x[0]).cos())?;
    let spec = spectral::forward(&cosx);
    let half = vol / 2.0;
    let err = spec
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let expected = if grid.mode(i)[0].abs() == 1 && grid.mode(i)[1] == 0 { half } else { 0.0 };
            (z - expected).norm()
        })
        .fold(0.0, f64::max);
    b.push(format!("cosine coefficients {tag}"), err / half, 1e-13);
    let [d0, d1, _] = spectral::dnorms012(&cosx);
    b.push(format!("cosine D0 = 1 {tag}"), (d0 - 1.0).abs(), 1e-12);
    b.push(format!("cosine D1 = 2pi/L {tag}"), (d1 - tpl).abs() / tpl, 1e-12);
    let lap = spectral::laplacian(&cosx);
    b.push(format!("laplacian eigenfunction {tag}"), rel(&lap, &cosx.scale(-tpl * tpl)), 1e-12);
    let zero_grad = spectral::gradient(&c).iter().map(|g| g.sup_norm()).fold(0.0, f64::max);
    b.push(format!("constant gradient {tag}"), zero_grad.max(spectral::laplacian(&c).sup_norm()), 1e-12);

    let (mut round, mut parseval, mut interp, mut deriv, mut sym, mut helm, mut commute) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let kernel = make_positive_type(grid, 1.0, 0.1 * l)?;
    for _ in 0..8 {
        let band = (grid.points() / 4) as i64;
        let f = random_band_field(grid, band, rng)?;
        let g = random_band_field(grid, band / 2, rng)?;
        let spec = spectral::forward(&f);
        round = round.max(rel(&spectral::inverse(&spec)?, &f));
        let energy = spec.coeffs().iter().map(|z| z.norm_sqr()).sum::<f64>() / vol;
        let direct = f.dot(&f);
        parseval = parseval.max((energy - direct).abs() / direct);
        let [f0, f1, f2] = spectral::dnorms012(&f);
        interp = interp.max(f1 * f1 / (f2 * f0));
        let [g0, g1, _] = spectral::dnorms012(&g);
        let fg1 = spectral::dnorm(&f.mul(&g), 1)?;
        deriv = deriv.max(fg1 / (f1 * g0 + f0 * g1));
        let wf = spectral::convolve(&kernel, &f)?;
        let wg = spectral::convolve(&kernel, &g)?;
        sym = sym.max((wf.dot(&g) - wg.dot(&f)).abs() / (wf.dot(&g)).abs().max(1e-300));
        let h = 1e-2 * l * l;
        let u = spectral::helmholtz_inverse(&f, h)?;
        helm = helm.max(rel(&u.axpy(-h, &spectral::laplacian(&u)), &f));
        let a = spectral::laplacian(&u);
        let bb = spectral::helmholtz_inverse(&spectral::laplacian(&f), h)?;
        commute = commute.max(a.sub(&bb).sup_norm() / a.sup_norm());
    }
    b.push(format!("forward/inverse round trip {tag}"), round, 1e-12);
    b.push(format!("Parseval {tag}"), parseval, 1e-10);
    b.push(format!("interpolation D1^2 <= D2 D0 (max ratio) {tag}"), interp, 1.0 + 1e-12);
    b.push(format!("derivation D1(fg) <= D1 D0 + D0 D1 (max ratio) {tag}"), deriv, 1.0 + 1e-12);
    b.push(format!("convolution symmetry {tag}"), sym, 1e-10);
    b.push(format!("helmholtz forward operator {tag}"), helm, 1e-10);
    b.push(format!("helmholtz/laplacian commute {tag}"), commute, 1e-10);
    Ok(())
}

fn gradient_fd_order() -> Result<f64, CheckError> {
    let err = |m: usize| -> Result<f64, CheckError> {
        let grid = Grid::new(1, 1.0, m)?;
        let f = RealField::from_fn(&grid, |x| (std::f64::consts::TAU * x[0]).sin().exp())?;
        let g = &spectral::gradient(&f)[0];
        let v = f.values();
        let dx = grid.dx();
        Ok((0..m)
            .map(|i| ((v[(i + 1) % m] - v[(i + m - 1) % m]) / (2.0 * dx) - g.values()[i]).abs())
            .fold(0.0, f64::max))
    };
    Ok((err(32)? / err(64)?).log2())
}

fn kernel_items(b: &mut Battery, grid: &Grid<f64>, rng: &mut ChaCha8Rng) -> Result<(), CheckError> {
    let l = grid.length();
    let tag = format!("d={} M={}", grid.dim(), grid.points());
    let kernels = [
        ("smoothed indicator", make_smoothed_indicator(grid, 1.0, 0.15 * l, 0.05 * l)?),
        ("positive type", make_positive_type(grid, 1.0, 0.1 * l)?),
    ];
    for (name, k) in &kernels {
        let v = k.values().values();
        let even = (0..grid.len()).map(|i| (v[i] - v[grid.negated_index(i)]).abs()).fold(0.0, f64::max);
        b.push(format!("{name} kernel even {tag}"), even, 1e-12);
        let imag = k.spectrum().coeffs().iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        b.push(format!("{name} kernel symbol real {tag}"), imag / k.w().abs(), 1e-12);
        let s = k.stats();
        b.push(format!("{name} kernel |w| <= v0 {tag}"), k.w().abs() - s.v[0], 1e-14);
        let theta_ok = !s.positive_type || s.theta_sharp.is_infinite();
        b.push(format!("{name} kernel positive type has no threshold {tag}"), if theta_ok { 0.0 } else { 1.0 }, 0.0);
        let f = random_band_field(grid, (grid.points() / 4) as i64, rng)?;
        let fast = spectral::convolve(k, &f)?;
        let slow = convolve_direct(k, &f);
        b.push(format!("{name} convolution vs quadrature {tag}"), fast.sub(&slow).sup_norm(), 1e-8);
        let n = RealField::constant(grid, 0.3);
        b.push(format!("{name} convolution of constant {tag}"), (spectral::convolve(k, &n)?.sub(&n.scale(k.w()))).sup_norm(), 1e-13);
    }
    Ok(())
}

/// Runs the battery; random fields come from `seed`.
pub fn run_battery(seed: u64) -> Result<CheckReport, CheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Battery { items: Vec::new() };
    for (d, l, m) in [(1, 1.0, 32), (1, 2.0 * std::f64::consts::PI, 128), (2, 1.0, 32)] {
        spectral_items(&mut b, &Grid::new(d, l, m)?, &mut rng)?;
    }
    b.push("gradient vs centered differences: observed order below 2 by", 2.0 - gradient_fd_order()?, 0.1);
    for (d, m) in [(1, 32), (2, 32)] {
        kernel_items(&mut b, &Grid::new(d, 1.0, m)?, &mut rng)?;
    }
    let passed = b.items.iter().all(|i| i.passed);
    Ok(CheckReport { seed, items: b.items, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_is_green() {
        let report = run_battery(20).unwrap();
        let failed: Vec<_> = report.failures().collect();
        assert!(failed.is_empty(), "{failed:#?}");
        assert!(report.items.len() > 40);
    }
}
