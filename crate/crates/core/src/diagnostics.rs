//! Per-step observables emitted as NDJSON.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Ensemble, SimState};
use crate::scalar::Scalar;
use crate::spectral;
use crate::thermo::{self, ThermoError};

/// Schema identifier of the NDJSON stream, reported by `--version`.
pub const DIAGNOSTICS_SCHEMA_VERSION: &str = "gcflow-diagnostics/1";

/// One NDJSON line of a trajectory.
///
/// `gap` is `𝒢_μ(N) − 𝒢_μ(M₀)` for grand-canonical runs and `ℱ(N) − ℱ(N̄)`
/// (`N̄` the mean density) for canonical ones. `dissipation` follows the same
/// split: `⟨⟨∇Φ,∇Φ⟩⟩_N` versus `∫N|∇Φ|²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: u64,
    pub t: f64,
    pub mass: f64,
    pub g_mu: f64,
    pub gap: f64,
    pub d0: f64,
    pub d1: f64,
    pub d2: f64,
    pub n_min: f64,
    pub n_max: f64,
    pub dissipation: f64,
    pub inner_iters: Option<u32>,
    pub residual: Option<f64>,
    /// `‖N − N_ref‖²_{L²}` with the same reference as `gap`.
    #[serde(skip)]
    pub dev_l2_sq: f64,
}

impl DiagnosticsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

pub fn observe<T: Scalar>(state: &SimState<T>, step: u64, ensemble: Ensemble) -> Result<DiagnosticsRecord, ThermoError> {
    let params = state.params();
    let n = state.n();
    let phi = thermo::phi_from_parts(n, state.wn(), params.mu());
    let (gap, dissipation, reference) = match ensemble {
        Ensemble::Grand => {
            let om = thermo::omega_from_phi(n, &phi);
            let diss = thermo::weighted_inner_with(n, &om, &phi, &phi);
            (thermo::free_energy_gap(n, params)?, diss, params.m0())
        }
        Ensemble::Canonical => {
            let mean = n.mean();
            let grad = spectral::grad_dot(&phi, &phi);
            let diss = n.dot(&grad);
            (thermo::gap_about(n, mean, params.kernel())?, diss, mean)
        }
    };
    let dev = n.map(|v| v - reference);
    let [d0, d1, d2] = spectral::dnorms012(state.psi());
    Ok(DiagnosticsRecord {
        step,
        t: state.t().as_f64(),
        mass: n.integral().as_f64(),
        g_mu: thermo::free_energy_grand(n, params)?.as_f64(),
        gap: gap.as_f64(),
        d0: d0.as_f64(),
        d1: d1.as_f64(),
        d2: d2.as_f64(),
        n_min: n.min().as_f64(),
        n_max: n.max().as_f64(),
        dissipation: dissipation.as_f64(),
        inner_iters: None,
        residual: None,
        dev_l2_sq: dev.dot(&dev).as_f64(),
    })
}
