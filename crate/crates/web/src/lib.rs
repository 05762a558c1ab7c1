//! Browser demo bindings.
//!
//! Every export returns a flat `Vec<f64>` (a `Float64Array` on the JS side)
//! so the page can plot it without extra glue.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use dualtarget::bsde::BsdeSettings;
use dualtarget::dual_core::dual_value_dp;
use dualtarget::generators::{GammaBand, Generator, Payoff, UncertainVolatility};
use dualtarget::lattice_models::{sample_control_paths, ControlClass, Lattice, Model, PathControl, SwitchTimes};
use dualtarget::path_engine::{density_estimate, quadratic_variation};
use wasm_bindgen::prelude::*;

fn js_err(e: dualtarget::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn payoff_by_name(kind: &str, k: f64) -> Result<Payoff, JsError> {
    match kind {
        "call" => Ok(Payoff::call(k)),
        "put" => Ok(Payoff::put(k)),
        "butterfly" => Ok(Payoff::butterfly(k, 1.0)),
        "neg_square" => Ok(Payoff::neg_square()),
        other => Err(JsError::new(&format!("unknown payoff {other}"))),
    }
}

/// `[v0, x_0, V_0, a_0, x_1, V_1, a_1, ...]` at time 0, restricted to `|x| <= 3`.
fn time_zero_profile(gen: &dyn Generator, a0: Vec<f64>, payoff: &Payoff, n_space: usize) -> Result<Vec<f64>, JsError> {
    let class = ControlClass::new(a0, SwitchTimes::Grid).map_err(js_err)?;
    let lat = Lattice::cfl_limited(n_space, 400, class.a_hi(), 4.0).map_err(js_err)?;
    let vf = dual_value_dp(&lat, &class, gen, payoff, &BsdeSettings::default()).map_err(js_err)?;
    let mut out = vec![vf.v0];
    for i in 0..lat.n_nodes() {
        let x = lat.x_min() + i as f64 * lat.dx();
        if x.abs() <= 3.0 {
            out.extend([x, vf.v[0][i], class.a0()[vf.argmax[0][i]]]);
        }
    }
    Ok(out)
}

/// Uncertain volatility value at time 0 with controls `{sig_lo^2, sig_hi^2}`.
#[wasm_bindgen]
pub fn uvm_profile(sig_lo: f64, sig_hi: f64, payoff: &str, strike: f64) -> Result<Vec<f64>, JsError> {
    let gen = UncertainVolatility::from_vols(sig_lo, sig_hi).map_err(js_err)?;
    let a0 = vec![sig_lo * sig_lo, sig_hi * sig_hi];
    time_zero_profile(&gen, a0, &payoff_by_name(payoff, strike)?, 480)
}

/// Gamma constrained value at time 0 for controls spread over `[0.25, 4] sigma^2`.
#[wasm_bindgen]
pub fn gamma_band_profile(
    sigma: f64,
    gamma_lo: f64,
    gamma_hi: f64,
    payoff: &str,
    strike: f64,
) -> Result<Vec<f64>, JsError> {
    let gen = GammaBand::new(sigma, gamma_lo, gamma_hi).map_err(js_err)?;
    let s2 = sigma * sigma;
    let a0 = [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|m| m * s2).collect();
    time_zero_profile(&gen, a0, &payoff_by_name(payoff, strike)?, 480)
}

/// One Euler path with constant diffusion `a`; returns `[t, x, qv, a_hat]`
/// rows thinned to at most 2000.
#[wasm_bindgen]
pub fn qv_demo(a: f64, n_steps: usize, window: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    if !(a > 0.0) || n_steps == 0 {
        return Err(JsError::new("need a > 0 and at least one step"));
    }
    let path = sample_control_paths(&PathControl::Constant(a), 1, n_steps, seed)
        .pop()
        .expect("one path")
        .path;
    let qv = quadratic_variation(&path);
    let hat = density_estimate(&qv, window).map_err(js_err)?;
    let stride = (path.len() / 2000).max(1);
    let mut out = Vec::new();
    for k in (0..path.len()).step_by(stride) {
        out.extend([path.grid()[k], path.scalar_at(k), qv.entry(k, 0, 0), hat.entry(k, 0, 0)]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uvm_profile_has_triples_and_value() {
        let out = uvm_profile(1.0, 2.0, "call", 0.0).unwrap();
        assert_eq!((out.len() - 1) % 3, 0);
        assert!((out[0] - 0.7979).abs() < 0.01);
    }

    #[test]
    fn qv_demo_rows() {
        let out = qv_demo(4.0, 10_000, 0.1, 1).unwrap();
        assert_eq!(out.len() % 4, 0);
        let last_qv = out[out.len() - 2];
        assert!((last_qv - 4.0).abs() < 0.3);
    }

    #[test]
    fn gamma_band_profile_runs() {
        let out = gamma_band_profile(1.0, 0.5, 0.5, "butterfly", 0.0).unwrap();
        assert!(out[0].is_finite());
    }
}
