//! Closed forms for an inverted ensemble coupled to a resonant cavity.

use num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::params::PhysicalParams;

/// (lambda_plus, lambda_minus, lambda_zero).
pub fn eigenrates(params: &PhysicalParams, kappa: f64) -> (f64, f64, f64) {
    let gamma = params.gamma();
    let g = params.g_ens();
    let mid = -(kappa + gamma) / 2.0;
    let root = 0.5 * ((kappa - gamma).powi(2) + 4.0 * g * g).sqrt();
    (mid + root, mid - root, mid)
}

/// Cavity amplitude and S_minus^eff = sum_j sigma_minus^(j) for a cavity
/// coherent state `alpha` meeting a fully inverted ensemble.
pub fn inverted_decay_closed_form(
    t: f64,
    alpha: Complex64,
    params: &PhysicalParams,
    kappa: f64,
) -> (Complex64, Complex64) {
    let gamma = params.gamma();
    let (lp, lm, _) = eigenrates(params, kappa);
    let pref = Complex64::new(0.0, params.g_bar() * params.n_spins) * alpha;
    if lp == lm {
        let e = (lp * t).exp();
        return (alpha * e * (1.0 + (lp + gamma) * t), pref * t * e);
    }
    let (ep, em) = ((lp * t).exp(), (lm * t).exp());
    let a = alpha * ((lp + gamma) * ep - (lm + gamma) * em) / (lp - lm);
    let s = pref * (ep - em) / (lp - lm);
    (a, s)
}

/// Steady-state (Var X_c, Var S_x^eff) of an inverted ensemble with cavity
/// detuning `delta_cs`.
pub fn steady_state_noise(params: &PhysicalParams, kappa: f64, delta_cs: f64) -> Result<(f64, f64)> {
    let gamma = params.gamma();
    let c = params.cooperativity(kappa);
    let d2 = (delta_cs / (kappa + gamma)).powi(2);
    let den = 1.0 + d2 - c;
    if den <= 0.0 {
        return Err(SimError::Unstable(c / (1.0 + d2)));
    }
    let r = c * (kappa - gamma) / (kappa + gamma);
    Ok((0.5 * (1.0 + d2 - r) / den, params.n_spins * (1.0 + d2 + r) / den))
}

/// Transient (Var X_c, Var S_x^eff) from vacuum and a fully inverted
/// ensemble at t = 0, resonant cavity.
pub fn transient_variance_closed_form(t: f64, params: &PhysicalParams, kappa: f64) -> Result<(f64, f64)> {
    let gamma = params.gamma();
    let g2 = params.g_ens().powi(2);
    let (lp, lm, l0) = eigenrates(params, kappa);
    if lp == 0.0 || lm == 0.0 || l0 == 0.0 {
        return Err(SimError::Degenerate(format!("vanishing eigenrate (lambda+ = {lp}, lambda- = {lm}, lambda0 = {l0})")));
    }
    let (vx_inf, vs_inf) = steady_state_noise(params, kappa, 0.0)?;
    let pref = g2 / ((kappa - gamma).powi(2) + 4.0 * g2);
    let (ep, em, e0) = ((2.0 * lp * t).exp(), (2.0 * lm * t).exp(), (2.0 * l0 * t).exp());
    let cross = (kappa - gamma) / l0 * e0;
    let vx = vx_inf + pref * ((gamma + lp) / lp * ep + (gamma + lm) / lm * em + cross);
    let vs = vs_inf + 2.0 * params.n_spins * pref * ((kappa + lp) / lp * ep + (kappa + lm) / lm * em - cross);
    Ok((vx, vs))
}
