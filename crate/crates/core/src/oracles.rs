//! Closed-form predictions for the refocusing protocol with a detuned
//! cavity (adiabatically eliminated), the mid/end excess spin noise and the
//! swap-loss rule of thumb.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Result, SimError};
use crate::params::PhysicalParams;

/// Cavity-induced shift and correlated decay for the outer (zeta) and
/// middle (zeta_prime) waits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StarkParams {
    pub zeta: Complex64,
    pub zeta_prime: Complex64,
    /// 2 kappa g^2 / (kappa^2 + dcs^2) for the outer waits.
    pub gamma_p: f64,
    /// Polarization during the outer waits (-1: not inverted).
    pub p: f64,
}

/// g_ens^2 (dcs + i kappa) / (kappa^2 + dcs^2).
pub fn zeta(g_ens: f64, kappa: f64, delta_cs: f64) -> Complex64 {
    Complex64::new(delta_cs, kappa) * (g_ens * g_ens / (kappa * kappa + delta_cs * delta_cs))
}

impl StarkParams {
    pub fn new(params: &PhysicalParams, kappa: f64, delta_cs: f64, delta_cs_prime: f64) -> Self {
        let g_ens = params.g_ens();
        StarkParams {
            zeta: zeta(g_ens, kappa, delta_cs),
            zeta_prime: zeta(g_ens, kappa, delta_cs_prime),
            gamma_p: params.derived_rates(kappa, delta_cs).gamma_p,
            p: -1.0,
        }
    }
}

/// g_ens^2 (dcs + dcs') / w / (kappa^2 + dcs^2).
fn bracket(params: &PhysicalParams, kappa: f64, delta_cs: f64, delta_cs_prime: f64) -> f64 {
    params.g_ens().powi(2) * (delta_cs + delta_cs_prime) / params.w / (kappa * kappa + delta_cs * delta_cs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainTheta {
    pub gain: f64,
    pub theta: f64,
    /// Set when |dcs| is not large against g_ens.
    pub warning: Option<&'static str>,
}

/// Gain and phase of the refocusing sequence with detuned waits.
pub fn decoupling_gain_theta(
    params: &PhysicalParams,
    kappa: f64,
    delta_cs: f64,
    delta_cs_prime: f64,
    t_mem: f64,
) -> GainTheta {
    let b = bracket(params, kappa, delta_cs, delta_cs_prime);
    let g_ens = params.g_ens();
    let warning = (delta_cs.abs().min(delta_cs_prime.abs()) < 4.0 * g_ens)
        .then_some("cavity detuning is not large against g_ens; adiabatic elimination is doubtful");
    GainTheta {
        gain: (-params.gamma_perp() * t_mem).exp() * (1.0 - b * b),
        theta: -2.0 * b.atan(),
        warning,
    }
}

/// Gain deficit from energy left in the cavity, g_ens^2 / dcs^2; not part of
/// the adiabatic prediction.
pub fn leakage_residual(params: &PhysicalParams, delta_cs: f64) -> f64 {
    (params.g_ens() / delta_cs).powi(2)
}

/// RESN at the middle (2T) and at the end (4T) of the refocusing sequence.
pub fn resn_predictions(params: &PhysicalParams, kappa: f64, delta_cs_prime: f64) -> Result<(f64, f64)> {
    let ct = params.derived_rates(kappa, delta_cs_prime).c_tilde;
    if ct >= 1.0 {
        return Err(SimError::Unstable(ct));
    }
    let kg = kappa + params.gamma();
    let mid = 2.0 * kappa * ct / (kg * (1.0 - ct));
    Ok((mid, mid * 2.0 * kappa / kg))
}

/// Collective mean <S_-(t)> for 0 <= t <= 4T with inversions about x at T
/// and 3T, valid for T >> 1/w.
pub fn adiabatic_trajectory(params: &PhysicalParams, stark: &StarkParams, quarter: f64, s0: Complex64, t: f64) -> Complex64 {
    let w = params.w;
    let gp = params.gamma_perp();
    let big_t = quarter;
    let (z, zp) = (stark.zeta, stark.zeta_prime);
    let i = Complex64::i();
    let den = Complex64::new(1.0, 0.0) + i * (z.conj() + zp) / w;
    let decay = (-gp * t).exp();
    if t <= big_t {
        s0 * (-params.gamma() * t).exp() * (i * z * t).exp()
    } else if t <= 2.0 * big_t {
        s0.conj() * decay * ((0.5 * w + i * z.conj()) * (t - 2.0 * big_t)).exp() / den
    } else if t <= 3.0 * big_t {
        s0.conj() * decay * (-(0.5 * w + i * zp) * (t - 2.0 * big_t)).exp() / den
    } else {
        let den4 = Complex64::new(1.0, 0.0) - i * (z + zp.conj()) / w;
        s0 * decay * ((0.5 * w - i * zp.conj()) * (t - 4.0 * big_t)).exp() / (den4 * den4)
    }
}

/// G0 e^{-kappa T_swap} e^{-gamma_perp (T_mem - T_swap)}.
pub fn rule_of_thumb_gain(g0: f64, kappa: f64, gamma_perp: f64, t_swap: f64, t_mem: f64) -> f64 {
    g0 * (-kappa * t_swap).exp() * (-gamma_perp * (t_mem - t_swap)).exp()
}
