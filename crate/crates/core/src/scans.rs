//! Single points of the standard parameter scans: the ideal swap protocol,
//! the refocusing sequence with a detuned cavity and the driven-inversion
//! protocol. Every point is independent, so callers may run them in any
//! order or in parallel.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::grid::{auto_spacing, build_frequency_grid, FrequencyGrid};
use crate::linear::swap_time;
use crate::oracles::{decoupling_gain_theta, leakage_residual, resn_predictions, rule_of_thumb_gain};
use crate::params::PhysicalParams;
use crate::protocol::{fit_gain_decay, run_protocol, run_spectator, RunOptions, RunResult};
use crate::schedule::{build_schedule, ProtocolSchedule, ScheduleSpec};

/// Gain of the lossless ideal protocol at g_ens = 2.5 Gamma.
pub const G0_THUMB: f64 = 0.997;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub delta_cut: f64,
    /// Class spacing; `None` keeps the artificial revival at 4 t_mem.
    #[serde(default)]
    pub d_delta: Option<f64>,
}

impl GridSpec {
    pub fn build(&self, params: &PhysicalParams, t_mem: f64) -> Result<FrequencyGrid> {
        build_frequency_grid(params, self.delta_cut, self.d_delta.unwrap_or_else(|| auto_spacing(t_mem)))
    }
}

/// Spacing whose revival sits at `factor * t_mem`.
pub fn spacing_for(t_mem: f64, factor: f64) -> f64 {
    2.0 * PI / (factor * t_mem)
}

fn protocol_result(
    schedule: &ProtocolSchedule,
    grid: &FrequencyGrid,
    params: &PhysicalParams,
    opts: &RunOptions,
) -> Result<(RunResult, [[f64; 2]; 2])> {
    let run = run_protocol(schedule, grid, params, num_complex::Complex64::new(0.0, 0.0), opts)?;
    Ok((run.result()?, run.cavity_cov))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwapPoint {
    pub g_over_gamma: f64,
    pub kappa: f64,
    pub gamma_perp: f64,
    pub t_mem: f64,
    pub t_swap: f64,
    pub gain: f64,
    pub theta: f64,
    pub sigma_sq: f64,
    /// kappa T_swap and gamma_perp (T_mem - T_swap).
    pub x_kappa: f64,
    pub x_gamma: f64,
    pub thumb: f64,
    #[serde(skip)]
    pub cavity_cov: [[f64; 2]; 2],
}

/// Hard-decoupled protocol with ideal inversions and swap decay `kappa`.
pub fn swap_point(params: &PhysicalParams, kappa: f64, t_mem: f64, grid: &FrequencyGrid, opts: &RunOptions) -> Result<SwapPoint> {
    let sched = build_schedule(t_mem, params, &ScheduleSpec::ideal(kappa), grid)?;
    let (r, cavity_cov) = protocol_result(&sched, grid, params, opts)?;
    let gp = params.gamma_perp();
    Ok(SwapPoint {
        g_over_gamma: params.g_ens() / params.gamma(),
        kappa,
        gamma_perp: gp,
        t_mem,
        t_swap: sched.t_swap,
        gain: r.gain_avg,
        theta: r.theta,
        sigma_sq: r.sigma_sq,
        x_kappa: kappa * sched.t_swap,
        x_gamma: gp * (t_mem - sched.t_swap),
        thumb: rule_of_thumb_gain(G0_THUMB, kappa, gp, sched.t_swap, t_mem),
        cavity_cov,
    })
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> Result<f64>, target: f64) -> Result<f64> {
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Swap decay kappa with kappa T_swap(kappa) = x.
pub fn kappa_for_x(params: &PhysicalParams, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    // oscillatory swaps need kappa < Gamma + 2 g_ens
    let hi = (params.gamma() + 2.0 * params.g_ens()) * (1.0 - 1e-9);
    if hi * swap_time(params, hi, false)? < x {
        return Err(SimError::InvalidParams(format!("kappa T_swap = {x} is out of reach of oscillatory swaps")));
    }
    bisect(0.0, hi, |k| Ok(k * swap_time(params, k, false)?), x)
}

/// Dephasing rate with gamma_perp (T_mem - T_swap) = x, keeping
/// g_ens = ratio * Gamma(gamma_perp).
pub fn params_for_gamma_x(w: f64, n_spins: f64, ratio: f64, t_mem: f64, x: f64) -> Result<PhysicalParams> {
    let at = |gp: f64| {
        let tau = if gp == 0.0 { f64::INFINITY } else { 1.0 / gp };
        PhysicalParams::with_g_ens_over_gamma(w, tau, n_spins, ratio)
    };
    if x <= 0.0 {
        return at(0.0);
    }
    let gp = bisect(0.0, x / (0.5 * t_mem), |gp| {
        let p = at(gp)?;
        Ok(gp * (t_mem - swap_time(&p, 0.0, false)?))
    }, x)?;
    at(gp)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecouplePoint {
    pub kappa: f64,
    pub delta_cs: f64,
    pub delta_cs_prime: f64,
    pub quarter: f64,
    pub classes: usize,
    pub gain: f64,
    pub theta: f64,
    pub resn_mid: f64,
    pub resn_end: f64,
    pub pred_gain: f64,
    pub pred_theta: f64,
    pub pred_resn_mid: Option<f64>,
    pub pred_resn_end: Option<f64>,
    pub c_tilde: f64,
    pub residual: f64,
}

/// Grid for a refocusing run: cut-off beyond the cavity detuning and a
/// revival at 1.5 T_mem.
pub fn decouple_grid(params: &PhysicalParams, delta_cs: f64, quarter: f64) -> Result<FrequencyGrid> {
    build_frequency_grid(params, 1.3 * delta_cs.abs() + 10.0 * params.w, spacing_for(4.0 * quarter, 1.5))
}

/// Refocusing sequence (T, ideal pi, 2T, ideal pi, T) with the signal in
/// the ensemble at t = 0, against the adiabatic predictions.
pub fn decouple_point(
    params: &PhysicalParams,
    kappa: f64,
    delta_cs: f64,
    delta_cs_prime: f64,
    quarter: f64,
    grid: &FrequencyGrid,
    opts: &RunOptions,
) -> Result<DecouplePoint> {
    let sched = ProtocolSchedule::spectator(quarter, kappa, delta_cs, delta_cs_prime);
    let run = run_spectator(&sched, grid, params, &[2.0 * quarter, 4.0 * quarter], opts)?;
    let pred = decoupling_gain_theta(params, kappa, delta_cs, delta_cs_prime, 4.0 * quarter);
    let resn = resn_predictions(params, kappa, delta_cs_prime).ok();
    Ok(DecouplePoint {
        kappa,
        delta_cs,
        delta_cs_prime,
        quarter,
        classes: grid.len(),
        gain: run.gain,
        theta: run.theta,
        resn_mid: run.resn[0].resn,
        resn_end: run.resn[1].resn,
        pred_gain: pred.gain,
        pred_theta: pred.theta,
        pred_resn_mid: resn.map(|r| r.0),
        pred_resn_end: resn.map(|r| r.1),
        c_tilde: params.derived_rates(kappa, delta_cs_prime).c_tilde,
        residual: leakage_residual(params, delta_cs),
    })
}

/// One protocol run with the given schedule recipe.
pub fn inversion_point(
    params: &PhysicalParams,
    spec: &ScheduleSpec,
    t_mem: f64,
    grid: &FrequencyGrid,
    opts: &RunOptions,
) -> Result<(RunResult, [[f64; 2]; 2])> {
    let sched = build_schedule(t_mem, params, spec, grid)?;
    protocol_result(&sched, grid, params, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub g0: f64,
    pub t0: f64,
    pub t_swap: f64,
    /// (gamma_perp, gain) per run.
    pub points: Vec<(f64, f64)>,
}

/// Fit gain = g0 exp(-gamma_perp (t_mem - t0)) over the dephasing rates
/// `gammas`, keeping the single-spin coupling of `params`.
pub fn gain_decay_fit(
    params: &PhysicalParams,
    spec: &ScheduleSpec,
    t_mem: f64,
    gammas: &[f64],
    grid: &FrequencyGrid,
    opts: &RunOptions,
) -> Result<DecayFit> {
    let points = gammas
        .iter()
        .map(|&gp| {
            let p = params.with_gamma_perp(gp);
            Ok((gp, inversion_point(&p, spec, t_mem, grid, opts)?.0.gain_avg))
        })
        .collect::<Result<Vec<_>>>()?;
    let (g0, t0) = fit_gain_decay(&points, t_mem)?;
    Ok(DecayFit { g0, t0, t_swap: swap_time(params, spec.kappa_swap, false)?, points })
}
