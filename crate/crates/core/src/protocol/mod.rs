//! End-to-end storage, refocusing and retrieval runs.
//!
//! A protocol run integrates the signal-free mean-field trajectory once.
//! The input enters as a small displacement on top of it: the mean
//! input-output map is the exact linear response, and output variances come
//! from propagating the output quadratures backward along the trajectory
//! (Var(l^T z(T)) = l(0)^T C0 l(0) + int l^T D l dt). Nothing of size
//! (3M)^2 is ever formed, so realistic grids stay cheap.

pub(crate) mod engine;
pub mod filter;
pub mod fit;

use std::f64::consts::{FRAC_PI_2, SQRT_2};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Result, SimError};
use crate::grid::FrequencyGrid;
use crate::moments::SystemState;
use crate::ode::Tolerances;
use crate::params::{PhysicalParams, RotationSpec};
use crate::schedule::ProtocolSchedule;

use engine::{Background, EngineOptions};
pub use filter::{inverse_filter_beta, sech_drive_amplitude, sech_target, BetaTrajectory, Target};
pub use fit::{fit_gain_decay, fit_io_map, qubit_fidelity, qubit_fidelity_symmetric, variance_along, GainMap, IoPair};

/// Rotate all classes of a state (means and covariance blocks).
pub fn apply_rotation(state: &SystemState, spec: &RotationSpec) -> Result<SystemState> {
    RotationSpec::new(spec.axis, spec.angle)?;
    let mut out = state.clone();
    out.rotate(spec);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub tol: Tolerances,
    pub adjoint_tol: Tolerances,
    /// Steps between stored background states.
    pub checkpoint_every: usize,
    /// Times at which the relative excess spin noise is evaluated.
    pub resn_times: Vec<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            tol: Tolerances::default(),
            adjoint_tol: Tolerances::default(),
            checkpoint_every: 32,
            resn_times: Vec::new(),
        }
    }
}

impl RunOptions {
    fn engine(&self) -> EngineOptions {
        EngineOptions { tol: self.tol, adjoint_tol: self.adjoint_tol, checkpoint_every: self.checkpoint_every }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundarySample {
    pub t: f64,
    /// Signal-free cavity mean, unscaled.
    pub a: Complex64,
    /// Signal-free S_minus^eff / sqrt(N).
    pub b: Complex64,
    pub excitation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResnSample {
    pub t: f64,
    pub resn: f64,
    /// (Var S_x^eff, Var S_y^eff) / N.
    pub spin_var: (f64, f64),
}

/// Raw outcome of one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolRun {
    pub input: Complex64,
    /// Background plus linear response to the input.
    pub output_mean: Complex64,
    /// Output of the signal-free run (echoes of imperfect pulses).
    pub background_output: Complex64,
    /// Linear response (X_in, P_in) -> (X_out, P_out), row-major.
    pub mean_map: [[f64; 2]; 2],
    /// Output [[Var X, Cov], [Cov, Var P]].
    pub cavity_cov: [[f64; 2]; 2],
    pub p_exc_end: f64,
    pub boundaries: Vec<BoundarySample>,
    pub resn_series: Vec<ResnSample>,
    pub diagnostics: Vec<String>,
}

/// Summary record of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub gain_map: GainMap,
    pub theta: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub sigma_sq: f64,
    pub gain_avg: f64,
    /// 2 sigma^2 - 1.
    pub ren: f64,
    pub p_exc_end: f64,
    pub f_q: f64,
    pub resn_series: Vec<ResnSample>,
    pub diagnostics: Vec<String>,
}

/// Tolerated angle between the mean-map axis and the covariance axis.
const AXIS_MISMATCH: f64 = 3.0 * std::f64::consts::PI / 180.0;
/// Relative gain or variance split below which the axes are not compared.
const ANISOTROPY: f64 = 1e-3;

impl ProtocolRun {
    pub fn result(&self) -> Result<RunResult> {
        let m = nalgebra::Matrix2::new(
            -self.mean_map[0][0],
            -self.mean_map[0][1],
            -self.mean_map[1][0],
            -self.mean_map[1][1],
        );
        let gain_map = GainMap::from_matrix(&m)?;
        let sigma1_sq = variance_along(&self.cavity_cov, gain_map.theta1);
        let sigma2_sq = variance_along(&self.cavity_cov, gain_map.theta1 + FRAC_PI_2);
        let mut diagnostics = self.diagnostics.clone();
        if let Some(angle) = covariance_axis(&self.cavity_cov) {
            // below ~1e-3 relative anisotropy either axis is dominated by noise
            let c = &self.cavity_cov;
            let spread = ((c[0][0] - c[1][1]).powi(2) + (c[0][1] + c[1][0]).powi(2)).sqrt();
            let anisotropic = (gain_map.g1 - gain_map.g2).abs() > ANISOTROPY * gain_map.g1.abs()
                && spread > ANISOTROPY * (c[0][0] + c[1][1]);
            let d = axis_distance(angle, gain_map.theta1);
            if anisotropic && d > AXIS_MISMATCH {
                diagnostics.push(format!(
                    "covariance major axis {:.2} deg differs from map axis {:.2} deg",
                    angle.to_degrees(),
                    gain_map.theta1.to_degrees()
                ));
            }
        }
        let sigma_sq = 0.5 * (sigma1_sq + sigma2_sq);
        Ok(RunResult {
            gain_map,
            theta: gain_map.theta(),
            sigma1_sq,
            sigma2_sq,
            sigma_sq,
            gain_avg: gain_map.gain_avg(),
            ren: 2.0 * sigma_sq - 1.0,
            p_exc_end: self.p_exc_end,
            f_q: qubit_fidelity(&gain_map, sigma1_sq, sigma2_sq),
            resn_series: self.resn_series.clone(),
            diagnostics,
        })
    }
}

/// Major-axis angle of a 2x2 covariance; None when isotropic.
fn covariance_axis(c: &[[f64; 2]; 2]) -> Option<f64> {
    let (a, b, d) = (c[0][0], 0.5 * (c[0][1] + c[1][0]), c[1][1]);
    let spread = ((a - d).powi(2) + 4.0 * b * b).sqrt();
    if spread <= 1e-9 * (a + d).abs() {
        return None;
    }
    Some(0.5 * (2.0 * b).atan2(a - d))
}

/// Distance between two axis directions (mod pi).
fn axis_distance(a: f64, b: f64) -> f64 {
    let x = (a - b).rem_euclid(std::f64::consts::PI);
    x.min(std::f64::consts::PI - x)
}

fn ground_state(grid: &FrequencyGrid) -> (Vec<f64>, Vec<[f64; 3]>) {
    let bloch = vec![[0.0, 0.0, -1.0]; grid.len()];
    let mut y = vec![0.0; 2 + 3 * grid.len()];
    for m in 0..grid.len() {
        y[4 + 3 * m] = -1.0;
    }
    (y, bloch)
}

fn boundary_sample(t: f64, y: &[f64], weights: &[f64], sqrt_n: f64) -> BoundarySample {
    let mut b = Complex64::new(0.0, 0.0);
    let mut exc = 0.0;
    for (m, w) in weights.iter().enumerate() {
        let i = 2 + 3 * m;
        b += Complex64::new(y[i], -y[i + 1]) * (0.5 * w * sqrt_n);
        exc += w * 0.5 * (1.0 + y[i + 2]);
    }
    BoundarySample { t, a: Complex64::new(y[0], y[1]) * (sqrt_n / SQRT_2), b, excitation: exc }
}

fn excitation_of(y: &[f64], weights: &[f64]) -> f64 {
    weights.iter().enumerate().map(|(m, w)| w * 0.5 * (1.0 + y[4 + 3 * m])).sum()
}

/// Functionals for (S_x^eff, S_y^eff) / sqrt(N).
fn spin_functionals(weights: &[f64]) -> [Vec<f64>; 2] {
    let n = 2 + 3 * weights.len();
    let mut lx = vec![0.0; n];
    let mut ly = vec![0.0; n];
    for (m, w) in weights.iter().enumerate() {
        lx[2 + 3 * m] = w.sqrt();
        ly[3 + 3 * m] = w.sqrt();
    }
    [lx, ly]
}

fn cavity_functionals(n: usize) -> [Vec<f64>; 2] {
    let mut lx = vec![0.0; n];
    let mut lp = vec![0.0; n];
    lx[0] = 1.0;
    lp[1] = 1.0;
    [lx, lp]
}

/// Output block checks: PSD and the uncertainty bound.
fn check_output_block(c: &[[f64; 2]; 2], t: f64) -> Result<()> {
    let tr = c[0][0] + c[1][1];
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let min_eig = 0.5 * (tr - ((c[0][0] - c[1][1]).powi(2) + 4.0 * c[0][1] * c[1][0]).max(0.0).sqrt());
    if min_eig < -1e-9 * tr || det < 0.25 * (1.0 - 1e-6) {
        return Err(SimError::NotPsd { t, min_eig: min_eig.min(det - 0.25), trace: tr });
    }
    Ok(())
}

fn resn_samples(bg: &Background, bloch0: &[[f64; 3]], times: &[f64]) -> Result<Vec<ResnSample>> {
    let funcs = spin_functionals(&bg.weights);
    times
        .iter()
        .map(|&t| {
            let adj = bg.adjoint(&funcs, t)?;
            let c = adj.covariance(bloch0);
            let spin_var = (c[0], c[3]);
            Ok(ResnSample { t, resn: 0.5 * (spin_var.0 + spin_var.1) - 1.0, spin_var })
        })
        .collect()
}

/// Run the full protocol for a cavity input `input` (coherent amplitude),
/// spins starting in the ground state.
pub fn run_protocol(
    schedule: &ProtocolSchedule,
    grid: &FrequencyGrid,
    params: &PhysicalParams,
    input: Complex64,
    opts: &RunOptions,
) -> Result<ProtocolRun> {
    for s in &schedule.segments {
        s.validate()?;
    }
    let sqrt_n = params.n_spins.sqrt();
    let (y0, bloch0) = ground_state(grid);
    let bg = Background::run(schedule, params, grid, y0, opts.engine())?;
    let t_end = bg.total();
    let adj = bg.adjoint(&cavity_functionals(bg.dim()), t_end)?;
    let c = adj.covariance(&bloch0);
    let cavity_cov = [[c[0], c[1]], [c[2], c[3]]];
    check_output_block(&cavity_cov, t_end)?;
    let mean_map = [[adj.l0[0][0], adj.l0[0][1]], [adj.l0[1][0], adj.l0[1][1]]];
    let background_output = Complex64::new(bg.y_end[0], bg.y_end[1]) * (sqrt_n / SQRT_2);
    let (xin, pin) = (SQRT_2 * input.re, SQRT_2 * input.im);
    let xout = mean_map[0][0] * xin + mean_map[0][1] * pin;
    let pout = mean_map[1][0] * xin + mean_map[1][1] * pin;
    let output_mean = background_output + Complex64::new(xout, pout) / SQRT_2;
    let mut boundaries = vec![boundary_sample(0.0, &bg.y0, &bg.weights, sqrt_n)];
    boundaries.extend(bg.boundaries.iter().map(|(t, y)| boundary_sample(*t, y, &bg.weights, sqrt_n)));
    let resn_series = resn_samples(&bg, &bloch0, &opts.resn_times)?;
    let mut diagnostics = Vec::new();
    let revival = grid.revival_time();
    if revival < schedule.t_mem {
        diagnostics.push(format!("grid revival time {revival:.3} is shorter than t_mem {:.3}", schedule.t_mem));
    }
    Ok(ProtocolRun {
        input,
        output_mean,
        background_output,
        mean_map,
        cavity_cov,
        p_exc_end: excitation_of(&bg.y_end, &bg.weights),
        boundaries,
        resn_series,
        diagnostics,
    })
}

/// Eight amplitudes of modulus `r` at 45 degree spacing.
pub fn ring_amplitudes(r: f64) -> Vec<Complex64> {
    (0..8).map(|k| Complex64::from_polar(r, k as f64 * std::f64::consts::FRAC_PI_4)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Battery {
    /// Output means relative to the signal-free output.
    pub pairs: Vec<IoPair>,
    pub gain_map: GainMap,
    /// Output covariance of the vacuum run.
    pub cavity_cov: [[f64; 2]; 2],
    /// Output covariance with the first nonzero amplitude as input.
    pub spot_cov: [[f64; 2]; 2],
    pub background_output: Complex64,
    pub warnings: Vec<String>,
}

/// One full nonlinear run per amplitude plus a vacuum run for the output
/// covariance; the covariance is spot-checked for input independence.
pub fn run_battery(
    schedule: &ProtocolSchedule,
    grid: &FrequencyGrid,
    params: &PhysicalParams,
    amplitudes: &[Complex64],
    opts: &RunOptions,
) -> Result<Battery> {
    let Some(&probe) = amplitudes.iter().find(|a| a.norm() > 0.0) else {
        return Err(SimError::Degenerate("battery needs at least one nonzero amplitude".into()));
    };
    let sqrt_n = params.n_spins.sqrt();
    let (y0, bloch0) = ground_state(grid);
    let bg = Background::run(schedule, params, grid, y0.clone(), opts.engine())?;
    let n = bg.dim();
    let mut pairs = Vec::with_capacity(amplitudes.len());
    for &alpha in amplitudes {
        let mut d0 = vec![0.0; n];
        d0[0] = SQRT_2 * alpha.re / sqrt_n;
        d0[1] = SQRT_2 * alpha.im / sqrt_n;
        let d = if alpha.norm() > 0.0 { bg.increment(&d0)? } else { vec![0.0; n] };
        pairs.push(IoPair {
            input: [SQRT_2 * alpha.re, SQRT_2 * alpha.im],
            output: [d[0] * sqrt_n, d[1] * sqrt_n],
        });
    }
    let gain_map = fit_io_map(&pairs)?;
    let t_end = bg.total();
    let funcs = cavity_functionals(n);
    let c = bg.adjoint(&funcs, t_end)?.covariance(&bloch0);
    let cavity_cov = [[c[0], c[1]], [c[2], c[3]]];
    check_output_block(&cavity_cov, t_end)?;
    let mut yp = y0;
    yp[0] = SQRT_2 * probe.re / sqrt_n;
    yp[1] = SQRT_2 * probe.im / sqrt_n;
    let bp = Background::run(schedule, params, grid, yp, opts.engine())?;
    let c = bp.adjoint(&funcs, t_end)?.covariance(&bloch0);
    let spot_cov = [[c[0], c[1]], [c[2], c[3]]];
    let mut warnings = Vec::new();
    let scale = cavity_cov[0][0].abs() + cavity_cov[1][1].abs();
    let diff = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (spot_cov[i][j] - cavity_cov[i][j]).abs()).fold(0.0, f64::max);
    if diff > 0.01 * scale {
        warnings.push(format!("output covariance depends on the input (max change {diff:.3e}); inputs are not in the linear regime"));
    }
    let background_output = Complex64::new(bg.y_end[0], bg.y_end[1]) * (sqrt_n / SQRT_2);
    Ok(Battery { pairs, gain_map, cavity_cov, spot_cov, background_output, warnings })
}

/// Outcome of a refocusing run without swaps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectatorRun {
    /// S_minus(T_mem) = S_minus(0) * gain * exp(-i theta).
    pub gain: f64,
    pub theta: f64,
    pub resn: Vec<ResnSample>,
}

/// Spin refocusing with the signal stored in the ensemble at t = 0 and a
/// vacuum cavity. Returns the collective gain and phase at the end of the
/// schedule and the RESN at `resn_times`.
pub fn run_spectator(
    schedule: &ProtocolSchedule,
    grid: &FrequencyGrid,
    params: &PhysicalParams,
    resn_times: &[f64],
    opts: &RunOptions,
) -> Result<SpectatorRun> {
    let (y0, bloch0) = ground_state(grid);
    let bg = Background::run(schedule, params, grid, y0, opts.engine())?;
    let funcs = spin_functionals(&bg.weights);
    let adj = bg.adjoint(&funcs, bg.total())?;
    // unit collective displacement b0 = 1: u_x = 2 sqrt(w)
    let resp = |l: &[f64]| -> f64 { bg.weights.iter().enumerate().map(|(m, w)| l[2 + 3 * m] * 2.0 * w.sqrt()).sum() };
    let sx = resp(&adj.l0[0]);
    let sy = resp(&adj.l0[1]);
    let ratio = Complex64::new(sx, -sy) * 0.5;
    let resn = resn_samples(&bg, &bloch0, resn_times)?;
    Ok(SpectatorRun { gain: ratio.norm(), theta: -ratio.arg(), resn })
}

/// Var X_c(t) for a vacuum cavity meeting a fully inverted ensemble on a
/// resonant cavity, one backward propagation per sample time.
pub fn inverted_cavity_variance(
    params: &PhysicalParams,
    grid: &FrequencyGrid,
    kappa: f64,
    times: &[f64],
    opts: &RunOptions,
) -> Result<Vec<f64>> {
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let schedule = ProtocolSchedule {
        segments: vec![crate::params::CavitySegment::coupled(kappa, 0.0, t_max)],
        t_mem: t_max,
        t_swap: 0.0,
        t_swap_rev: 0.0,
        t_focus: 0.0,
        t_focus_rev: 0.0,
        rule: crate::schedule::FocusRule::Symmetric,
    };
    let (mut y0, mut bloch0) = ground_state(grid);
    for m in 0..grid.len() {
        y0[4 + 3 * m] = 1.0;
        bloch0[m][2] = 1.0;
    }
    let bg = Background::run(&schedule, params, grid, y0, opts.engine())?;
    let [lx, _] = cavity_functionals(bg.dim());
    let funcs = [lx];
    times
        .iter()
        .map(|&t| {
            if t <= 0.0 {
                return Ok(0.5);
            }
            Ok(bg.adjoint(&funcs, t)?.covariance(&bloch0)[0])
        })
        .collect()
}
