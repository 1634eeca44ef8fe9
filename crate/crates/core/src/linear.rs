//! Mean-value dynamics with frozen polarization (Holstein-Primakoff regime),
//! the two-mode reduction and the closed-form swap results.
//!
//! Spin amplitudes are integrated as c_m = sqrt(N) s_m, which keeps every
//! variable O(alpha) regardless of N. Then
//!   da/dt  = -(kappa + i dcs) a - i g_ens sum_m w_m c_m + sqrt(2 kappa) beta
//!   dc_m/dt = -(gamma + i delta_m) c_m + i g_ens p_m a
//! and the collective mode is b = sum_m w_m c_m.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{ode_err, Result, SimError};
use crate::grid::FrequencyGrid;
use crate::ode::{self, Options, System};
use crate::params::{CavitySegment, PhysicalParams, SegmentAction};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, PartialEq)]
pub struct LinearState {
    pub a: Complex64,
    /// Per-spin mean of sigma_minus in each class.
    pub s: Vec<Complex64>,
    /// Frozen sigma_z per class, +-1.
    pub p: Vec<f64>,
}

impl LinearState {
    /// Cavity coherent amplitude `alpha`, spins in the ground state.
    pub fn ground(grid: &FrequencyGrid, alpha: Complex64) -> Self {
        LinearState { a: alpha, s: vec![Complex64::new(0.0, 0.0); grid.len()], p: vec![-1.0; grid.len()] }
    }

    /// Collective mode amplitude b = sum_m (g pop_m / g_ens) s_m.
    pub fn collective(&self, grid: &FrequencyGrid, params: &PhysicalParams) -> Complex64 {
        let sqrt_n = params.n_spins.sqrt();
        grid.classes.iter().zip(&self.s).map(|(c, s)| s * (c.weight * sqrt_n)).sum()
    }

    /// Ideal pi rotation about the equatorial axis at azimuth `phi`.
    pub fn apply_pi_rotation(&mut self, phi: f64) {
        let ph = Complex64::from_polar(1.0, -2.0 * phi);
        for s in &mut self.s {
            *s = ph * s.conj();
        }
        for p in &mut self.p {
            *p = -*p;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LinearTrajectory {
    pub t: Vec<f64>,
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
}

impl LinearTrajectory {
    fn push(&mut self, t: f64, a: Complex64, b: Complex64) {
        self.t.push(t);
        self.a.push(a);
        self.b.push(b);
    }
}

/// Rates entering the linear equations. `kappa` and `gamma` may be negative
/// for the time-reversed dynamics used by the reverse swap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearRates {
    pub kappa: f64,
    pub delta_cs: f64,
    /// Transverse decay of every class.
    pub gamma: f64,
    /// Zero when hard-decoupled.
    pub g_ens: f64,
}

impl LinearRates {
    pub fn for_segment(params: &PhysicalParams, grid: &FrequencyGrid, seg: &CavitySegment) -> Self {
        LinearRates {
            kappa: seg.kappa,
            delta_cs: seg.delta_cs,
            gamma: grid.gamma_class(params),
            g_ens: if seg.is_coupled() { params.g_ens() } else { 0.0 },
        }
    }
}

type Drive<'a> = &'a dyn Fn(f64) -> Complex64;

struct LinearSystem<'a> {
    rates: LinearRates,
    deltas: Vec<f64>,
    weights: Vec<f64>,
    p: Vec<f64>,
    drive: Option<Drive<'a>>,
}

impl System for LinearSystem<'_> {
    fn dim(&self) -> usize {
        2 + 2 * self.deltas.len()
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let r = self.rates;
        let a = Complex64::new(y[0], y[1]);
        let mut sum = Complex64::new(0.0, 0.0);
        let ga = I * a * r.g_ens;
        for m in 0..self.deltas.len() {
            let c = Complex64::new(y[2 + 2 * m], y[3 + 2 * m]);
            sum += c * self.weights[m];
            let dc = -Complex64::new(r.gamma, self.deltas[m]) * c + ga * self.p[m];
            dy[2 + 2 * m] = dc.re;
            dy[3 + 2 * m] = dc.im;
        }
        let mut da = -Complex64::new(r.kappa, r.delta_cs) * a - I * sum * r.g_ens;
        if let Some(beta) = self.drive {
            da += beta(t) * (2.0 * r.kappa).sqrt();
        }
        dy[0] = da.re;
        dy[1] = da.im;
    }
}

fn pack(state: &LinearState, sqrt_n: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(2 + 2 * state.s.len());
    y.push(state.a.re);
    y.push(state.a.im);
    for s in &state.s {
        y.push(s.re * sqrt_n);
        y.push(s.im * sqrt_n);
    }
    y
}

fn unpack(y: &[f64], state: &mut LinearState, sqrt_n: f64) {
    state.a = Complex64::new(y[0], y[1]);
    for (m, s) in state.s.iter_mut().enumerate() {
        *s = Complex64::new(y[2 + 2 * m], y[3 + 2 * m]) / sqrt_n;
    }
}

fn collective_of(y: &[f64], weights: &[f64]) -> Complex64 {
    weights.iter().enumerate().map(|(m, w)| Complex64::new(y[2 + 2 * m], y[3 + 2 * m]) * w).sum()
}

/// Evolve for `duration` with explicit rates, sampling at `times` (relative to
/// the start, ascending, inside `[0, duration]`).
pub fn evolve_with_rates(
    state: &LinearState,
    rates: LinearRates,
    grid: &FrequencyGrid,
    params: &PhysicalParams,
    drive: Option<Drive<'_>>,
    duration: f64,
    times: &[f64],
    opts: Options,
) -> Result<(LinearState, LinearTrajectory)> {
    let sqrt_n = params.n_spins.sqrt();
    let weights: Vec<f64> = grid.weights().collect();
    let mut out = state.clone();
    let mut traj = LinearTrajectory::default();

    if rates.g_ens == 0.0 && drive.is_none() {
        // independent exponentials
        let ka = Complex64::new(rates.kappa, rates.delta_cs);
        let decay = |t: f64| -> Vec<Complex64> {
            grid.classes.iter().zip(&state.s).map(|(c, s)| s * (-Complex64::new(rates.gamma, c.delta) * t).exp()).collect()
        };
        for &t in times {
            let s = decay(t);
            let b: Complex64 = s.iter().zip(&weights).map(|(s, w)| s * (w * sqrt_n)).sum();
            traj.push(t, state.a * (-ka * t).exp(), b);
        }
        out.a = state.a * (-ka * duration).exp();
        out.s = decay(duration);
        return Ok((out, traj));
    }

    let mut sys = LinearSystem {
        rates,
        deltas: grid.deltas().collect(),
        weights: weights.clone(),
        p: state.p.clone(),
        drive,
    };
    let mut y = pack(state, sqrt_n);
    let n = y.len();
    let mut stepper = ode::Dop853::new(n, Options { dense: !times.is_empty(), ..opts });
    let mut next = 0;
    let mut buf = vec![0.0; n];
    while next < times.len() && times[next] <= 0.0 {
        traj.push(times[next], Complex64::new(y[0], y[1]), collective_of(&y, &weights));
        next += 1;
    }
    stepper
        .integrate(&mut sys, 0.0, &mut y, duration, |step| {
            let Some(dense) = step.dense else { return };
            while next < times.len() && dense.contains(times[next]) {
                dense.eval(times[next], &mut buf);
                traj.push(times[next], Complex64::new(buf[0], buf[1]), collective_of(&buf, &weights));
                next += 1;
            }
        })
        .map_err(ode_err(0))?;
    unpack(&y, &mut out, sqrt_n);
    Ok((out, traj))
}

/// Evolve through one segment. An ideal pi rotation carried by the segment is
/// applied at its scheduled offset; sech drives need the nonlinear engine.
pub fn evolve_linear(
    state: &LinearState,
    segment: &CavitySegment,
    grid: &FrequencyGrid,
    params: &PhysicalParams,
    drive: Option<Drive<'_>>,
    times: &[f64],
) -> Result<(LinearState, LinearTrajectory)> {
    segment.validate()?;
    let rates = LinearRates::for_segment(params, grid, segment);
    let opts = Options::default();
    match segment.action {
        SegmentAction::None => evolve_with_rates(state, rates, grid, params, drive, segment.duration, times, opts),
        SegmentAction::Rotation { spec, at } => {
            if (spec.angle.abs() - PI).abs() > 1e-12 {
                return Err(SimError::InvalidParams("linear dynamics only support pi rotations".into()));
            }
            let phi = spec.axis[1].atan2(spec.axis[0]);
            let (before, after): (Vec<f64>, Vec<f64>) = times.iter().partition(|&&t| t < at);
            let (mut mid, mut traj) = evolve_with_rates(state, rates, grid, params, drive, at, &before, opts)?;
            mid.apply_pi_rotation(phi);
            let shifted: Vec<f64> = after.iter().map(|t| t - at).collect();
            let shifted_drive = drive.map(|d| move |t: f64| d(t + at));
            let dref = shifted_drive.as_ref().map(|d| d as &dyn Fn(f64) -> Complex64);
            let (end, tail) = evolve_with_rates(&mid, rates, grid, params, dref, segment.duration - at, &shifted, opts)?;
            traj.t.extend(tail.t.iter().map(|t| t + at));
            traj.a.extend(tail.a);
            traj.b.extend(tail.b);
            Ok((end, traj))
        }
        SegmentAction::Sech(_) => {
            Err(SimError::InvalidParams("sech drives require the moment engine".into()))
        }
    }
}

/// Coefficients of the homogeneous two-mode system
///   da/dt = -(kappa + i dcs) a - i g_ens b,  db/dt = -Gamma b - i p g_ens a.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoMode {
    pub kappa: f64,
    pub delta_cs: f64,
    pub g_ens: f64,
    pub gamma: f64,
    /// Polarization of the ensemble, -1 for the ground state.
    pub p: f64,
}

pub fn two_mode_reduction(params: &PhysicalParams, segment: &CavitySegment) -> TwoMode {
    TwoMode {
        kappa: segment.kappa,
        delta_cs: segment.delta_cs,
        g_ens: if segment.is_coupled() { params.g_ens() } else { 0.0 },
        gamma: params.gamma(),
        p: -1.0,
    }
}

impl TwoMode {
    /// Drift matrix acting on (a, b).
    pub fn matrix(&self) -> [[Complex64; 2]; 2] {
        [
            [-Complex64::new(self.kappa, self.delta_cs), -I * self.g_ens],
            [I * (self.p * self.g_ens), Complex64::new(-self.gamma, 0.0)],
        ]
    }

    /// Eigenvalues of the drift matrix.
    pub fn normal_mode_rates(&self) -> (Complex64, Complex64) {
        let m = self.matrix();
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let disc = (tr * tr - det * 4.0).sqrt();
        ((tr + disc) * 0.5, (tr - disc) * 0.5)
    }

    pub fn evolve(&self, a0: Complex64, b0: Complex64, times: &[f64], opts: Options) -> Result<Vec<(Complex64, Complex64)>> {
        struct Sys(TwoMode);
        impl System for Sys {
            fn dim(&self) -> usize {
                4
            }
            fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) {
                let m = self.0.matrix();
                let a = Complex64::new(y[0], y[1]);
                let b = Complex64::new(y[2], y[3]);
                let da = m[0][0] * a + m[0][1] * b;
                let db = m[1][0] * a + m[1][1] * b;
                dy.copy_from_slice(&[da.re, da.im, db.re, db.im]);
            }
        }
        let Some(&t_end) = times.last() else { return Ok(Vec::new()) };
        let y0 = [a0.re, a0.im, b0.re, b0.im];
        let samples = ode::solve_sampled(&mut Sys(*self), 0.0, &y0, t_end, times, opts).map_err(ode_err(0))?;
        Ok(samples.iter().map(|v| (Complex64::new(v[0], v[1]), Complex64::new(v[2], v[3]))).collect())
    }
}

/// Swap frequency g' for cavity decay `kappa` and collective decay `gamma`.
fn swap_frequency(g_ens: f64, kappa: f64, gamma: f64) -> Result<f64> {
    let d = kappa - gamma;
    let diff_sq = d * d;
    let four_g_sq = 4.0 * g_ens * g_ens;
    if diff_sq >= four_g_sq {
        return Err(SimError::Overdamped { diff_sq, four_g_sq });
    }
    Ok(g_ens * (1.0 - diff_sq / four_g_sq).sqrt())
}

fn swap_rates(params: &PhysicalParams, kappa: f64, reverse: bool) -> (f64, f64) {
    if reverse {
        (-kappa, -params.gamma_perp() + 0.5 * params.w)
    } else {
        (kappa, params.gamma())
    }
}

/// Resonant swap from cavity amplitude `alpha` into an empty ensemble,
/// returning (a_c(t), b(t)).
pub fn swap_closed_form(t: f64, alpha: Complex64, params: &PhysicalParams, kappa: f64) -> Result<(Complex64, Complex64)> {
    let gamma = params.gamma();
    let g_ens = params.g_ens();
    let gp = swap_frequency(g_ens, kappa, gamma)?;
    let env = (-(kappa + gamma) * t / 2.0).exp();
    let (s, c) = (gp * t).sin_cos();
    let a = alpha * env * (c - (kappa - gamma) / (2.0 * gp) * s);
    let b = -I * alpha * (g_ens / gp) * env * s;
    Ok((a, b))
}

/// Time at which the cavity amplitude first vanishes. `reverse` flips the
/// signs of kappa and gamma_perp.
pub fn swap_time(params: &PhysicalParams, kappa: f64, reverse: bool) -> Result<f64> {
    let (k, gamma) = swap_rates(params, kappa, reverse);
    let gp = swap_frequency(params.g_ens(), k, gamma)?;
    Ok(FRAC_PI_2 / gp * (1.0 - (2.0 / PI) * ((k - gamma) / (2.0 * gp)).atan()))
}

/// Unwrapped phase phi_m of each class, with s_m = |s_m| e^{-i phi_m}.
/// Classes with zero amplitude are skipped.
pub fn phase_profile(state: &LinearState, grid: &FrequencyGrid) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> = grid
        .classes
        .iter()
        .zip(&state.s)
        .filter(|(_, s)| s.norm() > 0.0 && s.is_finite())
        .map(|(c, s)| (c.delta, -s.arg()))
        .collect();
    if pts.is_empty() {
        return pts;
    }
    let centre = (0..pts.len())
        .min_by(|&i, &j| pts[i].0.abs().total_cmp(&pts[j].0.abs()))
        .unwrap_or(0);
    let mut out = pts.clone();
    let wrap = |prev: f64, raw: f64| raw + (2.0 * PI) * ((prev - raw) / (2.0 * PI)).round();
    for k in centre + 1..out.len() {
        out[k].1 = wrap(out[k - 1].1, pts[k].1);
    }
    for k in (0..centre).rev() {
        out[k].1 = wrap(out[k + 1].1, pts[k].1);
    }
    out
}

/// Least-squares slope of phi - pi/2 against delta for |delta| <= `window`.
pub fn focus_time(profile: &[(f64, f64)], window: f64) -> Result<f64> {
    let pts: Vec<&(f64, f64)> = profile.iter().filter(|(d, _)| d.abs() <= window).collect();
    if pts.len() < 5 {
        return Err(SimError::Degenerate(format!(
            "focus fit needs at least 5 classes within |delta| <= {window}, found {}",
            pts.len()
        )));
    }
    let num: f64 = pts.iter().map(|(d, p)| d * (p - FRAC_PI_2)).sum();
    let den: f64 = pts.iter().map(|(d, _)| d * d).sum();
    if den == 0.0 {
        return Err(SimError::Degenerate("focus fit window contains only delta = 0".into()));
    }
    Ok(num / den)
}

/// Swap a unit cavity excitation into the ensemble for the swap time and fit
/// the resulting phase slope over |delta| <= 0.5 / T_swap. With `reverse` the
/// decay rates are sign-flipped, mirroring the retrieval in time.
pub fn swap_focus_time(params: &PhysicalParams, grid: &FrequencyGrid, kappa: f64, reverse: bool) -> Result<f64> {
    let t_swap = swap_time(params, kappa, reverse)?;
    let (k, _) = swap_rates(params, kappa, reverse);
    let gperp = if reverse { -params.gamma_perp() } else { params.gamma_perp() };
    let rates = LinearRates { kappa: k, delta_cs: 0.0, gamma: gperp + grid.extra_decay, g_ens: params.g_ens() };
    let start = LinearState::ground(grid, Complex64::new(1.0, 0.0));
    let (end, _) = evolve_with_rates(&start, rates, grid, params, None, t_swap, &[], Options::default())?;
    focus_time(&phase_profile(&end, grid), 0.5 / t_swap)
}
