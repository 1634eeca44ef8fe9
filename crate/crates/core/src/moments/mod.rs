//! Mean-field Maxwell-Bloch evolution with Gaussian second moments.

pub mod closed;
pub mod jacobian;
pub mod meanfield;

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{ode_err, Result, SimError};
use crate::grid::FrequencyGrid;
use crate::ode::{Dop853, Options, System, Tolerances};
use crate::params::{CavitySegment, DriveMode, PhysicalParams, RotationSpec, SegmentAction};

pub use closed::{eigenrates, inverted_decay_closed_form, steady_state_noise, transient_variance_closed_form};
pub use jacobian::Jacobian;
pub use meanfield::{MeanDrive, MeanField, SegmentRates};

/// Means and (optionally) covariance of the cavity and all spin classes.
///
/// The covariance is stored over (X, P, u_x0, u_y0, u_z0, ...) where
/// u = dS_m / sqrt(N_m) and S_m is the collective class operator; the entry
/// for S_m, S_k is recovered by multiplying with sqrt(N_m N_k).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub a: Complex64,
    pub bloch: Vec<[f64; 3]>,
    pub cov: Option<DMatrix<f64>>,
}

/// Coherent-state covariance: vacuum cavity, I - s s^T per class.
pub fn coherent_covariance(bloch: &[[f64; 3]]) -> DMatrix<f64> {
    let n = 2 + 3 * bloch.len();
    let mut c = DMatrix::zeros(n, n);
    c[(0, 0)] = 0.5;
    c[(1, 1)] = 0.5;
    for (m, s) in bloch.iter().enumerate() {
        let i = 2 + 3 * m;
        for r in 0..3 {
            for q in 0..3 {
                c[(i + r, i + q)] = if r == q { 1.0 } else { 0.0 } - s[r] * s[q];
            }
        }
    }
    c
}

impl SystemState {
    /// Cavity coherent state `alpha`, spins in the ground state.
    pub fn ground(grid: &FrequencyGrid, alpha: Complex64) -> Self {
        Self::polarized(grid, alpha, -1.0)
    }

    /// Cavity coherent state `alpha`, all spins inverted.
    pub fn inverted(grid: &FrequencyGrid, alpha: Complex64) -> Self {
        Self::polarized(grid, alpha, 1.0)
    }

    fn polarized(grid: &FrequencyGrid, alpha: Complex64, sz: f64) -> Self {
        let bloch = vec![[0.0, 0.0, sz]; grid.len()];
        let cov = Some(coherent_covariance(&bloch));
        SystemState { t: 0.0, a: alpha, bloch, cov }
    }

    pub fn dim(&self) -> usize {
        2 + 3 * self.bloch.len()
    }

    pub fn without_covariance(mut self) -> Self {
        self.cov = None;
        self
    }

    /// Collective mean S_minus^eff / sqrt(N) = sqrt(N) sum_m w_m s_minus_m.
    pub fn collective(&self, grid: &FrequencyGrid, params: &PhysicalParams) -> Complex64 {
        let sqrt_n = params.n_spins.sqrt();
        grid.classes
            .iter()
            .zip(&self.bloch)
            .map(|(c, s)| Complex64::new(s[0], -s[1]) * (0.5 * c.weight * sqrt_n))
            .sum()
    }

    /// Rotate every Bloch vector and the spin blocks of the covariance.
    pub fn rotate(&mut self, spec: &RotationSpec) {
        let r = spec.matrix();
        for s in &mut self.bloch {
            let v = *s;
            for i in 0..3 {
                s[i] = r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2];
            }
        }
        if let Some(c) = &mut self.cov {
            let n = c.nrows();
            let m = (n - 2) / 3;
            let mut rot = DMatrix::<f64>::identity(n, n);
            for k in 0..m {
                let i = 2 + 3 * k;
                for a in 0..3 {
                    for b in 0..3 {
                        rot[(i + a, i + b)] = r[a][b];
                    }
                }
            }
            let out = &rot * &*c * rot.transpose();
            *c = symmetrize(out);
        }
    }

    fn pack_means(&self, sqrt_n: f64) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.dim());
        y.push(SQRT_2 * self.a.re / sqrt_n);
        y.push(SQRT_2 * self.a.im / sqrt_n);
        for s in &self.bloch {
            y.extend_from_slice(s);
        }
        y
    }

    fn unpack_means(&mut self, y: &[f64], sqrt_n: f64) {
        self.a = Complex64::new(y[0], y[1]) * (sqrt_n / SQRT_2);
        for (m, s) in self.bloch.iter_mut().enumerate() {
            s.copy_from_slice(&y[2 + 3 * m..5 + 3 * m]);
        }
    }
}

fn symmetrize(c: DMatrix<f64>) -> DMatrix<f64> {
    let t = c.transpose();
    (c + t) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseObservables {
    /// (1/2N) <dSx^2 + dSy^2> - 1 over the whole ensemble.
    pub resn: f64,
    /// 2 sigma^2 - 1 with sigma^2 the mean cavity quadrature variance.
    pub ren: f64,
    /// Population-weighted mean of (1 + sz)/2.
    pub excitation: f64,
}

pub fn excitation(bloch: &[[f64; 3]], grid: &FrequencyGrid) -> f64 {
    grid.weights().zip(bloch).map(|(w, s)| w * 0.5 * (1.0 + s[2])).sum()
}

/// RESN of a scaled covariance: sum_mk sqrt(w_m w_k)(C_xx + C_yy)/2 - 1.
pub fn resn_of(cov: &DMatrix<f64>, grid: &FrequencyGrid) -> f64 {
    let sw: Vec<f64> = grid.weights().map(f64::sqrt).collect();
    let m = sw.len();
    let mut acc = 0.0;
    for a in 0..m {
        let ia = 2 + 3 * a;
        let mut row = 0.0;
        for b in 0..m {
            let ib = 2 + 3 * b;
            row += sw[b] * (cov[(ia, ib)] + cov[(ia + 1, ib + 1)]);
        }
        acc += sw[a] * row;
    }
    0.5 * acc - 1.0
}

pub fn noise_observables(state: &SystemState, grid: &FrequencyGrid) -> Option<NoiseObservables> {
    let cov = state.cov.as_ref()?;
    Some(NoiseObservables {
        resn: resn_of(cov, grid),
        ren: cov[(0, 0)] + cov[(1, 1)] - 1.0,
        excitation: excitation(&state.bloch, grid),
    })
}

/// Full-ensemble variances (Var S_x^eff, Var S_y^eff) in units of N.
pub fn collective_spin_variances(cov: &DMatrix<f64>, grid: &FrequencyGrid) -> (f64, f64) {
    let sw: Vec<f64> = grid.weights().map(f64::sqrt).collect();
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, wa) in sw.iter().enumerate() {
        for (b, wb) in sw.iter().enumerate() {
            let (ia, ib) = (2 + 3 * a, 2 + 3 * b);
            vx += wa * wb * cov[(ia, ib)];
            vy += wa * wb * cov[(ia + 1, ib + 1)];
        }
    }
    (vx, vy)
}

/// Smallest eigenvalue must stay above -1e-9 * trace.
pub fn check_psd(cov: &DMatrix<f64>, t: f64) -> Result<f64> {
    let trace = cov.trace();
    let eig = SymmetricEigen::new(cov.clone());
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-9 * trace.abs() {
        return Err(SimError::NotPsd { t, min_eig, trace });
    }
    Ok(min_eig)
}

#[derive(Debug, Clone)]
pub struct MomentOptions {
    /// Sample times relative to the segment start.
    pub sample_times: Vec<f64>,
    pub psd_check: bool,
    pub freeze_z: bool,
    pub tol: Tolerances,
}

impl Default for MomentOptions {
    fn default() -> Self {
        MomentOptions { sample_times: Vec::new(), psd_check: true, freeze_z: false, tol: Tolerances::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSample {
    pub t: f64,
    pub a: Complex64,
    /// Collective mean S_minus^eff / sqrt(N).
    pub b: Complex64,
    pub excitation: f64,
    /// Cavity block [[Var X, Cov], [Cov, Var P]] when the covariance is carried.
    pub cavity_cov: Option<[[f64; 2]; 2]>,
    /// (Var S_x^eff, Var S_y^eff) / N.
    pub spin_var: Option<(f64, f64)>,
    pub resn: Option<f64>,
}

struct CovSystem<'a> {
    mf: MeanField<'a>,
    jac: Jacobian,
    diff: Vec<f64>,
    n: usize,
    f: Vec<f64>,
}

impl System for CovSystem<'_> {
    fn dim(&self) -> usize {
        self.n + self.n * self.n
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let (means, cov) = y.split_at(n);
        let (dmeans, dcov) = dy.split_at_mut(n);
        self.mf.rhs(t, means, dmeans);
        let cav = match self.mf.prescribed_field(t) {
            Some((a, _)) => (SQRT_2 * a.re, SQRT_2 * a.im),
            None => (means[0], means[1]),
        };
        for j in 0..n {
            self.jac.apply(means, cav, &cov[j * n..(j + 1) * n], &mut self.f[j * n..(j + 1) * n]);
        }
        for j in 0..n {
            for i in 0..n {
                dcov[j * n + i] = self.f[j * n + i] + self.f[i * n + j];
            }
            dcov[j * n + j] += self.diff[j];
        }
    }
}

fn sample_from(
    y: &[f64],
    t: f64,
    n: usize,
    with_cov: bool,
    grid: &FrequencyGrid,
    sqrt_n: f64,
) -> MomentSample {
    let a = Complex64::new(y[0], y[1]) * (sqrt_n / SQRT_2);
    let mut b = Complex64::new(0.0, 0.0);
    let mut exc = 0.0;
    for (m, w) in grid.weights().enumerate() {
        let i = 2 + 3 * m;
        b += Complex64::new(y[i], -y[i + 1]) * (0.5 * w * sqrt_n);
        exc += w * 0.5 * (1.0 + y[i + 2]);
    }
    let (cavity_cov, spin_var, resn) = if with_cov {
        let c = DMatrix::from_column_slice(n, n, &y[n..n + n * n]);
        let sv = collective_spin_variances(&c, grid);
        (
            Some([[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]]),
            Some(sv),
            Some(0.5 * (sv.0 + sv.1) - 1.0),
        )
    } else {
        (None, None, None)
    };
    MomentSample { t, a, b, excitation: exc, cavity_cov, spin_var, resn }
}

/// Integrate means (and the covariance when present) for `duration` with a
/// given drive, sampling at `times` relative to the start.
#[allow(clippy::too_many_arguments)]
pub fn evolve_moments_with(
    state: &SystemState,
    rates: SegmentRates,
    grid: &FrequencyGrid,
    params: &PhysicalParams,
    drive: MeanDrive<'_>,
    t_offset: f64,
    duration: f64,
    opts: &MomentOptions,
    times: &[f64],
) -> Result<(SystemState, Vec<MomentSample>)> {
    let sqrt_n = params.n_spins.sqrt();
    let n = state.dim();
    let mut mf = MeanField::new(rates, grid, drive);
    mf.t_offset = t_offset;
    mf.freeze_z = opts.freeze_z;
    let mut y = state.pack_means(sqrt_n);
    if let Some((a, _)) = mf.prescribed_field(0.0) {
        y[0] = SQRT_2 * a.re;
        y[1] = SQRT_2 * a.im;
    }
    let with_cov = state.cov.is_some();
    if let Some(c) = &state.cov {
        y.extend_from_slice(c.as_slice());
    }
    let mut samples = Vec::with_capacity(times.len());
    let mut next = 0;
    while next < times.len() && times[next] <= 0.0 {
        samples.push(sample_from(&y, state.t + times[next], n, with_cov, grid, sqrt_n));
        next += 1;
    }
    // absolute tolerance refers to unscaled amplitudes
    let tol = Tolerances { rtol: opts.tol.rtol, atol: opts.tol.atol / sqrt_n };
    let ode_opts = Options { tol, dense: !times.is_empty(), ..Default::default() };
    let t0 = state.t;
    let mut buf = vec![0.0; y.len()];
    let mut observe = |step: &crate::ode::Step<'_>| {
        let Some(dense) = step.dense else { return };
        while next < times.len() && dense.contains(times[next]) {
            dense.eval(times[next], &mut buf);
            samples.push(sample_from(&buf, t0 + times[next], n, with_cov, grid, sqrt_n));
            next += 1;
        }
    };
    if with_cov {
        let jac = Jacobian::from_mean_field(&mf);
        let diff = jac.diffusion();
        let mut sys = CovSystem { mf, jac, diff, n, f: vec![0.0; n * n] };
        Dop853::new(y.len(), ode_opts).integrate(&mut sys, 0.0, &mut y, duration, &mut observe).map_err(ode_err(0))?;
    } else {
        Dop853::new(y.len(), ode_opts).integrate(&mut mf, 0.0, &mut y, duration, &mut observe).map_err(ode_err(0))?;
    }
    let mut out = state.clone();
    out.t = state.t + duration;
    out.unpack_means(&y, sqrt_n);
    if with_cov {
        let c = symmetrize(DMatrix::from_column_slice(n, n, &y[n..]));
        if opts.psd_check {
            check_psd(&c, out.t)?;
        }
        out.cov = Some(c);
    }
    Ok((out, samples))
}

/// Evolve through one segment, applying its rotation or sech drive. An
/// external-beta sech segment needs `beta` (scaled by 1/sqrt N, time measured
/// from the segment start). Under a prescribed drive the cavity mean is
/// pinned to the drive.
pub fn evolve_moments(
    state: &SystemState,
    segment: &CavitySegment,
    grid: &FrequencyGrid,
    params: &PhysicalParams,
    beta: Option<&dyn Fn(f64) -> Complex64>,
    opts: &MomentOptions,
) -> Result<(SystemState, Vec<MomentSample>)> {
    segment.validate()?;
    let rates = SegmentRates::new(params, grid, segment);
    let times = &opts.sample_times;
    match segment.action {
        SegmentAction::None => {
            let drive = beta.map_or(MeanDrive::None, MeanDrive::External);
            evolve_moments_with(state, rates, grid, params, drive, 0.0, segment.duration, opts, times)
        }
        SegmentAction::Rotation { spec, at } => {
            let drive = beta.map_or(MeanDrive::None, MeanDrive::External);
            let (before, after): (Vec<f64>, Vec<f64>) = times.iter().partition(|&&t| t < at);
            let (mut mid, mut samples) = evolve_moments_with(state, rates, grid, params, drive, 0.0, at, opts, &before)?;
            mid.rotate(&spec);
            let shifted: Vec<f64> = after.iter().map(|t| t - at).collect();
            let (end, tail) =
                evolve_moments_with(&mid, rates, grid, params, drive, at, segment.duration - at, opts, &shifted)?;
            samples.extend(tail);
            Ok((end, samples))
        }
        SegmentAction::Sech(spec) => {
            let drive = match spec.mode {
                DriveMode::PrescribedIntracavity => MeanDrive::prescribed(spec, params.g_ens()),
                DriveMode::ExternalBeta => match beta {
                    Some(b) => MeanDrive::External(b),
                    None => {
                        return Err(SimError::InvalidParams("external-beta drive requires a beta trajectory".into()))
                    }
                },
            };
            evolve_moments_with(state, rates, grid, params, drive, 0.0, segment.duration, opts, times)
        }
    }
}

#[cfg(test)]
mod tests;
