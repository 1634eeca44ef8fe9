//! Grid hygiene: artificial revivals from a discrete detuning grid, cut-off
//! convergence of the inverted-ensemble noise, and PSD bookkeeping.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{build_frequency_grid, auto_spacing, FrequencyGrid};
use crate::linear::{evolve_linear, LinearState};
use crate::moments::transient_variance_closed_form;
use crate::params::{CavitySegment, PhysicalParams};
use crate::protocol::{inverted_cavity_variance, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Revival {
    pub t: f64,
    pub peak: f64,
    pub baseline: f64,
}

/// Interior local maxima of `y` that exceed `factor` times the running median
/// of `y` over +-`half_window` samples and the absolute `floor`.
pub fn detect_revivals(t: &[f64], y: &[f64], half_window: usize, factor: f64, floor: f64) -> Vec<Revival> {
    let n = y.len();
    let mut out = Vec::new();
    let mut buf = Vec::with_capacity(2 * half_window + 1);
    for i in 1..n.saturating_sub(1) {
        if !(y[i] > y[i - 1] && y[i] >= y[i + 1]) || y[i] < floor {
            continue;
        }
        buf.clear();
        buf.extend_from_slice(&y[i.saturating_sub(half_window)..(i + half_window + 1).min(n)]);
        buf.sort_by(f64::total_cmp);
        let baseline = buf[buf.len() / 2];
        if y[i] > factor * baseline {
            out.push(Revival { t: t[i], peak: y[i], baseline });
        }
    }
    out
}

/// |b(t)| / |b(0)| for a uniformly excited ensemble dephasing freely
/// (cavity hard-decoupled), sampled at `n` points on [0, t_max].
pub fn free_decay_trace(params: &PhysicalParams, grid: &FrequencyGrid, t_max: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut st = LinearState::ground(grid, Complex64::new(0.0, 0.0));
    st.s.iter_mut().for_each(|s| *s = Complex64::new(0.0, -0.5));
    let b0 = st.collective(grid, params).norm();
    let times: Vec<f64> = (0..n).map(|k| k as f64 * t_max / (n - 1) as f64).collect();
    let seg = CavitySegment::decoupled(0.0, 0.0, t_max);
    let (_, traj) = evolve_linear(&st, &seg, grid, params, None, &times)?;
    Ok((traj.t, traj.b.iter().map(|b| b.norm() / b0).collect()))
}

/// Revivals of the free collective decay on `grid` within [0, t_max].
pub fn grid_revivals(params: &PhysicalParams, grid: &FrequencyGrid, t_max: f64) -> Result<Vec<Revival>> {
    // the echo of the initial decay has width ~ 1/w; resolve it with ~20 points
    let n = ((20.0 * t_max * params.w).ceil() as usize).max(200) + 1;
    let (t, y) = free_decay_trace(params, grid, t_max, n)?;
    // the baseline window must be much wider than the echo itself
    let half = ((10.0 / params.w) / (t_max / (n - 1) as f64)).ceil() as usize;
    Ok(detect_revivals(&t, &y, half, 10.0, 1e-6))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffPoint {
    /// Cut-off in units of Gamma.
    pub cut_over_gamma: f64,
    pub classes: usize,
    /// max_t |Var X_c^grid - Var X_c^closed| / Var X_c^closed.
    pub max_rel_err: f64,
}

/// Grid noise of a vacuum cavity meeting an inverted ensemble against the
/// homogeneous closed form over [0, t_max], for each cut-off (in Gamma).
pub fn cutoff_convergence(
    params: &PhysicalParams,
    kappa: f64,
    cuts_over_gamma: &[f64],
    t_max: f64,
    samples: usize,
    opts: &RunOptions,
) -> Result<Vec<CutoffPoint>> {
    let times: Vec<f64> = (1..=samples).map(|k| k as f64 * t_max / samples as f64).collect();
    let exact: Vec<f64> = times.iter().map(|&t| transient_variance_closed_form(t, params, kappa).map(|v| v.0)).collect::<Result<_>>()?;
    cuts_over_gamma
        .iter()
        .map(|&c| {
            let grid = build_frequency_grid(params, c * params.gamma(), auto_spacing(t_max))?;
            let sim = inverted_cavity_variance(params, &grid, kappa, &times, opts)?;
            let max_rel_err = sim.iter().zip(&exact).map(|(s, e)| ((s - e) / e).abs()).fold(0.0, f64::max);
            Ok(CutoffPoint { cut_over_gamma: c, classes: grid.len(), max_rel_err })
        })
        .collect()
}

/// Smallest eigenvalue of a 2x2 output block divided by its trace.
pub fn block_min_eig_ratio(c: &[[f64; 2]; 2]) -> f64 {
    let (a, b, d) = (c[0][0], 0.5 * (c[0][1] + c[1][0]), c[1][1]);
    let tr = a + d;
    let disc = ((a - d).powi(2) + 4.0 * b * b).sqrt();
    0.5 * (tr - disc) / tr
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PsdSummary {
    pub runs: usize,
    pub worst_ratio: f64,
    pub violations: usize,
}

impl PsdSummary {
    pub fn record(&mut self, c: &[[f64; 2]; 2]) {
        let r = block_min_eig_ratio(c);
        self.worst_ratio = if self.runs == 0 { r } else { self.worst_ratio.min(r) };
        self.runs += 1;
        // an output block must also respect Var X Var P - Cov^2 >= 1/4
        let det = c[0][0] * c[1][1] - 0.25 * (c[0][1] + c[1][0]).powi(2);
        if r < 0.0 || det < 0.25 * (1.0 - 1e-6) {
            self.violations += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn synthetic_peak_detected() {
        let t: Vec<f64> = (0..1001).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|&x| 1e-3 * (1.0 + 0.3 * (3.0 * x).sin()) + (-(x - 60.0).powi(2)).exp()).collect();
        let r = detect_revivals(&t, &y, 50, 10.0, 1e-6);
        assert_eq!(r.len(), 1);
        assert!((r[0].t - 60.0).abs() < 0.11);
    }

    #[test]
    fn coarse_grid_revives_at_two_pi_over_spacing() {
        let p = PhysicalParams::with_g_ens(1.0, f64::INFINITY, 1e10, 1.25).unwrap();
        let d = 2.0 * PI / 40.0;
        let grid = build_frequency_grid(&p, 20.0, d).unwrap();
        let r = grid_revivals(&p, &grid, 60.0).unwrap();
        assert_eq!(r.len(), 1, "{r:?}");
        assert!((r[0].t / 40.0 - 1.0).abs() < 0.02);
        let fine = build_frequency_grid(&p, 20.0, auto_spacing(60.0)).unwrap();
        assert!(grid_revivals(&p, &fine, 60.0).unwrap().is_empty());
    }

    #[test]
    fn psd_summary_counts() {
        let mut s = PsdSummary::default();
        s.record(&[[0.5, 0.0], [0.0, 0.5]]);
        s.record(&[[0.6, 0.1], [0.1, 0.7]]);
        assert_eq!(s.runs, 2);
        assert_eq!(s.violations, 0);
        s.record(&[[0.5, 0.6], [0.6, 0.5]]);
        assert_eq!(s.violations, 1);
        assert!(s.worst_ratio < 0.0);
    }
}
