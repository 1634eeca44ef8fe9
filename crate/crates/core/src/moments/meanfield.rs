//! Maxwell-Bloch mean-field equations in N-free units.
//!
//! State layout: [x, p, sx_0, sy_0, sz_0, sx_1, ...] with x = X/sqrt(N),
//! p = P/sqrt(N) and per-spin Bloch components. In these units the equations
//! only involve g_ens:
//!   dsx = -delta sy - sqrt2 g_ens p sz - gamma sx
//!   dsy =  delta sx - sqrt2 g_ens x sz - gamma sy
//!   dsz =  sqrt2 g_ens (x sy + p sx)
//!   dx  = -kappa x + dcs p - (g_ens/sqrt2) sum_m w_m sy_m + 2 sqrt(kappa) Re beta
//!   dp  = -kappa p - dcs x - (g_ens/sqrt2) sum_m w_m sx_m + 2 sqrt(kappa) Im beta

use std::f64::consts::SQRT_2;

use num_complex::Complex64;

use crate::grid::FrequencyGrid;
use crate::ode::System;
use crate::params::{CavitySegment, DriveSpec, PhysicalParams};

/// Per-segment constants of the drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentRates {
    pub kappa: f64,
    pub delta_cs: f64,
    /// Transverse decay of every class, including any extra decay of a
    /// single-class stand-in.
    pub gamma: f64,
    /// Zero when hard-decoupled.
    pub g_ens: f64,
}

impl SegmentRates {
    pub fn new(params: &PhysicalParams, grid: &FrequencyGrid, seg: &CavitySegment) -> Self {
        SegmentRates {
            kappa: seg.kappa,
            delta_cs: seg.delta_cs,
            gamma: grid.gamma_class(params),
            g_ens: if seg.is_coupled() { params.g_ens() } else { 0.0 },
        }
    }
}

/// Drive entering the cavity, in N-free units (amplitudes divided by sqrt N).
#[derive(Clone, Copy)]
pub enum MeanDrive<'a> {
    None,
    /// Cavity amplitude pinned to `peak * envelope(t)`.
    Prescribed { spec: DriveSpec, peak: f64 },
    /// External field beta(t).
    External(&'a dyn Fn(f64) -> Complex64),
    /// Cavity amplitude pinned to an arbitrary target (a, da/dt).
    Target(&'a dyn Fn(f64) -> (Complex64, Complex64)),
}

impl std::fmt::Debug for MeanDrive<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeanDrive::None => write!(f, "None"),
            MeanDrive::Prescribed { spec, peak } => write!(f, "Prescribed({spec:?}, {peak})"),
            MeanDrive::External(_) => write!(f, "External"),
            MeanDrive::Target(_) => write!(f, "Target"),
        }
    }
}

impl MeanDrive<'_> {
    /// Prescribed drive for a sech spec: the scaled peak is chi / (2 g_ens).
    pub fn prescribed(spec: DriveSpec, g_ens: f64) -> MeanDrive<'static> {
        MeanDrive::Prescribed { spec, peak: spec.chi_max / (2.0 * g_ens) }
    }
}

pub struct MeanField<'a> {
    pub rates: SegmentRates,
    pub deltas: Vec<f64>,
    pub weights: Vec<f64>,
    pub drive: MeanDrive<'a>,
    /// Added to the integration time before evaluating the drive.
    pub t_offset: f64,
    pub freeze_z: bool,
}

impl<'a> MeanField<'a> {
    pub fn new(rates: SegmentRates, grid: &FrequencyGrid, drive: MeanDrive<'a>) -> Self {
        MeanField {
            rates,
            deltas: grid.deltas().collect(),
            weights: grid.weights().collect(),
            drive,
            t_offset: 0.0,
            freeze_z: false,
        }
    }

    pub fn classes(&self) -> usize {
        self.deltas.len()
    }

    /// Scaled cavity amplitude a/sqrt(N) and its derivative under the
    /// prescribed drive.
    pub fn prescribed_field(&self, t: f64) -> Option<(Complex64, Complex64)> {
        match self.drive {
            MeanDrive::Prescribed { spec, peak } => {
                let tt = t + self.t_offset;
                Some((spec.envelope(tt) * peak, spec.envelope_dot(tt) * peak))
            }
            MeanDrive::Target(f) => Some(f(t + self.t_offset)),
            _ => None,
        }
    }

    /// sum_m w_m s_minus_m with s_minus = (sx - i sy)/2.
    pub fn collective_s_minus(&self, y: &[f64]) -> Complex64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for (m, w) in self.weights.iter().enumerate() {
            re += w * y[2 + 3 * m];
            im -= w * y[3 + 3 * m];
        }
        Complex64::new(re, im) * 0.5
    }

    /// External field (scaled) that keeps the cavity on the prescribed
    /// trajectory given the current spins:
    ///   beta = [a' + (kappa + i dcs) a + i g_ens sum_m w_m s_minus_m] / sqrt(2 kappa).
    pub fn inverse_filter(&self, t: f64, y: &[f64]) -> Option<Complex64> {
        let (a, da) = self.prescribed_field(t)?;
        let r = self.rates;
        let reaction = Complex64::new(0.0, r.g_ens) * self.collective_s_minus(y);
        Some((da + Complex64::new(r.kappa, r.delta_cs) * a + reaction) / (2.0 * r.kappa).sqrt())
    }
}

impl System for MeanField<'_> {
    fn dim(&self) -> usize {
        2 + 3 * self.deltas.len()
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let r = self.rates;
        let (x, p) = match self.prescribed_field(t) {
            Some((a, _)) => (SQRT_2 * a.re, SQRT_2 * a.im),
            None => (y[0], y[1]),
        };
        let gx = SQRT_2 * r.g_ens * x;
        let gp = SQRT_2 * r.g_ens * p;
        let mut acc_x = 0.0;
        let mut acc_p = 0.0;
        for m in 0..self.deltas.len() {
            let i = 2 + 3 * m;
            let (sx, sy, sz) = (y[i], y[i + 1], y[i + 2]);
            let d = self.deltas[m];
            dy[i] = -d * sy - gp * sz - r.gamma * sx;
            dy[i + 1] = d * sx - gx * sz - r.gamma * sy;
            dy[i + 2] = if self.freeze_z { 0.0 } else { gx * sy + gp * sx };
            acc_x += self.weights[m] * sy;
            acc_p += self.weights[m] * sx;
        }
        match self.drive {
            MeanDrive::Prescribed { .. } | MeanDrive::Target(_) => {
                let (_, da) = self.prescribed_field(t).unwrap_or_default();
                dy[0] = SQRT_2 * da.re;
                dy[1] = SQRT_2 * da.im;
            }
            _ => {
                let c = r.g_ens / SQRT_2;
                dy[0] = -r.kappa * x + r.delta_cs * p - c * acc_x;
                dy[1] = -r.kappa * p - r.delta_cs * x - c * acc_p;
                if let MeanDrive::External(beta) = self.drive {
                    let b = beta(t + self.t_offset) * (2.0 * r.kappa.max(0.0).sqrt());
                    dy[0] += b.re;
                    dy[1] += b.im;
                }
            }
        }
    }
}
