//! Linearized drift around a mean-field trajectory.
//!
//! Fluctuation basis: z = (dX, dP, u_x0, u_y0, u_z0, ...), where u = dS_m /
//! sqrt(N_m) for the collective class operators S_m = sum_{j in m} sigma_j.
//! With k_m = (g_ens/sqrt2) sqrt(w_m), a1 = sqrt2 g P, a2 = sqrt2 g X:
//!   dX  = -kappa X + dcs P - sum_m k_m u_y
//!   dP  = -dcs X - kappa P - sum_m k_m u_x
//!   du_x = -delta u_y - gamma u_x - a1 u_z - 2 k_m sz P
//!   du_y =  delta u_x - gamma u_y - a2 u_z - 2 k_m sz X
//!   du_z =  a2 u_y + a1 u_x + 2 k_m (sy X + sx P)
//! Cavity leakage diffuses X and P at rate kappa; dephasing (and the extra
//! decay standing in for inhomogeneous broadening) diffuses u_x, u_y at
//! 2 gamma.

use std::f64::consts::SQRT_2;

use super::meanfield::{MeanField, SegmentRates};

#[derive(Debug, Clone)]
pub struct Jacobian {
    pub rates: SegmentRates,
    pub deltas: Vec<f64>,
    pub k: Vec<f64>,
    pub freeze_z: bool,
}

impl Jacobian {
    pub fn from_mean_field(mf: &MeanField<'_>) -> Self {
        let c = mf.rates.g_ens / SQRT_2;
        Jacobian {
            rates: mf.rates,
            deltas: mf.deltas.clone(),
            k: mf.weights.iter().map(|w| c * w.sqrt()).collect(),
            freeze_z: mf.freeze_z,
        }
    }

    pub fn dim(&self) -> usize {
        2 + 3 * self.deltas.len()
    }

    /// Cavity quadratures entering the spin rows, (a1, a2) = sqrt2 g_ens (p, x)
    /// in the N-free units of the mean field.
    fn drive_terms(&self, cavity: (f64, f64)) -> (f64, f64) {
        let g = SQRT_2 * self.rates.g_ens;
        (g * cavity.1, g * cavity.0)
    }

    /// out = J z. `bg` is the mean-field state and `cavity` its effective
    /// scaled (x, p).
    pub fn apply(&self, bg: &[f64], cavity: (f64, f64), z: &[f64], out: &mut [f64]) {
        let r = self.rates;
        let (a1, a2) = self.drive_terms(cavity);
        let (zx, zp) = (z[0], z[1]);
        let mut sum_y = 0.0;
        let mut sum_x = 0.0;
        for m in 0..self.deltas.len() {
            let i = 2 + 3 * m;
            let (ux, uy, uz) = (z[i], z[i + 1], z[i + 2]);
            let (sx, sy, sz) = (bg[i], bg[i + 1], bg[i + 2]);
            let k = self.k[m];
            let d = self.deltas[m];
            out[i] = -d * uy - r.gamma * ux - a1 * uz - 2.0 * k * sz * zp;
            out[i + 1] = d * ux - r.gamma * uy - a2 * uz - 2.0 * k * sz * zx;
            out[i + 2] = if self.freeze_z { 0.0 } else { a2 * uy + a1 * ux + 2.0 * k * (sy * zx + sx * zp) };
            sum_y += k * uy;
            sum_x += k * ux;
        }
        out[0] = -r.kappa * zx + r.delta_cs * zp - sum_y;
        out[1] = -r.delta_cs * zx - r.kappa * zp - sum_x;
    }

    /// out = J^T l.
    pub fn apply_t(&self, bg: &[f64], cavity: (f64, f64), l: &[f64], out: &mut [f64]) {
        let r = self.rates;
        let (a1, a2) = self.drive_terms(cavity);
        let (lx, lp) = (l[0], l[1]);
        let mut acc_x = -r.kappa * lx - r.delta_cs * lp;
        let mut acc_p = r.delta_cs * lx - r.kappa * lp;
        for m in 0..self.deltas.len() {
            let i = 2 + 3 * m;
            let (lux, luy) = (l[i], l[i + 1]);
            let luz = if self.freeze_z { 0.0 } else { l[i + 2] };
            let (sx, sy, sz) = (bg[i], bg[i + 1], bg[i + 2]);
            let k = self.k[m];
            let d = self.deltas[m];
            acc_x += 2.0 * k * (sy * luz - sz * luy);
            acc_p += 2.0 * k * (sx * luz - sz * lux);
            out[i] = -k * lp - r.gamma * lux + d * luy + a1 * luz;
            out[i + 1] = -k * lx - d * lux - r.gamma * luy + a2 * luz;
            out[i + 2] = -a1 * lux - a2 * luy;
        }
        out[0] = acc_x;
        out[1] = acc_p;
    }

    /// Diagonal of the diffusion matrix.
    pub fn diffusion(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        d[0] = self.rates.kappa.max(0.0);
        d[1] = self.rates.kappa.max(0.0);
        for m in 0..self.deltas.len() {
            d[2 + 3 * m] = 2.0 * self.rates.gamma;
            d[3 + 3 * m] = 2.0 * self.rates.gamma;
        }
        d
    }
}
