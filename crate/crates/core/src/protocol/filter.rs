//! Sech drive amplitudes and the external field that realizes a desired
//! intracavity trajectory.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{ode_err, Result, SimError};
use crate::grid::FrequencyGrid;
use crate::moments::{MeanDrive, MeanField, SegmentRates, SystemState};
use crate::ode::{Dense, Dop853, Options, Tolerances};
use crate::params::{CavitySegment, DriveSpec, PhysicalParams};

/// Intracavity amplitude a_max sech(beta (t - t_c))^{1 + i mu} with
/// a_max = chi_max / (2 g); zero outside the truncation window.
pub fn sech_drive_amplitude(spec: &DriveSpec, g: f64, t: f64) -> Complex64 {
    spec.envelope(t) * spec.a_max(g)
}

/// Desired intracavity amplitude and its time derivative (unscaled).
pub type Target = Arc<dyn Fn(f64) -> (Complex64, Complex64) + Send + Sync>;

pub fn sech_target(spec: DriveSpec, g: f64) -> Target {
    let a = spec.a_max(g);
    Arc::new(move |t| (spec.envelope(t) * a, spec.envelope_dot(t) * a))
}

/// External field over one segment, evaluated from the spins simulated
/// under the pinned cavity.
pub struct BetaTrajectory {
    target: Target,
    rates: SegmentRates,
    weights: Vec<f64>,
    sqrt_n: f64,
    steps: Vec<Dense>,
    pub duration: f64,
}

impl BetaTrajectory {
    /// beta(t) in units where |beta|^2 is a photon flux.
    pub fn eval(&self, t: f64) -> Complex64 {
        let (a, da) = (self.target)(t);
        let r = self.rates;
        let mut s_minus = Complex64::new(0.0, 0.0);
        if r.g_ens != 0.0 && !self.steps.is_empty() {
            let idx = self.steps.partition_point(|d| d.t < t).min(self.steps.len() - 1);
            let d = &self.steps[idx];
            for (m, w) in self.weights.iter().enumerate() {
                let sx = d.eval_at(t, 2 + 3 * m);
                let sy = d.eval_at(t, 3 + 3 * m);
                s_minus += Complex64::new(sx, -sy) * (0.5 * w);
            }
        }
        let reaction = Complex64::new(0.0, r.g_ens) * s_minus * self.sqrt_n;
        (da + Complex64::new(r.kappa, r.delta_cs) * a + reaction) / (2.0 * r.kappa).sqrt()
    }

    pub fn sample(&self, times: &[f64]) -> Vec<(f64, Complex64)> {
        times.iter().map(|&t| (t, self.eval(t))).collect()
    }
}

/// beta(t) = [da/dt + (kappa + i dcs) a + i g_ens S_minus^eff/sqrt N] / sqrt(2 kappa),
/// with the spins integrated alongside under the pinned cavity.
pub fn inverse_filter_beta(
    target: Target,
    state: &SystemState,
    segment: &CavitySegment,
    grid: &FrequencyGrid,
    params: &PhysicalParams,
    tol: Tolerances,
) -> Result<BetaTrajectory> {
    if !(segment.kappa > 0.0) {
        return Err(SimError::InvalidParams("a cavity with kappa = 0 cannot be driven from outside".into()));
    }
    segment.validate()?;
    let rates = SegmentRates::new(params, grid, segment);
    let sqrt_n = params.n_spins.sqrt();
    let scaled = {
        let target = target.clone();
        move |t: f64| {
            let (a, da) = target(t);
            (a / sqrt_n, da / sqrt_n)
        }
    };
    let mut mf = MeanField::new(rates, grid, MeanDrive::Target(&scaled));
    let mut y = Vec::with_capacity(state.dim());
    let (a0, _) = scaled(0.0);
    y.push(SQRT_2 * a0.re);
    y.push(SQRT_2 * a0.im);
    for s in &state.bloch {
        y.extend_from_slice(s);
    }
    let mut steps = Vec::new();
    if rates.g_ens != 0.0 && segment.duration > 0.0 {
        let tol = Tolerances { rtol: tol.rtol, atol: tol.atol / sqrt_n };
        let opts = Options { tol, dense: true, ..Default::default() };
        Dop853::new(y.len(), opts)
            .integrate(&mut mf, 0.0, &mut y, segment.duration, |st| {
                if let Some(d) = st.dense {
                    steps.push(d.clone());
                }
            })
            .map_err(ode_err(0))?;
    }
    Ok(BetaTrajectory { target, rates, weights: grid.weights().collect(), sqrt_n, steps, duration: segment.duration })
}
