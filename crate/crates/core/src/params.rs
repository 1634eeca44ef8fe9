//! Static ensemble and cavity constants, per-segment cavity settings and
//! pulse descriptions.
//!
//! Units: times in 1/w and rates in w, so the Lorentzian FWHM is normally 1.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Lorentzian FWHM of the spin detunings.
    pub w: f64,
    /// Dephasing waiting time; `f64::INFINITY` disables dephasing.
    pub tau: f64,
    pub n_spins: f64,
    /// Single-spin coupling.
    pub g: f64,
}

impl PhysicalParams {
    pub fn new(w: f64, tau: f64, n_spins: f64, g: f64) -> Result<Self> {
        if !(w > 0.0) || !w.is_finite() {
            return Err(SimError::InvalidParams(format!("w must be positive, got {w}")));
        }
        if !(tau > 0.0) {
            return Err(SimError::InvalidParams(format!("tau must be positive, got {tau}")));
        }
        if !(n_spins >= 1.0) || !n_spins.is_finite() {
            return Err(SimError::InvalidParams(format!("n_spins must be >= 1, got {n_spins}")));
        }
        if !(g >= 0.0) || !g.is_finite() {
            return Err(SimError::InvalidParams(format!("g must be >= 0, got {g}")));
        }
        Ok(PhysicalParams { w, tau, n_spins, g })
    }

    /// Build from the ensemble coupling instead of the single-spin one.
    pub fn with_g_ens(w: f64, tau: f64, n_spins: f64, g_ens: f64) -> Result<Self> {
        if !(n_spins >= 1.0) {
            return Err(SimError::InvalidParams(format!("n_spins must be >= 1, got {n_spins}")));
        }
        Self::new(w, tau, n_spins, g_ens / n_spins.sqrt())
    }

    /// Ensemble coupling chosen as a multiple of Gamma.
    pub fn with_g_ens_over_gamma(w: f64, tau: f64, n_spins: f64, ratio: f64) -> Result<Self> {
        let gamma_perp = if tau.is_infinite() { 0.0 } else { 1.0 / tau };
        Self::with_g_ens(w, tau, n_spins, ratio * (gamma_perp + 0.5 * w))
    }

    pub fn gamma_perp(&self) -> f64 {
        if self.tau.is_infinite() {
            0.0
        } else {
            1.0 / self.tau
        }
    }

    /// Effective homogeneous linewidth of the collective mode.
    pub fn gamma(&self) -> f64 {
        self.gamma_perp() + 0.5 * self.w
    }

    pub fn g_ens(&self) -> f64 {
        self.g * self.n_spins.sqrt()
    }

    pub fn g_bar(&self) -> f64 {
        self.g
    }

    /// Same ensemble with a different dephasing rate; the single-spin
    /// coupling is kept.
    pub fn with_gamma_perp(&self, gamma_perp: f64) -> Self {
        let tau = if gamma_perp == 0.0 { f64::INFINITY } else { 1.0 / gamma_perp };
        PhysicalParams { tau, ..*self }
    }

    pub fn cooperativity(&self, kappa: f64) -> f64 {
        self.g_ens().powi(2) / (kappa * self.gamma())
    }

    pub fn derived_rates(&self, kappa: f64, delta_cs: f64) -> DerivedRates {
        let c = self.cooperativity(kappa);
        let kg = kappa + self.gamma();
        let den = kappa * kappa + delta_cs * delta_cs;
        DerivedRates {
            cooperativity: c,
            c_tilde: c / (1.0 + (delta_cs / kg).powi(2)),
            gamma_p: 2.0 * kappa * self.g * self.g / den,
            zeta: Complex64::new(delta_cs, kappa) * (self.g_ens().powi(2) / den),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedRates {
    pub cooperativity: f64,
    pub c_tilde: f64,
    pub gamma_p: f64,
    pub zeta: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    Coupled,
    /// g is treated as exactly zero.
    HardDecoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriveMode {
    /// The intracavity field of the signal-free ensemble follows the sech
    /// shape exactly; the signal's own cavity field evolves on top of it.
    PrescribedIntracavity,
    /// The external field is obtained by inverse filtering and the cavity
    /// field is integrated from it.
    ExternalBeta,
}

/// Hyperbolic-secant intracavity drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    /// Peak Rabi frequency 2 g a_max.
    pub chi_max: f64,
    pub beta_sech: f64,
    pub mu: f64,
    /// Pulse centre, measured from the start of the segment that carries it.
    pub t_center: f64,
    pub truncation_window: f64,
    pub mode: DriveMode,
}

impl DriveSpec {
    pub fn new(chi_max: f64, beta_sech: f64, mu: f64) -> Result<Self> {
        if !(beta_sech > 0.0) || !(mu > 0.0) || !(chi_max >= 0.0) {
            return Err(SimError::InvalidParams(format!(
                "sech drive needs beta > 0, mu > 0, chi >= 0 (got {beta_sech}, {mu}, {chi_max})"
            )));
        }
        let window = 16.0 / beta_sech;
        Ok(DriveSpec {
            chi_max,
            beta_sech,
            mu,
            t_center: 0.5 * window,
            truncation_window: window,
            mode: DriveMode::PrescribedIntracavity,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.mu * self.beta_sech
    }

    pub fn a_max(&self, g: f64) -> f64 {
        self.chi_max / (2.0 * g)
    }

    fn x(&self, t: f64) -> Option<f64> {
        let dt = t - self.t_center;
        if dt.abs() > 0.5 * self.truncation_window {
            None
        } else {
            Some(self.beta_sech * dt)
        }
    }

    /// sech(x)^{1+i mu} normalized to unit peak; zero outside the window.
    pub fn envelope(&self, t: f64) -> Complex64 {
        match self.x(t) {
            None => Complex64::new(0.0, 0.0),
            Some(x) => {
                let sech = 1.0 / x.cosh();
                Complex64::from_polar(sech, self.mu * sech.ln())
            }
        }
    }

    /// Time derivative of `envelope`.
    pub fn envelope_dot(&self, t: f64) -> Complex64 {
        match self.x(t) {
            None => Complex64::new(0.0, 0.0),
            Some(x) => self.envelope(t) * Complex64::new(1.0, self.mu) * (-self.beta_sech * x.tanh()),
        }
    }
}

/// Instantaneous rotation of every spin class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    pub axis: [f64; 3],
    pub angle: f64,
}

impl RotationSpec {
    pub fn new(axis: [f64; 3], angle: f64) -> Result<Self> {
        let norm = (axis[0].powi(2) + axis[1].powi(2) + axis[2].powi(2)).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidParams(format!("rotation axis must be a unit vector (norm {norm})")));
        }
        if axis[2].abs() > 1e-9 {
            return Err(SimError::InvalidParams("rotation axis must lie in the equatorial plane".into()));
        }
        Ok(RotationSpec { axis, angle })
    }

    pub fn about_x(angle: f64) -> Self {
        RotationSpec { axis: [1.0, 0.0, 0.0], angle }
    }

    pub fn about_y(angle: f64) -> Self {
        RotationSpec { axis: [0.0, 1.0, 0.0], angle }
    }

    /// Rodrigues rotation matrix.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let [x, y, z] = self.axis;
        let (s, c) = self.angle.sin_cos();
        let t = 1.0 - c;
        [
            [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
            [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
            [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SegmentAction {
    None,
    Sech(DriveSpec),
    /// Rotation applied `at` time units after the segment start.
    Rotation { spec: RotationSpec, at: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavitySegment {
    pub kappa: f64,
    pub delta_cs: f64,
    pub duration: f64,
    pub coupling: Coupling,
    pub action: SegmentAction,
}

impl CavitySegment {
    pub fn coupled(kappa: f64, delta_cs: f64, duration: f64) -> Self {
        CavitySegment { kappa, delta_cs, duration, coupling: Coupling::Coupled, action: SegmentAction::None }
    }

    pub fn decoupled(kappa: f64, delta_cs: f64, duration: f64) -> Self {
        CavitySegment { kappa, delta_cs, duration, coupling: Coupling::HardDecoupled, action: SegmentAction::None }
    }

    pub fn with_action(mut self, action: SegmentAction) -> Self {
        self.action = action;
        self
    }

    pub fn is_coupled(&self) -> bool {
        self.coupling == Coupling::Coupled
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(SimError::InvalidParams(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(SimError::InvalidParams(format!("segment duration must be >= 0, got {}", self.duration)));
        }
        if let SegmentAction::Rotation { at, .. } = self.action {
            if !(0.0..=self.duration).contains(&at) {
                return Err(SimError::InvalidParams(format!("rotation time {at} outside segment")));
            }
        }
        Ok(())
    }
}
