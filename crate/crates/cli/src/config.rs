//! TOML scenario configuration.
//!
//! ```toml
//! scenario = "swap-scan"          # optional; must match the command line
//! t_mem = 20.0                    # storage time, 1/w
//!
//! [params]
//! w = 1.0                         # Lorentzian FWHM (default 1)
//! n_spins = 1e10                  # default 1e10
//! gamma_perp = 0.0                # dephasing rate, w (default 0)
//! g_ens_over_gamma = 2.5          # exactly one of g, g_ens, g_ens_over_gamma
//!
//! [grid]
//! delta_cut = 50.0                # w
//! d_delta = "auto"                # or a spacing in w; auto puts the revival at 4 t_mem
//!
//! [tolerance]                     # optional, defaults rtol 1e-9 atol 1e-12
//! rtol = 1e-7
//! atol = 1e-10
//!
//! [schedule]                      # run-protocol, inversion-scan, swap-scan
//! preset = "detuned"              # "ideal" (default) or "detuned"
//! kappa_swap = 0.0                # optional overrides of the preset
//! inversion = { kind = "sech", bandwidth = 9.0, chi_frac = 1.0, mu = 3.0 }
//!
//! [decouple]                      # decouple-scan
//! kappa = 0.75
//! delta_cs = 20.0
//! delta_cs_prime = -20.0          # default: delta_cs
//! quarter = 10.0                  # T
//!
//! [validate]                      # validate
//! kappa = 1.0                     # in units of Gamma
//! cuts = [20.0, 30.0, 50.0, 100.0]
//! t_max = 3.0                     # in units of 1/Gamma
//! revival_time = 71.0             # coarse grid revival, 1/Gamma
//!
//! [sweep]
//! axis = "g-ens-over-gamma"
//! values = [2.5, 3.5, 5.0, 7.0, 10.0]
//!
//! [output]
//! csv = "swap.csv"                # default <scenario>.csv
//! summary = "swap.json"           # default <scenario>.json
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use spinmem::grid::auto_spacing;
use spinmem::ode::Tolerances;
use spinmem::params::DriveSpec;
use spinmem::protocol::RunOptions;
use spinmem::schedule::{FocusEstimate, FocusRule, Inversion, ScheduleSpec};
use spinmem::{build_frequency_grid, FrequencyGrid, PhysicalParams};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SwapScan,
    DecoupleScan,
    InversionScan,
    RunProtocol,
    Validate,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::SwapScan => "swap-scan",
            Scenario::DecoupleScan => "decouple-scan",
            Scenario::InversionScan => "inversion-scan",
            Scenario::RunProtocol => "run-protocol",
            Scenario::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: Option<Scenario>,
    pub t_mem: Option<f64>,
    pub params: ParamsSection,
    pub grid: Option<GridSection>,
    pub tolerance: Option<TolSection>,
    pub schedule: Option<ScheduleSection>,
    pub decouple: Option<DecoupleSection>,
    pub validate: Option<ValidateSection>,
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub output: OutputSection,
}

fn one() -> f64 {
    1.0
}
fn default_n() -> f64 {
    1e10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    #[serde(default = "one")]
    pub w: f64,
    #[serde(default = "default_n")]
    pub n_spins: f64,
    #[serde(default)]
    pub gamma_perp: f64,
    pub g: Option<f64>,
    pub g_ens: Option<f64>,
    pub g_ens_over_gamma: Option<f64>,
}

impl ParamsSection {
    pub fn build(&self) -> Result<PhysicalParams, Failure> {
        if self.gamma_perp < 0.0 {
            return Err(Failure::Config(format!("params.gamma_perp must be >= 0, got {}", self.gamma_perp)));
        }
        let tau = if self.gamma_perp == 0.0 { f64::INFINITY } else { 1.0 / self.gamma_perp };
        let p = match (self.g, self.g_ens, self.g_ens_over_gamma) {
            (Some(g), None, None) => PhysicalParams::new(self.w, tau, self.n_spins, g),
            (None, Some(ge), None) => PhysicalParams::with_g_ens(self.w, tau, self.n_spins, ge),
            (None, None, Some(r)) => PhysicalParams::with_g_ens_over_gamma(self.w, tau, self.n_spins, r),
            _ => return Err(Failure::Config("params needs exactly one of g, g_ens, g_ens_over_gamma".into())),
        };
        p.map_err(|e| Failure::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spacing {
    Value(f64),
    Word(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub delta_cut: f64,
    pub d_delta: Option<Spacing>,
}

impl GridSection {
    pub fn spacing(&self, t_mem: f64) -> Result<f64, Failure> {
        match &self.d_delta {
            None => Ok(auto_spacing(t_mem)),
            Some(Spacing::Word(w)) if w == "auto" => Ok(auto_spacing(t_mem)),
            Some(Spacing::Word(w)) => Err(Failure::Config(format!("grid.d_delta must be a number or \"auto\", got {w:?}"))),
            Some(Spacing::Value(d)) => Ok(*d),
        }
    }

    pub fn build(&self, params: &PhysicalParams, t_mem: f64) -> Result<FrequencyGrid, Failure> {
        build_frequency_grid(params, self.delta_cut, self.spacing(t_mem)?).map_err(|e| Failure::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolSection {
    pub rtol: f64,
    pub atol: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Ideal,
    Detuned,
}

/// Inversion pulses as written in a config. Sech pulses are given by their
/// bandwidth mu beta; the peak Rabi frequency is chi_frac times that.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum InversionSection {
    Ideal,
    Abrupt {
        #[serde(default)]
        error: f64,
        #[serde(default = "twelve")]
        window: f64,
    },
    Sech {
        bandwidth: f64,
        #[serde(default = "one")]
        chi_frac: f64,
        #[serde(default = "three")]
        mu: f64,
    },
}

fn twelve() -> f64 {
    12.0
}
fn three() -> f64 {
    3.0
}

impl InversionSection {
    pub fn build(&self) -> Result<Inversion, Failure> {
        Ok(match *self {
            InversionSection::Ideal => Inversion::Ideal,
            InversionSection::Abrupt { error, window } => Inversion::Abrupt { angles: [PI * (1.0 - error); 2], window },
            InversionSection::Sech { bandwidth, chi_frac, mu } => {
                let d = DriveSpec::new(chi_frac * bandwidth, bandwidth / mu, mu).map_err(|e| Failure::Config(e.to_string()))?;
                Inversion::Sech { drives: [d; 2] }
            }
        })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default)]
    pub preset: Preset,
    pub kappa_swap: Option<f64>,
    pub kappa_decouple: Option<f64>,
    pub delta_decouple: Option<f64>,
    pub delta_middle: Option<f64>,
    pub kappa_pulse: Option<f64>,
    pub delta_pulse: Option<f64>,
    pub inversion: Option<InversionSection>,
    pub rule: Option<FocusRule>,
    pub focus: Option<FocusEstimate>,
}

impl ScheduleSection {
    pub fn build(&self) -> Result<ScheduleSpec, Failure> {
        let inv = self.inversion.unwrap_or(InversionSection::Ideal).build()?;
        let mut s = match self.preset {
            Preset::Ideal => ScheduleSpec { inversion: inv, ..ScheduleSpec::ideal(0.0) },
            Preset::Detuned => ScheduleSpec::detuned(inv),
        };
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut s.kappa_swap, self.kappa_swap);
        set(&mut s.kappa_decouple, self.kappa_decouple);
        set(&mut s.delta_decouple, self.delta_decouple);
        set(&mut s.delta_middle, self.delta_middle);
        set(&mut s.kappa_pulse, self.kappa_pulse);
        set(&mut s.delta_pulse, self.delta_pulse);
        if let Some(r) = self.rule {
            s.rule = r;
        }
        if let Some(f) = self.focus {
            s.focus = f;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoupleSection {
    pub kappa: f64,
    pub delta_cs: f64,
    pub delta_cs_prime: Option<f64>,
    #[serde(default = "ten")]
    pub quarter: f64,
}

fn ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    /// Swap decay in units of Gamma.
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "default_cuts")]
    pub cuts: Vec<f64>,
    /// Window of the convergence scan in 1/Gamma.
    #[serde(default = "three")]
    pub t_max: f64,
    #[serde(default = "sixty")]
    pub samples: usize,
    /// Revival time 2 pi / d_delta of the deliberately coarse grid, 1/Gamma.
    #[serde(default = "seventy_one")]
    pub revival_time: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection { kappa: 1.0, cuts: default_cuts(), t_max: 3.0, samples: 60, revival_time: 71.0 }
    }
}

fn default_cuts() -> Vec<f64> {
    vec![20.0, 30.0, 50.0, 100.0]
}
fn sixty() -> usize {
    60
}
fn seventy_one() -> f64 {
    71.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    GEnsOverGamma,
    Kappa,
    GammaPerp,
    /// kappa T_swap
    XKappa,
    /// gamma_perp (T_mem - T_swap)
    XGamma,
    TMem,
    /// Sets delta_cs and moves delta_cs_prime with it, sign kept.
    Delta,
    DeltaPrime,
    /// Sech bandwidth mu beta.
    Bandwidth,
    /// Abrupt pulse angle error epsilon, angle pi (1 - epsilon).
    AbruptError,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::GEnsOverGamma => "g_ens_over_gamma",
            Axis::Kappa => "kappa",
            Axis::GammaPerp => "gamma_perp",
            Axis::XKappa => "x_kappa",
            Axis::XGamma => "x_gamma",
            Axis::TMem => "t_mem",
            Axis::Delta => "delta_cs",
            Axis::DeltaPrime => "delta_cs_prime",
            Axis::Bandwidth => "bandwidth",
            Axis::AbruptError => "abrupt_error",
        }
    }

    /// CSV column of the swept value, distinct from the result columns.
    pub fn column(self) -> &'static str {
        match self {
            Axis::GEnsOverGamma => "sweep_g_ens_over_gamma",
            Axis::Kappa => "sweep_kappa",
            Axis::GammaPerp => "sweep_gamma_perp",
            Axis::XKappa => "sweep_x_kappa",
            Axis::XGamma => "sweep_x_gamma",
            Axis::TMem => "sweep_t_mem",
            Axis::Delta => "sweep_delta_cs",
            Axis::DeltaPrime => "sweep_delta_cs_prime",
            Axis::Bandwidth => "sweep_bandwidth",
            Axis::AbruptError => "sweep_abrupt_error",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Axis::GEnsOverGamma | Axis::XKappa | Axis::XGamma | Axis::AbruptError => "1",
            Axis::TMem => "1/w",
            _ => "w",
        }
    }

    fn allowed(scenario: Scenario) -> &'static [Axis] {
        match scenario {
            Scenario::SwapScan => &[Axis::GEnsOverGamma, Axis::Kappa, Axis::GammaPerp, Axis::XKappa, Axis::XGamma, Axis::TMem],
            Scenario::DecoupleScan => &[Axis::Kappa, Axis::Delta, Axis::DeltaPrime],
            Scenario::InversionScan => &[Axis::Bandwidth, Axis::AbruptError, Axis::GammaPerp, Axis::TMem],
            Scenario::RunProtocol | Scenario::Validate => &[],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: Axis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub csv: Option<String>,
    pub summary: Option<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, Failure> {
        toml::from_str(text).map_err(|e| Failure::Config(e.to_string()))
    }

    /// Cross-section checks that serde cannot express.
    pub fn check(&self, scenario: Scenario) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::Config(m));
        if let Some(s) = self.scenario {
            if s != scenario {
                return bad(format!("config is for {} but {} was requested", s.name(), scenario.name()));
            }
        }
        self.params.build()?;
        let allowed = Axis::allowed(scenario);
        match &self.sweep {
            Some(sw) if !allowed.contains(&sw.axis) => return bad(format!("{} cannot sweep {}", scenario.name(), sw.axis.name())),
            Some(sw) if sw.values.is_empty() => return bad("sweep.values is empty".into()),
            Some(sw) if sw.values.iter().any(|v| !v.is_finite()) => return bad("sweep.values must be finite".into()),
            _ => {}
        }
        let needs_t_mem = matches!(scenario, Scenario::SwapScan | Scenario::InversionScan | Scenario::RunProtocol);
        if needs_t_mem && self.t_mem.is_none() && self.sweep.as_ref().map(|s| s.axis) != Some(Axis::TMem) {
            return bad(format!("{} needs t_mem", scenario.name()));
        }
        if let Some(t) = self.t_mem {
            if !(t > 0.0) {
                return bad(format!("t_mem must be positive, got {t}"));
            }
        }
        if needs_t_mem && self.grid.is_none() {
            return bad(format!("{} needs a [grid] section", scenario.name()));
        }
        if let Some(g) = &self.grid {
            if let Some(t) = self.t_mem {
                g.spacing(t)?;
            }
        }
        if scenario == Scenario::DecoupleScan && self.decouple.is_none() {
            return bad("decouple-scan needs a [decouple] section".into());
        }
        if let Some(s) = &self.schedule {
            s.build()?;
        }
        if let Some(sw) = &self.sweep {
            let inv = self.schedule.as_ref().and_then(|s| s.inversion);
            match sw.axis {
                Axis::Bandwidth if !matches!(inv, Some(InversionSection::Sech { .. })) => {
                    return bad("bandwidth sweeps need schedule.inversion of kind sech".into())
                }
                Axis::AbruptError if !matches!(inv, Some(InversionSection::Abrupt { .. })) => {
                    return bad("abrupt-error sweeps need schedule.inversion of kind abrupt".into())
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn run_options(&self) -> RunOptions {
        match self.tolerance {
            Some(t) => {
                let tol = Tolerances { rtol: t.rtol, atol: t.atol };
                RunOptions { tol, adjoint_tol: tol, ..Default::default() }
            }
            None => RunOptions::default(),
        }
    }

    pub fn schedule_spec(&self) -> Result<ScheduleSpec, Failure> {
        self.schedule.clone().unwrap_or_default().build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "t_mem = 20.0\n[params]\ng_ens_over_gamma = 2.5\n[grid]\ndelta_cut = 10.0\n";

    #[test]
    fn minimal_config_parses() {
        let c = Config::parse(MIN).unwrap();
        c.check(Scenario::RunProtocol).unwrap();
        let p = c.params.build().unwrap();
        assert!((p.g_ens() / p.gamma() - 2.5).abs() < 1e-12);
        assert!((c.grid.unwrap().spacing(20.0).unwrap() - auto_spacing(20.0)).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Config::parse(&format!("{MIN}bogus = 1\n")), Err(Failure::Config(_))));
        let nested = MIN.replace("delta_cut = 10.0", "delta_cut = 10.0\nspacing = 0.1");
        assert!(matches!(Config::parse(&nested), Err(Failure::Config(_))));
    }

    #[test]
    fn coupling_must_be_unique() {
        let c = Config::parse(&MIN.replace("g_ens_over_gamma = 2.5", "g = 1e-5\ng_ens = 1.0")).unwrap();
        assert!(matches!(c.check(Scenario::RunProtocol), Err(Failure::Config(_))));
    }

    #[test]
    fn axis_must_fit_scenario() {
        let c = Config::parse(&format!("{MIN}[sweep]\naxis = \"delta\"\nvalues = [5.0]\n")).unwrap();
        assert!(c.check(Scenario::SwapScan).is_err());
        let c = Config::parse(&format!("{MIN}[sweep]\naxis = \"kappa\"\nvalues = [0.1]\n")).unwrap();
        c.check(Scenario::SwapScan).unwrap();
    }

    #[test]
    fn sech_section_builds_drive() {
        let s = ScheduleSection {
            preset: Preset::Detuned,
            inversion: Some(InversionSection::Sech { bandwidth: 9.0, chi_frac: 0.6, mu: 3.0 }),
            ..Default::default()
        };
        let spec = s.build().unwrap();
        let Inversion::Sech { drives } = spec.inversion else { panic!() };
        assert!((drives[0].chi_max - 5.4).abs() < 1e-12);
        assert!((drives[0].beta_sech - 3.0).abs() < 1e-12);
        assert_eq!(spec.kappa_pulse, 7.5);
    }
}
