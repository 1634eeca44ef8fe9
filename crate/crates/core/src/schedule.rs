//! The seven-segment storage / refocus / retrieval timeline.
//!
//! Segments: 1 swap in, 2 decouple, 3 first inversion, 4 decouple (inverted),
//! 5 second inversion, 6 decouple, 7 swap out. Pulses are counted as acting at
//! their centres, so the echo condition reads
//!   T4 = t_focus + t_focus_rev + T2 + T6,
//! which for instantaneous pulses is the familiar
//!   2 t_focus + sum_{i=2..6} T_i = 2 T4.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::grid::FrequencyGrid;
use crate::linear::{swap_focus_time, swap_time};
use crate::params::{CavitySegment, Coupling, DriveSpec, PhysicalParams, RotationSpec, SegmentAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FocusRule {
    /// T7 = T1 = T_swap and the storage focus time is used twice.
    Symmetric,
    /// T7 = reverse swap time; forward and reverse focus times are summed.
    ReverseAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Inversion {
    /// Perfect instantaneous pi rotations about y.
    Ideal,
    /// Instantaneous rotations about y by the given angles, each centred in a
    /// low-Q window.
    Abrupt { angles: [f64; 2], window: f64 },
    /// Driven sech pulses; centres are placed by the builder.
    Sech { drives: [DriveSpec; 2] },
}

impl Inversion {
    fn window(&self, k: usize) -> f64 {
        match self {
            Inversion::Ideal => 0.0,
            Inversion::Abrupt { window, .. } => *window,
            Inversion::Sech { drives } => drives[k].truncation_window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FocusEstimate {
    /// Fit the phase profile after a simulated swap on the run grid.
    Measured,
    /// t_focus = (2/3) T_swap.
    TwoThirds,
    Fixed { t_focus: f64, t_focus_rev: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kappa_swap: f64,
    pub kappa_decouple: f64,
    /// Detuning during segments 2 and 6.
    pub delta_decouple: f64,
    /// Detuning during segment 4.
    pub delta_middle: f64,
    pub decouple_coupling: Coupling,
    pub kappa_pulse: f64,
    pub delta_pulse: f64,
    pub pulse_coupling: Coupling,
    pub inversion: Inversion,
    pub rule: FocusRule,
    pub focus: FocusEstimate,
}

impl ScheduleSpec {
    /// Hard-decoupled waits with perfect instantaneous inversions.
    pub fn ideal(kappa_swap: f64) -> Self {
        ScheduleSpec {
            kappa_swap,
            kappa_decouple: 0.0,
            delta_decouple: 0.0,
            delta_middle: 0.0,
            decouple_coupling: Coupling::HardDecoupled,
            kappa_pulse: 0.0,
            delta_pulse: 0.0,
            pulse_coupling: Coupling::HardDecoupled,
            inversion: Inversion::Ideal,
            rule: FocusRule::Symmetric,
            focus: FocusEstimate::Measured,
        }
    }

    /// Detuned intermediate-Q decoupling with low-Q inversion windows.
    pub fn detuned(inversion: Inversion) -> Self {
        ScheduleSpec {
            kappa_swap: 0.0,
            kappa_decouple: 0.75,
            delta_decouple: 50.0,
            delta_middle: -50.0,
            decouple_coupling: Coupling::Coupled,
            kappa_pulse: 7.5,
            delta_pulse: 0.0,
            pulse_coupling: Coupling::Coupled,
            inversion,
            rule: FocusRule::Symmetric,
            focus: FocusEstimate::Measured,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolSchedule {
    pub segments: Vec<CavitySegment>,
    pub t_mem: f64,
    pub t_swap: f64,
    pub t_swap_rev: f64,
    pub t_focus: f64,
    pub t_focus_rev: f64,
    pub rule: FocusRule,
}

impl ProtocolSchedule {
    pub fn total(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.duration).collect()
    }

    /// T4 - (t_focus + t_focus_rev + T2 + T6); zero when the echo condition
    /// holds. Only meaningful for seven-segment schedules.
    pub fn focus_residual(&self) -> f64 {
        let d = self.durations();
        d[3] - (self.t_focus + self.t_focus_rev + d[1] + d[5])
    }

    /// Start time of every segment.
    pub fn start_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let t0 = t;
                t += s.duration;
                t0
            })
            .collect()
    }

    /// Refocusing sequence without swaps: quarter time T in each outer wait,
    /// 2T inverted, ideal pulses. Detuning `delta_cs` in the outer waits and
    /// `delta_cs_prime` in the middle.
    pub fn spectator(quarter: f64, kappa: f64, delta_cs: f64, delta_cs_prime: f64) -> Self {
        let pi_y = SegmentAction::Rotation { spec: RotationSpec::about_y(std::f64::consts::PI), at: 0.0 };
        let segments = vec![
            CavitySegment::coupled(kappa, delta_cs, 0.0),
            CavitySegment::coupled(kappa, delta_cs, quarter),
            CavitySegment::decoupled(kappa, delta_cs, 0.0).with_action(pi_y),
            CavitySegment::coupled(kappa, delta_cs_prime, 2.0 * quarter),
            CavitySegment::decoupled(kappa, delta_cs_prime, 0.0).with_action(pi_y),
            CavitySegment::coupled(kappa, delta_cs, quarter),
            CavitySegment::coupled(kappa, delta_cs, 0.0),
        ];
        ProtocolSchedule {
            segments,
            t_mem: 4.0 * quarter,
            t_swap: 0.0,
            t_swap_rev: 0.0,
            t_focus: 0.0,
            t_focus_rev: 0.0,
            rule: FocusRule::Symmetric,
        }
    }
}

/// Focus times (forward, reverse) for the given swap decay and rule.
pub fn focus_times(
    params: &PhysicalParams,
    grid: &FrequencyGrid,
    kappa: f64,
    rule: FocusRule,
    estimate: FocusEstimate,
) -> Result<(f64, f64)> {
    match estimate {
        FocusEstimate::Fixed { t_focus, t_focus_rev } => Ok((t_focus, t_focus_rev)),
        FocusEstimate::TwoThirds => {
            let f = 2.0 / 3.0 * swap_time(params, kappa, false)?;
            let r = match rule {
                FocusRule::Symmetric => f,
                FocusRule::ReverseAware => 2.0 / 3.0 * swap_time(params, kappa, true)?,
            };
            Ok((f, r))
        }
        FocusEstimate::Measured => {
            let f = swap_focus_time(params, grid, kappa, false)?;
            let r = match rule {
                FocusRule::Symmetric => f,
                FocusRule::ReverseAware => swap_focus_time(params, grid, kappa, true)?,
            };
            Ok((f, r))
        }
    }
}

pub fn build_schedule(
    t_mem: f64,
    params: &PhysicalParams,
    spec: &ScheduleSpec,
    grid: &FrequencyGrid,
) -> Result<ProtocolSchedule> {
    if !(t_mem > 0.0) || !t_mem.is_finite() {
        return Err(SimError::InvalidParams(format!("t_mem must be positive, got {t_mem}")));
    }
    let t_swap = swap_time(params, spec.kappa_swap, false)?;
    let t_swap_rev = match spec.rule {
        FocusRule::Symmetric => t_swap,
        FocusRule::ReverseAware => swap_time(params, spec.kappa_swap, true)?,
    };
    let (t_focus, t_focus_rev) = focus_times(params, grid, spec.kappa_swap, spec.rule, spec.focus)?;
    let (w3, w5) = (spec.inversion.window(0), spec.inversion.window(1));
    let free = t_mem - t_swap - t_swap_rev - w3 - w5 - t_focus - t_focus_rev;
    let t2 = free / 4.0;
    if t2 < 0.0 {
        return Err(SimError::Infeasible(format!(
            "t_mem = {t_mem} leaves negative decoupling time T2 = {t2:.6} (swaps {t_swap:.4} + {t_swap_rev:.4}, pulses {w3:.4} + {w5:.4}, focus {t_focus:.4} + {t_focus_rev:.4})"
        )));
    }
    let t4 = t_focus + t_focus_rev + 2.0 * t2;

    let pulse = |k: usize| -> CavitySegment {
        let window = spec.inversion.window(k);
        let action = match spec.inversion {
            Inversion::Ideal => SegmentAction::Rotation { spec: RotationSpec::about_y(std::f64::consts::PI), at: 0.0 },
            Inversion::Abrupt { angles, window } => {
                SegmentAction::Rotation { spec: RotationSpec::about_y(angles[k]), at: 0.5 * window }
            }
            Inversion::Sech { drives } => {
                let mut d = drives[k];
                d.t_center = 0.5 * d.truncation_window;
                SegmentAction::Sech(d)
            }
        };
        let coupling = if matches!(spec.inversion, Inversion::Ideal) { Coupling::HardDecoupled } else { spec.pulse_coupling };
        CavitySegment { kappa: spec.kappa_pulse, delta_cs: spec.delta_pulse, duration: window, coupling, action }
    };
    let wait = |delta: f64, duration: f64| CavitySegment {
        kappa: spec.kappa_decouple,
        delta_cs: delta,
        duration,
        coupling: spec.decouple_coupling,
        action: SegmentAction::None,
    };
    let segments = vec![
        CavitySegment::coupled(spec.kappa_swap, 0.0, t_swap),
        wait(spec.delta_decouple, t2),
        pulse(0),
        wait(spec.delta_middle, t4),
        pulse(1),
        wait(spec.delta_decouple, t2),
        CavitySegment::coupled(spec.kappa_swap, 0.0, t_swap_rev),
    ];
    for s in &segments {
        s.validate()?;
    }
    Ok(ProtocolSchedule { segments, t_mem, t_swap, t_swap_rev, t_focus, t_focus_rev, rule: spec.rule })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_frequency_grid;
    use proptest::prelude::*;

    fn params(tau: f64) -> PhysicalParams {
        PhysicalParams::with_g_ens_over_gamma(1.0, tau, 1e8, 2.5).unwrap()
    }

    #[test]
    fn symmetric_ideal_schedule() {
        let p = params(f64::INFINITY);
        let grid = FrequencyGrid::single_class(&p);
        let mut spec = ScheduleSpec::ideal(0.0);
        spec.focus = FocusEstimate::TwoThirds;
        let s = build_schedule(40.0, &p, &spec, &grid).unwrap();
        let d = s.durations();
        assert!((d[0] * p.gamma() - 0.723_478_942_014_942_6).abs() < 1e-12);
        assert_eq!(d[0], d[6]);
        assert_eq!(d[1], d[5]);
        assert_eq!(d[2], 0.0);
        assert!((s.total() - 40.0).abs() < 1e-12);
        let sum26: f64 = d[1..6].iter().sum();
        assert!((2.0 * s.t_focus + sum26 - 2.0 * d[3]).abs() < 1e-12);
        assert!(s.focus_residual().abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_overdamped() {
        let p = params(f64::INFINITY);
        let grid = FrequencyGrid::single_class(&p);
        let spec = ScheduleSpec { focus: FocusEstimate::TwoThirds, ..ScheduleSpec::ideal(0.0) };
        assert!(matches!(build_schedule(1.0, &p, &spec, &grid), Err(SimError::Infeasible(_))));
        let weak = PhysicalParams::with_g_ens_over_gamma(1.0, f64::INFINITY, 1e8, 0.4).unwrap();
        assert!(matches!(build_schedule(40.0, &weak, &spec, &grid), Err(SimError::Overdamped { .. })));
    }

    #[test]
    fn spectator_layout() {
        let s = ProtocolSchedule::spectator(5.0, 0.075, 20.0, -20.0);
        let d = s.durations();
        assert_eq!(d, vec![0.0, 5.0, 0.0, 10.0, 0.0, 5.0, 0.0]);
        assert_eq!(s.t_mem, 20.0);
        assert_eq!(s.segments[3].delta_cs, -20.0);
    }

    #[test]
    fn sech_pulses_are_centred() {
        let p = params(f64::INFINITY);
        let grid = FrequencyGrid::single_class(&p);
        let d = DriveSpec::new(3.0, 1.0, 3.0).unwrap();
        let mut spec = ScheduleSpec::detuned(Inversion::Sech { drives: [d, d] });
        spec.focus = FocusEstimate::TwoThirds;
        let s = build_schedule(60.0, &p, &spec, &grid).unwrap();
        assert_eq!(s.segments[2].duration, 16.0);
        match s.segments[4].action {
            SegmentAction::Sech(x) => assert_eq!(x.t_center, 8.0),
            _ => panic!("expected sech pulse"),
        }
        assert!(s.focus_residual().abs() < 1e-12);
        assert!((s.total() - 60.0).abs() < 1e-12);
    }

    #[test]
    fn reverse_aware_uses_reverse_swap() {
        let p = params(4.0);
        let grid = build_frequency_grid(&p, 40.0, 0.02).unwrap();
        let spec = ScheduleSpec { rule: FocusRule::ReverseAware, ..ScheduleSpec::ideal(0.3) };
        let s = build_schedule(30.0, &p, &spec, &grid).unwrap();
        assert_eq!(s.segments[6].duration, swap_time(&p, 0.3, true).unwrap());
        assert!(s.t_focus != s.t_focus_rev);
        assert!(s.focus_residual().abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn schedule_invariants(t_mem in 5.0f64..200.0, kappa in 0.0f64..1.0, gp in 0.0f64..0.5, window in 0.0f64..2.0) {
            let p = params(f64::INFINITY).with_gamma_perp(gp);
            let grid = FrequencyGrid::single_class(&p);
            let inversion = if window == 0.0 { Inversion::Ideal } else { Inversion::Abrupt { angles: [3.0, 3.1], window } };
            let spec = ScheduleSpec { inversion, focus: FocusEstimate::TwoThirds, ..ScheduleSpec::ideal(kappa) };
            if let Ok(s) = build_schedule(t_mem, &p, &spec, &grid) {
                prop_assert!((s.total() - t_mem).abs() < 1e-9 * t_mem);
                prop_assert_eq!(s.segments[1].duration, s.segments[5].duration);
                prop_assert!(s.focus_residual().abs() < 1e-9 * t_mem);
                prop_assert!(s.segments.iter().all(|x| x.duration >= 0.0));
            }
        }
    }
}
