//! Discretized Lorentzian detuning distribution.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::params::PhysicalParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpinClass {
    pub delta: f64,
    /// Fraction of all spins in this class.
    pub weight: f64,
    /// Number of spins in this class, `n_spins * weight`.
    pub pop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyGrid {
    pub delta_cut: f64,
    pub d_delta: f64,
    pub classes: Vec<SpinClass>,
    /// Riemann sum of f(delta) * d_delta before renormalization.
    pub raw_mass: f64,
    /// Lorentzian mass inside the cut-off, (2/pi) atan(2 delta_cut / w).
    pub truncated_mass: f64,
    /// Additional transverse decay applied to every class on top of 1/tau.
    /// Nonzero only for the single-class stand-in for a Lorentzian.
    pub extra_decay: f64,
}

pub fn lorentzian(w: f64, delta: f64) -> f64 {
    (w / (2.0 * PI)) / (delta * delta + 0.25 * w * w)
}

pub fn build_frequency_grid(params: &PhysicalParams, delta_cut: f64, d_delta: f64) -> Result<FrequencyGrid> {
    if !(d_delta > 0.0) || !d_delta.is_finite() {
        return Err(SimError::InvalidGrid(format!("spacing must be positive, got {d_delta}")));
    }
    if !(delta_cut > 0.0) || !delta_cut.is_finite() {
        return Err(SimError::InvalidGrid(format!("cut-off must be positive, got {delta_cut}")));
    }
    if delta_cut < d_delta {
        return Err(SimError::InvalidGrid(format!("cut-off {delta_cut} smaller than spacing {d_delta}")));
    }
    let half = (delta_cut / d_delta + 1e-9).floor() as i64;
    let n = params.n_spins;
    let mut classes: Vec<SpinClass> = (-half..=half)
        .map(|k| {
            let delta = k as f64 * d_delta;
            SpinClass { delta, weight: lorentzian(params.w, delta) * d_delta, pop: 0.0 }
        })
        .collect();
    // sum from the tails inwards so the total is symmetric in rounding
    let raw_mass: f64 = pair_sum(&classes);
    for c in &mut classes {
        c.weight /= raw_mass;
        c.pop = n * c.weight;
    }
    Ok(FrequencyGrid {
        delta_cut,
        d_delta,
        classes,
        raw_mass,
        truncated_mass: (2.0 / PI) * (2.0 * delta_cut / params.w).atan(),
        extra_decay: 0.0,
    })
}

fn pair_sum(classes: &[SpinClass]) -> f64 {
    let m = classes.len();
    let mut s = 0.0;
    for k in 0..m / 2 {
        s += classes[k].weight + classes[m - 1 - k].weight;
    }
    if m % 2 == 1 {
        s += classes[m / 2].weight;
    }
    s
}

/// Largest spacing that keeps the artificial revival at four times `t_mem`.
pub fn auto_spacing(t_mem: f64) -> f64 {
    2.0 * PI / (4.0 * t_mem)
}

impl FrequencyGrid {
    /// One class at zero detuning holding every spin, with no broadening.
    pub fn single_class(params: &PhysicalParams) -> Self {
        FrequencyGrid {
            delta_cut: 0.0,
            d_delta: 0.0,
            classes: vec![SpinClass { delta: 0.0, weight: 1.0, pop: params.n_spins }],
            raw_mass: 1.0,
            truncated_mass: 1.0,
            extra_decay: 0.0,
        }
    }

    /// Single class whose transverse decay is Gamma instead of 1/tau; the
    /// exact stand-in for a Lorentzian in the linear regime.
    pub fn homogeneous_equivalent(params: &PhysicalParams) -> Self {
        FrequencyGrid { extra_decay: 0.5 * params.w, ..Self::single_class(params) }
    }

    pub fn auto(params: &PhysicalParams, delta_cut: f64, t_mem: f64) -> Result<Self> {
        build_frequency_grid(params, delta_cut, auto_spacing(t_mem))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn revival_time(&self) -> f64 {
        if self.d_delta > 0.0 {
            2.0 * PI / self.d_delta
        } else {
            f64::INFINITY
        }
    }

    pub fn deltas(&self) -> impl Iterator<Item = f64> + '_ {
        self.classes.iter().map(|c| c.delta)
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.classes.iter().map(|c| c.weight)
    }

    /// Transverse decay rate of every class.
    pub fn gamma_class(&self, params: &PhysicalParams) -> f64 {
        params.gamma_perp() + self.extra_decay
    }

    /// Free decay of the collective mode, sum_m weight_m e^{-(gamma + i delta_m) t},
    /// magnitude only.
    pub fn free_decay(&self, params: &PhysicalParams, t: f64) -> f64 {
        let g = self.gamma_class(params);
        let re: f64 = self.classes.iter().map(|c| c.weight * (c.delta * t).cos()).sum();
        let im: f64 = self.classes.iter().map(|c| c.weight * (c.delta * t).sin()).sum();
        (-g * t).exp() * re.hypot(im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> PhysicalParams {
        PhysicalParams::new(1.0, f64::INFINITY, 1e8, 1e-4).unwrap()
    }

    #[test]
    fn class_count_and_normalization() {
        let p = params();
        let g = build_frequency_grid(&p, 50.0, 0.025).unwrap();
        assert_eq!(g.len(), 4001);
        let s: f64 = g.weights().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let pops: f64 = g.classes.iter().map(|c| c.pop).sum();
        assert!((pops / p.n_spins - 1.0).abs() < 1e-12);
        // raw sum is close to the truncated Lorentzian mass for a fine grid
        assert!((g.raw_mass - g.truncated_mass).abs() < 1e-4);
        assert!((g.truncated_mass - (2.0 / PI) * 100f64.atan()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_spacing() {
        let p = params();
        assert!(build_frequency_grid(&p, 1.0, 0.0).is_err());
        assert!(build_frequency_grid(&p, 1.0, -0.1).is_err());
        assert!(build_frequency_grid(&p, 0.1, 0.2).is_err());
    }

    #[test]
    fn single_class_limit() {
        let g = FrequencyGrid::single_class(&params());
        assert_eq!(g.len(), 1);
        assert_eq!(g.classes[0].delta, 0.0);
        assert_eq!(g.classes[0].weight, 1.0);
        assert!(g.revival_time().is_infinite());
    }

    #[test]
    fn revival_time_and_auto_rule() {
        let p = params();
        let g = FrequencyGrid::auto(&p, 50.0, 100.0).unwrap();
        assert!((g.revival_time() - 400.0).abs() < 1e-9);
    }

    #[test]
    fn free_decay_converges_with_cutoff() {
        // Fourier transform of the Lorentzian is e^{-w t / 2}
        let p = params();
        let gamma = p.gamma();
        let err = |cut: f64| {
            let g = build_frequency_grid(&p, cut * gamma, 0.01).unwrap();
            (0..=50)
                .map(|k| {
                    let t = 0.1 * k as f64;
                    (g.free_decay(&p, t) - (-gamma * t).exp()).abs()
                })
                .fold(0.0, f64::max)
        };
        let e20 = err(20.0);
        let e50 = err(50.0);
        let e100 = err(100.0);
        assert!(e100 < e50 && e50 < e20, "{e20} {e50} {e100}");
        assert!(e100 < 0.01);
    }

    proptest! {
        #[test]
        fn weights_symmetric(cut in 1.0f64..200.0, frac in 0.001f64..0.5, w in 0.2f64..3.0) {
            let p = PhysicalParams::new(w, f64::INFINITY, 1e6, 1e-3).unwrap();
            let g = build_frequency_grid(&p, cut, cut * frac).unwrap();
            let m = g.len();
            prop_assert_eq!(m % 2, 1);
            for k in 0..m {
                prop_assert_eq!(g.classes[k].weight, g.classes[m - 1 - k].weight);
                prop_assert_eq!(g.classes[k].delta, -g.classes[m - 1 - k].delta);
                prop_assert!(g.classes[k].weight > 0.0);
            }
        }

        #[test]
        fn g_ens_squared_is_exact(n in 1.0f64..1e12, g in 0.0f64..10.0) {
            let p = PhysicalParams::new(1.0, 1.0, n, g).unwrap();
            let lhs = p.g_ens().powi(2);
            let rhs = n * g * g;
            prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * rhs.max(1e-300));
        }
    }
}
