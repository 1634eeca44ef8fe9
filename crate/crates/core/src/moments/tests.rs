use std::f64::consts::PI;

use num_complex::Complex64;

use super::*;
use crate::grid::build_frequency_grid;
use crate::linear::{evolve_linear, LinearState};
use crate::params::CavitySegment;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn ground_state_is_stationary() {
    let p = PhysicalParams::with_g_ens(1.0, 2.0, 1e8, 1.2).unwrap();
    let grid = build_frequency_grid(&p, 3.0, 0.5).unwrap();
    let st = SystemState::ground(&grid, c(0.0, 0.0));
    let seg = CavitySegment::coupled(0.8, 1.5, 3.0);
    let opts = MomentOptions { sample_times: vec![0.0, 1.5, 3.0], ..Default::default() };
    let (end, samples) = evolve_moments(&st, &seg, &grid, &p, None, &opts).unwrap();
    assert!(max_abs_diff(end.cov.as_ref().unwrap(), st.cov.as_ref().unwrap()) < 1e-12);
    for s in &samples {
        assert!(s.resn.unwrap().abs() < 1e-12);
    }
    let obs = noise_observables(&end, &grid).unwrap();
    assert!(obs.ren.abs() < 1e-12 && obs.excitation.abs() < 1e-15);
}

#[test]
fn inverted_transient_matches_closed_form() {
    // single class with decay Gamma stands in for the Lorentzian exactly
    for &cval in &[0.1f64, 0.3, 0.63] {
        let gamma: f64 = 0.5;
        let kappa = gamma;
        let g_ens = (cval * kappa * gamma).sqrt();
        let p = PhysicalParams::with_g_ens(1.0, f64::INFINITY, 6.25e10, g_ens).unwrap();
        let grid = FrequencyGrid::homogeneous_equivalent(&p);
        let st = SystemState::inverted(&grid, c(0.0, 0.0));
        let times: Vec<f64> = (0..=12).map(|k| k as f64 * 0.5).collect();
        let opts = MomentOptions { sample_times: times.clone(), ..Default::default() };
        let seg = CavitySegment::coupled(kappa, 0.0, 6.0);
        let (_, samples) = evolve_moments(&st, &seg, &grid, &p, None, &opts).unwrap();
        for s in &samples {
            let (vx, vs) = transient_variance_closed_form(s.t, &p, kappa).unwrap();
            let cc = s.cavity_cov.unwrap();
            assert!((cc[0][0] / vx - 1.0).abs() < 1e-7, "C={cval} t={} {} {}", s.t, cc[0][0], vx);
            assert!((cc[1][1] / vx - 1.0).abs() < 1e-7);
            let (sx, sy) = s.spin_var.unwrap();
            assert!((sx / (vs / p.n_spins) - 1.0).abs() < 1e-7, "C={cval} t={} {sx}", s.t);
            assert!((sy / (vs / p.n_spins) - 1.0).abs() < 1e-7);
        }
    }
}

#[test]
fn inverted_steady_state_with_detuning() {
    let p = PhysicalParams::with_g_ens(1.0, 4.0, 1e9, 0.4).unwrap();
    let grid = FrequencyGrid::homogeneous_equivalent(&p);
    let st = SystemState::inverted(&grid, c(0.0, 0.0));
    for &(kappa, dcs) in &[(0.3, 0.0), (1.2, 0.0), (0.3, 2.0)] {
        let seg = CavitySegment::coupled(kappa, dcs, 150.0);
        let (end, _) = evolve_moments(&st, &seg, &grid, &p, None, &MomentOptions::default()).unwrap();
        let (vx, vs) = steady_state_noise(&p, kappa, dcs).unwrap();
        let cov = end.cov.unwrap();
        let var_x = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
        assert!((var_x / vx - 1.0).abs() < 1e-6, "{kappa} {dcs}: {var_x} vs {vx}");
        let (sx, sy) = collective_spin_variances(&cov, &grid);
        assert!((0.5 * (sx + sy) / (vs / p.n_spins) - 1.0).abs() < 1e-6);
    }
}

#[test]
fn inverted_mean_decay_matches_closed_form() {
    let p = PhysicalParams::with_g_ens(1.0, f64::INFINITY, 1e10, 0.3).unwrap();
    let grid = FrequencyGrid::homogeneous_equivalent(&p);
    let alpha = c(0.4, -0.2);
    let st = SystemState::inverted(&grid, alpha).without_covariance();
    let kappa = 0.9;
    let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.4).collect();
    let opts = MomentOptions { sample_times: times, ..Default::default() };
    let (_, samples) = evolve_moments(&st, &CavitySegment::coupled(kappa, 0.0, 4.0), &grid, &p, None, &opts).unwrap();
    for s in samples {
        let (a, sm) = inverted_decay_closed_form(s.t, alpha, &p, kappa);
        assert!((s.a - a).norm() < 1e-8, "{} {}", s.a, a);
        // sample b is S_minus^eff / sqrt(N)
        assert!((s.b - sm / p.n_spins.sqrt()).norm() < 1e-8);
    }
}

#[test]
fn frozen_z_means_match_linear_engine() {
    let p = PhysicalParams::with_g_ens(1.0, 3.0, 1e8, 1.25).unwrap();
    let grid = build_frequency_grid(&p, 6.0, 0.25).unwrap();
    let alpha = c(0.7, 0.3);
    let seg = CavitySegment::coupled(0.2, 0.4, 2.0);
    let st = SystemState::ground(&grid, alpha).without_covariance();
    let opts = MomentOptions { freeze_z: true, tol: Tolerances { rtol: 1e-11, atol: 1e-14 }, ..Default::default() };
    let (end, _) = evolve_moments(&st, &seg, &grid, &p, None, &opts).unwrap();
    let (lin, _) = evolve_linear(&LinearState::ground(&grid, alpha), &seg, &grid, &p, None, &[]).unwrap();
    assert!((end.a - lin.a).norm() < 1e-8, "{} {}", end.a, lin.a);
    let b_moment = end.collective(&grid, &p);
    let b_linear = lin.collective(&grid, &p);
    assert!((b_moment - b_linear).norm() < 1e-8);
}

#[test]
fn uncoupled_inverted_noise_stays_zero() {
    let p = PhysicalParams::with_g_ens(1.0, f64::INFINITY, 1e8, 1.25).unwrap();
    let grid = build_frequency_grid(&p, 4.0, 0.5).unwrap();
    let mut st = SystemState::inverted(&grid, c(0.0, 0.0));
    // a squeezed cavity relaxes to vacuum at 2 kappa
    st.cov.as_mut().unwrap()[(0, 0)] = 2.0;
    let seg = CavitySegment::decoupled(0.6, 3.0, 2.5);
    let (end, _) = evolve_moments(&st, &seg, &grid, &p, None, &MomentOptions::default()).unwrap();
    let cov = end.cov.as_ref().unwrap();
    assert!(resn_of(cov, &grid).abs() < 1e-12);
    let expect = 0.5 + 1.5 * (-2.0f64 * 0.6 * 2.5).exp();
    // detuning rotates X into P; the trace is rotation invariant
    assert!((cov[(0, 0)] + cov[(1, 1)] - (expect + 0.5)).abs() < 1e-9);
    let n = cov.nrows();
    let c0 = st.cov.as_ref().unwrap();
    for i in 2..n {
        for j in 2..n {
            if (i - 2) % 3 == 2 || (j - 2) % 3 == 2 {
                assert!((cov[(i, j)] - c0[(i, j)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn rotations_on_state() {
    let p = PhysicalParams::with_g_ens(1.0, f64::INFINITY, 1e8, 1.25).unwrap();
    let grid = build_frequency_grid(&p, 1.0, 0.5).unwrap();
    let mut st = SystemState::ground(&grid, c(0.0, 0.0));
    st.bloch[1] = [0.3, 0.2, -0.9];
    st.cov = Some(coherent_covariance(&st.bloch));
    let orig = st.clone();
    let mut y = st.clone();
    y.rotate(&RotationSpec::about_y(PI));
    let b = y.bloch[1];
    assert!((b[0] + 0.3).abs() < 1e-15 && (b[1] - 0.2).abs() < 1e-15 && (b[2] - 0.9).abs() < 1e-15);
    // rotated coherent state stays coherent
    assert!(max_abs_diff(y.cov.as_ref().unwrap(), &coherent_covariance(&y.bloch)) < 1e-14);
    let mut x = st.clone();
    x.rotate(&RotationSpec::about_x(PI));
    x.rotate(&RotationSpec::about_x(PI));
    assert!(max_abs_diff(x.cov.as_ref().unwrap(), orig.cov.as_ref().unwrap()) < 1e-14);
    let mut z = st.clone();
    z.rotate(&RotationSpec::about_x(0.0));
    assert_eq!(z, orig);
}

#[test]
fn psd_violation_is_reported() {
    let mut m = DMatrix::<f64>::identity(3, 3);
    m[(0, 1)] = 2.0;
    m[(1, 0)] = 2.0;
    assert!(matches!(check_psd(&m, 1.0), Err(SimError::NotPsd { .. })));
    assert!(check_psd(&DMatrix::identity(4, 4), 0.0).is_ok());
}

#[test]
fn heisenberg_floor_along_noisy_run() {
    let p = PhysicalParams::with_g_ens(1.0, 2.0, 1e8, 0.5).unwrap();
    let grid = build_frequency_grid(&p, 4.0, 0.5).unwrap();
    let mut st = SystemState::ground(&grid, c(1.0, 0.0));
    st.rotate(&RotationSpec::about_y(2.0));
    let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.2).collect();
    let opts = MomentOptions { sample_times: times, ..Default::default() };
    let (_, samples) = evolve_moments(&st, &CavitySegment::coupled(0.5, 0.3, 4.0), &grid, &p, None, &opts).unwrap();
    for s in samples {
        let cc = s.cavity_cov.unwrap();
        let det = cc[0][0] * cc[1][1] - cc[0][1] * cc[1][0];
        assert!(det >= 0.25 - 1e-9, "t={} det={det}", s.t);
    }
}
