use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use spinmem::grid::auto_spacing;
use spinmem::linear::swap_time;
use spinmem::protocol::{fit_gain_decay, RunOptions, RunResult};
use spinmem::scans::{decouple_grid, decouple_point, inversion_point, kappa_for_x, params_for_gamma_x, swap_point};
use spinmem::schedule::{FocusEstimate, Inversion, ScheduleSpec};
use spinmem::validate::{cutoff_convergence, grid_revivals, PsdSummary};
use spinmem::{build_frequency_grid, PhysicalParams, SimError};

use crate::config::{Axis, Config, InversionSection, Scenario};
use crate::Failure;

/// A CSV table: `(name, unit)` columns and numeric rows.
pub struct Table {
    pub columns: Vec<(&'static str, &'static str)>,
    pub rows: Vec<Vec<f64>>,
}

pub struct Outcome {
    pub table: Table,
    pub report: Value,
}

/// Sweep values, or a single unswept point.
fn points(cfg: &Config) -> Vec<Option<(Axis, f64)>> {
    match &cfg.sweep {
        Some(s) => s.values.iter().map(|&v| Some((s.axis, v))).collect(),
        None => vec![None],
    }
}

/// Evaluate every point on the current rayon pool; order follows the sweep.
fn fan_out<T: Send>(cfg: &Config, f: impl Fn(Option<(Axis, f64)>) -> Result<T, Failure> + Sync + Send) -> Result<Vec<T>, Failure> {
    points(cfg).into_par_iter().map(f).collect::<Vec<_>>().into_iter().collect()
}

fn axis_column(cfg: &Config) -> Vec<(&'static str, &'static str)> {
    match &cfg.sweep {
        Some(s) => vec![("index", "1"), (s.axis.column(), s.axis.unit())],
        None => vec![("index", "1")],
    }
}

fn axis_values(i: usize, pt: Option<(Axis, f64)>) -> Vec<f64> {
    match pt {
        Some((_, v)) => vec![i as f64, v],
        None => vec![i as f64],
    }
}

fn with_ratio(p: &PhysicalParams, gamma_perp: f64, ratio: f64) -> Result<PhysicalParams, Failure> {
    let tau = if gamma_perp == 0.0 { f64::INFINITY } else { 1.0 / gamma_perp };
    Ok(PhysicalParams::with_g_ens_over_gamma(p.w, tau, p.n_spins, ratio)?)
}

pub fn run(cfg: &Config, scenario: Scenario) -> Result<Outcome, Failure> {
    match scenario {
        Scenario::SwapScan => swap_scan(cfg),
        Scenario::DecoupleScan => decouple_scan(cfg),
        Scenario::InversionScan => inversion_scan(cfg),
        Scenario::RunProtocol => run_protocol(cfg),
        Scenario::Validate => validate(cfg),
    }
}

// swap-scan always runs the ideal schedule; only kappa_swap is read from [schedule]
fn swap_scan(cfg: &Config) -> Result<Outcome, Failure> {
    let base = cfg.params.build()?;
    let ratio = base.g_ens() / base.gamma();
    let kappa0 = cfg.schedule.as_ref().and_then(|s| s.kappa_swap).unwrap_or(0.0);
    let grid_sec = cfg.grid.as_ref().expect("checked");
    let opts = cfg.run_options();
    let pts = fan_out(cfg, |pt| {
        let (mut p, mut kappa, mut t_mem) = (base, kappa0, cfg.t_mem.unwrap_or(0.0));
        match pt {
            Some((Axis::GEnsOverGamma, v)) => p = with_ratio(&base, base.gamma_perp(), v)?,
            Some((Axis::Kappa, v)) => kappa = v,
            Some((Axis::GammaPerp, v)) => p = with_ratio(&base, v, ratio)?,
            Some((Axis::XKappa, v)) => kappa = kappa_for_x(&base, v)?,
            Some((Axis::XGamma, v)) => p = params_for_gamma_x(base.w, base.n_spins, ratio, t_mem, v)?,
            Some((Axis::TMem, v)) => t_mem = v,
            Some((a, _)) => unreachable!("{a:?} rejected by config check"),
            None => {}
        }
        let grid = grid_sec.build(&p, t_mem)?;
        Ok(swap_point(&p, kappa, t_mem, &grid, &opts)?)
    })?;
    let mut columns = axis_column(cfg);
    columns.extend([
        ("g_ens_over_gamma", "1"),
        ("kappa", "w"),
        ("gamma_perp", "w"),
        ("t_mem", "1/w"),
        ("t_swap", "1/w"),
        ("gain", "1"),
        ("theta", "rad"),
        ("sigma_sq", "1"),
        ("one_minus_gain", "1"),
        ("x_kappa", "1"),
        ("x_gamma", "1"),
        ("rule_of_thumb", "1"),
    ]);
    let rows = pts
        .iter()
        .zip(points(cfg))
        .enumerate()
        .map(|(i, (s, pt))| {
            let mut r = axis_values(i, pt);
            r.extend([s.g_over_gamma, s.kappa, s.gamma_perp, s.t_mem, s.t_swap, s.gain, s.theta, s.sigma_sq, 1.0 - s.gain, s.x_kappa, s.x_gamma, s.thumb]);
            r
        })
        .collect();
    Ok(Outcome { table: Table { columns, rows }, report: json!({ "points": pts }) })
}

fn decouple_scan(cfg: &Config) -> Result<Outcome, Failure> {
    let p = cfg.params.build()?;
    let d = cfg.decouple.expect("checked");
    let prime = d.delta_cs_prime.unwrap_or(d.delta_cs);
    let opts = cfg.run_options();
    let pts = fan_out(cfg, |pt| {
        let (mut kappa, mut dcs, mut dcsp) = (d.kappa, d.delta_cs, prime);
        match pt {
            Some((Axis::Kappa, v)) => kappa = v,
            Some((Axis::Delta, v)) => {
                dcsp = if d.delta_cs == 0.0 { v } else { v * prime / d.delta_cs };
                dcs = v;
            }
            Some((Axis::DeltaPrime, v)) => dcsp = v,
            Some((a, _)) => unreachable!("{a:?} rejected by config check"),
            None => {}
        }
        let grid = match &cfg.grid {
            Some(g) => g.build(&p, 4.0 * d.quarter)?,
            None => decouple_grid(&p, dcs, d.quarter)?,
        };
        Ok(decouple_point(&p, kappa, dcs, dcsp, d.quarter, &grid, &opts)?)
    })?;
    let mut columns = axis_column(cfg);
    columns.extend([
        ("kappa", "w"),
        ("delta_cs", "w"),
        ("delta_cs_prime", "w"),
        ("quarter", "1/w"),
        ("classes", "1"),
        ("gain", "1"),
        ("theta", "rad"),
        ("pred_gain", "1"),
        ("pred_theta", "rad"),
        ("leakage_residual", "1"),
        ("resn_2t", "1"),
        ("resn_4t", "1"),
        ("pred_resn_2t", "1"),
        ("pred_resn_4t", "1"),
        ("c_tilde", "1"),
    ]);
    let rows = pts
        .iter()
        .zip(points(cfg))
        .enumerate()
        .map(|(i, (s, pt))| {
            let mut r = axis_values(i, pt);
            r.extend([
                s.kappa,
                s.delta_cs,
                s.delta_cs_prime,
                s.quarter,
                s.classes as f64,
                s.gain,
                s.theta,
                s.pred_gain,
                s.pred_theta,
                s.residual,
                s.resn_mid,
                s.resn_end,
                s.pred_resn_mid.unwrap_or(f64::NAN),
                s.pred_resn_end.unwrap_or(f64::NAN),
                s.c_tilde,
            ]);
            r
        })
        .collect();
    Ok(Outcome { table: Table { columns, rows }, report: json!({ "points": pts }) })
}

const RESULT_COLUMNS: [(&str, &str); 12] = [
    ("gain", "1"),
    ("g1", "1"),
    ("g2", "1"),
    ("asymmetry", "1"),
    ("theta", "rad"),
    ("theta1", "rad"),
    ("sigma_sq", "1"),
    ("sigma1_sq", "1"),
    ("sigma2_sq", "1"),
    ("ren", "1"),
    ("p_exc_end", "1"),
    ("f_q", "1"),
];

fn result_values(r: &RunResult) -> [f64; 12] {
    let m = &r.gain_map;
    [r.gain_avg, m.g1, m.g2, (m.g1 - m.g2) / m.g1, r.theta, m.theta1, r.sigma_sq, r.sigma1_sq, r.sigma2_sq, r.ren, r.p_exc_end, r.f_q]
}

#[derive(Serialize)]
struct InversionRecord {
    gamma_perp: f64,
    t_mem: f64,
    result: RunResult,
}

fn protocol_at(cfg: &Config, base: &PhysicalParams, spec: &ScheduleSpec, pt: Option<(Axis, f64)>, opts: &RunOptions) -> Result<InversionRecord, Failure> {
    let (mut p, mut spec, mut t_mem) = (*base, *spec, cfg.t_mem.unwrap_or(0.0));
    let inv = cfg.schedule.as_ref().and_then(|s| s.inversion);
    match (pt, inv) {
        (Some((Axis::Bandwidth, v)), Some(InversionSection::Sech { chi_frac, mu, .. })) => {
            spec.inversion = InversionSection::Sech { bandwidth: v, chi_frac, mu }.build()?;
        }
        (Some((Axis::AbruptError, v)), Some(InversionSection::Abrupt { window, .. })) => {
            spec.inversion = Inversion::Abrupt { angles: [PI * (1.0 - v); 2], window };
        }
        (Some((Axis::GammaPerp, v)), _) => p = base.with_gamma_perp(v),
        (Some((Axis::TMem, v)), _) => t_mem = v,
        (Some((a, _)), _) => unreachable!("{a:?} rejected by config check"),
        (None, _) => {}
    }
    let grid = cfg.grid.as_ref().expect("checked").build(&p, t_mem)?;
    let (result, _) = inversion_point(&p, &spec, t_mem, &grid, opts)?;
    Ok(InversionRecord { gamma_perp: p.gamma_perp(), t_mem, result })
}

fn inversion_scan(cfg: &Config) -> Result<Outcome, Failure> {
    let base = cfg.params.build()?;
    let spec = cfg.schedule_spec()?;
    let opts = cfg.run_options();
    let recs = fan_out(cfg, |pt| protocol_at(cfg, &base, &spec, pt, &opts))?;
    let mut columns = axis_column(cfg);
    columns.extend([("gamma_perp", "w"), ("t_mem", "1/w")]);
    columns.extend(RESULT_COLUMNS);
    let rows = recs
        .iter()
        .zip(points(cfg))
        .enumerate()
        .map(|(i, (r, pt))| {
            let mut row = axis_values(i, pt);
            row.extend([r.gamma_perp, r.t_mem]);
            row.extend(result_values(&r.result));
            row
        })
        .collect();
    // gain = g0 exp(-gamma_perp (t_mem - t0)) when dephasing was swept
    let fit = match (&cfg.sweep, cfg.t_mem) {
        (Some(s), Some(t_mem)) if s.axis == Axis::GammaPerp && s.values.len() >= 3 => {
            let pts: Vec<(f64, f64)> = recs.iter().map(|r| (r.gamma_perp, r.result.gain_avg)).collect();
            let (g0, t0) = fit_gain_decay(&pts, t_mem)?;
            let t_swap = swap_time(&base, spec.kappa_swap, false)?;
            json!({ "g0": g0, "t0": t0, "t_swap": t_swap })
        }
        _ => Value::Null,
    };
    Ok(Outcome { table: Table { columns, rows }, report: json!({ "points": recs, "gain_decay_fit": fit }) })
}

fn run_protocol(cfg: &Config) -> Result<Outcome, Failure> {
    let base = cfg.params.build()?;
    let spec = cfg.schedule_spec()?;
    let rec = protocol_at(cfg, &base, &spec, None, &cfg.run_options())?;
    let mut columns = vec![("gamma_perp", "w"), ("t_mem", "1/w")];
    columns.extend(RESULT_COLUMNS);
    let mut row = vec![rec.gamma_perp, rec.t_mem];
    row.extend(result_values(&rec.result));
    Ok(Outcome { table: Table { columns, rows: vec![row] }, report: json!({ "result": rec }) })
}

fn validate(cfg: &Config) -> Result<Outcome, Failure> {
    let p = cfg.params.build()?;
    let v = cfg.validate.clone().unwrap_or_default();
    let gamma = p.gamma();
    let opts = cfg.run_options();

    let cut = cutoff_convergence(&p, v.kappa * gamma, &v.cuts, v.t_max / gamma, v.samples, &opts)?;
    let errs: Vec<f64> = cut.iter().map(|c| c.max_rel_err).collect();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);

    let delta_cut = cfg.grid.as_ref().map_or(20.0, |g| g.delta_cut);
    let t_rev = v.revival_time / gamma;
    let coarse = build_frequency_grid(&p, delta_cut, 2.0 * PI / t_rev)?;
    let found = grid_revivals(&p, &coarse, 1.4 * t_rev)?;
    let detected = found.iter().any(|r| (r.t / t_rev - 1.0).abs() <= 0.02);
    let t_mem = cfg.t_mem.unwrap_or(t_rev);
    let spacing = match &cfg.grid {
        Some(g) => g.spacing(t_mem)?,
        None => auto_spacing(t_mem),
    };
    let fine = build_frequency_grid(&p, delta_cut, spacing)?;
    let spurious = grid_revivals(&p, &fine, t_mem)?;

    // PSD monitor: the ideal protocol on the checked grid, dephasing off and on;
    // the fixed 2/3 focus keeps this working for weak coupling too
    let mut psd = PsdSummary::default();
    let mut psd_skipped = Value::Null;
    let spec = ScheduleSpec { focus: FocusEstimate::TwoThirds, ..ScheduleSpec::ideal(0.0) };
    for gp in [p.gamma_perp(), p.gamma_perp() + 0.02] {
        let q = p.with_gamma_perp(gp);
        match inversion_point(&q, &spec, t_mem, &build_frequency_grid(&q, delta_cut, spacing)?, &opts) {
            Ok((_, cov)) => psd.record(&cov),
            // report-only: a window too short for the protocol is noted, not fatal
            Err(e @ (SimError::Infeasible(_) | SimError::Overdamped { .. })) => psd_skipped = json!(e.to_string()),
            Err(e) => return Err(e.into()),
        }
    }

    let columns = vec![("cut_over_gamma", "1"), ("classes", "1"), ("max_rel_err", "1")];
    let rows = cut.iter().map(|c| vec![c.cut_over_gamma, c.classes as f64, c.max_rel_err]).collect();
    let report = json!({
        "cutoff": { "points": cut, "monotone_decrease": monotone },
        "revival": {
            "expected_t": t_rev,
            "coarse_spacing": 2.0 * PI / t_rev,
            "found": found,
            "detected_within_2pct": detected,
            "checked_spacing": spacing,
            "checked_window": t_mem,
            "spurious": spurious,
        },
        "psd": psd,
        "psd_skipped": psd_skipped,
    });
    Ok(Outcome { table: Table { columns, rows }, report })
}
