//! Signal-free background trajectory with checkpoints, nonlinear signal
//! increments on top of it, and backward (adjoint) propagation of linear
//! functionals for the output statistics.
//!
//! All states use the N-free mean-field layout [x, p, sx_0, sy_0, sz_0, ...].
//! Adjoint vectors live in the fluctuation basis of `Jacobian`.

use std::f64::consts::SQRT_2;

use crate::error::{ode_err, Result};
use crate::grid::FrequencyGrid;
use crate::moments::{Jacobian, MeanDrive, MeanField, SegmentRates};
use crate::ode::{Dense, Dop853, Options, System, Tolerances};
use crate::params::{DriveMode, DriveSpec, PhysicalParams, SegmentAction};
use crate::schedule::ProtocolSchedule;

/// Elementary piece of a schedule: a flow with constant rates or an
/// instantaneous rotation.
#[derive(Debug, Clone)]
pub(crate) enum Piece {
    Flow { seg: usize, t0: f64, rates: SegmentRates, drive: Option<DriveSpec>, t_offset: f64, duration: f64 },
    Rotate { t0: f64, r: [[f64; 3]; 3] },
}

impl Piece {
    fn t0(&self) -> f64 {
        match self {
            Piece::Flow { t0, .. } | Piece::Rotate { t0, .. } => *t0,
        }
    }

    fn analytic(&self) -> bool {
        matches!(self, Piece::Flow { rates, drive: None, .. } if rates.g_ens == 0.0)
    }
}

/// Split a schedule into flows and rotations. External-beta sech drives are
/// run as prescribed drives: the inverse filter reproduces the same
/// background by construction.
pub(crate) fn pieces(schedule: &ProtocolSchedule, params: &PhysicalParams, grid: &FrequencyGrid) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut t = 0.0;
    for (seg, s) in schedule.segments.iter().enumerate() {
        let rates = SegmentRates::new(params, grid, s);
        let flow = |t0: f64, t_offset: f64, duration: f64, drive: Option<DriveSpec>| Piece::Flow {
            seg,
            t0,
            rates,
            drive,
            t_offset,
            duration,
        };
        match s.action {
            SegmentAction::None => out.push(flow(t, 0.0, s.duration, None)),
            SegmentAction::Sech(spec) => {
                let spec = DriveSpec { mode: DriveMode::PrescribedIntracavity, ..spec };
                out.push(flow(t, 0.0, s.duration, Some(spec)));
            }
            SegmentAction::Rotation { spec, at } => {
                if at > 0.0 {
                    out.push(flow(t, 0.0, at, None));
                }
                out.push(Piece::Rotate { t0: t + at, r: spec.matrix() });
                if s.duration > at {
                    out.push(flow(t + at, at, s.duration - at, None));
                }
            }
        }
        t += s.duration;
    }
    out.retain(|p| !matches!(p, Piece::Flow { duration, .. } if *duration <= 0.0));
    out
}

/// Exact flow of a hard-decoupled, undriven piece. With `transpose` the
/// transposed propagator is applied (adjoint vectors).
pub(crate) fn decoupled_flow(y: &mut [f64], rates: &SegmentRates, deltas: &[f64], tau: f64, transpose: bool) {
    let sgn = if transpose { -1.0 } else { 1.0 };
    let (s, c) = (rates.delta_cs * tau).sin_cos();
    let e = (-rates.kappa * tau).exp();
    let (x, p) = (y[0], y[1]);
    // dx = -k x + d p, dp = -d x - k p
    y[0] = e * (c * x + sgn * s * p);
    y[1] = e * (-sgn * s * x + c * p);
    let eg = (-rates.gamma * tau).exp();
    for (m, d) in deltas.iter().enumerate() {
        let i = 2 + 3 * m;
        let (s, c) = (d * tau).sin_cos();
        let (ux, uy) = (y[i], y[i + 1]);
        // dux = -d uy - g ux, duy = d ux - g uy
        y[i] = eg * (c * ux - sgn * s * uy);
        y[i + 1] = eg * (sgn * s * ux + c * uy);
    }
}

fn rotate_classes(y: &mut [f64], r: &[[f64; 3]; 3], transpose: bool) {
    let m = (y.len() - 2) / 3;
    for k in 0..m {
        let i = 2 + 3 * k;
        let v = [y[i], y[i + 1], y[i + 2]];
        for a in 0..3 {
            y[i + a] = if transpose {
                r[0][a] * v[0] + r[1][a] * v[1] + r[2][a] * v[2]
            } else {
                r[a][0] * v[0] + r[a][1] * v[1] + r[a][2] * v[2]
            };
        }
    }
}

fn mean_field<'a>(rates: SegmentRates, grid: &FrequencyGrid, drive: Option<DriveSpec>, t_offset: f64, g_ens: f64) -> MeanField<'a> {
    let drive = match drive {
        Some(spec) => MeanDrive::prescribed(spec, g_ens),
        None => MeanDrive::None,
    };
    let mut mf = MeanField::new(rates, grid, drive);
    mf.t_offset = t_offset;
    mf
}

/// Forward record of one numeric piece.
#[derive(Debug, Clone, Default)]
struct Record {
    /// (t_old, h) of every accepted step, local time.
    steps: Vec<(f64, f64)>,
    /// State at the start of every `every`-th step.
    checkpoints: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct EngineOptions {
    pub tol: Tolerances,
    pub adjoint_tol: Tolerances,
    pub checkpoint_every: usize,
}

pub(crate) struct Background {
    pub pieces: Vec<Piece>,
    records: Vec<Option<Record>>,
    pub deltas: Vec<f64>,
    pub weights: Vec<f64>,
    pub g_ens: f64,
    pub y0: Vec<f64>,
    pub y_end: Vec<f64>,
    /// State after every piece, with its end time.
    pub boundaries: Vec<(f64, Vec<f64>)>,
    opts: EngineOptions,
    grid: FrequencyGrid,
}

impl Background {
    pub fn run(
        schedule: &ProtocolSchedule,
        params: &PhysicalParams,
        grid: &FrequencyGrid,
        y0: Vec<f64>,
        opts: EngineOptions,
    ) -> Result<Self> {
        let pieces = pieces(schedule, params, grid);
        let g_ens = params.g_ens();
        let deltas: Vec<f64> = grid.deltas().collect();
        let weights: Vec<f64> = grid.weights().collect();
        let mut y = y0.clone();
        let mut records = Vec::with_capacity(pieces.len());
        let mut boundaries = Vec::with_capacity(pieces.len());
        let every = opts.checkpoint_every.max(1);
        let mut h_next = None;
        for piece in &pieces {
            match piece {
                Piece::Rotate { t0, r } => {
                    rotate_classes(&mut y, r, false);
                    records.push(None);
                    boundaries.push((*t0, y.clone()));
                }
                Piece::Flow { rates, duration, t0, .. } if piece.analytic() => {
                    decoupled_flow(&mut y, rates, &deltas, *duration, false);
                    records.push(None);
                    boundaries.push((t0 + duration, y.clone()));
                }
                Piece::Flow { seg, t0, rates, drive, t_offset, duration } => {
                    let mut mf = mean_field(*rates, grid, *drive, *t_offset, g_ens);
                    if let Some((a, _)) = mf.prescribed_field(0.0) {
                        y[0] = SQRT_2 * a.re;
                        y[1] = SQRT_2 * a.im;
                    }
                    let mut rec = Record::default();
                    let ode = Options { tol: opts.tol, h_init: h_next, ..Default::default() };
                    let stats = Dop853::new(y.len(), ode)
                        .integrate(&mut mf, 0.0, &mut y, *duration, |st| {
                            if rec.steps.len() % every == 0 {
                                rec.checkpoints.push(st.y_old.to_vec());
                            }
                            rec.steps.push((st.t_old, st.t - st.t_old));
                        })
                        .map_err(ode_err(*seg))?;
                    h_next = Some(stats.h_next);
                    records.push(Some(rec));
                    boundaries.push((t0 + duration, y.clone()));
                }
            }
        }
        Ok(Background {
            pieces,
            records,
            deltas,
            weights,
            g_ens,
            y0,
            y_end: y,
            boundaries,
            opts,
            grid: grid.clone(),
        })
    }

    pub fn total(&self) -> f64 {
        self.boundaries.last().map_or(0.0, |b| b.0)
    }

    pub fn dim(&self) -> usize {
        2 + 3 * self.deltas.len()
    }

    /// Propagate a nonlinear signal increment `d0` (same layout as the
    /// background) on top of the background. Returns the final increment.
    pub fn increment(&self, d0: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        let mut y = self.y0.clone();
        y.extend_from_slice(d0);
        let mut h_next = None;
        for piece in &self.pieces {
            match piece {
                Piece::Rotate { r, .. } => {
                    rotate_classes(&mut y[..n], r, false);
                    rotate_classes(&mut y[n..], r, false);
                }
                Piece::Flow { rates, duration, .. } if piece.analytic() => {
                    decoupled_flow(&mut y[..n], rates, &self.deltas, *duration, false);
                    decoupled_flow(&mut y[n..], rates, &self.deltas, *duration, false);
                }
                Piece::Flow { seg, rates, drive, t_offset, duration, .. } => {
                    let mf = mean_field(*rates, &self.grid, *drive, *t_offset, self.g_ens);
                    if let Some((a, _)) = mf.prescribed_field(0.0) {
                        y[0] = SQRT_2 * a.re;
                        y[1] = SQRT_2 * a.im;
                    }
                    // both halves share the error norm; the increment is tiny
                    // so its own scale is set through atol
                    let scale = d0.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
                    let tol = Tolerances { rtol: self.opts.tol.rtol, atol: self.opts.tol.atol * scale };
                    let mut sys = Increment { mf, n };
                    let ode = Options { tol, h_init: h_next, ..Default::default() };
                    let stats =
                        Dop853::new(2 * n, ode).integrate(&mut sys, 0.0, &mut y, *duration, |_| {}).map_err(ode_err(*seg))?;
                    h_next = Some(stats.h_next);
                }
            }
        }
        Ok(y[n..].to_vec())
    }

    /// Propagate the functionals `funcs` (given at `t_end`) back to t = 0.
    /// Returns the functionals at t = 0 and the accumulated diffusion
    /// contributions q_ab = int l_a^T D l_b dt.
    pub fn adjoint(&self, funcs: &[Vec<f64>], t_end: f64) -> Result<AdjointOutput> {
        let n = self.dim();
        let nl = funcs.len();
        let npairs = nl * (nl + 1) / 2;
        let mut y: Vec<f64> = Vec::with_capacity(nl * n + npairs);
        for f in funcs {
            assert_eq!(f.len(), n, "functional dimension");
            y.extend_from_slice(f);
        }
        y.resize(nl * n + npairs, 0.0);
        let pairs: Vec<(usize, usize)> = (0..nl).flat_map(|a| (a..nl).map(move |b| (a, b))).collect();
        let mut h_next = None;
        let mut pool: Vec<Dense> = Vec::new();
        for (k, piece) in self.pieces.iter().enumerate().rev() {
            let t0 = piece.t0();
            if t0 > t_end {
                continue;
            }
            match piece {
                Piece::Rotate { r, .. } => {
                    for a in 0..nl {
                        rotate_classes(&mut y[a * n..(a + 1) * n], r, true);
                    }
                }
                Piece::Flow { rates, duration, .. } if piece.analytic() => {
                    let tau = duration.min(t_end - t0);
                    let cav = -0.5 * (-2.0 * rates.kappa * tau).exp_m1();
                    let spin = -(-2.0 * rates.gamma * tau).exp_m1();
                    for (p, &(a, b)) in pairs.iter().enumerate() {
                        let la = &y[a * n..(a + 1) * n];
                        let lb = &y[b * n..(b + 1) * n];
                        let mut s = 0.0;
                        for m in 0..self.deltas.len() {
                            let i = 2 + 3 * m;
                            s += la[i] * lb[i] + la[i + 1] * lb[i + 1];
                        }
                        let acc = cav * (la[0] * lb[0] + la[1] * lb[1]) + spin * s;
                        y[nl * n + p] += acc;
                    }
                    for a in 0..nl {
                        decoupled_flow(&mut y[a * n..(a + 1) * n], rates, &self.deltas, tau, true);
                    }
                }
                Piece::Flow { seg, rates, drive, t_offset, duration, .. } => {
                    let rec = self.records[k].as_ref().expect("numeric piece has a record");
                    let local_end = duration.min(t_end - t0);
                    let mut mf = mean_field(*rates, &self.grid, *drive, *t_offset, self.g_ens);
                    let jac = Jacobian::from_mean_field(&mf);
                    let diff = jac.diffusion();
                    let every = self.opts.checkpoint_every.max(1);
                    let mut replay = Dop853::new(n, Options { dense: true, ..Default::default() });
                    let nchunks = rec.checkpoints.len();
                    for c in (0..nchunks).rev() {
                        let lo = c * every;
                        let hi = ((c + 1) * every).min(rec.steps.len());
                        let chunk_start = rec.steps[lo].0;
                        if chunk_start >= local_end && local_end > 0.0 {
                            continue;
                        }
                        let mut yb = rec.checkpoints[c].clone();
                        let mut count = 0;
                        for &(t, h) in &rec.steps[lo..hi] {
                            if t > local_end {
                                break;
                            }
                            let d = replay.replay_step(&mut mf, t, &mut yb, h);
                            if pool.len() <= count {
                                pool.push(d.clone());
                            } else {
                                pool[count].assign(d);
                            }
                            count += 1;
                        }
                        let chunk_end = if hi < rec.steps.len() { rec.steps[hi].0 } else { *duration };
                        let from = chunk_end.min(local_end);
                        if from <= chunk_start {
                            continue;
                        }
                        let mut sys = AdjointSystem {
                            mf: &mf,
                            jac: &jac,
                            diff: &diff,
                            dense: &pool[..count],
                            n,
                            nl,
                            pairs: &pairs,
                            bg: vec![0.0; n],
                        };
                        let ode = Options { tol: self.opts.adjoint_tol, h_init: h_next, ..Default::default() };
                        let stats = Dop853::new(y.len(), ode)
                            .integrate(&mut sys, from, &mut y, chunk_start, |_| {})
                            .map_err(ode_err(*seg))?;
                        h_next = Some(stats.h_next);
                    }
                }
            }
        }
        let l0 = (0..nl).map(|a| y[a * n..(a + 1) * n].to_vec()).collect();
        let mut q = vec![0.0; nl * nl];
        for (p, &(a, b)) in pairs.iter().enumerate() {
            q[a * nl + b] = y[nl * n + p];
            q[b * nl + a] = y[nl * n + p];
        }
        Ok(AdjointOutput { l0, q, nl })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AdjointOutput {
    pub l0: Vec<Vec<f64>>,
    /// Row-major nl x nl.
    pub q: Vec<f64>,
    pub nl: usize,
}

impl AdjointOutput {
    /// Covariance of the functionals at the end time, given the initial
    /// Bloch vectors (coherent spin states) and a vacuum cavity.
    pub fn covariance(&self, bloch0: &[[f64; 3]]) -> Vec<f64> {
        let nl = self.nl;
        let mut c = self.q.clone();
        for a in 0..nl {
            for b in 0..nl {
                c[a * nl + b] += coherent_form(&self.l0[a], &self.l0[b], bloch0);
            }
        }
        c
    }
}

/// l_a^T C0 l_b for a vacuum cavity and coherent spin states.
pub(crate) fn coherent_form(la: &[f64], lb: &[f64], bloch: &[[f64; 3]]) -> f64 {
    let mut acc = 0.5 * (la[0] * lb[0] + la[1] * lb[1]);
    for (m, s) in bloch.iter().enumerate() {
        let i = 2 + 3 * m;
        let dot = la[i] * lb[i] + la[i + 1] * lb[i + 1] + la[i + 2] * lb[i + 2];
        let pa = la[i] * s[0] + la[i + 1] * s[1] + la[i + 2] * s[2];
        let pb = lb[i] * s[0] + lb[i + 1] * s[1] + lb[i + 2] * s[2];
        acc += dot - pa * pb;
    }
    acc
}

struct Increment<'a> {
    mf: MeanField<'a>,
    n: usize,
}

impl System for Increment<'_> {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let (bg, d) = y.split_at(n);
        let (dbg, dd) = dy.split_at_mut(n);
        self.mf.rhs(t, bg, dbg);
        let r = self.mf.rates;
        let (x, p) = match self.mf.prescribed_field(t) {
            Some((a, _)) => (SQRT_2 * a.re, SQRT_2 * a.im),
            None => (bg[0], bg[1]),
        };
        let g = SQRT_2 * r.g_ens;
        let (dx, dp) = (d[0], d[1]);
        let mut acc_x = 0.0;
        let mut acc_p = 0.0;
        for m in 0..self.mf.deltas.len() {
            let i = 2 + 3 * m;
            let (sx, sy, sz) = (bg[i], bg[i + 1], bg[i + 2]);
            let (ex, ey, ez) = (d[i], d[i + 1], d[i + 2]);
            let del = self.mf.deltas[m];
            // exact differences of the bilinear terms
            let pz = p * ez + dp * sz + dp * ez;
            let xz = x * ez + dx * sz + dx * ez;
            dd[i] = -del * ey - g * pz - r.gamma * ex;
            dd[i + 1] = del * ex - g * xz - r.gamma * ey;
            dd[i + 2] = if self.mf.freeze_z {
                0.0
            } else {
                g * (x * ey + dx * sy + dx * ey + p * ex + dp * sx + dp * ex)
            };
            acc_x += self.mf.weights[m] * ey;
            acc_p += self.mf.weights[m] * ex;
        }
        let c = r.g_ens / SQRT_2;
        dd[0] = -r.kappa * dx + r.delta_cs * dp - c * acc_x;
        dd[1] = -r.kappa * dp - r.delta_cs * dx - c * acc_p;
    }
}

struct AdjointSystem<'a, 'm> {
    mf: &'a MeanField<'m>,
    jac: &'a Jacobian,
    diff: &'a [f64],
    dense: &'a [Dense],
    n: usize,
    nl: usize,
    pairs: &'a [(usize, usize)],
    bg: Vec<f64>,
}

impl System for AdjointSystem<'_, '_> {
    fn dim(&self) -> usize {
        self.nl * self.n + self.pairs.len()
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let idx = self.dense.partition_point(|d| d.t < t).min(self.dense.len() - 1);
        self.dense[idx].eval(t, &mut self.bg);
        let cav = match self.mf.prescribed_field(t) {
            Some((a, _)) => (SQRT_2 * a.re, SQRT_2 * a.im),
            None => (self.bg[0], self.bg[1]),
        };
        for a in 0..self.nl {
            let out = &mut dy[a * n..(a + 1) * n];
            self.jac.apply_t(&self.bg, cav, &y[a * n..(a + 1) * n], out);
            out.iter_mut().for_each(|v| *v = -*v);
        }
        for (p, &(a, b)) in self.pairs.iter().enumerate() {
            let la = &y[a * n..(a + 1) * n];
            let lb = &y[b * n..(b + 1) * n];
            let mut acc = 0.0;
            for i in 0..n {
                if self.diff[i] != 0.0 {
                    acc += self.diff[i] * la[i] * lb[i];
                }
            }
            dy[self.nl * n + p] = -acc;
        }
    }
}
