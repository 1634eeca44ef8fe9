//! Input-output map fitting, quadrature variances and the qubit fidelity.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// (-X_out, -P_out) = R(theta1) diag(g1, g2) R(-theta0) (X_in, P_in).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainMap {
    pub theta0: f64,
    pub theta1: f64,
    pub g1: f64,
    /// Negative only for orientation-reversing maps.
    pub g2: f64,
}

pub fn rot(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Wrap into (-pi, pi].
fn wrap(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

impl GainMap {
    pub fn theta(&self) -> f64 {
        wrap(self.theta1 - self.theta0)
    }

    pub fn gain_avg(&self) -> f64 {
        0.5 * (self.g1 + self.g2)
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        rot(self.theta1) * Matrix2::new(self.g1, 0.0, 0.0, self.g2) * rot(-self.theta0)
    }

    /// Factor a 2x2 map into rotation - scaling - rotation with
    /// g1 >= |g2|, theta1 in (-pi/2, pi/2] and theta0 in (-pi, pi].
    pub fn from_matrix(m: &Matrix2<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(SimError::Degenerate("non-finite input-output map".into()));
        }
        let svd = m.svd(true, true);
        let (mut u, mut vt) = (svd.u.unwrap_or_else(Matrix2::identity), svd.v_t.unwrap_or_else(Matrix2::identity));
        let mut s = [svd.singular_values[0], svd.singular_values[1]];
        if s[1] > s[0] {
            s.swap(0, 1);
            u.swap_columns(0, 1);
            vt.swap_rows(0, 1);
        }
        if u.determinant() < 0.0 {
            u.set_column(1, &(-u.column(1)));
            s[1] = -s[1];
        }
        if vt.determinant() < 0.0 {
            vt.set_row(1, &(-vt.row(1)));
            s[1] = -s[1];
        }
        let scale = s[0].abs().max(1e-300);
        let (mut theta1, mut theta0) = if (s[0] - s[1]).abs() <= 1e-12 * scale {
            // isotropic: the axes are arbitrary, keep the input axis fixed
            let r = m / s[0].max(1e-300);
            (r[(1, 0)].atan2(r[(0, 0)]), 0.0)
        } else {
            (u[(1, 0)].atan2(u[(0, 0)]), vt[(0, 1)].atan2(vt[(0, 0)]))
        };
        if theta1 <= -FRAC_PI_2 || theta1 > FRAC_PI_2 {
            theta1 += PI;
            theta0 += PI;
        }
        theta1 = wrap(theta1);
        if theta1 == -FRAC_PI_2 {
            theta1 = FRAC_PI_2;
        }
        theta0 = wrap(theta0);
        Ok(GainMap { theta0, theta1, g1: s[0], g2: s[1] })
    }
}

/// One input/output pair of mean quadratures (X, P).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoPair {
    pub input: [f64; 2],
    pub output: [f64; 2],
}

/// Least-squares map (X_in, P_in) -> (-X_out, -P_out), factored.
pub fn fit_io_map(pairs: &[IoPair]) -> Result<GainMap> {
    let mut xx = Matrix2::<f64>::zeros();
    let mut yx = Matrix2::<f64>::zeros();
    for p in pairs {
        let x = Vector2::new(p.input[0], p.input[1]);
        let y = -Vector2::new(p.output[0], p.output[1]);
        xx += x * x.transpose();
        yx += y * x.transpose();
    }
    let tr = xx.trace();
    if !(tr > 0.0) || xx.determinant() <= 1e-12 * tr * tr {
        return Err(SimError::Degenerate("inputs do not span two independent directions".into()));
    }
    let inv = xx.try_inverse().ok_or_else(|| SimError::Degenerate("singular input moment matrix".into()))?;
    GainMap::from_matrix(&(yx * inv))
}

/// Var(X cos theta + P sin theta) for the block [[Var X, Cov], [Cov, Var P]]
/// (Cov the symmetrized covariance).
pub fn variance_along(cov: &[[f64; 2]; 2], theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    cov[0][0] * c * c + cov[1][1] * s * s + 0.5 * (cov[0][1] + cov[1][0]) * 2.0 * s * c
}

/// Average fidelity for a qubit in the {|0>, |1>} Fock states.
pub fn qubit_fidelity(map: &GainMap, sigma1_sq: f64, sigma2_sq: f64) -> f64 {
    let (g1, g2) = (map.g1, map.g2);
    let (a, b) = (sigma1_sq + 0.5, sigma2_sq + 0.5);
    let bracket = 3.0 + 3.0 * (sigma1_sq * sigma2_sq - 0.25) / (a * b) + g1 / a + g2 / b
        - g1 * g1 * (sigma1_sq - 1.0) / (a * a)
        - g2 * g2 * (sigma2_sq - 1.0) / (b * b)
        - (g1 * g1 * (sigma2_sq - 0.5) + g2 * g2 * (sigma1_sq - 0.5)) / (2.0 * a * b);
    bracket / (6.0 * (a * b).sqrt())
}

/// Symmetric special case of `qubit_fidelity`.
pub fn qubit_fidelity_symmetric(gain: f64, sigma_sq: f64) -> f64 {
    let a = sigma_sq + 0.5;
    (3.0 + 3.0 * (sigma_sq - 0.5) / a + 2.0 * gain / a
        - 2.0 * gain * gain * (sigma_sq - 1.0) / (a * a)
        - gain * gain * (sigma_sq - 0.5) / (a * a))
        / (6.0 * a)
}

/// Fit gain = g0 exp(-gamma_perp (t_mem - t0)) by log-linear least squares.
/// Returns (g0, t0).
pub fn fit_gain_decay(points: &[(f64, f64)], t_mem: f64) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(SimError::Degenerate(format!("gain decay fit needs >= 3 points, got {}", points.len())));
    }
    if let Some(&(_, g)) = points.iter().find(|(_, g)| !(*g > 0.0)) {
        return Err(SimError::InvalidParams(format!("gain must be positive for a log fit, got {g}")));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(SimError::Degenerate("gain decay fit needs distinct dephasing rates".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // ln g = ln g0 - gamma (t_mem - t0)
    Ok((intercept.exp(), t_mem + slope))
}
