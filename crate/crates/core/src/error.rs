use thiserror::Error;

use crate::ode::OdeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("schedule infeasible: {0}")]
    Infeasible(String),
    #[error("overdamped regime: (kappa - Gamma)^2 = {diff_sq:.6e} >= 4 g_ens^2 = {four_g_sq:.6e}")]
    Overdamped { diff_sq: f64, four_g_sq: f64 },
    #[error("unstable: effective cooperativity {0:.6} >= 1")]
    Unstable(f64),
    #[error("integration failed in segment {segment}: {source}")]
    Integration { segment: usize, source: OdeError },
    #[error("covariance lost positive semidefiniteness at t = {t}: min eigenvalue {min_eig:.3e} (trace {trace:.3e})")]
    NotPsd { t: f64, min_eig: f64, trace: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl SimError {
    pub fn in_segment(self, segment: usize) -> SimError {
        match self {
            SimError::Integration { source, .. } => SimError::Integration { segment, source },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;

pub(crate) fn ode_err(segment: usize) -> impl Fn(OdeError) -> SimError {
    move |source| SimError::Integration { segment, source }
}
