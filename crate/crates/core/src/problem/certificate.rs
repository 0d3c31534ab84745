use serde::{Deserialize, Serialize};

use crate::error::ProblemError;
use crate::linalg::{norm, BlockVector};
use crate::problem::BlockProblem;

/// Output certificate `(x, p, v, eps)` with
/// `v in grad f(x) + d_eps h(x) + A^* p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryCertificate {
    pub x_hat: BlockVector,
    pub p_hat: Vec<f64>,
    pub v_hat: BlockVector,
    pub eps_hat: f64,
    pub feas_norm: f64,
    pub stat_norm_sq: f64,
}

impl StationaryCertificate {
    pub fn new(problem: &BlockProblem, x_hat: BlockVector, p_hat: Vec<f64>, v_hat: BlockVector, eps_hat: f64) -> Self {
        let feas_norm = problem.feasibility(&x_hat);
        let stat_norm_sq = v_hat.norm_sq() + eps_hat;
        Self {
            x_hat,
            p_hat,
            v_hat,
            eps_hat,
            feas_norm,
            stat_norm_sq,
        }
    }
}

/// How tolerances are compared against residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StationarityMode {
    /// `sqrt(||v||^2 + eps) <= rho` and `||Ax - b|| <= eta`.
    Absolute,
    /// `||v|| / s_v <= rho` and `||Ax - b|| / s_feas <= eta`, with
    /// `s_v = 1 + ||grad f(x0)||` and `s_feas = 1 + ||A x0 - b||`.
    Relative { s_v: f64, s_feas: f64 },
}

impl StationarityMode {
    /// Scale factors turning relative tolerances into absolute ones.
    pub fn scales(&self) -> (f64, f64) {
        match self {
            StationarityMode::Absolute => (1.0, 1.0),
            StationarityMode::Relative { s_v, s_feas } => (*s_v, *s_feas),
        }
    }
}

/// `(1 + ||grad f(x0)||, 1 + ||A x0 - b||)`
pub fn relative_scales(problem: &BlockProblem, x0: &BlockVector) -> (f64, f64) {
    let g = problem.smooth().gradient(x0);
    (1.0 + g.norm(), 1.0 + problem.feasibility(x0))
}

pub fn check_stationarity(
    cert: &StationaryCertificate,
    rho: f64,
    eta: f64,
    mode: StationarityMode,
) -> Result<bool, ProblemError> {
    if !(rho > 0.0) || !(eta > 0.0) {
        return Err(ProblemError::Tolerance { rho, eta });
    }
    Ok(match mode {
        StationarityMode::Absolute => cert.stat_norm_sq.sqrt() <= rho && cert.feas_norm <= eta,
        StationarityMode::Relative { s_v, s_feas } => {
            cert.v_hat.norm() / s_v <= rho && cert.feas_norm / s_feas <= eta
        }
    })
}

/// Smallest `eps` making the certificate's inclusion hold, recomputed from
/// the problem data: `sum_t gap(v_t - grad_t f(x) - A_t^* p, x_t, box_t)`.
pub fn inclusion_gap(problem: &BlockProblem, cert: &StationaryCertificate) -> Result<f64, ProblemError> {
    problem.check_domain(&cert.x_hat)?;
    if cert.v_hat.dims() != problem.dims() || cert.p_hat.len() != problem.num_rows() {
        return Err(ProblemError::Dimension("certificate does not match the problem".into()));
    }
    let grad = problem.smooth().gradient(&cert.x_hat);
    let adj = problem.apply_adjoint(&cert.p_hat);
    let mut total = 0.0;
    for t in 0..problem.num_blocks() {
        let g: Vec<f64> = cert
            .v_hat
            .block(t)
            .iter()
            .zip(grad.block(t))
            .zip(adj.block(t))
            .map(|((v, gf), ap)| v - gf - ap)
            .collect();
        total += problem.term(t).eps_subdiff_gap(&g, cert.x_hat.block(t))?;
    }
    Ok(total)
}

/// Scale of the inclusion residual, for tolerance checks on `inclusion_gap`.
pub(crate) fn inclusion_scale(problem: &BlockProblem, cert: &StationaryCertificate) -> f64 {
    let grad = problem.smooth().gradient(&cert.x_hat);
    let adj = problem.apply_adjoint(&cert.p_hat);
    1.0 + cert.v_hat.norm() + grad.norm() + norm(adj.as_slice())
}
