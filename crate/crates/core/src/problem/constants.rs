//! Constants from the convergence analysis, evaluated numerically for runtime
//! diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::ProblemError;
use crate::linalg::{smallest_positive_singular_value, spectral_norm, BlockVector};
use crate::problem::BlockProblem;

/// A strictly interior feasible point and its distance to the box boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlaterPoint {
    pub point: BlockVector,
    pub boundary_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// `100 max{1, max_t m_t} + 24 L^2 + 1`
    pub zeta1: f64,
    /// `24 (B - 1) ||A||_dagger^2`
    pub zeta2: f64,
    /// `sqrt(sum_t L_{>t}^2)`
    pub lipschitz: f64,
    /// True when no cross-block constants were available and `lipschitz`
    /// defaulted to zero.
    pub lipschitz_defaulted: bool,
    /// `sqrt(sum_t ||A_t||^2)`
    pub a_dagger_norm: f64,
    pub upsilon: Option<MultiplierBound>,
}

/// Multiplier bound `Upsilon(C)` and its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierBound {
    pub value: f64,
    pub c: f64,
    /// `sup_{z in H} ||z - x_bar||`
    pub diameter: f64,
    /// Upper bound on `sup_{z in H} ||grad f(z)||`.
    pub gradient_bound: f64,
    /// Smallest positive singular value of `A`.
    pub nu_plus: f64,
    pub boundary_distance: f64,
}

impl TheoryConstants {
    pub fn zeta(&self, c: f64) -> f64 {
        self.zeta1 + c * self.zeta2
    }
}

pub fn compute_theory_constants(
    problem: &BlockProblem,
    slater: Option<&SlaterPoint>,
    c_bound: f64,
) -> Result<TheoryConstants, ProblemError> {
    let m = problem.weak_convexity().ok_or(ProblemError::MissingWeakConvexity)?;
    let m_max = m.iter().cloned().fold(1.0f64, f64::max);
    let (lipschitz, lipschitz_defaulted) = match problem.cross_lipschitz() {
        Some(l) => (l.iter().map(|v| v * v).sum::<f64>().sqrt(), false),
        None => (0.0, true),
    };
    let a_dagger_norm = problem
        .constraint_blocks()
        .iter()
        .map(|a| spectral_norm(a).powi(2))
        .sum::<f64>()
        .sqrt();
    let nblocks = problem.num_blocks() as f64;
    let zeta1 = 100.0 * m_max + 24.0 * lipschitz * lipschitz + 1.0;
    let zeta2 = 24.0 * (nblocks - 1.0) * a_dagger_norm * a_dagger_norm;

    let upsilon = match slater {
        None => None,
        Some(s) => Some(multiplier_bound(problem, s, c_bound)?),
    };
    Ok(TheoryConstants {
        zeta1,
        zeta2,
        lipschitz,
        lipschitz_defaulted,
        a_dagger_norm,
        upsilon,
    })
}

fn multiplier_bound(problem: &BlockProblem, s: &SlaterPoint, c: f64) -> Result<MultiplierBound, ProblemError> {
    if !(s.boundary_distance > 0.0) {
        return Err(ProblemError::Invalid("Slater point must have positive boundary distance".into()));
    }
    problem.check_domain(&s.point)?;
    let mut lo = Vec::with_capacity(problem.dim());
    let mut hi = Vec::with_capacity(problem.dim());
    for term in problem.terms() {
        let (l, h) = term.bounds();
        lo.extend_from_slice(l);
        hi.extend_from_slice(h);
    }
    // the farthest point of a box from x_bar is a corner
    let diameter = s
        .point
        .as_slice()
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(x, (l, h))| (x - l).abs().max((h - x).abs()).powi(2))
        .sum::<f64>()
        .sqrt();
    let gradient_bound = problem
        .smooth()
        .gradient_norm_sup(&lo, &hi, problem.dims())
        .ok_or(ProblemError::MissingGradientBound)?;
    let nu_plus = smallest_positive_singular_value(&problem.stacked_constraint())
        .ok_or_else(|| ProblemError::Invalid("constraint operator is zero".into()))?;
    let lip_h: f64 = problem.terms().iter().map(|t| t.lipschitz_on_domain()).sum();
    let value = (2.0 * diameter * lip_h + (2.0 * diameter + 1.0) * (c + c * c + gradient_bound))
        / (s.boundary_distance * nu_plus);
    Ok(MultiplierBound {
        value,
        c,
        diameter,
        gradient_bound,
        nu_plus,
        boundary_distance: s.boundary_distance,
    })
}
