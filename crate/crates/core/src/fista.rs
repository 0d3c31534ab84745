//! Accelerated composite gradient method with adaptive curvature estimates,
//! failure detection for lost strong convexity, and a relative-error stopping
//! rule.
//!
//! Solves `min_x psi_s(x) + psi_n(x)` where `psi_s` is smooth and `psi_n` is a
//! box indicator. A `Success` outcome `(y, u)` satisfies
//! `u in grad psi_s(y) + d psi_n(y)` and `||u|| <= sqrt(sigma) ||y - x0||`.

use serde::{Deserialize, Serialize};

use crate::error::FistaError;
use crate::linalg::{dist_sq, norm};
use crate::problem::ProxTerm;

/// Value and gradient oracle for the smooth part of a subproblem.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);

    fn value_and_gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.gradient(x, out);
        self.value(x)
    }
}

/// `psi_s + scale * psi_n`. For a box indicator the scale has no effect.
pub struct CompositeSubproblem<'a, S: ?Sized> {
    pub smooth: &'a S,
    pub nonsmooth: &'a ProxTerm,
    pub scale: f64,
}

impl<'a, S: SmoothObjective + ?Sized> CompositeSubproblem<'a, S> {
    pub fn new(smooth: &'a S, nonsmooth: &'a ProxTerm) -> Self {
        Self {
            smooth,
            nonsmooth,
            scale: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.smooth.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FistaParams {
    pub m0: f64,
    pub mu0: f64,
    /// Squared relative accuracy: success means `||u||^2 <= sigma ||y - x0||^2`.
    pub sigma: f64,
    pub chi: f64,
    pub beta: f64,
    pub iter_cap: usize,
}

impl Default for FistaParams {
    fn default() -> Self {
        Self {
            m0: 1.0,
            mu0: 0.5,
            sigma: 0.125,
            chi: 0.001,
            beta: 1.2,
            iter_cap: 100_000,
        }
    }
}

impl FistaParams {
    pub fn validate(&self) -> Result<(), FistaError> {
        let bad = |msg: &str| Err(FistaError::Parameters(msg.into()));
        if !(self.mu0 > 0.0) || !self.mu0.is_finite() {
            return bad("mu0 must be positive");
        }
        if !(self.m0 > self.mu0) || !self.m0.is_finite() {
            return bad("M0 must exceed mu0");
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad("sigma must be positive");
        }
        if !(self.chi > 0.0 && self.chi < 1.0) {
            return bad("chi must lie in (0, 1)");
        }
        if !(self.beta > 1.0) || !self.beta.is_finite() {
            return bad("beta must exceed 1");
        }
        if self.iter_cap == 0 {
            return bad("iteration cap must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FistaStatus {
    Success,
    /// The step-4 growth test was violated: the smooth part is not
    /// `mu0`-strongly convex along the iterates.
    Failure,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FistaOutcome {
    pub status: FistaStatus,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub iterations: usize,
    pub backtracks: usize,
    pub final_m: f64,
}

/// Iteration state after `j` completed iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct FistaState {
    pub j: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Accumulated `A_j`.
    pub a_sum: f64,
    /// `tau_j = 1 + mu0 A_j`
    pub tau: f64,
    pub m: f64,
}

impl FistaState {
    pub fn start(x0: &[f64], m0: f64) -> Self {
        Self {
            j: 0,
            x: x0.to_vec(),
            y: x0.to_vec(),
            a_sum: 0.0,
            tau: 1.0,
            m: m0,
        }
    }
}

/// Per-iteration record for verbose tracing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FistaTrace {
    pub j: usize,
    pub m: f64,
    pub step_norm: f64,
    pub u_norm: f64,
}

/// Step size `a_j` and extrapolated point `x_tilde_j` for the curvature
/// estimate `m_next`.
pub fn fista_momentum_step(state: &FistaState, mu0: f64, m_next: f64) -> Result<(f64, Vec<f64>), FistaError> {
    let gap = m_next - mu0;
    if !(gap > 0.0) {
        return Err(FistaError::Parameters(format!("curvature {m_next} must exceed mu0 {mu0}")));
    }
    if !(state.a_sum >= 0.0 && state.tau >= 0.0) {
        return Err(FistaError::Parameters("accumulators must be nonnegative".into()));
    }
    let (tau, big_a) = (state.tau, state.a_sum);
    let a = (tau + (tau * tau + 4.0 * tau * big_a * gap).sqrt()) / (2.0 * gap);
    // x + A/(A+a) (y - x): exact at A = 0 and at x = y
    let w = big_a / (big_a + a);
    let x_tilde = state
        .x
        .iter()
        .zip(&state.y)
        .map(|(xi, yi)| if xi == yi { *xi } else { xi + w * (yi - xi) })
        .collect();
    Ok((a, x_tilde))
}

pub fn adap_fista<S: SmoothObjective + ?Sized>(
    sub: &CompositeSubproblem<'_, S>,
    x0: &[f64],
    params: &FistaParams,
    mut trace: Option<&mut dyn FnMut(&FistaTrace)>,
) -> Result<FistaOutcome, FistaError> {
    params.validate()?;
    let d = sub.dim();
    if x0.len() != d || sub.nonsmooth.dim() != d {
        return Err(FistaError::Parameters(format!(
            "start point has {} entries, subproblem dimension is {d}",
            x0.len()
        )));
    }
    if !sub.nonsmooth.contains(x0) {
        return Err(FistaError::Parameters("start point lies outside the domain".into()));
    }

    let mu0 = params.mu0;
    let sqrt_sigma = params.sigma.sqrt();
    let mut state = FistaState::start(x0, params.m0);
    let mut backtracks = 0usize;
    let mut g_tilde = vec![0.0; d];
    let mut g_y = vec![0.0; d];
    let mut y_next = vec![0.0; d];
    let mut u = vec![0.0; d];

    while state.j < params.iter_cap {
        let iter = state.j + 1;
        // step 1-2: backtrack on M until the upper model majorizes psi_s
        let mut m = state.m;
        let (a, x_tilde) = loop {
            let (a, x_tilde) = fista_momentum_step(&state, mu0, m)?;
            let psi_tilde = sub.smooth.value_and_gradient(&x_tilde, &mut g_tilde);
            if !psi_tilde.is_finite() || g_tilde.iter().any(|v| !v.is_finite()) {
                return Err(FistaError::NonFinite(iter));
            }
            for ((yn, xt), g) in y_next.iter_mut().zip(&x_tilde).zip(&g_tilde) {
                *yn = xt - g / m;
            }
            sub.nonsmooth.prox_in_place(&mut y_next);
            let psi_y = sub.smooth.value(&y_next);
            if !psi_y.is_finite() {
                return Err(FistaError::NonFinite(iter));
            }
            let lin: f64 = g_tilde
                .iter()
                .zip(y_next.iter().zip(&x_tilde))
                .map(|(g, (yn, xt))| g * (yn - xt))
                .sum();
            let model = psi_tilde + lin + 0.5 * (1.0 - params.chi) * m * dist_sq(&y_next, &x_tilde);
            if model >= psi_y {
                break (a, x_tilde);
            }
            m *= params.beta;
            backtracks += 1;
            if !m.is_finite() {
                return Err(FistaError::NonFinite(iter));
            }
        };

        // step 3
        let a_next = state.a_sum + a;
        let tau_next = state.tau + a * mu0;
        let gap = m - mu0;
        for i in 0..d {
            let s = gap * (x_tilde[i] - y_next[i]);
            state.x[i] = (mu0 * a * y_next[i] + state.tau * state.x[i] - a * s) / tau_next;
        }
        state.y.copy_from_slice(&y_next);
        state.a_sum = a_next;
        state.tau = tau_next;
        state.m = m;
        state.j = iter;

        // step-5 residual, formed before the step-4 test so traces see it
        sub.smooth.gradient(&state.y, &mut g_y);
        if g_y.iter().any(|v| !v.is_finite()) {
            return Err(FistaError::NonFinite(iter));
        }
        for i in 0..d {
            u[i] = g_y[i] - g_tilde[i] + m * (x_tilde[i] - state.y[i]);
        }
        let step_sq = dist_sq(&state.y, &x_tilde);
        let u_norm = norm(&u);
        if let Some(cb) = trace.as_mut() {
            cb(&FistaTrace {
                j: iter,
                m,
                step_norm: step_sq.sqrt(),
                u_norm,
            });
        }

        // step 4
        let drift_sq = dist_sq(&state.y, x0);
        if !(drift_sq >= params.chi * a_next * m * step_sq) {
            return Ok(FistaOutcome {
                status: FistaStatus::Failure,
                y: state.y,
                u,
                iterations: iter,
                backtracks,
                final_m: m,
            });
        }
        // step 5
        if u_norm <= sqrt_sigma * drift_sq.sqrt() {
            return Ok(FistaOutcome {
                status: FistaStatus::Success,
                y: state.y,
                u,
                iterations: iter,
                backtracks,
                final_m: m,
            });
        }
    }
    Ok(FistaOutcome {
        status: FistaStatus::IterationCap,
        y: state.y,
        u,
        iterations: state.j,
        backtracks,
        final_m: state.m,
    })
}

/// `psi(x) = 0.5 x^T Q x + q^T x` on a dense `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub q: nalgebra::DMatrix<f64>,
    pub lin: Vec<f64>,
}

impl SmoothObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.lin.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let qx = crate::linalg::gemv(&self.q, x);
        0.5 * crate::linalg::dot(x, &qx) + crate::linalg::dot(&self.lin, x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.lin);
        crate::linalg::gemv_acc(&self.q, x, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::eps_subdiff_gap;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn free(d: usize) -> ProxTerm {
        ProxTerm::boxed(vec![f64::NEG_INFINITY; d], vec![f64::INFINITY; d])
    }

    #[test]
    fn momentum_first_step() {
        let st = FistaState::start(&[0.3, -0.7], 2.0);
        let (a, xt) = fista_momentum_step(&st, 0.5, 2.0).unwrap();
        assert_eq!(a, 1.0 / 1.5);
        assert_eq!(xt, vec![0.3, -0.7]);
    }

    #[test]
    fn momentum_equal_points_and_golden_ratio() {
        let st = FistaState {
            j: 3,
            x: vec![1.0, 2.0],
            y: vec![1.0, 2.0],
            a_sum: 1.0,
            tau: 1.0,
            m: 2.0,
        };
        let (a, xt) = fista_momentum_step(&st, 1.0, 2.0).unwrap();
        assert!((a - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert_eq!(xt, st.y);
        assert!(fista_momentum_step(&st, 2.0, 2.0).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        let obj = QuadraticObjective {
            q: DMatrix::identity(1, 1),
            lin: vec![0.0],
        };
        let box1 = free(1);
        let sub = CompositeSubproblem::new(&obj, &box1);
        let mut p = FistaParams { m0: 0.5, ..FistaParams::default() };
        assert!(adap_fista(&sub, &[0.0], &p, None).is_err());
        p = FistaParams { chi: 1.0, ..FistaParams::default() };
        assert!(adap_fista(&sub, &[0.0], &p, None).is_err());
        p = FistaParams { beta: 1.0, ..FistaParams::default() };
        assert!(adap_fista(&sub, &[0.0], &p, None).is_err());
        let boxed = ProxTerm::boxed(vec![-1.0], vec![1.0]);
        let sub = CompositeSubproblem::new(&obj, &boxed);
        assert!(adap_fista(&sub, &[2.0], &FistaParams::default(), None).is_err());
    }

    #[test]
    fn unconstrained_shifted_identity() {
        let a = vec![3.0, -1.0, 0.5];
        let obj = QuadraticObjective {
            q: DMatrix::identity(3, 3),
            lin: a.iter().map(|v| -v).collect(),
        };
        let t = free(3);
        let sub = CompositeSubproblem::new(&obj, &t);
        let x0 = vec![0.0; 3];
        let out = adap_fista(&sub, &x0, &FistaParams::default(), None).unwrap();
        assert_eq!(out.status, FistaStatus::Success);
        assert!(norm(&out.u) <= (0.125f64).sqrt() * dist_sq(&out.y, &x0).sqrt());
        // unconstrained identity Hessian: ||y - a|| = ||grad psi(y)||
        let err: f64 = dist_sq(&out.y, &a).sqrt();
        assert!(err <= 0.5 * norm(&a), "{err}");
    }

    #[test]
    fn active_lower_bound() {
        let obj = QuadraticObjective {
            q: DMatrix::identity(1, 1),
            lin: vec![0.0],
        };
        let t = ProxTerm::boxed(vec![1.0], vec![2.0]);
        let sub = CompositeSubproblem::new(&obj, &t);
        let out = adap_fista(&sub, &[1.5], &FistaParams::default(), None).unwrap();
        assert_eq!(out.status, FistaStatus::Success);
        assert_eq!(out.y, vec![1.0]);
        // u - grad psi(y) lies in the normal cone at the lower bound
        let g = out.u[0] - out.y[0];
        assert!(g <= 0.0);
        assert_eq!(eps_subdiff_gap(&[g], &out.y, &[1.0], &[2.0]).unwrap(), 0.0);
    }

    #[test]
    fn start_at_solution_succeeds_immediately() {
        let obj = QuadraticObjective {
            q: DMatrix::identity(2, 2),
            lin: vec![-0.25, 0.5],
        };
        let t = free(2);
        let sub = CompositeSubproblem::new(&obj, &t);
        let out = adap_fista(&sub, &[0.25, -0.5], &FistaParams::default(), None).unwrap();
        assert_eq!(out.status, FistaStatus::Success);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.y, vec![0.25, -0.5]);
    }

    #[test]
    fn concave_objective_fails() {
        // psi = -k x^2 on a wide box is not mu0-strongly convex; iterates
        // run away from x0 faster than the growth test allows
        for k in [0.5, 1.0] {
            let obj = QuadraticObjective {
                q: DMatrix::from_element(1, 1, -2.0 * k),
                lin: vec![0.0],
            };
            let t = ProxTerm::boxed(vec![-1e6], vec![1e6]);
            let sub = CompositeSubproblem::new(&obj, &t);
            let out = adap_fista(&sub, &[0.1], &FistaParams::default(), None).unwrap();
            assert_eq!(out.status, FistaStatus::Failure);
        }
    }

    #[test]
    fn iteration_cap_is_distinct() {
        let obj = QuadraticObjective {
            q: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5 + 1e-9, 1e4])),
            lin: vec![-1.0, 1.0],
        };
        let t = free(2);
        let sub = CompositeSubproblem::new(&obj, &t);
        let p = FistaParams {
            iter_cap: 1,
            sigma: 1e-12,
            ..FistaParams::default()
        };
        let out = adap_fista(&sub, &[0.0, 0.0], &p, None).unwrap();
        assert_eq!(out.status, FistaStatus::IterationCap);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn trace_hook_sees_every_iteration() {
        let obj = QuadraticObjective {
            q: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 30.0])),
            lin: vec![-1.0, 2.0],
        };
        let t = free(2);
        let sub = CompositeSubproblem::new(&obj, &t);
        let mut seen = Vec::new();
        let mut cb = |r: &FistaTrace| seen.push(r.j);
        let out = adap_fista(&sub, &[0.0, 0.0], &FistaParams::default(), Some(&mut cb)).unwrap();
        assert_eq!(seen, (1..=out.iterations).collect::<Vec<_>>());
    }

    fn random_spd(rng: &mut ChaCha8Rng, d: usize, mu: f64) -> DMatrix<f64> {
        let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let mut q = &g * g.transpose();
        for i in 0..d {
            q[(i, i)] += mu;
        }
        q
    }

    /// Projected gradient with step 1/L, run to a tight fixed point.
    fn projected_gradient(obj: &QuadraticObjective, lo: &[f64], hi: &[f64], x0: &[f64]) -> Vec<f64> {
        let lip = crate::linalg::spectral_norm(&obj.q) * 1.01;
        let mut x = x0.to_vec();
        let mut g = vec![0.0; x.len()];
        for _ in 0..200_000 {
            obj.gradient(&x, &mut g);
            let next: Vec<f64> = x
                .iter()
                .zip(&g)
                .enumerate()
                .map(|(i, (xi, gi))| (xi - gi / lip).clamp(lo[i], hi[i]))
                .collect();
            let moved = dist_sq(&next, &x).sqrt();
            x = next;
            if moved < 1e-15 {
                break;
            }
        }
        x
    }

    #[test]
    fn matches_projected_gradient_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let d = 10;
            let q = random_spd(&mut rng, d, 1.0);
            let lin: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let obj = QuadraticObjective { q, lin };
            let lo = vec![-0.5; d];
            let hi = vec![0.5; d];
            let t = ProxTerm::boxed(lo.clone(), hi.clone());
            let sub = CompositeSubproblem::new(&obj, &t);
            let x0 = vec![0.0; d];
            let reference = projected_gradient(&obj, &lo, &hi, &x0);
            // a tiny sigma drives the certificate to the fixed point
            let p = FistaParams {
                sigma: 1e-20,
                ..FistaParams::default()
            };
            let out = adap_fista(&sub, &x0, &p, None).unwrap();
            assert_eq!(out.status, FistaStatus::Success);
            assert!(dist_sq(&out.y, &reference).sqrt() <= 1e-6, "{:?} vs {:?}", out.y, reference);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn success_certificate_holds(seed in 0u64..10_000, d in 1usize..8, mu in 0.5f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_spd(&mut rng, d, mu);
            let lin: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let lo: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..0.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.1..3.0)).collect();
            let x0: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..=*h)).collect();
            let lip = crate::linalg::spectral_norm(&q);
            let obj = QuadraticObjective { q, lin };
            let t = ProxTerm::boxed(lo.clone(), hi.clone());
            let sub = CompositeSubproblem::new(&obj, &t);
            let p = FistaParams::default();
            let out = adap_fista(&sub, &x0, &p, None).unwrap();
            prop_assert_eq!(out.status, FistaStatus::Success);
            prop_assert!(norm(&out.u) <= p.sigma.sqrt() * dist_sq(&out.y, &x0).sqrt());
            let mut gy = vec![0.0; d];
            obj.gradient(&out.y, &mut gy);
            let g: Vec<f64> = out.u.iter().zip(&gy).map(|(u, g)| u - g).collect();
            let gap = eps_subdiff_gap(&g, &out.y, &lo, &hi).unwrap();
            prop_assert!(gap <= 1e-9 * (1.0 + norm(&out.u)), "gap {}", gap);
            let bound = p.beta * p.m0.max(lip / (1.0 - p.chi));
            prop_assert!(out.final_m <= bound * (1.0 + 1e-12), "M {} > {}", out.final_m, bound);
        }
    }
}
