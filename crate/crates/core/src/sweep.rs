//! One Gauss-Seidel pass of inexact proximal-point updates over the augmented
//! Lagrangian, with constant or adaptive per-block stepsizes.
//!
//! Block `t` approximately solves
//!
//! ```text
//! min_u  lambda_t L_c(z+_{<t}, u, z_{>t}; p) + 1/2 ||u - z_t||^2 + lambda_t h_t(u)
//! ```
//!
//! and the sweep returns a residual pair `(v, delta)` with
//! `v in grad f(z+) + d_delta h(z+) + A^* (p + c (A z+ - b))`.

use serde::{Deserialize, Serialize};

use crate::error::SweepError;
use crate::fista::{adap_fista, CompositeSubproblem, FistaParams, FistaStatus, SmoothObjective};
use crate::linalg::{dot, gemv, gemv_t_acc, norm, spectral_norm, BlockVector};
use crate::problem::{BlockProblem, TheoryConstants};

/// Minimizer of `(alpha/2) u^2 + beta u` over `[lo, hi]`.
pub fn exact_1d_box_quadratic(alpha: f64, beta: f64, lo: f64, hi: f64) -> Result<f64, SweepError> {
    if !(alpha.is_finite() && beta.is_finite()) || lo.is_nan() || hi.is_nan() {
        return Err(SweepError::Input("non-finite quadratic coefficients".into()));
    }
    if lo > hi {
        return Err(SweepError::Input(format!("empty interval [{lo}, {hi}]")));
    }
    if alpha > 0.0 {
        return Ok((-beta / alpha).clamp(lo, hi));
    }
    let q = |u: f64| 0.5 * alpha * u * u + beta * u;
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(SweepError::Input("nonconvex quadratic on an unbounded interval".into()));
    }
    Ok(if q(hi) < q(lo) { hi } else { lo })
}

/// How a block subproblem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMethod {
    /// Closed form; needs `n_t = 1` and a quadratic `f` in that block.
    Exact1D,
    Fista,
}

/// Initial curvature estimate handed to the inner solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum M0Choice {
    Fixed(f64),
    /// `max(lambda_t c ||A_t||^2, 2 mu0)`
    PenaltyScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub fista: FistaParams,
    pub m0: M0Choice,
    pub lambda_floor: f64,
    /// Recompute the augmented Lagrangian from scratch after each block and
    /// compare with the incremental value.
    pub debug_checks: bool,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            fista: FistaParams::default(),
            m0: M0Choice::PenaltyScaled,
            lambda_floor: 1e-12,
            debug_checks: false,
        }
    }
}

/// Sweep input `(z, p, lambda, c)`.
#[derive(Debug, Clone, Copy)]
pub struct SweepInput<'a> {
    pub z: &'a BlockVector,
    pub p: &'a [f64],
    pub lambda: &'a [f64],
    pub c: f64,
}

/// Per-block diagnostics, also used for verbose traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub t: usize,
    pub lambda: f64,
    pub method: BlockMethod,
    /// Halvings caused by the descent test.
    pub halvings: usize,
    /// Halvings caused by inner-solver failure or iteration cap.
    pub solver_halvings: usize,
    pub inner_iterations: usize,
    pub step_norm: f64,
    pub r_norm: f64,
    pub eps: f64,
    /// `L_c` before minus after this block update.
    pub al_decrease: f64,
    /// `||A_t (z_t+ - z_t)||`
    pub constraint_step_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub z_plus: BlockVector,
    pub v_plus: BlockVector,
    pub delta_plus: f64,
    pub lambda_plus: Vec<f64>,
    pub per_block: Vec<BlockRecord>,
    /// `L_c(z; p) - L_c(z+; p)`
    pub al_decrease: f64,
    /// `A z+ - b`
    pub residual_plus: Vec<f64>,
}

impl SweepOutput {
    /// `||v+||^2 + delta+`
    pub fn stationarity_sq(&self) -> f64 {
        self.v_plus.norm_sq() + self.delta_plus
    }
}

/// Stepsizes `1 / (2 max{m_t, 1})`.
pub fn constant_stepsizes(m: &[f64]) -> Vec<f64> {
    m.iter().map(|mt| 0.5 / mt.max(1.0)).collect()
}

/// `||v+||^2 + delta+ <= (zeta1 + c zeta2) (L_c(z; p) - L_c(z+; p))` up to
/// `slack (1 + rhs)`.
pub fn zeta_bound_holds(out: &SweepOutput, constants: &TheoryConstants, c: f64, slack: f64) -> bool {
    let rhs = constants.zeta(c) * out.al_decrease;
    out.stationarity_sq() <= rhs + slack * (1.0 + rhs.abs())
}

/// Smooth part of a block subproblem, centered at `z_t`:
/// `lambda [f(w; t <- u) - f(w) + <weight, A_t d> + c/2 ||A_t d||^2] + 1/2 ||d||^2`
/// with `d = u - z_t` and `weight = p + c (A w - b)`.
struct BlockObjective<'a> {
    problem: &'a BlockProblem,
    t: usize,
    point: &'a BlockVector,
    weight: &'a [f64],
    c: f64,
    lambda: f64,
}

impl BlockObjective<'_> {
    fn step(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.point.block(self.t)).map(|(a, b)| a - b).collect()
    }
}

impl SmoothObjective for BlockObjective<'_> {
    fn dim(&self) -> usize {
        self.point.block_dim(self.t)
    }

    fn value(&self, u: &[f64]) -> f64 {
        let d = self.step(u);
        let ad = gemv(self.problem.constraint_block(self.t), &d);
        let inner = self.problem.smooth().value_change(self.t, self.point, u)
            + dot(self.weight, &ad)
            + 0.5 * self.c * dot(&ad, &ad);
        self.lambda * inner + 0.5 * dot(&d, &d)
    }

    fn gradient(&self, u: &[f64], out: &mut [f64]) {
        self.value_and_gradient(u, out);
    }

    fn value_and_gradient(&self, u: &[f64], out: &mut [f64]) -> f64 {
        let d = self.step(u);
        let a = self.problem.constraint_block(self.t);
        let ad = gemv(a, &d);
        let inner = self.problem.smooth().value_change(self.t, self.point, u)
            + dot(self.weight, &ad)
            + 0.5 * self.c * dot(&ad, &ad);
        self.problem.smooth().block_gradient_at(self.t, self.point, u, out);
        let q: Vec<f64> = self.weight.iter().zip(&ad).map(|(w, v)| w + self.c * v).collect();
        gemv_t_acc(a, &q, out);
        for (o, di) in out.iter_mut().zip(&d) {
            *o = self.lambda * *o + di;
        }
        self.lambda * inner + 0.5 * dot(&d, &d)
    }
}

/// Approximate solution `(z_t+, r_t+, eps_t+)` of one block subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution {
    pub z_t: Vec<f64>,
    pub r_t: Vec<f64>,
    pub eps_t: f64,
    pub inner_iterations: usize,
    /// `None` for closed-form solves.
    pub status: Option<FistaStatus>,
}

impl BlockSolution {
    pub fn certified(&self) -> bool {
        matches!(self.status, None | Some(FistaStatus::Success))
    }
}

/// Per-problem quantities reused by every sweep.
#[derive(Debug, Clone)]
struct BlockCache {
    a_norm_sq: Vec<f64>,
    curvature: Vec<Option<f64>>,
}

impl BlockCache {
    fn new(problem: &BlockProblem) -> Self {
        Self {
            a_norm_sq: problem.constraint_blocks().iter().map(|a| spectral_norm(a).powi(2)).collect(),
            curvature: (0..problem.num_blocks())
                .map(|t| problem.smooth().block_curvature(t, problem.dims()))
                .collect(),
        }
    }
}

/// Solves block `t` of the subproblem at the mixed point `w`, whose block `t`
/// is the prox center `z_t`.
#[allow(clippy::too_many_arguments)]
pub fn solve_block_subproblem(
    problem: &BlockProblem,
    t: usize,
    w: &BlockVector,
    p: &[f64],
    c: f64,
    lambda: f64,
    method: BlockMethod,
    params: &SweepParams,
) -> Result<BlockSolution, SweepError> {
    if t >= problem.num_blocks() {
        return Err(crate::error::ProblemError::BlockIndex(t, problem.num_blocks()).into());
    }
    check_scalars(lambda, c)?;
    problem.check_domain(w)?;
    if p.len() != problem.num_rows() {
        return Err(SweepError::Input("multiplier length differs from the row count".into()));
    }
    let r0 = problem.residual(w);
    let weight: Vec<f64> = p.iter().zip(&r0).map(|(pi, ri)| pi + c * ri).collect();
    let cache = BlockCache::new(problem);
    solve_block(problem, &cache, t, w, &weight, c, lambda, method, params)
}

fn check_scalars(lambda: f64, c: f64) -> Result<(), SweepError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(SweepError::Input(format!("stepsize must be positive, got {lambda}")));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(crate::error::ProblemError::Penalty(c).into());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn solve_block(
    problem: &BlockProblem,
    cache: &BlockCache,
    t: usize,
    w: &BlockVector,
    weight: &[f64],
    c: f64,
    lambda: f64,
    method: BlockMethod,
    params: &SweepParams,
) -> Result<BlockSolution, SweepError> {
    let z_t = w.block(t);
    match method {
        BlockMethod::Exact1D => {
            if z_t.len() != 1 {
                return Err(SweepError::NotOneDimensional { block: t, dim: z_t.len() });
            }
            let kappa = cache.curvature[t].ok_or_else(|| {
                SweepError::Input(format!("block {t} has no closed-form curvature for an exact solve"))
            })?;
            let a = problem.constraint_block(t);
            let a_sq: f64 = a.iter().map(|v| v * v).sum();
            let g = problem.smooth().block_gradient(t, w)[0];
            let atw: f64 = a.iter().zip(weight).map(|(ai, wi)| ai * wi).sum();
            let alpha = lambda * (kappa + c * a_sq) + 1.0;
            let beta = lambda * (g + atw);
            let (lo, hi) = problem.term(t).bounds();
            let d = exact_1d_box_quadratic(alpha, beta, lo[0] - z_t[0], hi[0] - z_t[0])?;
            Ok(BlockSolution {
                z_t: vec![(z_t[0] + d).clamp(lo[0], hi[0])],
                r_t: vec![0.0],
                eps_t: 0.0,
                inner_iterations: 0,
                status: None,
            })
        }
        BlockMethod::Fista => {
            let objective = BlockObjective {
                problem,
                t,
                point: w,
                weight,
                c,
                lambda,
            };
            let mut fista = params.fista;
            fista.m0 = match params.m0 {
                M0Choice::Fixed(m0) => m0,
                M0Choice::PenaltyScaled => (lambda * c * cache.a_norm_sq[t]).max(2.0 * fista.mu0),
            };
            let sub = CompositeSubproblem::new(&objective, problem.term(t));
            let out = adap_fista(&sub, z_t, &fista, None)?;
            Ok(BlockSolution {
                z_t: out.y,
                r_t: out.u,
                eps_t: 0.0,
                inner_iterations: out.iterations,
                status: Some(out.status),
            })
        }
    }
}

/// Closed form for one-dimensional quadratic blocks, inner solver otherwise.
pub fn default_method(problem: &BlockProblem, t: usize) -> BlockMethod {
    if problem.dims()[t] == 1 && problem.smooth().block_curvature(t, problem.dims()).is_some() {
        BlockMethod::Exact1D
    } else {
        BlockMethod::Fista
    }
}

/// `v_t+` from the sweep's endpoints:
/// `grad_t f(z+) - grad_t f(z+_{<=t}, z_{>t}) + r_t/lambda
///  + c A_t^* sum_{s>t} A_s (z_s+ - z_s) - (z_t+ - z_t)/lambda`.
pub fn compute_block_residual(
    problem: &BlockProblem,
    t: usize,
    z: &BlockVector,
    z_plus: &BlockVector,
    r_t: &[f64],
    lambda: f64,
    c: f64,
) -> Result<Vec<f64>, SweepError> {
    let nb = problem.num_blocks();
    if t >= nb {
        return Err(crate::error::ProblemError::BlockIndex(t, nb).into());
    }
    let mut mixed = z_plus.clone();
    for s in t + 1..nb {
        mixed.set_block(s, z.block(s));
    }
    let g_plus = problem.smooth().block_gradient(t, z_plus);
    let g_mixed = problem.smooth().block_gradient(t, &mixed);
    let mut tail = vec![0.0; problem.num_rows()];
    for s in t + 1..nb {
        let d: Vec<f64> = z_plus.block(s).iter().zip(z.block(s)).map(|(a, b)| a - b).collect();
        crate::linalg::gemv_acc(problem.constraint_block(s), &d, &mut tail);
    }
    tail.iter_mut().for_each(|v| *v *= c);
    let mut v: Vec<f64> = (0..r_t.len())
        .map(|i| g_plus[i] - g_mixed[i] + r_t[i] / lambda - (z_plus.block(t)[i] - z.block(t)[i]) / lambda)
        .collect();
    gemv_t_acc(problem.constraint_block(t), &tail, &mut v);
    Ok(v)
}

/// Runs sweeps against one problem, caching per-block constants.
#[derive(Debug, Clone)]
pub struct Sweeper<'a> {
    problem: &'a BlockProblem,
    params: SweepParams,
    methods: Vec<BlockMethod>,
    cache: BlockCache,
}

impl<'a> Sweeper<'a> {
    pub fn new(problem: &'a BlockProblem, params: SweepParams) -> Self {
        Self {
            problem,
            params,
            methods: (0..problem.num_blocks()).map(|t| default_method(problem, t)).collect(),
            cache: BlockCache::new(problem),
        }
    }

    pub fn with_methods(mut self, methods: Vec<BlockMethod>) -> Self {
        self.methods = methods;
        self
    }

    pub fn params(&self) -> &SweepParams {
        &self.params
    }

    pub fn problem(&self) -> &BlockProblem {
        self.problem
    }

    /// Constant stepsizes: each block is solved once at `lambda_t`.
    pub fn bipp_sweep(&self, input: &SweepInput<'_>) -> Result<SweepOutput, SweepError> {
        self.sweep(input, false)
    }

    /// Adaptive stepsizes: `lambda_t` is halved until the inner solver
    /// certifies and the block's descent test holds.
    pub fn abipp_sweep(&self, input: &SweepInput<'_>) -> Result<SweepOutput, SweepError> {
        self.sweep(input, true)
    }

    fn validate(&self, input: &SweepInput<'_>) -> Result<(), SweepError> {
        let pb = self.problem;
        pb.check_domain(input.z)?;
        if input.p.len() != pb.num_rows() {
            return Err(SweepError::Input("multiplier length differs from the row count".into()));
        }
        if input.lambda.len() != pb.num_blocks() {
            return Err(SweepError::Input("one stepsize per block is required".into()));
        }
        if self.methods.len() != pb.num_blocks() {
            return Err(SweepError::Input("one block method per block is required".into()));
        }
        for &l in input.lambda {
            check_scalars(l, input.c)?;
        }
        if !(self.params.lambda_floor > 0.0) {
            return Err(SweepError::Input("stepsize floor must be positive".into()));
        }
        Ok(())
    }

    fn sweep(&self, input: &SweepInput<'_>, adaptive: bool) -> Result<SweepOutput, SweepError> {
        self.validate(input)?;
        let pb = self.problem;
        let nb = pb.num_blocks();
        let c = input.c;
        let mut cur = input.z.clone();
        let mut r0 = pb.residual(&cur);
        let mut lambda_plus = input.lambda.to_vec();
        let mut records = Vec::with_capacity(nb);
        let mut r_blocks = Vec::with_capacity(nb);
        let mut g_mixed = Vec::with_capacity(nb);
        let mut a_steps = Vec::with_capacity(nb);
        let al_start = if self.params.debug_checks {
            Some(pb.eval_al(input.z, input.p, c)?)
        } else {
            None
        };
        let mut total_decrease = 0.0;

        #[allow(clippy::needless_range_loop)]
        for t in 0..nb {
            let weight: Vec<f64> = input.p.iter().zip(&r0).map(|(pi, ri)| pi + c * ri).collect();
            let mut lam = lambda_plus[t];
            let mut halvings = 0;
            let mut solver_halvings = 0;
            let mut inner = 0;
            let (sol, d, ad, decrease) = loop {
                let sol = solve_block(pb, &self.cache, t, &cur, &weight, c, lam, self.methods[t], &self.params)?;
                inner += sol.inner_iterations;
                let accepted_solve = sol.certified();
                if !accepted_solve && !adaptive {
                    return Err(SweepError::SubproblemFailed {
                        block: t,
                        status: format!("{:?}", sol.status.expect("closed-form solves always certify")),
                    });
                }
                if accepted_solve {
                    let d: Vec<f64> = sol.z_t.iter().zip(cur.block(t)).map(|(a, b)| a - b).collect();
                    let ad = gemv(pb.constraint_block(t), &d);
                    let decrease = -(pb.smooth().value_change(t, &cur, &sol.z_t)
                        + dot(&weight, &ad)
                        + 0.5 * c * dot(&ad, &ad));
                    if !adaptive || decrease >= dot(&d, &d) / (8.0 * lam) + 0.25 * c * dot(&ad, &ad) {
                        break (sol, d, ad, decrease);
                    }
                    halvings += 1;
                } else {
                    solver_halvings += 1;
                }
                lam *= 0.5;
                if lam < self.params.lambda_floor {
                    return Err(SweepError::StepsizeFloor {
                        block: t,
                        lambda: lam,
                        floor: self.params.lambda_floor,
                    });
                }
            };
            lambda_plus[t] = lam;
            cur.set_block(t, &sol.z_t);
            r0.iter_mut().zip(&ad).for_each(|(r, v)| *r += v);
            total_decrease += decrease;
            if let Some(start) = al_start {
                let now = pb.eval_al(&cur, input.p, c)?;
                let incremental = start - total_decrease;
                debug_assert!(
                    (now - incremental).abs() <= 1e-8 * (1.0 + now.abs().max(start.abs())),
                    "incremental AL {incremental} drifted from {now} at block {t}"
                );
                if (now - incremental).abs() > 1e-8 * (1.0 + now.abs().max(start.abs())) {
                    return Err(SweepError::Input(format!(
                        "incremental AL {incremental} drifted from {now} at block {t}"
                    )));
                }
            }
            // gradient at (z+_{<=t}, z_{>t})
            g_mixed.push(pb.smooth().block_gradient(t, &cur));
            records.push(BlockRecord {
                t,
                lambda: lam,
                method: self.methods[t],
                halvings,
                solver_halvings,
                inner_iterations: inner,
                step_norm: norm(&d),
                r_norm: norm(&sol.r_t),
                eps: sol.eps_t,
                al_decrease: decrease,
                constraint_step_norm: norm(&ad),
            });
            r_blocks.push((sol.r_t, sol.eps_t));
            a_steps.push(ad);
        }

        let z_plus = cur;
        // tails[t] = sum_{s>t} A_s (z_s+ - z_s)
        let mut tail = vec![0.0; pb.num_rows()];
        let mut v_plus = pb.zeros();
        let mut delta = 0.0;
        for t in (0..nb).rev() {
            let lam = lambda_plus[t];
            let g_plus = pb.smooth().block_gradient(t, &z_plus);
            let (r_t, eps_t) = &r_blocks[t];
            let vt = v_plus.block_mut(t);
            for i in 0..vt.len() {
                let d = z_plus.block(t)[i] - input.z.block(t)[i];
                vt[i] = g_plus[i] - g_mixed[t][i] + r_t[i] / lam - d / lam;
            }
            let scaled: Vec<f64> = tail.iter().map(|v| c * v).collect();
            gemv_t_acc(pb.constraint_block(t), &scaled, vt);
            tail.iter_mut().zip(&a_steps[t]).for_each(|(s, v)| *s += v);
            delta += eps_t / lam;
        }

        Ok(SweepOutput {
            residual_plus: pb.residual(&z_plus),
            z_plus,
            v_plus,
            delta_plus: delta,
            lambda_plus,
            per_block: records,
            al_decrease: total_decrease,
        })
    }
}

pub fn bipp_sweep(
    input: &SweepInput<'_>,
    problem: &BlockProblem,
    params: &SweepParams,
) -> Result<SweepOutput, SweepError> {
    Sweeper::new(problem, *params).bipp_sweep(input)
}

pub fn abipp_sweep(
    input: &SweepInput<'_>,
    problem: &BlockProblem,
    params: &SweepParams,
) -> Result<SweepOutput, SweepError> {
    Sweeper::new(problem, *params).abipp_sweep(input)
}
