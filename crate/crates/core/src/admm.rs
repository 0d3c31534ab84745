//! Outer drivers: the static-penalty loop with epoch-gated multiplier updates
//! and the penalty-doubling shell around it, plus the penalty-only and vanilla
//! comparison variants.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ProblemError, SolverError};
use crate::linalg::{norm, BlockVector, KahanSum};
use crate::problem::{
    check_stationarity, compute_theory_constants, relative_scales, BlockProblem, SlaterPoint, StationarityMode,
    StationaryCertificate, TheoryConstants,
};
use crate::sweep::{constant_stepsizes, BlockRecord, M0Choice, SweepInput, SweepOutput, SweepParams, Sweeper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Multiplier updates gated by the epoch test, plus the final update.
    #[serde(rename = "a-admm")]
    AAdmm,
    /// No multiplier updates at all.
    #[serde(rename = "penalty")]
    PenaltyOnly,
    /// One multiplier update per sweep.
    #[serde(rename = "v-admm")]
    VanillaAdmm,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::AAdmm => "A-ADMM",
            Variant::PenaltyOnly => "Penalty",
            Variant::VanillaAdmm => "v-ADMM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepsizeMode {
    /// `lambda_t = 1 / (2 max{m_t, 1})`, never changed.
    Constant,
    /// Start every block at `lambda0` and halve on demand.
    Adaptive { lambda0: f64 },
}

impl StepsizeMode {
    pub fn label(self) -> &'static str {
        match self {
            StepsizeMode::Constant => "Const",
            StepsizeMode::Adaptive { .. } => "Adapt",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, StepsizeMode::Adaptive { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// `rho`, `eta` are absolute.
    Absolute,
    /// `rho` is scaled by `1 + ||grad f(x0)||` and `eta` by `1 + ||A x0 - b||`.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    #[default]
    Off,
    Sweeps,
    /// Sweep records with per-block details.
    Blocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho: f64,
    pub eta: f64,
    /// Multiplier-test constant `alpha`, in absolute units. Defaults to
    /// `max{rho^2, B rho^2}` with the resolved absolute `rho`.
    pub alpha: Option<f64>,
    /// Residual threshold `C` for multiplier updates, in absolute units.
    /// Defaults to `1e3 rho`.
    pub c_bound: Option<f64>,
    pub stepsize: StepsizeMode,
    pub variant: Variant,
    pub sweep: SweepParams,
    /// Total sweeps over all inner calls.
    pub iter_cap: usize,
    pub termination: Termination,
    #[serde(default)]
    pub trace: TraceLevel,
    /// Keep every multiplier update `(q_before, q_after, Ay - b)`.
    #[serde(default)]
    pub record_updates: bool,
    /// Evaluate theory constants and count bound violations.
    #[serde(default)]
    pub diagnostics: bool,
    #[serde(default)]
    pub slater: Option<SlaterPoint>,
}

impl SolverConfig {
    /// Relative tolerances `1e-5`, fixed `M0 = 1`, 500,000 sweeps, adaptive
    /// stepsizes starting at 100.
    pub fn benchmark_defaults(variant: Variant, stepsize: StepsizeMode) -> Self {
        Self {
            rho: 1e-5,
            eta: 1e-5,
            alpha: None,
            c_bound: None,
            stepsize,
            variant,
            sweep: SweepParams {
                m0: M0Choice::Fixed(1.0),
                ..SweepParams::default()
            },
            iter_cap: 500_000,
            termination: Termination::Relative,
            trace: TraceLevel::Off,
            record_updates: false,
            diagnostics: false,
            slater: None,
        }
    }

    /// Absolute tolerances for a hand-checked run.
    pub fn absolute(rho: f64, eta: f64, variant: Variant, stepsize: StepsizeMode) -> Self {
        Self {
            rho,
            eta,
            termination: Termination::Absolute,
            sweep: SweepParams::default(),
            ..Self::benchmark_defaults(variant, stepsize)
        }
    }

    /// Absolute tolerances and thresholds for a run from `x0`.
    pub fn resolve(&self, problem: &BlockProblem, x0: &BlockVector) -> Result<Tolerances, SolverError> {
        if !(self.rho > 0.0) || !(self.eta > 0.0) || !self.rho.is_finite() || !self.eta.is_finite() {
            return Err(ProblemError::Tolerance {
                rho: self.rho,
                eta: self.eta,
            }
            .into());
        }
        if self.iter_cap == 0 {
            return Err(SolverError::Config("iteration cap must be positive".into()));
        }
        if let StepsizeMode::Adaptive { lambda0 } = self.stepsize {
            if !(lambda0 > 0.0) || !lambda0.is_finite() {
                return Err(SolverError::Config(format!("initial stepsize must be positive, got {lambda0}")));
            }
        }
        let (s_v, s_feas) = match self.termination {
            Termination::Absolute => (1.0, 1.0),
            Termination::Relative => relative_scales(problem, x0),
        };
        let rho = self.rho * s_v;
        let eta = self.eta * s_feas;
        let alpha = self
            .alpha
            .unwrap_or_else(|| (rho * rho).max(problem.num_blocks() as f64 * rho * rho));
        let c_bound = self.c_bound.unwrap_or(1e3 * rho);
        if !(alpha >= rho * rho) {
            return Err(SolverError::Config(format!("alpha {alpha} must be at least rho^2 = {}", rho * rho)));
        }
        if !(c_bound >= rho) {
            return Err(SolverError::Config(format!("C {c_bound} must be at least rho = {rho}")));
        }
        Ok(Tolerances {
            rho,
            eta,
            alpha,
            c_bound,
            s_v,
            s_feas,
        })
    }

    pub fn stationarity_mode(&self, tol: &Tolerances) -> StationarityMode {
        match self.termination {
            Termination::Absolute => StationarityMode::Absolute,
            Termination::Relative => StationarityMode::Relative {
                s_v: tol.s_v,
                s_feas: tol.s_feas,
            },
        }
    }
}

/// Tolerances and thresholds in absolute units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rho: f64,
    pub eta: f64,
    pub alpha: f64,
    pub c_bound: f64,
    pub s_v: f64,
    pub s_feas: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    IterCap,
    Error,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::IterCap => "itercap",
            RunStatus::Error => "error",
        }
    }
}

/// One record per sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Outer call index, from 1.
    pub call: usize,
    /// Sweep index across the whole run, from 1.
    pub i: usize,
    /// Multiplier updates so far in this call.
    pub k: usize,
    pub c: f64,
    pub res_sq: f64,
    pub feas: f64,
    #[serde(rename = "T")]
    pub t_potential: f64,
    pub lambda: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub blocks: Option<Vec<BlockRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierUpdate {
    pub call: usize,
    /// Sweep index within the call.
    pub i: usize,
    pub k: usize,
    pub c: f64,
    pub q_before: Vec<f64>,
    pub q_after: Vec<f64>,
    /// `A y - b` at the update.
    pub residual: Vec<f64>,
    /// The final update of a call.
    pub terminal: bool,
}

/// Counters for runtime checks of the analysis' inequalities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Sweeps whose augmented-Lagrangian decrease was negative.
    pub potential_decreases: usize,
    pub most_negative_decrease: f64,
    pub stationarity_bound_checks: usize,
    pub stationarity_bound_violations: usize,
    pub multiplier_bound_checks: usize,
    pub multiplier_bound_violations: usize,
    /// Upper bound on outer calls, when the multiplier bound is computable.
    pub outer_call_bound: Option<f64>,
    pub halvings: usize,
    pub solver_halvings: usize,
    pub inner_iterations: usize,
    pub constants: Option<TheoryConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub stepsize: StepsizeMode,
    pub status: RunStatus,
    pub iters: usize,
    pub mults: usize,
    pub wall_time: f64,
    pub objective: f64,
    pub certificate: Option<StationaryCertificate>,
    /// `c` after the final doubling.
    pub penalty_final: f64,
    /// Penalty used by each outer call: `c0, 2 c0, 4 c0, ...`.
    pub penalties: Vec<f64>,
    pub outer_calls: usize,
    pub lambda_final: Vec<f64>,
    pub tolerances: Option<Tolerances>,
    pub certificate_verified: bool,
    pub error: Option<String>,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
    #[serde(skip)]
    pub updates: Vec<MultiplierUpdate>,
}

/// Result of one static-penalty call.
#[derive(Debug, Clone, PartialEq)]
pub struct SAdmmOutput {
    pub y: BlockVector,
    /// Multiplier after the call's last update.
    pub q: Vec<f64>,
    /// `q_prev + c (A y - b)` with `q_prev` the multiplier of the last sweep,
    /// so that `v in grad f(y) + d_delta h(y) + A^* p_cert`.
    pub p_cert: Vec<f64>,
    pub v: BlockVector,
    pub delta: f64,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub mults: usize,
    /// False when the sweep budget ran out first.
    pub terminated: bool,
}

struct Driver<'a> {
    problem: &'a BlockProblem,
    config: &'a SolverConfig,
    sweeper: Sweeper<'a>,
    tol: Tolerances,
    constants: Option<TheoryConstants>,
    /// `min_t min{lambda_t^0, 1/(4 m_t)}` and `max_t lambda_t^0`.
    lambda_range: (f64, f64),
    diag: Diagnostics,
    trace: Vec<TraceRecord>,
    updates: Vec<MultiplierUpdate>,
    sweeps_used: usize,
    call: usize,
}

impl<'a> Driver<'a> {
    fn new(
        problem: &'a BlockProblem,
        config: &'a SolverConfig,
        x0: &BlockVector,
        lambda0: &[f64],
    ) -> Result<Self, SolverError> {
        let tol = config.resolve(problem, x0)?;
        let constants = if config.diagnostics && problem.weak_convexity().is_some() {
            Some(compute_theory_constants(problem, config.slater.as_ref(), tol.c_bound)?)
        } else {
            None
        };
        let lambda_lo = match problem.weak_convexity() {
            Some(m) => lambda0
                .iter()
                .zip(m)
                .map(|(l, mt)| if *mt > 0.0 { l.min(0.25 / mt) } else { *l })
                .fold(f64::INFINITY, f64::min),
            None => f64::NAN,
        };
        let lambda_hi = lambda0.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            problem,
            config,
            sweeper: Sweeper::new(problem, config.sweep),
            tol,
            constants,
            lambda_range: (lambda_lo, lambda_hi),
            diag: Diagnostics::default(),
            trace: Vec::new(),
            updates: Vec::new(),
            sweeps_used: 0,
            call: 0,
        })
    }

    fn sweep(&self, y: &BlockVector, q: &[f64], lambda: &[f64], c: f64) -> Result<SweepOutput, SolverError> {
        let input = SweepInput { z: y, p: q, lambda, c };
        let out = if self.config.stepsize.is_adaptive() {
            self.sweeper.abipp_sweep(&input)?
        } else {
            self.sweeper.bipp_sweep(&input)?
        };
        Ok(out)
    }

    /// Checks the per-sweep stationarity bound against the AL decrease.
    fn check_sweep(&mut self, out: &SweepOutput, c: f64) {
        let dec = out.al_decrease;
        if dec < 0.0 {
            self.diag.potential_decreases += 1;
            self.diag.most_negative_decrease = self.diag.most_negative_decrease.min(dec);
        }
        for r in &out.per_block {
            self.diag.halvings += r.halvings;
            self.diag.solver_halvings += r.solver_halvings;
            self.diag.inner_iterations += r.inner_iterations;
        }
        let Some(k) = &self.constants else { return };
        if k.lipschitz_defaulted {
            return;
        }
        let factor = if self.config.stepsize.is_adaptive() {
            let (lo, hi) = self.lambda_range;
            1.0 + 50.0 / lo + 48.0 * k.lipschitz * k.lipschitz * hi + c * k.zeta2
        } else {
            k.zeta(c)
        };
        let rhs = factor * dec;
        self.diag.stationarity_bound_checks += 1;
        if out.stationarity_sq() > rhs + 1e-8 * (1.0 + rhs.abs()) {
            self.diag.stationarity_bound_violations += 1;
        }
    }

    fn check_multiplier(&mut self, q: &[f64], q0_norm: f64) {
        if let Some(u) = self.constants.as_ref().and_then(|k| k.upsilon.as_ref()) {
            self.diag.multiplier_bound_checks += 1;
            if norm(q) > q0_norm.max(u.value) * (1.0 + 1e-12) {
                self.diag.multiplier_bound_violations += 1;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record_update(&mut self, i: usize, k: usize, c: f64, before: &[f64], after: &[f64], res: &[f64], terminal: bool) {
        if self.config.record_updates {
            self.updates.push(MultiplierUpdate {
                call: self.call,
                i,
                k,
                c,
                q_before: before.to_vec(),
                q_after: after.to_vec(),
                residual: res.to_vec(),
                terminal,
            });
        }
    }

    fn s_admm(&mut self, y0: &BlockVector, q0: &[f64], lambda0: &[f64], c: f64) -> Result<SAdmmOutput, SolverError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(ProblemError::Penalty(c).into());
        }
        self.call += 1;
        let variant = self.config.variant;
        let rho_sq = self.tol.rho * self.tol.rho;
        let c_sq = self.tol.c_bound * self.tol.c_bound;
        let q0_norm = norm(q0);
        let mut y = y0.clone();
        let mut q = q0.to_vec();
        let mut lambda = lambda0.to_vec();
        let mut potential = KahanSum::default();
        let mut k = 0usize;
        let mut last: Option<(SweepOutput, Vec<f64>)> = None;
        let mut i = 0usize;

        loop {
            if self.sweeps_used >= self.config.iter_cap {
                let (out, p_cert) = match last {
                    Some((out, p_cert)) => (out, p_cert),
                    None => {
                        // budget exhausted before this call swept once
                        let res = self.problem.residual(&y);
                        let p_cert = q.iter().zip(&res).map(|(a, r)| a + c * r).collect();
                        return Ok(SAdmmOutput {
                            v: self.problem.zeros(),
                            y,
                            q,
                            p_cert,
                            delta: f64::INFINITY,
                            lambda,
                            iterations: 0,
                            mults: 0,
                            terminated: false,
                        });
                    }
                };
                return Ok(SAdmmOutput {
                    y,
                    q,
                    p_cert,
                    v: out.v_plus,
                    delta: out.delta_plus,
                    lambda,
                    iterations: i,
                    mults: k,
                    terminated: false,
                });
            }
            i += 1;
            self.sweeps_used += 1;
            let out = self.sweep(&y, &q, &lambda, c)?;
            self.check_sweep(&out, c);
            y = out.z_plus.clone();
            lambda.clone_from(&out.lambda_plus);
            let res = &out.residual_plus;
            let res_sq = out.stationarity_sq();
            let p_cert: Vec<f64> = q.iter().zip(res).map(|(a, r)| a + c * r).collect();

            let terminate = res_sq <= rho_sq;
            if !terminate {
                potential.add(out.al_decrease);
            }
            let update = if terminate {
                variant != Variant::PenaltyOnly
            } else {
                match variant {
                    Variant::AAdmm => {
                        res_sq <= c_sq && rho_sq / (self.tol.alpha * (k + 1) as f64) >= potential.value() / i as f64
                    }
                    Variant::VanillaAdmm => true,
                    Variant::PenaltyOnly => false,
                }
            };
            if update {
                k += 1;
                let before = std::mem::replace(&mut q, p_cert.clone());
                self.record_update(i, k, c, &before, &q, res, terminate);
                self.check_multiplier(&q, q0_norm);
            }
            if self.config.trace != TraceLevel::Off {
                self.trace.push(TraceRecord {
                    call: self.call,
                    i: self.sweeps_used,
                    k,
                    c,
                    res_sq,
                    feas: norm(res),
                    t_potential: potential.value(),
                    lambda: lambda.clone(),
                    blocks: (self.config.trace == TraceLevel::Blocks).then(|| out.per_block.clone()),
                });
            }
            if terminate {
                return Ok(SAdmmOutput {
                    y,
                    q,
                    p_cert,
                    v: out.v_plus,
                    delta: out.delta_plus,
                    lambda,
                    iterations: i,
                    mults: k,
                    terminated: true,
                });
            }
            last = Some((out, p_cert));
        }
    }
}

fn initial_stepsizes(problem: &BlockProblem, mode: StepsizeMode) -> Result<Vec<f64>, SolverError> {
    match mode {
        StepsizeMode::Constant => {
            let m = problem.weak_convexity().ok_or(ProblemError::MissingWeakConvexity)?;
            Ok(constant_stepsizes(m))
        }
        StepsizeMode::Adaptive { lambda0 } => Ok(vec![lambda0; problem.num_blocks()]),
    }
}

/// One static-penalty call from `(y0, q0, lambda0)` at penalty `c`. Relative
/// tolerances are scaled at `y0`.
pub fn s_admm(
    problem: &BlockProblem,
    config: &SolverConfig,
    y0: &BlockVector,
    q0: &[f64],
    lambda0: &[f64],
    c: f64,
) -> Result<SAdmmOutput, SolverError> {
    validate_start(problem, y0, lambda0)?;
    if q0.len() != problem.num_rows() {
        return Err(ProblemError::Dimension("multiplier length differs from the row count".into()).into());
    }
    let mut driver = Driver::new(problem, config, y0, lambda0)?;
    driver.s_admm(y0, q0, lambda0, c)
}

fn validate_start(problem: &BlockProblem, x0: &BlockVector, lambda0: &[f64]) -> Result<(), SolverError> {
    problem.check_domain(x0)?;
    if lambda0.len() != problem.num_blocks() || lambda0.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(SolverError::Config("one positive stepsize per block is required".into()));
    }
    Ok(())
}

/// `c0 = 1 / (1 + ||A x0 - b||)`
pub fn initial_penalty(problem: &BlockProblem, x0: &BlockVector) -> f64 {
    1.0 / (1.0 + problem.feasibility(x0))
}

/// Penalty-doubling driver. `gamma0` overrides the stepsizes implied by the
/// configured mode.
pub fn a_admm(
    problem: &BlockProblem,
    x0: &BlockVector,
    gamma0: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<RunRecord, SolverError> {
    let started = Instant::now();
    let gamma = match gamma0 {
        Some(g) => g.to_vec(),
        None => initial_stepsizes(problem, config.stepsize)?,
    };
    validate_start(problem, x0, &gamma)?;
    let mut driver = Driver::new(problem, config, x0, &gamma)?;
    let tol = driver.tol;

    let c0 = initial_penalty(problem, x0);
    if let Some(u) = driver.constants.as_ref().and_then(|k| k.upsilon.as_ref()) {
        driver.diag.outer_call_bound = Some((1.0 + 4.0 * u.value / (c0 * tol.eta)).log2() + 1.0);
    }
    let mut c = c0;
    let mut x = x0.clone();
    let mut p = vec![0.0; problem.num_rows()];
    let mut gamma = gamma;
    let mut penalties = Vec::new();
    let mut mults = 0;

    let (status, out) = loop {
        let out = driver.s_admm(&x, &p, &gamma, c)?;
        penalties.push(c);
        c *= 2.0;
        mults += out.mults;
        x.clone_from(&out.y);
        p.clone_from(&out.q);
        gamma.clone_from(&out.lambda);
        if !out.terminated {
            break (RunStatus::IterCap, out);
        }
        if problem.feasibility(&x) <= tol.eta {
            break (RunStatus::Converged, out);
        }
        if driver.sweeps_used >= config.iter_cap {
            break (RunStatus::IterCap, out);
        }
    };

    let certificate = StationaryCertificate::new(problem, out.y.clone(), out.p_cert.clone(), out.v.clone(), out.delta);
    let mode = config.stationarity_mode(&tol);
    let verified = check_stationarity(&certificate, config.rho, config.eta, mode)?;
    debug_assert!(status != RunStatus::Converged || verified, "converged run failed its own certificate");
    let objective = problem.objective(&out.y)?;
    let mut diag = std::mem::take(&mut driver.diag);
    diag.constants = driver.constants.take();
    Ok(RunRecord {
        variant: config.variant,
        stepsize: config.stepsize,
        status,
        iters: driver.sweeps_used,
        mults,
        wall_time: started.elapsed().as_secs_f64(),
        objective,
        certificate: Some(certificate),
        penalty_final: c,
        outer_calls: penalties.len(),
        penalties,
        lambda_final: gamma,
        tolerances: Some(tol),
        certificate_verified: verified,
        error: None,
        diagnostics: diag,
        trace: std::mem::take(&mut driver.trace),
        updates: std::mem::take(&mut driver.updates),
    })
}

/// Runs `variant` under `config`; failures become `RunStatus::Error` records.
pub fn run_variant(problem: &BlockProblem, x0: &BlockVector, variant: Variant, config: &SolverConfig) -> RunRecord {
    let config = SolverConfig {
        variant,
        ..config.clone()
    };
    let started = Instant::now();
    match a_admm(problem, x0, None, &config) {
        Ok(mut rec) => {
            rec.wall_time = started.elapsed().as_secs_f64();
            rec
        }
        Err(e) => RunRecord {
            variant,
            stepsize: config.stepsize,
            status: RunStatus::Error,
            iters: 0,
            mults: 0,
            wall_time: started.elapsed().as_secs_f64(),
            objective: f64::NAN,
            certificate: None,
            penalty_final: f64::NAN,
            penalties: Vec::new(),
            outer_calls: 0,
            lambda_final: Vec::new(),
            tolerances: None,
            certificate_verified: false,
            error: Some(e.to_string()),
            diagnostics: Diagnostics::default(),
            trace: Vec::new(),
            updates: Vec::new(),
        },
    }
}
