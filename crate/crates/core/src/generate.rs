//! Seeded generators for the three benchmark families.
//!
//! Every field is drawn from its own ChaCha8 stream: the generator is seeded
//! with `seed_from_u64(seed)` and `set_stream(id)` selects the field, with ids
//! fixed in [`stream`]. Within a stream, draws run block by block in
//! column-major order, so adding a field never perturbs existing draws.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::GenerateError;
use crate::linalg::{gemv_acc, BlockVector};
use crate::problem::{BlockProblem, CauchyBlock, ProxTerm, QuadraticBlock, SlaterPoint, SmoothTerm};

/// Stream ids, one per drawn field.
pub mod stream {
    pub const CONSTRAINT: u64 = 1;
    pub const WITNESS: u64 = 2;
    pub const START: u64 = 3;
    pub const DIAGONAL: u64 = 4;
    pub const ROTATION: u64 = 5;
    pub const LINEAR: u64 = 6;
    pub const CAUCHY_SCALE: u64 = 7;
    pub const CAUCHY_TARGET: u64 = 8;
    pub const CAUCHY_DIRECTION: u64 = 9;
}

/// Resampling cap for the diagonal of a random indefinite quadratic.
pub const MAX_DIAGONAL_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Dqp,
    Cauchy,
    Qpbc,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Dqp => "dqp",
            Family::Cauchy => "cauchy",
            Family::Qpbc => "qpbc",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = GenerateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dqp" => Ok(Family::Dqp),
            "cauchy" => Ok(Family::Cauchy),
            "qpbc" => Ok(Family::Qpbc),
            other => Err(GenerateError::Spec(format!("unknown family {other:?}"))),
        }
    }
}

/// Size triple `(B, nbar, l)`, box half-width `omega` and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub family: Family,
    pub seed: u64,
    pub blocks: usize,
    pub nbar: usize,
    pub l: usize,
    pub omega: f64,
}

impl InstanceSpec {
    pub fn new(family: Family, blocks: usize, nbar: usize, l: usize, omega: f64, seed: u64) -> Self {
        Self {
            family,
            seed,
            blocks,
            nbar,
            l,
            omega,
        }
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        let bad = |msg: &str| Err(GenerateError::Spec(msg.into()));
        if self.blocks == 0 {
            return bad("B must be at least 1");
        }
        if self.nbar == 0 {
            return bad("nbar must be at least 1");
        }
        if self.l == 0 {
            return bad("l must be at least 1");
        }
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return bad("omega must be positive and finite");
        }
        if self.family == Family::Qpbc && self.nbar != 1 {
            return bad("qpbc blocks are single coordinates (nbar = 1)");
        }
        Ok(())
    }

    fn rng(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }
}

/// Family-specific data not recoverable from the smooth term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FamilyPayload {
    /// Eigenvalues of each `P_t`.
    Dqp { diagonals: Vec<Vec<f64>> },
    Cauchy,
    /// Eigenvalues of the global `P`.
    Qpbc { diagonal: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedInstance {
    pub spec: InstanceSpec,
    pub problem: BlockProblem,
    pub x0: BlockVector,
    /// Feasible point with `A x_b = b`, at distance at least `omega / 2` from
    /// the box boundary.
    pub x_b: BlockVector,
    pub payload: FamilyPayload,
}

impl GeneratedInstance {
    pub fn weak_convexity(&self) -> &[f64] {
        self.problem.weak_convexity().expect("generated instances carry m")
    }

    pub fn slater(&self) -> SlaterPoint {
        SlaterPoint {
            point: self.x_b.clone(),
            boundary_distance: self.spec.omega / 2.0,
        }
    }
}

pub fn generate(spec: &InstanceSpec) -> Result<GeneratedInstance, GenerateError> {
    match spec.family {
        Family::Dqp => gen_dqp(spec),
        Family::Cauchy => gen_cauchy(spec),
        Family::Qpbc => gen_qpbc(spec),
    }
}

/// Constraint blocks, right-hand side, start point and feasibility witness.
pub struct SharedData {
    pub constraint_blocks: Vec<DMatrix<f64>>,
    pub rhs: Vec<f64>,
    pub x0: BlockVector,
    pub x_b: BlockVector,
}

pub fn gen_shared(spec: &InstanceSpec) -> Result<SharedData, GenerateError> {
    spec.validate()?;
    let dims = vec![spec.nbar; spec.blocks];
    let mut rng_a = spec.rng(stream::CONSTRAINT);
    let constraint_blocks: Vec<DMatrix<f64>> = dims
        .iter()
        .map(|&d| DMatrix::from_fn(spec.l, d, |_, _| rng_a.sample(StandardNormal)))
        .collect();
    let n = spec.blocks * spec.nbar;
    let half = spec.omega / 2.0;
    let quarter = spec.omega / 4.0;
    let mut rng_w = spec.rng(stream::WITNESS);
    let xb: Vec<f64> = (0..n).map(|_| rng_w.random_range(-half..=half)).collect();
    let mut rng_s = spec.rng(stream::START);
    let x0: Vec<f64> = (0..n).map(|_| rng_s.random_range(-quarter..=quarter)).collect();
    let x_b = BlockVector::from_flat(xb, &dims)?;
    let x0 = BlockVector::from_flat(x0, &dims)?;
    // same accumulation order as BlockProblem::apply_constraint
    let mut rhs = vec![0.0; spec.l];
    for (t, a) in constraint_blocks.iter().enumerate() {
        gemv_acc(a, x_b.block(t), &mut rhs);
    }
    Ok(SharedData {
        constraint_blocks,
        rhs,
        x0,
        x_b,
    })
}

/// Diagonal of length `n` with `floor(n/3)` leading zeros and the rest
/// uniform on `[-10, 10]`, redrawn until some entry is negative.
pub fn indefinite_diagonal(rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>, GenerateError> {
    let zeros = n / 3;
    for _ in 0..MAX_DIAGONAL_DRAWS {
        let mut d = vec![0.0; n];
        for v in &mut d[zeros..] {
            *v = rng.random_range(-10.0..=10.0);
        }
        if d.iter().any(|&v| v < 0.0) {
            return Ok(d);
        }
    }
    Err(GenerateError::Resample(MAX_DIAGONAL_DRAWS))
}

/// Orthogonal factor of a standard-normal matrix, with columns flipped so
/// that `R` has a nonnegative diagonal.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Q^T diag(d) Q`, symmetrized.
fn rotated_quadratic(q: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let n = d.len();
    let mut p = q.transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)) * q;
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = s;
            p[(j, i)] = s;
        }
    }
    p
}

fn assemble(
    spec: &InstanceSpec,
    shared: SharedData,
    smooth: SmoothTerm,
    m: Vec<f64>,
    payload: FamilyPayload,
) -> Result<GeneratedInstance, GenerateError> {
    let dims = vec![spec.nbar; spec.blocks];
    let terms = dims
        .iter()
        .map(|&d| ProxTerm::boxed(vec![-spec.omega; d], vec![spec.omega; d]))
        .collect();
    let cross = smooth.cross_lipschitz(&dims);
    let mut problem =
        BlockProblem::new(shared.constraint_blocks, shared.rhs, terms, smooth)?.with_weak_convexity(m)?;
    if let Some(l) = cross {
        problem = problem.with_cross_lipschitz(l)?;
    }
    Ok(GeneratedInstance {
        spec: *spec,
        problem,
        x0: shared.x0,
        x_b: shared.x_b,
        payload,
    })
}

pub fn gen_dqp(spec: &InstanceSpec) -> Result<GeneratedInstance, GenerateError> {
    if spec.family != Family::Dqp {
        return Err(GenerateError::Spec(format!("expected dqp, got {}", spec.family)));
    }
    let shared = gen_shared(spec)?;
    let mut rng_d = spec.rng(stream::DIAGONAL);
    let mut rng_q = spec.rng(stream::ROTATION);
    let mut rng_r = spec.rng(stream::LINEAR);
    let mut blocks = Vec::with_capacity(spec.blocks);
    let mut diagonals = Vec::with_capacity(spec.blocks);
    let mut m = Vec::with_capacity(spec.blocks);
    for _ in 0..spec.blocks {
        let d = indefinite_diagonal(&mut rng_d, spec.nbar)?;
        let q = random_orthogonal(&mut rng_q, spec.nbar);
        let r: Vec<f64> = (0..spec.nbar).map(|_| rng_r.sample(StandardNormal)).collect();
        m.push(d.iter().cloned().fold(f64::INFINITY, f64::min).abs());
        blocks.push(QuadraticBlock {
            p: rotated_quadratic(&q, &d),
            r,
        });
        diagonals.push(d);
    }
    assemble(
        spec,
        shared,
        SmoothTerm::SeparableQuadratic { blocks },
        m,
        FamilyPayload::Dqp { diagonals },
    )
}

pub fn gen_cauchy(spec: &InstanceSpec) -> Result<GeneratedInstance, GenerateError> {
    if spec.family != Family::Cauchy {
        return Err(GenerateError::Spec(format!("expected cauchy, got {}", spec.family)));
    }
    let shared = gen_shared(spec)?;
    let mut rng_a = spec.rng(stream::CAUCHY_SCALE);
    let mut rng_y = spec.rng(stream::CAUCHY_TARGET);
    let mut rng_z = spec.rng(stream::CAUCHY_DIRECTION);
    let mut blocks = Vec::with_capacity(spec.blocks);
    let mut m = Vec::with_capacity(spec.blocks);
    for _ in 0..spec.blocks {
        let alpha = rng_a.random_range(50.0..=100.0);
        let y = rng_y.sample(StandardNormal);
        let z: Vec<f64> = (0..spec.nbar).map(|_| rng_z.sample(StandardNormal)).collect();
        // the scalar loss has curvature >= -1/8; ||z||^2 is a safe over-estimate
        m.push(z.iter().map(|v| v * v).sum());
        blocks.push(CauchyBlock { alpha, y, z });
    }
    assemble(spec, shared, SmoothTerm::Cauchy { blocks }, m, FamilyPayload::Cauchy)
}

pub fn gen_qpbc(spec: &InstanceSpec) -> Result<GeneratedInstance, GenerateError> {
    if spec.family != Family::Qpbc {
        return Err(GenerateError::Spec(format!("expected qpbc, got {}", spec.family)));
    }
    let shared = gen_shared(spec)?;
    let n = spec.blocks;
    let d = indefinite_diagonal(&mut spec.rng(stream::DIAGONAL), n)?;
    let q = random_orthogonal(&mut spec.rng(stream::ROTATION), n);
    let mut rng_r = spec.rng(stream::LINEAR);
    let r: Vec<f64> = (0..n).map(|_| rng_r.sample(StandardNormal)).collect();
    let p = rotated_quadratic(&q, &d);
    let m = (0..n).map(|t| (-p[(t, t)]).max(0.0)).collect();
    assemble(
        spec,
        shared,
        SmoothTerm::DenseQuadratic { p, r },
        m,
        FamilyPayload::Qpbc { diagonal: d },
    )
}
