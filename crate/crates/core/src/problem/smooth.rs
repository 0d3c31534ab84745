//! Smooth parts `f` of the supported instance families, with closed-form
//! gradients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::ProblemError;
use crate::linalg::{dot, gemv_acc, norm, spectral_norm, BlockVector};
use crate::problem::matrix_serde;

/// One block of a block-separable quadratic `(1/2) x_t^T P_t x_t + <r_t, x_t>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBlock {
    #[serde(with = "matrix_serde")]
    pub p: DMatrix<f64>,
    pub r: Vec<f64>,
}

/// One block of the distributed Cauchy loss
/// `(alpha^2 / 2) log(1 + ((y - <x_t, z>) / alpha)^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyBlock {
    pub alpha: f64,
    pub y: f64,
    pub z: Vec<f64>,
}

impl CauchyBlock {
    fn scaled_residual(&self, x: &[f64]) -> f64 {
        (self.y - dot(x, &self.z)) / self.alpha
    }

    fn value(&self, x: &[f64]) -> f64 {
        let u = self.scaled_residual(x);
        0.5 * self.alpha * self.alpha * (u * u).ln_1p()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let s = self.y - dot(x, &self.z);
        let u = s / self.alpha;
        let coef = -s / (1.0 + u * u);
        out.iter_mut().zip(&self.z).for_each(|(o, zj)| *o = coef * zj);
    }

    /// `value(new) - value(old)` without subtracting two logarithms.
    fn value_change(&self, old: &[f64], new: &[f64]) -> f64 {
        let u_old = self.scaled_residual(old);
        let shift: f64 = new
            .iter()
            .zip(old)
            .zip(&self.z)
            .map(|((a, b), zj)| (a - b) * zj)
            .sum::<f64>();
        let u_new = u_old - shift / self.alpha;
        let ratio = (u_new - u_old) * (u_new + u_old) / (1.0 + u_old * u_old);
        0.5 * self.alpha * self.alpha * ratio.ln_1p()
    }
}

/// Smooth term `f` of a block problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothTerm {
    Zero,
    /// `sum_t (1/2) x_t^T P_t x_t + <r_t, x_t>`
    SeparableQuadratic { blocks: Vec<QuadraticBlock> },
    /// `(1/2) x^T P x + <r, x>` over the flattened variable.
    DenseQuadratic {
        #[serde(with = "matrix_serde")]
        p: DMatrix<f64>,
        r: Vec<f64>,
    },
    Cauchy { blocks: Vec<CauchyBlock> },
}

impl SmoothTerm {
    pub(crate) fn validate(&self, dims: &[usize]) -> Result<(), ProblemError> {
        let n: usize = dims.iter().sum();
        let bad = |msg: String| Err(ProblemError::Invalid(msg));
        match self {
            SmoothTerm::Zero => Ok(()),
            SmoothTerm::SeparableQuadratic { blocks } => {
                if blocks.len() != dims.len() {
                    return bad(format!("{} quadratic blocks for {} blocks", blocks.len(), dims.len()));
                }
                for (t, (blk, &d)) in blocks.iter().zip(dims).enumerate() {
                    if blk.p.shape() != (d, d) || blk.r.len() != d {
                        return bad(format!("quadratic block {t} does not match dimension {d}"));
                    }
                    if !all_finite(blk.p.iter()) || !all_finite(blk.r.iter()) {
                        return Err(ProblemError::NonFinite(format!("quadratic block {t}")));
                    }
                    if !is_symmetric(&blk.p) {
                        return bad(format!("quadratic block {t} is not symmetric"));
                    }
                }
                Ok(())
            }
            SmoothTerm::DenseQuadratic { p, r } => {
                if p.shape() != (n, n) || r.len() != n {
                    return bad(format!("dense quadratic does not match dimension {n}"));
                }
                if !all_finite(p.iter()) || !all_finite(r.iter()) {
                    return Err(ProblemError::NonFinite("dense quadratic".into()));
                }
                if !is_symmetric(p) {
                    return bad("dense quadratic is not symmetric".into());
                }
                Ok(())
            }
            SmoothTerm::Cauchy { blocks } => {
                if blocks.len() != dims.len() {
                    return bad(format!("{} Cauchy blocks for {} blocks", blocks.len(), dims.len()));
                }
                for (t, (blk, &d)) in blocks.iter().zip(dims).enumerate() {
                    if blk.z.len() != d {
                        return bad(format!("Cauchy block {t} does not match dimension {d}"));
                    }
                    if !all_finite(blk.z.iter()) || !blk.y.is_finite() || !blk.alpha.is_finite() {
                        return Err(ProblemError::NonFinite(format!("Cauchy block {t}")));
                    }
                    if blk.alpha <= 0.0 {
                        return bad(format!("Cauchy block {t} has nonpositive scale"));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, x: &BlockVector) -> f64 {
        match self {
            SmoothTerm::Zero => 0.0,
            SmoothTerm::SeparableQuadratic { blocks } => blocks
                .iter()
                .zip(x.blocks())
                .map(|(blk, xt)| {
                    let mut px = vec![0.0; xt.len()];
                    gemv_acc(&blk.p, xt, &mut px);
                    0.5 * dot(xt, &px) + dot(&blk.r, xt)
                })
                .sum(),
            SmoothTerm::DenseQuadratic { p, r } => {
                let xs = x.as_slice();
                let mut px = vec![0.0; xs.len()];
                gemv_acc(p, xs, &mut px);
                0.5 * dot(xs, &px) + dot(r, xs)
            }
            SmoothTerm::Cauchy { blocks } => blocks
                .iter()
                .zip(x.blocks())
                .map(|(blk, xt)| blk.value(xt))
                .sum(),
        }
    }

    /// Gradient with respect to block `t`, evaluated at `x` with block `t`
    /// replaced by `u`. Overwrites `out`.
    pub fn block_gradient_at(&self, t: usize, x: &BlockVector, u: &[f64], out: &mut [f64]) {
        match self {
            SmoothTerm::Zero => out.fill(0.0),
            SmoothTerm::SeparableQuadratic { blocks } => {
                let blk = &blocks[t];
                out.copy_from_slice(&blk.r);
                gemv_acc(&blk.p, u, out);
            }
            SmoothTerm::DenseQuadratic { p, r } => {
                let off = x.offset(t);
                let nt = u.len();
                let xs = x.as_slice();
                for (i, o) in out.iter_mut().enumerate() {
                    let row = off + i;
                    let mut acc = r[row];
                    for (j, xj) in xs.iter().enumerate() {
                        let v = if j >= off && j < off + nt { u[j - off] } else { *xj };
                        acc += p[(row, j)] * v;
                    }
                    *o = acc;
                }
            }
            SmoothTerm::Cauchy { blocks } => blocks[t].gradient(u, out),
        }
    }

    pub fn block_gradient(&self, t: usize, x: &BlockVector) -> Vec<f64> {
        let mut out = vec![0.0; x.block_dim(t)];
        self.block_gradient_at(t, x, x.block(t), &mut out);
        out
    }

    pub fn gradient(&self, x: &BlockVector) -> BlockVector {
        let mut g = BlockVector::zeros(&x.dims());
        for t in 0..x.num_blocks() {
            let gt = self.block_gradient(t, x);
            g.set_block(t, &gt);
        }
        g
    }

    /// `f(x with block t set to u) - f(x)`, evaluated in a form that does not
    /// cancel two large function values.
    pub fn value_change(&self, t: usize, x: &BlockVector, u: &[f64]) -> f64 {
        let xt = x.block(t);
        let d: Vec<f64> = u.iter().zip(xt).map(|(a, b)| a - b).collect();
        match self {
            SmoothTerm::Zero => 0.0,
            SmoothTerm::SeparableQuadratic { blocks } => {
                let blk = &blocks[t];
                let mut grad = blk.r.clone();
                gemv_acc(&blk.p, xt, &mut grad);
                let mut pd = vec![0.0; d.len()];
                gemv_acc(&blk.p, &d, &mut pd);
                dot(&grad, &d) + 0.5 * dot(&d, &pd)
            }
            SmoothTerm::DenseQuadratic { p, .. } => {
                let mut grad = vec![0.0; d.len()];
                self.block_gradient_at(t, x, xt, &mut grad);
                let off = x.offset(t);
                let mut quad = 0.0;
                for (i, di) in d.iter().enumerate() {
                    for (j, dj) in d.iter().enumerate() {
                        quad += di * p[(off + i, off + j)] * dj;
                    }
                }
                dot(&grad, &d) + 0.5 * quad
            }
            SmoothTerm::Cauchy { blocks } => blocks[t].value_change(xt, u),
        }
    }

    /// Exact second derivative of `f` along a one-dimensional block, when `f`
    /// is quadratic in that block.
    pub fn block_curvature(&self, t: usize, dims: &[usize]) -> Option<f64> {
        if dims[t] != 1 {
            return None;
        }
        match self {
            SmoothTerm::Zero => Some(0.0),
            SmoothTerm::SeparableQuadratic { blocks } => Some(blocks[t].p[(0, 0)]),
            SmoothTerm::DenseQuadratic { p, .. } => {
                let off: usize = dims[..t].iter().sum();
                Some(p[(off, off)])
            }
            SmoothTerm::Cauchy { .. } => None,
        }
    }

    /// Cross-block constants `L_{>t}`, `t = 1..B-1`, when computable.
    pub fn cross_lipschitz(&self, dims: &[usize]) -> Option<Vec<f64>> {
        let nblocks = dims.len();
        match self {
            SmoothTerm::Zero | SmoothTerm::SeparableQuadratic { .. } | SmoothTerm::Cauchy { .. } => {
                Some(vec![0.0; nblocks.saturating_sub(1)])
            }
            SmoothTerm::DenseQuadratic { p, .. } => {
                let n: usize = dims.iter().sum();
                let mut off = 0;
                let mut out = Vec::with_capacity(nblocks.saturating_sub(1));
                for &d in &dims[..nblocks.saturating_sub(1)] {
                    let tail = off + d;
                    let sub = p.view((off, tail), (d, n - tail)).clone_owned();
                    out.push(spectral_norm(&sub));
                    off = tail;
                }
                Some(out)
            }
        }
    }

    /// Upper bound on `sup ||grad f||` over a box. Exact for quadratics when
    /// `n <= 20` (the maximum of a convex function over a box sits at a corner).
    pub fn gradient_norm_sup(&self, lo: &[f64], hi: &[f64], dims: &[usize]) -> Option<f64> {
        let n = lo.len();
        let affine_sup = |p: &DMatrix<f64>, r: &[f64]| -> f64 {
            if n <= 20 {
                let mut best = 0.0f64;
                let mut corner = vec![0.0; n];
                for mask in 0u32..(1u32 << n) {
                    for (j, c) in corner.iter_mut().enumerate() {
                        *c = if mask >> j & 1 == 1 { hi[j] } else { lo[j] };
                    }
                    let mut g = r.to_vec();
                    gemv_acc(p, &corner, &mut g);
                    best = best.max(norm(&g));
                }
                best
            } else {
                let radius = lo
                    .iter()
                    .zip(hi)
                    .map(|(a, b)| a.abs().max(b.abs()).powi(2))
                    .sum::<f64>()
                    .sqrt();
                spectral_norm(p) * radius + norm(r)
            }
        };
        match self {
            SmoothTerm::Zero => Some(0.0),
            SmoothTerm::DenseQuadratic { p, r } => Some(affine_sup(p, r)),
            SmoothTerm::SeparableQuadratic { blocks } => {
                // Build the block-diagonal operator and reuse the affine bound.
                let mut p = DMatrix::zeros(n, n);
                let mut r = vec![0.0; n];
                let mut off = 0;
                for (blk, &d) in blocks.iter().zip(dims) {
                    p.view_mut((off, off), (d, d)).copy_from(&blk.p);
                    r[off..off + d].copy_from_slice(&blk.r);
                    off += d;
                }
                Some(affine_sup(&p, &r))
            }
            // |d/ds (a^2/2) log(1 + (s/a)^2)| <= a/2
            SmoothTerm::Cauchy { blocks } => Some(
                blocks
                    .iter()
                    .map(|b| (0.5 * b.alpha * norm(&b.z)).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            ),
        }
    }
}

fn all_finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
    it.all(|v| v.is_finite())
}

fn is_symmetric(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (p[(i, j)], p[(j, i)]);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return false;
            }
        }
    }
    true
}
