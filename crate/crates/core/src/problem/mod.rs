//! Block-structured problem instances
//!
//! ```text
//! minimize  f(x) + sum_t h_t(x_t)   subject to  sum_t A_t x_t = b
//! ```
//!
//! where every `h_t` is the indicator of a compact box.

mod certificate;
mod constants;
pub(crate) mod matrix_serde;
mod smooth;

pub(crate) use certificate::inclusion_scale;
pub use certificate::{check_stationarity, inclusion_gap, relative_scales, StationarityMode, StationaryCertificate};
pub use constants::{compute_theory_constants, MultiplierBound, SlaterPoint, TheoryConstants};
pub use smooth::{CauchyBlock, QuadraticBlock, SmoothTerm};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::ProblemError;
use crate::linalg::{dot, gemv_acc, gemv_t_acc, BlockVector};

/// Indicator of the box `{u : lo <= u <= hi}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxTerm {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Prox-friendly convex term `h_t`. Boxes are the only kind shipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProxTerm {
    Box(BoxTerm),
}

impl ProxTerm {
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        ProxTerm::Box(BoxTerm { lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            ProxTerm::Box(b) => b.lo.len(),
        }
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        match self {
            ProxTerm::Box(b) => (&b.lo, &b.hi),
        }
    }

    /// Prox of `step * h`; for an indicator this is projection and `step`
    /// plays no role.
    pub fn prox(&self, v: &[f64], _step: f64) -> Vec<f64> {
        let mut out = v.to_vec();
        self.prox_in_place(&mut out);
        out
    }

    pub fn prox_in_place(&self, v: &mut [f64]) {
        let (lo, hi) = self.bounds();
        v.iter_mut()
            .zip(lo.iter().zip(hi))
            .for_each(|(x, (l, h))| *x = x.clamp(*l, *h));
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let (lo, hi) = self.bounds();
        x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Lipschitz constant of `h` restricted to its domain.
    pub fn lipschitz_on_domain(&self) -> f64 {
        0.0
    }

    pub fn eps_subdiff_gap(&self, g: &[f64], x: &[f64]) -> Result<f64, ProblemError> {
        let (lo, hi) = self.bounds();
        eps_subdiff_gap(g, x, lo, hi)
    }
}

/// `prox_box` for a single box; identical for every positive step.
pub fn prox_box(term: &ProxTerm, v: &[f64], step: f64) -> Vec<f64> {
    term.prox(v, step)
}

/// `sup_{z in [lo, hi]} <g, z - x>`: the smallest `eps` with
/// `g` in the `eps`-subdifferential of the box indicator at `x`.
pub fn eps_subdiff_gap(g: &[f64], x: &[f64], lo: &[f64], hi: &[f64]) -> Result<f64, ProblemError> {
    if g.len() != x.len() || lo.len() != x.len() || hi.len() != x.len() {
        return Err(ProblemError::Dimension("gap operands differ in length".into()));
    }
    let mut gap = 0.0;
    for (j, (((gj, xj), l), h)) in g.iter().zip(x).zip(lo).zip(hi).enumerate() {
        if !(l <= xj && xj <= h) {
            return Err(ProblemError::OutsideDomain {
                block: 0,
                index: j,
                value: *xj,
                lo: *l,
                hi: *h,
            });
        }
        if *gj > 0.0 {
            gap += gj * (h - xj);
        } else if *gj < 0.0 {
            gap += gj * (l - xj);
        }
    }
    Ok(gap)
}

/// A problem instance with `B` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockProblem {
    dims: Vec<usize>,
    constraint_blocks: Vec<DMatrix<f64>>,
    rhs: Vec<f64>,
    terms: Vec<ProxTerm>,
    smooth: SmoothTerm,
    weak_convexity: Option<Vec<f64>>,
    cross_lipschitz: Option<Vec<f64>>,
    block_lipschitz: Option<Vec<f64>>,
}

impl BlockProblem {
    pub fn new(
        constraint_blocks: Vec<DMatrix<f64>>,
        rhs: Vec<f64>,
        terms: Vec<ProxTerm>,
        smooth: SmoothTerm,
    ) -> Result<Self, ProblemError> {
        let dims: Vec<usize> = constraint_blocks.iter().map(|a| a.ncols()).collect();
        let problem = Self {
            dims,
            constraint_blocks,
            rhs,
            terms,
            smooth,
            weak_convexity: None,
            cross_lipschitz: None,
            block_lipschitz: None,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_weak_convexity(mut self, m: Vec<f64>) -> Result<Self, ProblemError> {
        if m.len() != self.num_blocks() || m.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ProblemError::Invalid("weak-convexity constants must be B finite nonnegative values".into()));
        }
        self.weak_convexity = Some(m);
        Ok(self)
    }

    pub fn with_cross_lipschitz(mut self, l: Vec<f64>) -> Result<Self, ProblemError> {
        if l.len() != self.num_blocks().saturating_sub(1) || l.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ProblemError::Invalid("cross-block constants must be B-1 finite nonnegative values".into()));
        }
        self.cross_lipschitz = Some(l);
        Ok(self)
    }

    pub fn with_block_lipschitz(mut self, l: Vec<f64>) -> Result<Self, ProblemError> {
        if l.len() != self.num_blocks() || l.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ProblemError::Invalid("block Lipschitz constants must be B finite nonnegative values".into()));
        }
        self.block_lipschitz = Some(l);
        Ok(self)
    }

    fn validate(&self) -> Result<(), ProblemError> {
        let nb = self.constraint_blocks.len();
        if nb == 0 {
            return Err(ProblemError::Invalid("at least one block is required".into()));
        }
        let l = self.rhs.len();
        if l == 0 {
            return Err(ProblemError::Invalid("at least one constraint row is required".into()));
        }
        if self.terms.len() != nb {
            return Err(ProblemError::Invalid(format!("{} boxes for {nb} blocks", self.terms.len())));
        }
        for (t, a) in self.constraint_blocks.iter().enumerate() {
            if a.nrows() != l || a.ncols() == 0 {
                return Err(ProblemError::Dimension(format!(
                    "A_{t} is {}x{}, expected {l} rows and a positive column count",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(ProblemError::NonFinite(format!("A_{t}")));
            }
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::NonFinite("b".into()));
        }
        for (t, term) in self.terms.iter().enumerate() {
            let (lo, hi) = term.bounds();
            if lo.len() != self.dims[t] || hi.len() != self.dims[t] {
                return Err(ProblemError::Dimension(format!("box {t} does not match block dimension")));
            }
            for (l, h) in lo.iter().zip(hi) {
                if !l.is_finite() || !h.is_finite() {
                    return Err(ProblemError::Invalid(format!("box {t} is unbounded")));
                }
                if l > h {
                    return Err(ProblemError::Invalid(format!("box {t} has lo > hi")));
                }
            }
        }
        if self.constraint_blocks.iter().all(|a| a.iter().all(|v| *v == 0.0)) {
            return Err(ProblemError::Invalid("constraint operator is zero".into()));
        }
        self.smooth.validate(&self.dims)
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn constraint_block(&self, t: usize) -> &DMatrix<f64> {
        &self.constraint_blocks[t]
    }

    pub fn constraint_blocks(&self) -> &[DMatrix<f64>] {
        &self.constraint_blocks
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn term(&self, t: usize) -> &ProxTerm {
        &self.terms[t]
    }

    pub fn terms(&self) -> &[ProxTerm] {
        &self.terms
    }

    pub fn smooth(&self) -> &SmoothTerm {
        &self.smooth
    }

    pub fn weak_convexity(&self) -> Option<&[f64]> {
        self.weak_convexity.as_deref()
    }

    pub fn cross_lipschitz(&self) -> Option<&[f64]> {
        self.cross_lipschitz.as_deref()
    }

    pub fn block_lipschitz(&self) -> Option<&[f64]> {
        self.block_lipschitz.as_deref()
    }

    /// The stacked `l x n` constraint matrix.
    pub fn stacked_constraint(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.num_rows(), self.dim());
        let mut off = 0;
        for blk in &self.constraint_blocks {
            a.view_mut((0, off), blk.shape()).copy_from(blk);
            off += blk.ncols();
        }
        a
    }

    pub fn zeros(&self) -> BlockVector {
        BlockVector::zeros(&self.dims)
    }

    fn check_shape(&self, y: &BlockVector) -> Result<(), ProblemError> {
        if y.dims() != self.dims {
            return Err(ProblemError::Dimension(format!(
                "point has block dims {:?}, problem has {:?}",
                y.dims(),
                self.dims
            )));
        }
        Ok(())
    }

    fn check_multiplier(&self, p: &[f64]) -> Result<(), ProblemError> {
        if p.len() != self.num_rows() {
            return Err(ProblemError::Dimension(format!(
                "multiplier has {} entries, expected {}",
                p.len(),
                self.num_rows()
            )));
        }
        Ok(())
    }

    /// Ensures `y` lies in every box.
    pub fn check_domain(&self, y: &BlockVector) -> Result<(), ProblemError> {
        self.check_shape(y)?;
        for (t, term) in self.terms.iter().enumerate() {
            let (lo, hi) = term.bounds();
            for (j, v) in y.block(t).iter().enumerate() {
                if !(lo[j] <= *v && *v <= hi[j]) {
                    return Err(ProblemError::OutsideDomain {
                        block: t,
                        index: j,
                        value: *v,
                        lo: lo[j],
                        hi: hi[j],
                    });
                }
            }
        }
        Ok(())
    }

    /// `sum_t A_t y_t`
    pub fn apply_constraint(&self, y: &BlockVector) -> Vec<f64> {
        let mut out = vec![0.0; self.num_rows()];
        for (t, a) in self.constraint_blocks.iter().enumerate() {
            gemv_acc(a, y.block(t), &mut out);
        }
        out
    }

    /// `A y - b`
    pub fn residual(&self, y: &BlockVector) -> Vec<f64> {
        let mut r = self.apply_constraint(y);
        r.iter_mut().zip(&self.rhs).for_each(|(ri, bi)| *ri -= bi);
        r
    }

    pub fn feasibility(&self, y: &BlockVector) -> f64 {
        crate::linalg::norm(&self.residual(y))
    }

    /// `A^* w`, block by block.
    pub fn apply_adjoint(&self, w: &[f64]) -> BlockVector {
        let mut out = self.zeros();
        for (t, a) in self.constraint_blocks.iter().enumerate() {
            gemv_t_acc(a, w, out.block_mut(t));
        }
        out
    }

    /// Objective `f + h`; `h` vanishes on the domain.
    pub fn objective(&self, y: &BlockVector) -> Result<f64, ProblemError> {
        self.check_domain(y)?;
        Ok(self.smooth.value(y))
    }

    /// Augmented Lagrangian `phi(y) + <p, Ay - b> + (c/2) ||Ay - b||^2`.
    pub fn eval_al(&self, y: &BlockVector, p: &[f64], c: f64) -> Result<f64, ProblemError> {
        self.check_domain(y)?;
        self.check_multiplier(p)?;
        if !(c > 0.0) {
            return Err(ProblemError::Penalty(c));
        }
        Ok(self.smooth_al_value(y, p, c))
    }

    fn smooth_al_value(&self, y: &BlockVector, p: &[f64], c: f64) -> f64 {
        let r = self.residual(y);
        self.smooth.value(y) + dot(p, &r) + 0.5 * c * dot(&r, &r)
    }

    /// Smooth part of the augmented Lagrangian and its gradient with respect
    /// to block `t`: `grad_t f(y) + A_t^* (p + c (Ay - b))`.
    pub fn eval_smooth_al_grad(
        &self,
        t: usize,
        y: &BlockVector,
        p: &[f64],
        c: f64,
    ) -> Result<(f64, Vec<f64>), ProblemError> {
        if t >= self.num_blocks() {
            return Err(ProblemError::BlockIndex(t, self.num_blocks()));
        }
        self.check_domain(y)?;
        self.check_multiplier(p)?;
        if !(c > 0.0) {
            return Err(ProblemError::Penalty(c));
        }
        let r = self.residual(y);
        let value = self.smooth.value(y) + dot(p, &r) + 0.5 * c * dot(&r, &r);
        let w: Vec<f64> = p.iter().zip(&r).map(|(pi, ri)| pi + c * ri).collect();
        let mut grad = self.smooth.block_gradient(t, y);
        gemv_t_acc(&self.constraint_blocks[t], &w, &mut grad);
        Ok((value, grad))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::linalg::norm;
    use proptest::prelude::*;

    /// B=1, n=l=1, f=0, h = indicator of [-1, 1], A=[2], b=0.
    pub(crate) fn scalar_problem() -> BlockProblem {
        BlockProblem::new(
            vec![DMatrix::from_element(1, 1, 2.0)],
            vec![0.0],
            vec![ProxTerm::boxed(vec![-1.0], vec![1.0])],
            SmoothTerm::Zero,
        )
        .unwrap()
    }

    pub(crate) fn point(v: &[f64]) -> BlockVector {
        BlockVector::from_blocks(vec![v.to_vec()]).unwrap()
    }

    #[test]
    fn al_hand_values() {
        let pb = scalar_problem();
        assert_eq!(pb.eval_al(&point(&[0.5]), &[3.0], 4.0).unwrap(), 5.0);
        assert_eq!(pb.eval_al(&point(&[0.5]), &[0.0], 4.0).unwrap(), 2.0);
    }

    #[test]
    fn al_on_feasible_point_is_objective() {
        let pb = scalar_problem();
        let y = point(&[0.0]);
        for (p, c) in [(0.0, 1.0), (-7.0, 100.0), (3.5, 1e-3)] {
            assert_eq!(pb.eval_al(&y, &[p], c).unwrap(), 0.0);
        }
    }

    #[test]
    fn al_rejects_outside_domain_and_bad_penalty() {
        let pb = scalar_problem();
        assert!(matches!(
            pb.eval_al(&point(&[1.5]), &[0.0], 1.0),
            Err(ProblemError::OutsideDomain { .. })
        ));
        assert!(matches!(pb.eval_al(&point(&[0.0]), &[0.0], 0.0), Err(ProblemError::Penalty(_))));
        assert!(matches!(
            pb.eval_smooth_al_grad(1, &point(&[0.0]), &[0.0], 1.0),
            Err(ProblemError::BlockIndex(1, 1))
        ));
    }

    #[test]
    fn smooth_al_gradient_hand_value() {
        let pb = scalar_problem();
        let (v, g) = pb.eval_smooth_al_grad(0, &point(&[0.5]), &[3.0], 4.0).unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(g, vec![14.0]);
        let (v, g) = pb.eval_smooth_al_grad(0, &point(&[0.0]), &[0.0], 9.0).unwrap();
        assert_eq!((v, g), (0.0, vec![0.0]));
    }

    #[test]
    fn prox_box_examples() {
        let term = ProxTerm::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]);
        assert_eq!(prox_box(&term, &[0.3, -0.2], 1.0), vec![0.3, -0.2]);
        assert_eq!(prox_box(&term, &[5.0, -3.0], 1.0), vec![1.0, -1.0]);
        assert_eq!(prox_box(&term, &[5.0, 0.1], 0.1), prox_box(&term, &[5.0, 0.1], 100.0));
        assert_eq!(term.lipschitz_on_domain(), 0.0);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(eps_subdiff_gap(&[0.0], &[0.5], &[-1.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(eps_subdiff_gap(&[1.0], &[0.5], &[-1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(eps_subdiff_gap(&[-2.0], &[-1.0], &[-1.0], &[1.0]).unwrap(), 0.0);
        assert!(eps_subdiff_gap(&[1.0], &[2.0], &[-1.0], &[1.0]).is_err());
    }

    #[test]
    fn rejects_malformed_instances() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let unbounded = BlockProblem::new(
            vec![a.clone()],
            vec![0.0],
            vec![ProxTerm::boxed(vec![f64::NEG_INFINITY], vec![1.0])],
            SmoothTerm::Zero,
        );
        assert!(unbounded.is_err());
        let inverted = BlockProblem::new(
            vec![a.clone()],
            vec![0.0],
            vec![ProxTerm::boxed(vec![1.0], vec![-1.0])],
            SmoothTerm::Zero,
        );
        assert!(inverted.is_err());
        let zero_a = BlockProblem::new(
            vec![DMatrix::zeros(1, 1)],
            vec![0.0],
            vec![ProxTerm::boxed(vec![-1.0], vec![1.0])],
            SmoothTerm::Zero,
        );
        assert!(zero_a.is_err());
    }

    fn random_quadratic_problem() -> impl Strategy<Value = (BlockProblem, BlockVector, Vec<f64>, f64)> {
        (
            proptest::collection::vec(-2.0f64..2.0, 2 * 3 + 2 * 2),
            proptest::collection::vec(-1.0f64..1.0, 9 + 4 + 3 + 2),
            proptest::collection::vec(-0.9f64..0.9, 5),
            proptest::collection::vec(-3.0f64..3.0, 2),
            0.1f64..50.0,
        )
            .prop_map(|(a, pq, y, p, c)| {
                let a1 = DMatrix::from_row_slice(2, 3, &a[..6]);
                let a2 = DMatrix::from_row_slice(2, 2, &a[6..10]);
                let m1 = DMatrix::from_row_slice(3, 3, &pq[..9]);
                let m2 = DMatrix::from_row_slice(2, 2, &pq[9..13]);
                let smooth = SmoothTerm::SeparableQuadratic {
                    blocks: vec![
                        QuadraticBlock {
                            p: (&m1 + m1.transpose()) * 0.5,
                            r: pq[13..16].to_vec(),
                        },
                        QuadraticBlock {
                            p: (&m2 + m2.transpose()) * 0.5,
                            r: pq[16..18].to_vec(),
                        },
                    ],
                };
                let pb = BlockProblem::new(
                    vec![a1, a2],
                    vec![0.3, -0.4],
                    vec![
                        ProxTerm::boxed(vec![-1.0; 3], vec![1.0; 3]),
                        ProxTerm::boxed(vec![-1.0; 2], vec![1.0; 2]),
                    ],
                    smooth,
                )
                .unwrap();
                let yv = BlockVector::from_flat(y, &[3, 2]).unwrap();
                (pb, yv, p, c)
            })
    }

    proptest! {
        #[test]
        fn al_decomposes_term_by_term((pb, y, p, c) in random_quadratic_problem()) {
            let al = pb.eval_al(&y, &p, c).unwrap();
            let r = pb.residual(&y);
            let f = pb.smooth().value(&y);
            let expected = f + dot(&p, &r) + 0.5 * c * dot(&r, &r);
            prop_assert!((al - expected).abs() <= 1e-12 * (1.0 + al.abs()));
        }

        #[test]
        fn smooth_al_gradient_matches_finite_differences((pb, y, p, c) in random_quadratic_problem()) {
            for t in 0..2 {
                let (_, g) = pb.eval_smooth_al_grad(t, &y, &p, c).unwrap();
                let h = 1e-6 * (1.0 + y.norm());
                let mut fd = vec![0.0; g.len()];
                for (j, fdj) in fd.iter_mut().enumerate() {
                    let mut yp = y.clone();
                    yp.block_mut(t)[j] += h;
                    let mut ym = y.clone();
                    ym.block_mut(t)[j] -= h;
                    *fdj = (pb.smooth_al_value(&yp, &p, c) - pb.smooth_al_value(&ym, &p, c)) / (2.0 * h);
                }
                let err: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
                prop_assert!(norm(&err) <= 1e-6 * (1.0 + norm(&g)), "t={} g={:?} fd={:?}", t, g, fd);
            }
        }

        #[test]
        fn zero_gap_iff_normal_cone(
            g in proptest::collection::vec(-2.0f64..2.0, 4),
            pick in proptest::collection::vec(0u8..3, 4),
        ) {
            let lo = [-1.0; 4];
            let hi = [1.0; 4];
            let x: Vec<f64> = pick.iter().map(|k| match k { 0 => -1.0, 1 => 0.25, _ => 1.0 }).collect();
            let gap = eps_subdiff_gap(&g, &x, &lo, &hi).unwrap();
            // g in the normal cone of the box at x
            let in_cone = g.iter().zip(&x).all(|(gj, xj)| {
                if *xj == 1.0 { *gj >= 0.0 } else if *xj == -1.0 { *gj <= 0.0 } else { *gj == 0.0 }
            });
            prop_assert_eq!(gap == 0.0, in_cone);
            prop_assert!(gap >= 0.0);
        }
    }
}
