//! Block-partitioned vectors and the handful of dense kernels the solvers need.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::ProblemError;

/// A point of `R^n` split into `B` consecutive blocks.
///
/// Storage is a single flat buffer, so every arithmetic operation agrees with
/// the flat-vector one by construction; the offsets only control slicing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct BlockVector {
    data: Vec<f64>,
    offsets: Vec<usize>,
}

impl BlockVector {
    pub fn zeros(dims: &[usize]) -> Self {
        let offsets = offsets_of(dims);
        let n = *offsets.last().unwrap_or(&0);
        Self {
            data: vec![0.0; n],
            offsets,
        }
    }

    pub fn from_flat(data: Vec<f64>, dims: &[usize]) -> Result<Self, ProblemError> {
        let offsets = offsets_of(dims);
        let n = *offsets.last().unwrap_or(&0);
        if data.len() != n {
            return Err(ProblemError::Dimension(format!(
                "flat vector has {} entries, block dims sum to {n}",
                data.len()
            )));
        }
        Ok(Self { data, offsets })
    }

    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Result<Self, ProblemError> {
        if blocks.iter().any(|b| b.is_empty()) {
            return Err(ProblemError::Dimension("empty block".into()));
        }
        let dims: Vec<usize> = blocks.iter().map(Vec::len).collect();
        let data = blocks.into_iter().flatten().collect();
        Self::from_flat(data, &dims)
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn block_dim(&self, t: usize) -> usize {
        self.offsets[t + 1] - self.offsets[t]
    }

    pub fn offset(&self, t: usize) -> usize {
        self.offsets[t]
    }

    pub fn block(&self, t: usize) -> &[f64] {
        &self.data[self.offsets[t]..self.offsets[t + 1]]
    }

    pub fn block_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[self.offsets[t]..self.offsets[t + 1]]
    }

    pub fn set_block(&mut self, t: usize, values: &[f64]) {
        self.block_mut(t).copy_from_slice(values);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.offsets.windows(2).map(|w| &self.data[w[0]..w[1]])
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.offsets == other.offsets
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        axpy(&mut self.data, scale, &other.data);
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sub(&self, other: &Self) -> Self {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self {
            data,
            offsets: self.offsets.clone(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self {
            data,
            offsets: self.offsets.clone(),
        }
    }

    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        self.offsets
            .windows(2)
            .map(|w| self.data[w[0]..w[1]].to_vec())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for BlockVector {
    type Error = ProblemError;

    fn try_from(blocks: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_blocks(blocks)
    }
}

impl From<BlockVector> for Vec<Vec<f64>> {
    fn from(v: BlockVector) -> Self {
        v.into_blocks()
    }
}

fn offsets_of(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len() + 1);
    offsets.push(0);
    let mut acc = 0;
    for d in dims {
        acc += d;
        offsets.push(acc);
    }
    offsets
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn axpy(y: &mut [f64], scale: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += scale * xi);
}

/// `out += m * x`
pub fn gemv_acc(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.ncols(), x.len());
    debug_assert_eq!(m.nrows(), out.len());
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (o, mij) in out.iter_mut().zip(m.column(j).iter()) {
            *o += mij * xj;
        }
    }
}

pub fn gemv(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    gemv_acc(m, x, &mut out);
    out
}

/// `out += m^T * y`
pub fn gemv_t_acc(m: &DMatrix<f64>, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.nrows(), y.len());
    debug_assert_eq!(m.ncols(), out.len());
    for (j, o) in out.iter_mut().enumerate() {
        *o += dot(m.column(j).as_slice(), y);
    }
}

pub fn gemv_t(m: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.ncols()];
    gemv_t_acc(m, y, &mut out);
    out
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Spectral norm by power iteration on `M^T M`.
///
/// Stops when the Rayleigh quotient changes by at most `1e-10` relative, or
/// after 10,000 iterations.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 || m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    // Deterministic, generic start vector; all-ones can be orthogonal to the
    // leading singular vector of structured matrices.
    let mut x: Vec<f64> = (0..cols).map(|j| 1.0 + 0.1 * ((j * 7 + 3) % 11) as f64).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut estimate = 0.0f64;
    for _ in 0..POWER_MAX_ITERS {
        let y = gemv(m, &x);
        let mut z = gemv_t(m, &y);
        let sq = norm(&z);
        if sq == 0.0 {
            return estimate.sqrt();
        }
        let next = dot(&y, &y);
        z.iter_mut().for_each(|v| *v /= sq);
        x = z;
        if (next - estimate).abs() <= POWER_TOL * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    // `estimate` is the Rayleigh quotient of M^T M at the last unit iterate.
    let y = gemv(m, &x);
    norm(&y).max(estimate.sqrt())
}

/// Smallest singular value above `1e-10 * ||M||`, from a dense SVD.
pub fn smallest_positive_singular_value(m: &DMatrix<f64>) -> Option<f64> {
    let svd = m.clone().svd(false, false);
    let sv = svd.singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 {
        return None;
    }
    sv.iter()
        .cloned()
        .filter(|s| *s > 1e-10 * largest)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.min(s))))
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn block_layout() {
        let v = BlockVector::from_blocks(vec![vec![1.0, 2.0], vec![3.0]]).unwrap();
        assert_eq!(v.num_blocks(), 2);
        assert_eq!(v.len(), 3);
        assert_eq!(v.dims(), vec![2, 1]);
        assert_eq!(v.block(1), &[3.0]);
        assert!(BlockVector::from_flat(vec![1.0], &[2]).is_err());
        assert!(BlockVector::from_blocks(vec![vec![]]).is_err());
    }

    #[test]
    fn spectral_norm_of_scalar() {
        let m = DMatrix::from_element(1, 1, 2.0);
        assert!((spectral_norm(&m) - 2.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 2)), 0.0);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let m = DMatrix::from_fn(6, 4, |i, j| ((i * 31 + j * 17) % 13) as f64 - 6.0);
        let svd = m.clone().svd(false, false);
        let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        assert!((spectral_norm(&m) - top).abs() <= 1e-8 * top);
    }

    #[test]
    fn smallest_positive_singular_value_skips_null_space() {
        // rank one
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let s = smallest_positive_singular_value(&m).unwrap();
        assert!((s - 5.0).abs() < 1e-12);
        assert!(smallest_positive_singular_value(&DMatrix::zeros(2, 2)).is_none());
    }

    #[test]
    fn kahan_recovers_small_increments() {
        let mut k = KahanSum::default();
        k.add(1e16);
        for _ in 0..1000 {
            k.add(1.0);
        }
        assert_eq!(k.value(), 1e16 + 1000.0);
    }

    proptest! {
        #[test]
        fn block_arithmetic_matches_flat(
            a in proptest::collection::vec(-1e3f64..1e3, 6),
            b in proptest::collection::vec(-1e3f64..1e3, 6),
            s in -10.0f64..10.0,
        ) {
            let dims = [1, 3, 2];
            let mut x = BlockVector::from_flat(a.clone(), &dims).unwrap();
            let y = BlockVector::from_flat(b.clone(), &dims).unwrap();
            prop_assert_eq!(x.dot(&y), dot(&a, &b));
            prop_assert_eq!(x.sub(&y).as_slice().to_vec(),
                a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>());
            x.axpy(s, &y);
            let flat: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + s * q).collect();
            prop_assert_eq!(x.as_slice(), flat.as_slice());
            let blocks: Vec<f64> = x.blocks().flatten().copied().collect();
            prop_assert_eq!(blocks, flat);
        }
    }
}
