//! Row-major `{rows, cols, data}` encoding for dense matrices.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
pub(crate) struct RowMajor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RowMajor {
    pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter());
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub(crate) fn into_matrix(self) -> Result<DMatrix<f64>, String> {
        match self.rows.checked_mul(self.cols) {
            Some(len) if len == self.data.len() => Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data)),
            _ => Err(format!(
                "matrix declares {}x{} but carries {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )),
        }
    }
}

pub(crate) fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    RowMajor::from_matrix(m).serialize(s)
}

pub(crate) fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    RowMajor::deserialize(d)?.into_matrix().map_err(D::Error::custom)
}

pub(crate) mod vec {
    use super::*;

    pub(crate) fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<RowMajor> = ms.iter().map(RowMajor::from_matrix).collect();
        rows.serialize(s)
    }

    pub(crate) fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Vec::<RowMajor>::deserialize(d)?
            .into_iter()
            .map(|r| r.into_matrix().map_err(D::Error::custom))
            .collect()
    }
}
