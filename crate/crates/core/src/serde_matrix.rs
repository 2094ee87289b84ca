//! Row-major `[[...], ...]` serialization for dense matrices.

use nalgebra::DMatrix;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    #[derive(Serialize)]
    struct Shaped<'a> {
        rows: usize,
        cols: usize,
        data: &'a [Vec<f64>],
    }
    Shaped {
        rows: m.nrows(),
        cols: m.ncols(),
        data: &rows,
    }
    .serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    #[derive(Deserialize)]
    struct Shaped {
        rows: usize,
        cols: usize,
        data: Vec<Vec<f64>>,
    }
    let raw = Shaped::deserialize(d)?;
    if raw.data.len() != raw.rows || raw.data.iter().any(|r| r.len() != raw.cols) {
        return Err(de::Error::custom(format!(
            "matrix data does not match shape {}x{}",
            raw.rows, raw.cols
        )));
    }
    Ok(DMatrix::from_fn(raw.rows, raw.cols, |i, j| raw.data[i][j]))
}
