//! Orthonormal Legendre polynomials on `[0, L]` and their derivatives.

use serde::{Deserialize, Serialize};

/// Highest derivative order tabulated.
pub const MAX_DERIV: usize = 4;

/// `P_k^{(m)}(t)` for `k = 0..=degree`, `m = 0..=MAX_DERIV`, on the reference
/// interval `t ∈ [-1, 1]`.
pub fn reference_table(degree: usize, t: f64) -> [Vec<f64>; MAX_DERIV + 1] {
    let mut table: [Vec<f64>; MAX_DERIV + 1] = Default::default();
    for m in 0..=MAX_DERIV {
        let mut row = vec![0.0; degree + 1];
        if m == 0 {
            row[0] = 1.0;
        }
        if degree >= 1 {
            row[1] = match m {
                0 => t,
                1 => 1.0,
                _ => 0.0,
            };
        }
        for k in 1..degree {
            let kf = k as f64;
            let lower = if m > 0 { table[m - 1][k] } else { 0.0 };
            row[k + 1] =
                ((2.0 * kf + 1.0) * (t * row[k] + m as f64 * lower) - kf * row[k - 1]) / (kf + 1.0);
        }
        table[m] = row;
    }
    table
}

/// Values of the orthonormal basis `p_k(x) = sqrt((2k+1)/L) P_k(2x/L - 1)`
/// and its first four derivatives at `x`.
pub fn physical_table(degree: usize, length: f64, x: f64) -> [Vec<f64>; MAX_DERIV + 1] {
    let t = 2.0 * x / length - 1.0;
    let mut table = reference_table(degree, t);
    let scale = 2.0 / length;
    for (m, row) in table.iter_mut().enumerate() {
        let chain = scale.powi(m as i32);
        for (k, v) in row.iter_mut().enumerate() {
            *v *= chain * ((2 * k + 1) as f64 / length).sqrt();
        }
    }
    table
}

/// A function expanded in the orthonormal Legendre basis of `[0, L]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegendreSeries {
    pub length: f64,
    pub coeffs: Vec<f64>,
}

impl LegendreSeries {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64, derivative: usize) -> f64 {
        assert!(
            derivative <= MAX_DERIV,
            "derivative order {derivative} not tabulated"
        );
        let table = physical_table(self.degree(), self.length, x);
        table[derivative]
            .iter()
            .zip(&self.coeffs)
            .map(|(p, c)| p * c)
            .sum()
    }
}
