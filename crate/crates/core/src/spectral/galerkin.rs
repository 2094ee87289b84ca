//! Legendre–Galerkin eigensolver for `-y'''' - λy''` under any of the three
//! boundary-condition families.
//!
//! The trial space is the null space of the four boundary functionals inside
//! the span of the orthonormal Legendre polynomials of degree `≤ N`, so the
//! mass matrix is the identity and the stiffness matrix
//! `S_ij = <p_i'', p_j''> - λ <p_i', p_j'>` gives `S c = -σ c`.
//! Low modes are computed on small bases (the conditioning of `S` grows like
//! `N^8`), then polished by inverse iteration and a Rayleigh quotient.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::legendre::{physical_table, LegendreSeries};
use super::{BoundaryCondition, OperatorParams};
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Agreement required between two consecutive basis sizes, relative to the
/// bending energy `<y'', y''>` (the larger of the two cancelling terms in `σ`).
const REFINEMENT_TOL: f64 = 1e-9;

pub(crate) struct GalerkinPair {
    pub sigma: f64,
    /// `<y'', y''>` of the normalized mode.
    pub bending: f64,
    pub series: LegendreSeries,
}

/// Basis degree used to resolve modes up to index `top` (1-based).
fn degree_for(top: usize) -> usize {
    (1.6 * top as f64).ceil() as usize + 24
}

pub(crate) fn eigenpairs(
    params: OperatorParams,
    bc: BoundaryCondition,
    count: usize,
) -> Result<Vec<GalerkinPair>> {
    let mut out: Vec<GalerkinPair> = Vec::with_capacity(count);
    let mut hi = count.min(8);
    while out.len() < count {
        let lo = out.len();
        let mut degree = degree_for(hi);
        let mut accepted = None;
        for _attempt in 0..4 {
            let coarse = solve(params, bc, hi, degree)?;
            let fine = solve(params, bc, hi, degree + 12)?;
            let converged = (lo..hi).all(|j| {
                let a = coarse[j].sigma;
                let b = fine[j].sigma;
                let scale = fine[j].bending.max(b.abs()).max(1.0);
                (a - b).abs() <= REFINEMENT_TOL * scale
            });
            if converged {
                accepted = Some(fine);
                break;
            }
            degree = degree * 3 / 2;
        }
        let Some(fine) = accepted else {
            return Err(Error::ConvergenceFailure(format!(
                "modes {}..{} did not stabilize under basis refinement (last degree {degree})",
                lo + 1,
                hi
            )));
        };
        out.extend(fine.into_iter().skip(lo).take(hi - lo));
        hi = count.min(2 * hi);
    }
    Ok(out)
}

/// Boundary functionals `(derivative order, at right end)` for each family.
fn constraints(bc: BoundaryCondition) -> [(usize, bool); 4] {
    match bc {
        BoundaryCondition::Clamped => [(0, false), (0, true), (1, false), (1, true)],
        BoundaryCondition::Hinged => [(0, false), (0, true), (2, false), (2, true)],
        BoundaryCondition::NeumannCH => [(1, false), (1, true), (3, false), (3, true)],
    }
}

fn null_space(params: OperatorParams, bc: BoundaryCondition, degree: usize) -> DMatrix<f64> {
    let dim = degree + 1;
    let left = physical_table(degree, params.length, 0.0);
    let right = physical_table(degree, params.length, params.length);
    // [C^T | I]: the full orthogonal factor spans R^dim with range(C^T) first.
    let mut aug = DMatrix::<f64>::zeros(dim, dim + 4);
    for (r, &(m, at_right)) in constraints(bc).iter().enumerate() {
        let row = if at_right { &right[m] } else { &left[m] };
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for k in 0..dim {
            aug[(k, r)] = row[k] / norm;
        }
    }
    for k in 0..dim {
        aug[(k, 4 + k)] = 1.0;
    }
    let q = aug.qr().q();
    q.columns(4, dim - 4).into_owned()
}

/// Bending `<p_i'', p_j''>` and stretching `<p_i', p_j'>` Gram matrices.
fn stiffness(params: OperatorParams, degree: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let dim = degree + 1;
    let (xr, wr) = gauss_legendre(degree + 3);
    let half = 0.5 * params.length;
    let mut bend = DMatrix::<f64>::zeros(dim, dim);
    let mut stretch = DMatrix::<f64>::zeros(dim, dim);
    for (t, w) in xr.iter().zip(&wr) {
        let x = half * (t + 1.0);
        let w = half * w;
        let tab = physical_table(degree, params.length, x);
        let d1 = DVector::from_column_slice(&tab[1]);
        let d2 = DVector::from_column_slice(&tab[2]);
        bend.ger(w, &d2, &d2, 1.0);
        stretch.ger(w, &d1, &d1, 1.0);
    }
    (
        0.5 * (&bend + bend.transpose()),
        0.5 * (&stretch + stretch.transpose()),
    )
}

fn solve(
    params: OperatorParams,
    bc: BoundaryCondition,
    count: usize,
    degree: usize,
) -> Result<Vec<GalerkinPair>> {
    let z = null_space(params, bc, degree);
    let (bend, stretch) = stiffness(params, degree);
    let bend = z.transpose() * &bend * &z;
    let bend = 0.5 * (&bend + bend.transpose());
    let reduced = &bend - z.transpose() * &stretch * &z * params.lambda;
    let reduced = 0.5 * (&reduced + reduced.transpose());
    let dim = reduced.nrows();
    if count > dim {
        return Err(Error::ConvergenceFailure(format!(
            "requested {count} modes from a basis of dimension {dim}"
        )));
    }
    let eig = SymmetricEigen::new(reduced.clone());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut vectors: Vec<DVector<f64>> = Vec::with_capacity(count);
    let mut mus: Vec<f64> = Vec::with_capacity(count);
    for &idx in order.iter().take(count) {
        let mut mu = eig.eigenvalues[idx];
        let mut v = eig.eigenvectors.column(idx).into_owned();
        for _ in 0..2 {
            let shift = mu + 1e-10 * mu.abs().max(1.0);
            let mut shifted = reduced.clone();
            for i in 0..dim {
                shifted[(i, i)] -= shift;
            }
            let Some(x) = shifted.lu().solve(&v) else {
                break;
            };
            v = x;
            // Keep clustered eigenvectors orthogonal to the ones already taken.
            for (u, &m) in vectors.iter().zip(&mus) {
                if (m - mu).abs() <= 1e-6 * mu.abs().max(1.0) {
                    let p = u.dot(&v);
                    v -= p * u;
                }
            }
            let nv = v.norm();
            if !nv.is_finite() || nv == 0.0 {
                return Err(Error::ConvergenceFailure(
                    "inverse iteration broke down".into(),
                ));
            }
            v /= nv;
            mu = v.dot(&(&reduced * &v));
        }
        vectors.push(v);
        mus.push(mu);
    }

    let mut pairs = Vec::with_capacity(count);
    for (v, mu) in vectors.into_iter().zip(mus) {
        let bending = v.dot(&(&bend * &v));
        let c = &z * v;
        let mut series = LegendreSeries {
            length: params.length,
            coeffs: c.iter().copied().collect(),
        };
        let norm = series.coeffs.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sign = sign_convention(&series);
        for c in series.coeffs.iter_mut() {
            *c *= sign / norm;
        }
        pairs.push(GalerkinPair {
            sigma: -mu,
            bending,
            series,
        });
    }
    Ok(pairs)
}

/// Sign making the first non-vanishing derivative at `x = 0` positive.
pub(crate) fn sign_convention(series: &LegendreSeries) -> f64 {
    let tab = physical_table(series.degree(), series.length, 0.0);
    let scale: f64 = series
        .coeffs
        .iter()
        .map(|c| c.abs())
        .sum::<f64>()
        .max(1e-300);
    for row in tab.iter().take(4) {
        let v: f64 = row.iter().zip(&series.coeffs).map(|(p, c)| p * c).sum();
        let row_scale: f64 = row.iter().map(|p| p.abs()).fold(0.0, f64::max) * scale;
        if v.abs() > 1e-8 * row_scale {
            return v.signum();
        }
    }
    1.0
}
