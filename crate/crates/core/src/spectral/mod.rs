//! Eigenpairs of the fourth-order operator `A y = -y'''' - λ y''` on `(0, L)`.
//!
//! Hinged and Neumann (Cahn–Hilliard) families have closed-form sine/cosine
//! modes. The clamped family is solved numerically by a Legendre–Galerkin
//! method whose modes are smooth polynomials, so fields, derivatives and inner
//! products can be evaluated anywhere without re-deriving formulas.

mod galerkin;
pub mod legendre;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::Quadrature;
pub use legendre::LegendreSeries;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// `y = y' = 0` at both ends.
    Clamped,
    /// `y = y'' = 0` at both ends.
    Hinged,
    /// `y' = y''' = 0` at both ends.
    #[serde(rename = "neumann_ch")]
    NeumannCH,
}

impl BoundaryCondition {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryCondition::Clamped => "clamped",
            BoundaryCondition::Hinged => "hinged",
            BoundaryCondition::NeumannCH => "neumann_ch",
        }
    }

    /// Derivative orders constrained at each endpoint.
    pub fn constrained_derivatives(self) -> [usize; 2] {
        match self {
            BoundaryCondition::Clamped => [0, 1],
            BoundaryCondition::Hinged => [0, 2],
            BoundaryCondition::NeumannCH => [1, 3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub lambda: f64,
    pub length: f64,
}

impl OperatorParams {
    /// `lambda = 0` is accepted as the pure bilaplacian (beam) limit.
    pub fn new(lambda: f64, length: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::invalid(
                "lambda",
                format!("must be >= 0, got {lambda}"),
            ));
        }
        if !length.is_finite() || length <= 0.0 {
            return Err(Error::invalid(
                "length",
                format!("must be > 0, got {length}"),
            ));
        }
        Ok(Self { lambda, length })
    }
}

/// One eigenfunction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModeShape {
    /// `amplitude * sin(wavenumber * x)`
    Sine {
        amplitude: f64,
        wavenumber: f64,
    },
    /// `amplitude * cos(wavenumber * x)`; wavenumber 0 is the constant mode.
    Cosine {
        amplitude: f64,
        wavenumber: f64,
    },
    Legendre(LegendreSeries),
}

impl ModeShape {
    /// `d^derivative/dx^derivative` of the mode at `x` (derivative ≤ 4).
    pub fn eval(&self, x: f64, derivative: usize) -> f64 {
        match self {
            ModeShape::Sine {
                amplitude,
                wavenumber,
            } => {
                amplitude
                    * wavenumber.powi(derivative as i32)
                    * (wavenumber * x + derivative as f64 * PI / 2.0).sin()
            }
            ModeShape::Cosine {
                amplitude,
                wavenumber,
            } => {
                if *wavenumber == 0.0 {
                    return if derivative == 0 { *amplitude } else { 0.0 };
                }
                amplitude
                    * wavenumber.powi(derivative as i32)
                    * (wavenumber * x + derivative as f64 * PI / 2.0).cos()
            }
            ModeShape::Legendre(series) => series.eval(x, derivative),
        }
    }

    fn wavenumber(&self) -> Option<f64> {
        match self {
            ModeShape::Sine { wavenumber, .. } | ModeShape::Cosine { wavenumber, .. } => {
                Some(*wavenumber)
            }
            ModeShape::Legendre(_) => None,
        }
    }
}

/// Nodes in the shared quadrature rule per retained mode. Enough for
/// products of four retained modes (cubic nonlinearity tested against a mode).
const QUAD_NODES_PER_MODE: usize = 8;
const QUAD_BASE_NODES: usize = 64;

/// Ordered eigenpairs `σ_1 ≥ σ_2 ≥ ...` with L²-orthonormal modes.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    params: OperatorParams,
    bc: BoundaryCondition,
    values: Vec<f64>,
    modes: Vec<ModeShape>,
    quadrature: Quadrature,
    gram_d1: DMatrix<f64>,
    gram_d2: DMatrix<f64>,
}

impl EigenSystem {
    fn assemble(
        params: OperatorParams,
        bc: BoundaryCondition,
        values: Vec<f64>,
        modes: Vec<ModeShape>,
    ) -> Self {
        let count = values.len();
        let quadrature = Quadrature::with_min_nodes(
            0.0,
            params.length,
            QUAD_NODES_PER_MODE * count + QUAD_BASE_NODES,
        );
        let mut gram_d1 = DMatrix::zeros(count, count);
        let mut gram_d2 = DMatrix::zeros(count, count);
        let closed = modes.iter().all(|m| m.wavenumber().is_some());
        if closed {
            for (j, m) in modes.iter().enumerate() {
                let k = m.wavenumber().unwrap_or(0.0);
                gram_d1[(j, j)] = k * k;
                gram_d2[(j, j)] = k.powi(4);
            }
        } else {
            let d1 = sample(&modes, &quadrature, 1);
            let d2 = sample(&modes, &quadrature, 2);
            let w = &quadrature.weights;
            for i in 0..count {
                for j in 0..=i {
                    let mut g1 = 0.0;
                    let mut g2 = 0.0;
                    for q in 0..w.len() {
                        g1 += w[q] * d1[(q, i)] * d1[(q, j)];
                        g2 += w[q] * d2[(q, i)] * d2[(q, j)];
                    }
                    gram_d1[(i, j)] = g1;
                    gram_d1[(j, i)] = g1;
                    gram_d2[(i, j)] = g2;
                    gram_d2[(j, i)] = g2;
                }
            }
        }
        Self {
            params,
            bc,
            values,
            modes,
            quadrature,
            gram_d1,
            gram_d2,
        }
    }

    pub fn params(&self) -> OperatorParams {
        self.params
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn modes(&self) -> &[ModeShape] {
        &self.modes
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quadrature
    }

    /// `<e_i', e_j'>`
    pub fn gram_d1(&self) -> &DMatrix<f64> {
        &self.gram_d1
    }

    /// `<e_i'', e_j''>`
    pub fn gram_d2(&self) -> &DMatrix<f64> {
        &self.gram_d2
    }

    /// Mode values (or derivatives) at every node of `quad`: `nodes × count`.
    pub fn table(&self, quad: &Quadrature, derivative: usize) -> DMatrix<f64> {
        sample(&self.modes, quad, derivative)
    }

    /// `<e_i, e_j>` by quadrature.
    pub fn inner(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.modes[i], &self.modes[j]);
        self.quadrature.integrate(|x| a.eval(x, 0) * b.eval(x, 0))
    }

    /// `‖A e_j - σ_j e_j‖_{L²}` evaluated by quadrature with analytic derivatives.
    pub fn residual(&self, j: usize) -> f64 {
        let m = &self.modes[j];
        let lambda = self.params.lambda;
        let sigma = self.values[j];
        self.quadrature
            .integrate(|x| {
                let r = -m.eval(x, 4) - lambda * m.eval(x, 2) - sigma * m.eval(x, 0);
                r * r
            })
            .sqrt()
    }

    /// Largest absolute value of the four boundary functionals of mode `j`.
    pub fn bc_residual(&self, j: usize) -> f64 {
        let m = &self.modes[j];
        let l = self.params.length;
        self.bc
            .constrained_derivatives()
            .iter()
            .flat_map(|&d| [m.eval(0.0, d), m.eval(l, d)])
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `|<e_j, e_j> - 1|`
    pub fn norm_error(&self, j: usize) -> f64 {
        (self.inner(j, j) - 1.0).abs()
    }

    /// Largest `|<e_i, e_j> - δ_ij|` over all computed pairs.
    pub fn orthonormality_error(&self) -> f64 {
        let tab = self.table(&self.quadrature, 0);
        let w = &self.quadrature.weights;
        let mut worst = 0.0_f64;
        for i in 0..self.count() {
            for j in 0..=i {
                let g: f64 = (0..w.len()).map(|q| w[q] * tab[(q, i)] * tab[(q, j)]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Copy restricted to the first `count` modes.
    pub fn truncated(&self, count: usize) -> Self {
        let count = count.min(self.count());
        Self::assemble(
            self.params,
            self.bc,
            self.values[..count].to_vec(),
            self.modes[..count].to_vec(),
        )
    }
}

fn sample(modes: &[ModeShape], quad: &Quadrature, derivative: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(quad.len(), modes.len());
    let legendre_only = modes.iter().all(|m| matches!(m, ModeShape::Legendre(_)));
    if legendre_only && !modes.is_empty() {
        // Share one Legendre table per node across all modes.
        let degree = modes
            .iter()
            .map(|m| match m {
                ModeShape::Legendre(s) => s.degree(),
                _ => 0,
            })
            .max()
            .unwrap_or(0);
        let length = match &modes[0] {
            ModeShape::Legendre(s) => s.length,
            _ => unreachable!(),
        };
        for (q, &x) in quad.nodes.iter().enumerate() {
            let tab = legendre::physical_table(degree, length, x);
            let row = &tab[derivative];
            for (j, m) in modes.iter().enumerate() {
                if let ModeShape::Legendre(s) = m {
                    out[(q, j)] = s.coeffs.iter().zip(row).map(|(c, p)| c * p).sum();
                }
            }
        }
        return out;
    }
    for (q, &x) in quad.nodes.iter().enumerate() {
        for (j, m) in modes.iter().enumerate() {
            out[(q, j)] = m.eval(x, derivative);
        }
    }
    out
}

fn validate_count(count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::invalid("count", "at least one mode is required"));
    }
    Ok(())
}

/// Closed-form spectrum for the hinged (sine) and Neumann (cosine) families.
///
/// Hinged modes are `k = 1..=count`; Neumann modes start at the constant
/// mode `k = 0`. Both have `σ_k = (kπ/L)²(λ - (kπ/L)²)`.
pub fn eigen_closed_form(
    params: OperatorParams,
    bc: BoundaryCondition,
    count: usize,
) -> Result<EigenSystem> {
    validate_count(count)?;
    let l = params.length;
    let first = match bc {
        BoundaryCondition::Hinged => 1,
        BoundaryCondition::NeumannCH => 0,
        BoundaryCondition::Clamped => {
            return Err(Error::invalid(
                "bc",
                "clamped modes have no closed form; use eigen_clamped",
            ))
        }
    };
    let mut pairs: Vec<(f64, ModeShape)> = (first..first + count)
        .map(|k| {
            let kw = k as f64 * PI / l;
            let sigma = kw * kw * (params.lambda - kw * kw);
            let mode = match bc {
                BoundaryCondition::Hinged => ModeShape::Sine {
                    amplitude: (2.0 / l).sqrt(),
                    wavenumber: kw,
                },
                _ if k == 0 => ModeShape::Cosine {
                    amplitude: (1.0 / l).sqrt(),
                    wavenumber: 0.0,
                },
                _ => ModeShape::Cosine {
                    amplitude: (2.0 / l).sqrt(),
                    wavenumber: kw,
                },
            };
            (sigma, mode)
        })
        .collect();
    // Stable sort keeps wavenumber order among equal eigenvalues.
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (values, modes) = pairs.into_iter().unzip();
    Ok(EigenSystem::assemble(params, bc, values, modes))
}

/// Numerical spectrum for the clamped family.
pub fn eigen_clamped(params: OperatorParams, count: usize) -> Result<EigenSystem> {
    eigen_numerical(params, BoundaryCondition::Clamped, count)
}

/// The numerical (Legendre–Galerkin) solver applied to any family. For the
/// hinged and Neumann families this cross-validates against the closed form.
pub fn eigen_numerical(
    params: OperatorParams,
    bc: BoundaryCondition,
    count: usize,
) -> Result<EigenSystem> {
    validate_count(count)?;
    let pairs = galerkin::eigenpairs(params, bc, count)?;
    let (values, modes) = pairs
        .into_iter()
        .map(|p| (p.sigma, ModeShape::Legendre(p.series)))
        .unzip();
    Ok(EigenSystem::assemble(params, bc, values, modes))
}

/// Dispatches to the closed form where one exists.
pub fn eigen_system(
    params: OperatorParams,
    bc: BoundaryCondition,
    count: usize,
) -> Result<EigenSystem> {
    match bc {
        BoundaryCondition::Clamped => eigen_clamped(params, count),
        _ => eigen_closed_form(params, bc, count),
    }
}

/// Number of non-negative eigenvalues and the default tail gap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnstableCount {
    pub n: usize,
    /// Margin with `σ_j < -eta` for every `j > n`; set to `-σ_{n+1} / 2`.
    pub eta: f64,
}

pub fn unstable_count(es: &EigenSystem) -> Result<UnstableCount> {
    unstable_count_of(es.values())
}

pub fn unstable_count_of(values: &[f64]) -> Result<UnstableCount> {
    let n = values.iter().take_while(|&&s| s >= 0.0).count();
    match values.get(n) {
        Some(&s) => Ok(UnstableCount { n, eta: -s / 2.0 }),
        None => Err(Error::AllModesUnstable {
            computed: values.len(),
        }),
    }
}

/// Member `(k, l)` of the critical set `{π²(k² + l²) : 1 ≤ k < l, k ≡ l mod 2}`
/// within `tol` of `lambda`, if any.
pub fn critical_set_witness(lambda: f64, tol: f64) -> Option<(u32, u32)> {
    if !(lambda > 0.0) {
        return None;
    }
    let pi2 = PI * PI;
    let bound = (lambda + tol) / pi2 + 1.0;
    let mut l = 2u32;
    while (1 + l * l) as f64 <= bound {
        let mut k = if l.is_multiple_of(2) { 2 } else { 1 };
        while k < l && (k * k + l * l) as f64 <= bound {
            let member = pi2 * (k * k + l * l) as f64;
            if (lambda - member).abs() <= tol {
                return Some((k, l));
            }
            k += 2;
        }
        l += 1;
    }
    None
}

pub fn critical_set_member(lambda: f64, tol: f64) -> bool {
    critical_set_witness(lambda, tol).is_some()
}
