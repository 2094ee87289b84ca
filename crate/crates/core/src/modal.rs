//! Finite-dimensional unstable subsystem, actuator coefficients and the
//! boundary lifting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::Quadrature;
use crate::spectral::{critical_set_witness, BoundaryCondition, EigenSystem, ModeShape};

/// Spatial profile of one control channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorShape {
    /// Indicator function of `[a, b]`.
    Indicator(f64, f64),
    /// `Σ c_i e_i` in the eigenbasis.
    Modes(Vec<f64>),
}

impl ActuatorShape {
    pub fn validate(&self, length: f64) -> Result<()> {
        match self {
            ActuatorShape::Indicator(a, b) => {
                if !(a.is_finite() && b.is_finite() && 0.0 <= *a && a < b && *b <= length) {
                    return Err(Error::invalid(
                        "actuators",
                        format!("indicator support [{a}, {b}] must satisfy 0 <= a < b <= {length}"),
                    ));
                }
            }
            ActuatorShape::Modes(c) => {
                if c.is_empty() || c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(
                        "actuators",
                        "mode combination needs finite coefficients",
                    ));
                }
            }
        }
        Ok(())
    }

    /// `‖b_k‖²_{L²}`
    pub fn norm_sq(&self) -> f64 {
        match self {
            ActuatorShape::Indicator(a, b) => b - a,
            ActuatorShape::Modes(c) => c.iter().map(|v| v * v).sum(),
        }
    }
}

/// `⟨1_[a,b], e⟩` in closed form for sine/cosine modes.
fn indicator_closed_form(mode: &ModeShape, a: f64, b: f64) -> Option<f64> {
    match *mode {
        ModeShape::Sine {
            amplitude,
            wavenumber: k,
        } => Some(amplitude * ((k * a).cos() - (k * b).cos()) / k),
        ModeShape::Cosine {
            amplitude,
            wavenumber: k,
        } => {
            if k == 0.0 {
                Some(amplitude * (b - a))
            } else {
                Some(amplitude * ((k * b).sin() - (k * a).sin()) / k)
            }
        }
        ModeShape::Legendre(_) => None,
    }
}

/// Coefficients `b_{jk} = ⟨b_k, e_j⟩` for `j < count`, as a `count × m` matrix.
/// Indicators use closed forms for sine/cosine modes and quadrature otherwise.
pub fn actuator_coefficients(
    es: &EigenSystem,
    shapes: &[ActuatorShape],
    count: usize,
) -> Result<DMatrix<f64>> {
    coefficients_impl(es, shapes, count, false)
}

/// Same as [`actuator_coefficients`] but always by quadrature.
pub fn actuator_coefficients_quadrature(
    es: &EigenSystem,
    shapes: &[ActuatorShape],
    count: usize,
) -> Result<DMatrix<f64>> {
    coefficients_impl(es, shapes, count, true)
}

fn coefficients_impl(
    es: &EigenSystem,
    shapes: &[ActuatorShape],
    count: usize,
    force_quadrature: bool,
) -> Result<DMatrix<f64>> {
    if count > es.count() {
        return Err(Error::Dimension(format!(
            "requested {count} coefficients from {} modes",
            es.count()
        )));
    }
    let length = es.params().length;
    let mut out = DMatrix::zeros(count, shapes.len());
    for (k, shape) in shapes.iter().enumerate() {
        shape.validate(length)?;
        match shape {
            ActuatorShape::Indicator(a, b) => {
                let quad = indicator_rule(es, *a, *b);
                for j in 0..count {
                    let mode = &es.modes()[j];
                    let closed = if force_quadrature {
                        None
                    } else {
                        indicator_closed_form(mode, *a, *b)
                    };
                    out[(j, k)] = closed.unwrap_or_else(|| quad.integrate(|x| mode.eval(x, 0)));
                }
            }
            ActuatorShape::Modes(c) => {
                for j in 0..count.min(c.len()) {
                    out[(j, k)] = c[j];
                }
            }
        }
    }
    Ok(out)
}

fn indicator_rule(es: &EigenSystem, a: f64, b: f64) -> Quadrature {
    let frac = (b - a) / es.params().length;
    let nodes = ((es.quadrature().len() as f64) * frac).ceil() as usize;
    Quadrature::with_min_nodes(a, b, nodes.max(64))
}

/// Boundary lifting `d(x) = x³/L² − 2x²/L + x` with `d(0) = d(L) = 0`,
/// `d'(0) = 1`, `d'(L) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lifting {
    pub length: f64,
    pub lambda: f64,
}

impl Lifting {
    pub fn new(length: f64, lambda: f64) -> Self {
        Self { length, lambda }
    }

    pub fn d(&self, x: f64) -> f64 {
        let l = self.length;
        x * x * x / (l * l) - 2.0 * x * x / l + x
    }

    pub fn d1(&self, x: f64) -> f64 {
        let l = self.length;
        3.0 * x * x / (l * l) - 4.0 * x / l + 1.0
    }

    pub fn d2(&self, x: f64) -> f64 {
        let l = self.length;
        6.0 * x / (l * l) - 4.0 / l
    }

    /// `a(x) = -λ d''(x)`
    pub fn a(&self, x: f64) -> f64 {
        -self.lambda * self.d2(x)
    }

    /// `b(x) = -d(x)`
    pub fn b(&self, x: f64) -> f64 {
        -self.d(x)
    }

    /// `‖d‖_{L²} = sqrt(L³/105)`
    pub fn d_norm(&self) -> f64 {
        (self.length.powi(3) / 105.0).sqrt()
    }

    /// `‖a‖²_{L²} = 4λ²/L`
    pub fn a_norm_sq(&self) -> f64 {
        4.0 * self.lambda * self.lambda / self.length
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuationMode {
    Internal,
    Boundary,
}

/// Unstable subsystem `ż = A z + B sat(K z)` plus the tail forcing data.
#[derive(Clone, Debug)]
pub struct ModalSystem {
    pub mode: ActuationMode,
    /// Number of non-negative eigenvalues.
    pub n: usize,
    pub lambda: f64,
    /// All retained eigenvalues `σ_1 … σ_J`.
    pub sigma: Vec<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `J × m` coefficients of the inputs on every retained mode.
    pub input: DMatrix<f64>,
    /// Boundary mode only: `a_j = ⟨a, e_j⟩` for every retained mode.
    pub drift: Option<DVector<f64>>,
    /// `‖b_k‖²_{L²}` per channel (`‖b‖²` of the lifting in boundary mode).
    pub input_norm_sq: Vec<f64>,
    pub lifting: Option<Lifting>,
    pub gram_d1: DMatrix<f64>,
    pub gram_d2: DMatrix<f64>,
}

impl ModalSystem {
    /// Dimension of the controlled state `z`.
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn modes(&self) -> usize {
        self.sigma.len()
    }

    /// Tail rows `n..J` of the input coefficients.
    pub fn b_tail(&self) -> DMatrix<f64> {
        let j = self.modes();
        self.input.rows(self.n, j - self.n).into_owned()
    }

    /// First tail eigenvalue `σ_{n+1}`, if retained.
    pub fn first_tail_sigma(&self) -> Option<f64> {
        self.sigma.get(self.n).copied()
    }

    /// `η = -σ_{n+1}/2`
    pub fn eta(&self) -> Option<f64> {
        self.first_tail_sigma().map(|s| -s / 2.0)
    }

    /// Internal system built directly from eigenvalues and input coefficients
    /// (`J × m`), without an eigenfunction basis. Gram matrices are zero.
    pub fn from_diagonal(sigma: &[f64], input: DMatrix<f64>, n: usize) -> Result<Self> {
        let j = sigma.len();
        if input.nrows() != j || n > j {
            return Err(Error::Dimension(format!(
                "from_diagonal: {} eigenvalues, input {:?}, n = {n}",
                j,
                input.shape()
            )));
        }
        let norms = input.column_iter().map(|c| c.norm_squared()).collect();
        Ok(Self {
            mode: ActuationMode::Internal,
            n,
            lambda: 0.0,
            sigma: sigma.to_vec(),
            a: DMatrix::from_diagonal(&DVector::from_column_slice(&sigma[..n])),
            b: input.rows(0, n).into_owned(),
            input,
            drift: None,
            input_norm_sq: norms,
            lifting: None,
            gram_d1: DMatrix::zeros(j, j),
            gram_d2: DMatrix::zeros(j, j),
        })
    }
}

/// Internal actuation: `A = diag(σ_1…σ_n)`, `B` the top `n` rows of `coeffs`.
pub fn assemble_internal(
    es: &EigenSystem,
    coeffs: &DMatrix<f64>,
    shapes: &[ActuatorShape],
    n: usize,
) -> Result<ModalSystem> {
    let j = coeffs.nrows();
    if j > es.count() || n > j || shapes.len() != coeffs.ncols() {
        return Err(Error::Dimension(format!(
            "assemble_internal: coeffs {:?}, {} modes, {} shapes, n = {n}",
            coeffs.shape(),
            es.count(),
            shapes.len()
        )));
    }
    let sigma = es.values()[..j].to_vec();
    Ok(ModalSystem {
        mode: ActuationMode::Internal,
        n,
        lambda: es.params().lambda,
        a: DMatrix::from_diagonal(&DVector::from_column_slice(&sigma[..n])),
        b: coeffs.rows(0, n).into_owned(),
        sigma,
        input: coeffs.clone(),
        drift: None,
        input_norm_sq: shapes.iter().map(ActuatorShape::norm_sq).collect(),
        lifting: None,
        gram_d1: es.gram_d1().view((0, 0), (j, j)).into_owned(),
        gram_d2: es.gram_d2().view((0, 0), (j, j)).into_owned(),
    })
}

/// Tolerance used when testing `λ L²` against the critical set.
pub fn critical_tolerance(lambda_scaled: f64) -> f64 {
    1e-8 * lambda_scaled.max(1.0)
}

/// Boundary actuation at `x = 0` through the lifting: state `z = (u, w_1…w_n)`,
/// `u̇ = sat(h)`, `ẇ_j = σ_j w_j + a_j u + b_j sat(h)`.
///
/// The critical set is tested on `λ L²`, which reduces to `λ` on the unit
/// interval.
pub fn assemble_boundary(es: &EigenSystem, lifting: Lifting, n: usize) -> Result<ModalSystem> {
    if es.bc() != BoundaryCondition::Clamped {
        return Err(Error::invalid(
            "bc",
            "boundary actuation requires clamped boundary conditions",
        ));
    }
    let p = es.params();
    let j = es.count();
    if n > j {
        return Err(Error::Dimension(format!("n = {n} exceeds {j} modes")));
    }
    let scaled = p.lambda * p.length * p.length;
    if let Some((k, l)) = critical_set_witness(scaled, critical_tolerance(scaled)) {
        return Err(Error::CriticalLength {
            lambda: p.lambda,
            k,
            l,
        });
    }
    let quad = es.quadrature();
    let e = es.table(quad, 0);
    let av: Vec<f64> = quad.nodes.iter().map(|&x| lifting.a(x)).collect();
    let bv: Vec<f64> = quad.nodes.iter().map(|&x| lifting.b(x)).collect();
    let mut a_coef = DVector::zeros(j);
    let mut b_coef = DVector::zeros(j);
    for col in 0..j {
        for (q, w) in quad.weights.iter().enumerate() {
            a_coef[col] += w * av[q] * e[(q, col)];
            b_coef[col] += w * bv[q] * e[(q, col)];
        }
    }
    let dim = n + 1;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DMatrix::zeros(dim, 1);
    b[(0, 0)] = 1.0;
    for i in 0..n {
        a[(i + 1, 0)] = a_coef[i];
        a[(i + 1, i + 1)] = es.values()[i];
        b[(i + 1, 0)] = b_coef[i];
    }
    let d_norm = lifting.d_norm();
    Ok(ModalSystem {
        mode: ActuationMode::Boundary,
        n,
        lambda: p.lambda,
        sigma: es.values().to_vec(),
        a,
        b,
        input: DMatrix::from_column_slice(j, 1, b_coef.as_slice()),
        drift: Some(a_coef),
        input_norm_sq: vec![d_norm * d_norm],
        lifting: Some(lifting),
        gram_d1: es.gram_d1().clone(),
        gram_d2: es.gram_d2().clone(),
    })
}

/// Splits modal coefficients into the unstable part `z` and the tail.
pub fn project(state: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n > state.len() {
        return Err(Error::Dimension(format!(
            "cannot project {} coefficients onto {n} modes",
            state.len()
        )));
    }
    Ok((state[..n].to_vec(), state[n..].to_vec()))
}

/// Extra mode-combination channels for repeated unstable eigenvalues.
///
/// With `N₀` the largest multiplicity among `σ_1…σ_n`, channel `r < N₀`
/// excites the `r`-th member of every eigenvalue cluster, so each cluster
/// block of `B` gains full row rank.
pub fn suggest_actuators(sigma: &[f64], n: usize, rel_tol: f64) -> Vec<ActuatorShape> {
    let clusters = clusters(&sigma[..n.min(sigma.len())], rel_tol);
    let n0 = clusters.iter().map(Vec::len).max().unwrap_or(0);
    if n0 <= 1 {
        return Vec::new();
    }
    (0..n0)
        .map(|r| {
            let mut c = vec![0.0; n];
            for cl in &clusters {
                if let Some(&idx) = cl.get(r) {
                    c[idx] = 1.0;
                }
            }
            ActuatorShape::Modes(c)
        })
        .collect()
}

/// Groups indices of (nearly) equal eigenvalues.
pub fn clusters(values: &[f64], rel_tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        let found = out.iter_mut().find(|cl| {
            let w = values[cl[0]];
            (v - w).abs() <= rel_tol * v.abs().max(w.abs()).max(1.0)
        });
        match found {
            Some(cl) => cl.push(i),
            None => out.push(vec![i]),
        }
    }
    out
}
