//! Gain design, LMI certificate construction/verification and the H²
//! Lyapunov constants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    eigenvalues, lambda_max, lambda_min, lyapunov, quad_form, rank, spectral_abscissa, symmetrize,
};
use crate::modal::{clusters, ActuationMode, ModalSystem};
use crate::saturation::SaturationLevel;

/// Safety factor on every strict scalar bound.
pub const THETA: f64 = 0.1;

const ROUNDING_GUARD: f64 = 16.0 * f64::EPSILON;

const RANK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalmanReport {
    pub dim: usize,
    pub rank: usize,
    pub controllable: bool,
    /// `∏ b_j · ∏_{i<k} (σ_k − σ_i)` for single-input diagonal systems.
    pub vandermonde_value: Option<f64>,
    /// Determinant of the Kalman matrix when it is square.
    pub kalman_det: Option<f64>,
    /// Eigenvalues of `A` failing the PBH rank test.
    pub pbh_failures: Vec<f64>,
}

impl KalmanReport {
    /// Every uncontrollable eigenvalue is strictly stable.
    pub fn stabilizable(&self) -> bool {
        self.pbh_failures.iter().all(|&s| s < 0.0)
    }
}

/// `[B | AB | … | A^{dim-1} B]`
pub fn kalman_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    out
}

fn is_lower_triangular(a: &DMatrix<f64>) -> bool {
    (0..a.nrows()).all(|i| (i + 1..a.ncols()).all(|j| a[(i, j)] == 0.0))
}

fn is_diagonal(a: &DMatrix<f64>) -> bool {
    (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] == 0.0))
}

/// Kalman rank, Vandermonde product and PBH test for a pair `(A, B)`.
pub fn kalman_diagnose_matrices(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<KalmanReport> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension(format!(
            "kalman: A is {:?}, B is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let kal = kalman_matrix(a, b);
    let r = rank(&kal, RANK_TOL);
    let m = b.ncols();
    let kalman_det = (m == 1 && n > 0).then(|| kal.determinant());
    let vandermonde_value = (m == 1 && is_diagonal(a) && n > 0).then(|| {
        let mut v: f64 = (0..n).map(|j| b[(j, 0)]).product();
        for k in 0..n {
            for i in 0..k {
                v *= a[(k, k)] - a[(i, i)];
            }
        }
        v
    });

    // Distinct eigenvalues: exact diagonal for triangular A, otherwise real
    // parts of the computed spectrum.
    let eigs: Vec<f64> = if is_lower_triangular(a) {
        (0..n).map(|i| a[(i, i)]).collect()
    } else {
        eigenvalues(a).iter().map(|c| c.re).collect()
    };
    let mut pbh_failures = Vec::new();
    for cl in clusters(&eigs, 1e-10) {
        let s = eigs[cl[0]];
        let mut pencil = DMatrix::zeros(n, n + m);
        for i in 0..n {
            for j in 0..n {
                pencil[(i, j)] = if i == j { s - a[(i, j)] } else { -a[(i, j)] };
            }
        }
        pencil.view_mut((0, n), (n, m)).copy_from(b);
        if pbh_rank(&pencil) < n {
            pbh_failures.push(s);
        }
    }
    Ok(KalmanReport {
        dim: n,
        rank: r,
        controllable: r == n,
        vandermonde_value,
        kalman_det,
        pbh_failures,
    })
}

fn pbh_rank(pencil: &DMatrix<f64>) -> usize {
    // Row scaling keeps tiny input coefficients from masking deficiency.
    let sv = pencil.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

pub fn kalman_diagnose(ms: &ModalSystem) -> Result<KalmanReport> {
    kalman_diagnose_matrices(&ms.a, &ms.b)
}

/// Gain specification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GainTarget {
    /// Poles `−η·(1, 2, …, dim)` for one input, LQR with unit weights otherwise.
    #[default]
    Default,
    /// Real closed-loop poles (single input only).
    Poles(Vec<f64>),
    /// LQR with `Q = q·I`, `R = r·I`.
    Lqr { q: f64, r: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    /// `m × dim`, feedback `u = K z`.
    #[serde(with = "crate::serde_matrix")]
    pub k: DMatrix<f64>,
    /// `(re, im)` pairs of the spectrum of `A + BK`.
    pub closed_loop_spectrum: Vec<(f64, f64)>,
}

impl Gain {
    pub fn new(k: DMatrix<f64>, ms: &ModalSystem) -> Result<Self> {
        if k.shape() != (ms.inputs(), ms.dim()) {
            return Err(Error::Dimension(format!(
                "gain is {:?}, expected {:?}",
                k.shape(),
                (ms.inputs(), ms.dim())
            )));
        }
        let ac = &ms.a + &ms.b * &k;
        let closed_loop_spectrum = eigenvalues(&ac).iter().map(|c| (c.re, c.im)).collect();
        Ok(Self {
            k,
            closed_loop_spectrum,
        })
    }

    pub fn is_hurwitz(&self) -> bool {
        self.closed_loop_spectrum.iter().all(|&(re, _)| re < 0.0)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.k.norm()
    }
}

/// Default placement rate: `η` from the first tail eigenvalue, or 1 when no
/// tail is retained.
fn default_rate(ms: &ModalSystem) -> f64 {
    match ms.eta() {
        Some(eta) if eta > 0.0 => eta,
        _ => 1.0,
    }
}

pub fn design_gain(ms: &ModalSystem, target: &GainTarget) -> Result<Gain> {
    let dim = ms.dim();
    let m = ms.inputs();
    if dim == 0 {
        return Gain::new(DMatrix::zeros(m, 0), ms);
    }
    if m == 0 {
        return Err(Error::NotStabilizable(
            (0..dim).map(|i| ms.a[(i, i)]).collect(),
        ));
    }
    let report = kalman_diagnose(ms)?;
    if !report.stabilizable() {
        return Err(Error::NotStabilizable(
            report
                .pbh_failures
                .iter()
                .copied()
                .filter(|&s| s >= 0.0)
                .collect(),
        ));
    }
    let (a, b, keep) = if report.controllable {
        (ms.a.clone(), ms.b.clone(), (0..dim).collect::<Vec<_>>())
    } else {
        controllable_restriction(ms, &report)?
    };
    let k_small = match target {
        GainTarget::Default if m == 1 => {
            let rate = default_rate(ms);
            let poles: Vec<f64> = (1..=a.nrows()).map(|i| -rate * i as f64).collect();
            ackermann(&a, &b, &poles)?
        }
        GainTarget::Default => kleinman_lqr(&a, &b, 1.0, 1.0)?,
        GainTarget::Poles(poles) => {
            if m != 1 {
                return Err(Error::invalid(
                    "synthesis",
                    "pole placement is only available for a single input; use lqr",
                ));
            }
            if poles.len() != a.nrows() {
                return Err(Error::invalid(
                    "synthesis",
                    format!("expected {} poles, got {}", a.nrows(), poles.len()),
                ));
            }
            if poles.iter().any(|p| !(p.is_finite() && *p < 0.0)) {
                return Err(Error::invalid(
                    "synthesis",
                    "poles must be finite and negative",
                ));
            }
            ackermann(&a, &b, poles)?
        }
        GainTarget::Lqr { q, r } => {
            if !(q.is_finite() && *q > 0.0 && r.is_finite() && *r > 0.0) {
                return Err(Error::invalid("synthesis", "lqr weights must be positive"));
            }
            kleinman_lqr(&a, &b, *q, *r)?
        }
    };
    let mut k = DMatrix::zeros(m, dim);
    for (small, &full) in keep.iter().enumerate() {
        k.set_column(full, &k_small.column(small));
    }
    let gain = Gain::new(k, ms)?;
    if !gain.is_hurwitz() {
        return Err(Error::CertificateFailure(format!(
            "designed gain is not stabilizing (spectral abscissa {})",
            spectral_abscissa(&(&ms.a + &ms.b * &gain.k))
        )));
    }
    Ok(gain)
}

/// Drops uncontrollable stable modes of a diagonal system.
fn controllable_restriction(
    ms: &ModalSystem,
    report: &KalmanReport,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<usize>)> {
    if !is_diagonal(&ms.a) {
        return Err(Error::CertificateFailure(
            "stabilizable but uncontrollable non-diagonal systems are not supported".into(),
        ));
    }
    let keep: Vec<usize> = (0..ms.dim())
        .filter(|&i| {
            let s = ms.a[(i, i)];
            !report
                .pbh_failures
                .iter()
                .any(|&f| (f - s).abs() <= 1e-10 * s.abs().max(1.0))
        })
        .collect();
    let a = DMatrix::from_fn(keep.len(), keep.len(), |i, j| ms.a[(keep[i], keep[j])]);
    let b = DMatrix::from_fn(keep.len(), ms.inputs(), |i, j| ms.b[(keep[i], j)]);
    Ok((a, b, keep))
}

/// Ackermann's formula for `u = K z`: `K = −e_nᵀ 𝒞⁻¹ p(A)`.
pub fn ackermann(a: &DMatrix<f64>, b: &DMatrix<f64>, poles: &[f64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if b.ncols() != 1 || poles.len() != n {
        return Err(Error::Dimension(
            "ackermann needs one input and dim poles".into(),
        ));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(1, 0));
    }
    if is_diagonal(a) {
        return ackermann_diagonal(a, b, poles);
    }
    let mut p_a = DMatrix::<f64>::identity(n, n);
    for &p in poles {
        p_a = (a - DMatrix::identity(n, n) * p) * p_a;
    }
    let ctrb = kalman_matrix(a, b);
    let mut e_n = DVector::zeros(n);
    e_n[n - 1] = 1.0;
    // Solve 𝒞ᵀ x = e_n, so x ᵀ = e_nᵀ 𝒞⁻¹.
    let x = ctrb
        .transpose()
        .lu()
        .solve(&e_n)
        .ok_or_else(|| Error::NotStabilizable(vec![]))?;
    let row = x.transpose() * p_a;
    Ok(DMatrix::from_iterator(1, n, row.iter().map(|v| -v)))
}

/// Ackermann's formula evaluated in the eigenbasis of a diagonal `A`, where
/// `e_nᵀ 𝒞⁻¹` is a row of the inverse Vandermonde matrix:
/// `K_j = −p(σ_j) / (b_j ∏_{i≠j} (σ_j − σ_i))`. Avoids forming `𝒞`, whose
/// condition number grows like the spread of the `σ_j` to the power `n`.
fn ackermann_diagonal(a: &DMatrix<f64>, b: &DMatrix<f64>, poles: &[f64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let sigma: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let mut k = DMatrix::zeros(1, n);
    for j in 0..n {
        let mut num: f64 = poles.iter().map(|p| sigma[j] - p).product();
        let mut den = b[(j, 0)];
        for (i, s) in sigma.iter().enumerate() {
            if i != j {
                den *= sigma[j] - s;
            }
        }
        if den == 0.0 {
            return Err(Error::NotStabilizable(vec![sigma[j]]));
        }
        num /= den;
        k[(0, j)] = -num;
    }
    Ok(k)
}

/// LQR gain by Kleinman–Newton iteration started from a Bass gain.
pub fn kleinman_lqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: f64, r: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let qm = DMatrix::<f64>::identity(n, n) * q;
    // Bass: (A + βI) W + W (A + βI)ᵀ = 2 B Bᵀ with −(A + βI) Hurwitz.
    let beta = a.norm() + 1.0;
    let shifted = a + DMatrix::identity(n, n) * beta;
    let rhs = b * b.transpose() * 2.0;
    // lyapunov solves Xᵀ-form: Fᵀ W + W F = −Q with F = (A + βI)ᵀ.
    let w = lyapunov(&shifted.transpose(), &(-rhs))?;
    let w_inv = w
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::CertificateFailure("Bass Gramian is singular".into()))?;
    let mut k = -(b.transpose() * w_inv);
    if spectral_abscissa(&(a + b * &k)) >= 0.0 {
        return Err(Error::CertificateFailure(
            "Bass initial gain is not stabilizing".into(),
        ));
    }
    for _ in 0..100 {
        let ac = a + b * &k;
        let rhs = &qm + k.transpose() * &k * r;
        let p = lyapunov(&ac, &rhs)?;
        let next = -(b.transpose() * &p) / r;
        let delta = (&next - &k).norm();
        k = next;
        if delta <= 1e-12 * k.norm().max(1.0) {
            break;
        }
    }
    Ok(k)
}

/// LMI witnesses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(with = "crate::serde_matrix")]
    pub p: DMatrix<f64>,
    /// Diagonal of `D`.
    pub d: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub c: DMatrix<f64>,
    pub alpha: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub ell: SaturationLevel,
}

impl Certificate {
    /// Builds the record from explicit witnesses, computing `α` and `β`.
    pub fn from_witnesses(
        p: DMatrix<f64>,
        d: Vec<f64>,
        c: DMatrix<f64>,
        ell: SaturationLevel,
        ms: &ModalSystem,
        gain: &Gain,
    ) -> Result<Self> {
        let mut cert = Self {
            beta_min: lambda_min(&p),
            beta_max: lambda_max(&p),
            p,
            d,
            c,
            alpha: f64::NAN,
            ell,
        };
        let check = check_certificate(&cert, ms, gain)?;
        cert.alpha = check.certified_alpha();
        Ok(cert)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub lambda_max_m1: f64,
    /// `λ_min(M2)`; for `ℓ = ∞` the constraint is vacuous and this is `λ_min(P)`.
    pub lambda_min_m2: f64,
    /// `λ_min(P − (K−C)ᵀ(K−C)/ℓ²)`, the Schur complement of `M2`.
    pub lambda_min_schur: f64,
    pub lambda_min_p: f64,
    /// Rounding scale of `M1`: `‖M1‖_F + 2‖Ac‖_F‖P‖_F + 2‖P‖_F‖B‖_F`.
    pub m1_scale: f64,
    pub ok: bool,
}

impl CertificateCheck {
    /// `-λ_max(M1)` reduced by a rounding guard `16·ε·m1_scale`, so that any
    /// other assembly and stable eigensolve of `M1` also gives `λ_max ≤ -α`.
    pub fn certified_alpha(&self) -> f64 {
        -self.lambda_max_m1 - ROUNDING_GUARD * self.m1_scale
    }
}

fn m1_matrix(cert: &Certificate, ms: &ModalSystem, gain: &Gain) -> DMatrix<f64> {
    let n = ms.dim();
    let m = ms.inputs();
    let ac = &ms.a + &ms.b * &gain.k;
    let tl = ac.transpose() * &cert.p + &cert.p * &ac;
    let dm = DMatrix::from_diagonal(&DVector::from_column_slice(&cert.d));
    let off = &cert.p * &ms.b - (&dm * &cert.c).transpose();
    let mut m1 = DMatrix::zeros(n + m, n + m);
    m1.view_mut((0, 0), (n, n)).copy_from(&tl);
    m1.view_mut((0, n), (n, m)).copy_from(&off);
    m1.view_mut((n, 0), (m, n)).copy_from(&off.transpose());
    m1.view_mut((n, n), (m, m)).copy_from(&(dm * -2.0));
    symmetrize(&m1)
}

fn m2_matrix(cert: &Certificate, gain: &Gain) -> DMatrix<f64> {
    let n = cert.p.nrows();
    let m = gain.k.nrows();
    let kc = &gain.k - &cert.c;
    let ell2 = cert.ell.value().powi(2);
    let mut m2 = DMatrix::zeros(n + m, n + m);
    m2.view_mut((0, 0), (n, n)).copy_from(&cert.p);
    m2.view_mut((0, n), (n, m)).copy_from(&kc.transpose());
    m2.view_mut((n, 0), (m, n)).copy_from(&kc);
    m2.view_mut((n, n), (m, m))
        .copy_from(&(DMatrix::identity(m, m) * ell2));
    symmetrize(&m2)
}

/// Assembles `M1`, `M2` and checks their sign conditions by eigensolve.
pub fn check_certificate(
    cert: &Certificate,
    ms: &ModalSystem,
    gain: &Gain,
) -> Result<CertificateCheck> {
    let n = ms.dim();
    let m = ms.inputs();
    if cert.p.shape() != (n, n)
        || cert.c.shape() != (m, n)
        || cert.d.len() != m
        || gain.k.shape() != (m, n)
    {
        return Err(Error::Dimension(format!(
            "certificate P {:?}, C {:?}, D {}, K {:?} for system ({n}, {m})",
            cert.p.shape(),
            cert.c.shape(),
            cert.d.len(),
            gain.k.shape()
        )));
    }
    if let Some(bad) = cert.d.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::invalid(
            "D",
            format!("must be diagonal positive definite, found entry {bad}"),
        ));
    }
    let asym = (&cert.p - cert.p.transpose()).amax();
    let m1 = m1_matrix(cert, ms, gain);
    let lambda_max_m1 = lambda_max(&m1);
    let lambda_min_p = lambda_min(&cert.p);
    let (lambda_min_m2, lambda_min_schur) = if cert.ell.is_unbounded() {
        (lambda_min_p, lambda_min_p)
    } else {
        let kc = &gain.k - &cert.c;
        let schur = &cert.p - kc.transpose() * &kc / cert.ell.value().powi(2);
        (lambda_min(&m2_matrix(cert, gain)), lambda_min(&schur))
    };
    let ac = &ms.a + &ms.b * &gain.k;
    let m1_scale = m1.norm() + 2.0 * cert.p.norm() * (ac.norm() + ms.b.norm());
    let ok = lambda_max_m1 + ROUNDING_GUARD * m1_scale < 0.0
        && lambda_min_m2 >= -1e-9
        && lambda_min_p > 0.0
        && asym <= 1e-12 * cert.p.amax().max(1.0);
    Ok(CertificateCheck {
        lambda_max_m1,
        lambda_min_m2,
        lambda_min_schur,
        lambda_min_p,
        m1_scale,
        ok,
    })
}

/// Constructive certificate with `C = 0`: Lyapunov solve, scaling of `P` so
/// that `M2 ⪰ 0`, then `D = d·I` increased until `M1 ≺ 0` with
/// `α ≥ 0.9·c`, where `c` is the scale of `P`. If rounding prevents that
/// target, the largest positive certified `α` found is returned.
pub fn build_certificate(
    ms: &ModalSystem,
    gain: &Gain,
    ell: SaturationLevel,
) -> Result<Certificate> {
    let n = ms.dim();
    let m = ms.inputs();
    if !gain.is_hurwitz() {
        return Err(Error::CertificateFailure("A + BK is not Hurwitz".into()));
    }
    if n == 0 {
        return Ok(Certificate {
            p: DMatrix::zeros(0, 0),
            d: vec![1.0; m],
            c: DMatrix::zeros(m, 0),
            alpha: f64::INFINITY,
            beta_min: f64::INFINITY,
            beta_max: 0.0,
            ell,
        });
    }
    let ac = &ms.a + &ms.b * &gain.k;
    let p0 = lyapunov(&ac, &DMatrix::identity(n, n))?;
    let p0_min = lambda_min(&p0);
    if !(p0_min > 0.0) {
        return Err(Error::CertificateFailure(format!(
            "Lyapunov solution is not positive definite (λ_min = {p0_min})"
        )));
    }
    let scale = if ell.is_unbounded() {
        1.0
    } else {
        let ktk = gain.k.transpose() * &gain.k;
        ((1.0 + THETA) * lambda_max(&ktk) / (ell.value().powi(2) * p0_min)).max(1.0)
    };
    let p = symmetrize(&(p0 * scale));
    let pb = &p * &ms.b;
    let coupling = lambda_max(&(&pb * pb.transpose()));
    // Schur complement of M1: −2d·I + (PB)ᵀ(PB)/c ≺ 0.
    let schur_bound = coupling / (2.0 * scale);
    let target = 0.9 * scale;
    let mut d = ((1.0 + THETA) * schur_bound).max(1e-12 * scale);
    let c = DMatrix::zeros(m, n);
    let mut best: Option<Certificate> = None;
    for _ in 0..200 {
        let cert = Certificate {
            beta_min: lambda_min(&p),
            beta_max: lambda_max(&p),
            p: p.clone(),
            d: vec![d; m],
            c: c.clone(),
            alpha: f64::NAN,
            ell,
        };
        let check = check_certificate(&cert, ms, gain)?;
        let alpha = check.certified_alpha();
        if check.ok && alpha >= target {
            return Ok(Certificate { alpha, ..cert });
        }
        if check.ok && alpha > 0.0 && best.as_ref().is_none_or(|b| alpha > b.alpha) {
            best = Some(Certificate { alpha, ..cert });
        }
        d *= 2.0;
    }
    // Ill-conditioned gains: rounding in M1 can eat most of the margin, so
    // fall back to the largest margin that survives the guard.
    best.ok_or_else(|| {
        Error::CertificateFailure("no diagonal D found making M1 negative definite".into())
    })
}

/// `zᵀ P z ≤ 1`
pub fn ellipsoid_contains(cert: &Certificate, z: &DVector<f64>) -> Result<bool> {
    if z.len() != cert.p.nrows() {
        return Err(Error::Dimension(format!(
            "z has {} entries, P is {:?}",
            z.len(),
            cert.p.shape()
        )));
    }
    Ok(quad_form(&cert.p, z) <= 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct H2Constants {
    pub m: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// H² decay rate `1/(2·C3·β_max)`.
    pub a: f64,
    /// Bound on `|tail forcing|² / |z|²` used for `M`.
    pub forcing_gain_sq: f64,
}

/// Selects `C3 = 1/α` and the weight `M` with margin `1 + θ`, then derives
/// the sandwich constants. `M` is additionally kept above
/// `(1 + 2σ_1)/β_min` so that `C1 = 1/2` and the lower sandwich bound holds.
pub fn select_h2_constants(
    cert: &Certificate,
    ms: &ModalSystem,
    gain: &Gain,
) -> Result<H2Constants> {
    let sigma_next = ms.first_tail_sigma().ok_or(Error::GapTooSmall(f64::NAN))?;
    if sigma_next >= 0.0 {
        return Err(Error::GapTooSmall(sigma_next));
    }
    if ms.dim() == 0 {
        return Err(Error::CertificateFailure(
            "no unstable modes; H² constants are not needed".into(),
        ));
    }
    let alpha = cert.alpha;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::CertificateFailure(format!(
            "invalid decay margin α = {alpha}"
        )));
    }
    let sigma1 = ms.sigma[0].max(0.0);
    let lambda = ms.lambda;
    let k2 = gain.norm().powi(2);
    let forcing_gain_sq = match ms.mode {
        ActuationMode::Internal => k2 * ms.input_norm_sq.iter().sum::<f64>(),
        ActuationMode::Boundary => {
            let a_sq = ms.lifting.map(|l| l.a_norm_sq()).unwrap_or(0.0);
            (1.0 + k2) * (a_sq + ms.input_norm_sq.iter().sum::<f64>())
        }
    };
    let c3 = 1.0 / alpha;
    let bounds = [
        -1.0 / sigma_next,
        2.0 * c3 * cert.beta_max,
        forcing_gain_sq / (alpha - 1.0 / (2.0 * c3)),
        (1.0 + 2.0 * sigma1) / cert.beta_min,
    ];
    let m = (1.0 + THETA) * bounds.iter().copied().fold(0.0, f64::max);
    let c1 = ((m * cert.beta_min - sigma1) / 2.0).min(0.5);
    let c2 = (lambda * lambda).max(2.0 - lambda * lambda / sigma_next);
    let c4 = (0.5f64).max(m * cert.beta_max / 2.0);
    let a = 1.0 / (2.0 * c3 * cert.beta_max);
    let out = H2Constants {
        m,
        c1,
        c2,
        c3,
        c4,
        a,
        forcing_gain_sq,
    };
    let checks = [
        (m >= -1.0 / sigma_next, "M >= -1/σ_{n+1}"),
        (c3 > 1.0 / (2.0 * alpha), "C3 > 1/(2α)"),
        (
            forcing_gain_sq - alpha * m < -m / (2.0 * c3),
            "tail forcing bound",
        ),
        (m >= 2.0 * c3 * cert.beta_max, "M >= 2·C3·β_max"),
        (c1 > 0.0 && c2 > 0.0, "C1, C2 > 0"),
    ];
    if let Some((_, name)) = checks.iter().find(|(ok, _)| !ok) {
        return Err(Error::CertificateFailure(format!(
            "H² constant invariant violated: {name}"
        )));
    }
    Ok(out)
}
