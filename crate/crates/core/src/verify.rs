//! Invariant suites run by `satstab verify`.
//!
//! Each check is named `suite.invariant` and carries the measured value and
//! the threshold it was compared against. Random sample points come from a
//! `ChaCha8Rng` seeded with the experiment seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::experiment::{Experiment, SynthesisReport};
use crate::linalg::{eigenvalues, quad_form, spectral_abscissa, spectral_norm};
use crate::modal::ActuationMode;
use crate::saturation::{sat_scalar, sector_condition};
use crate::simulate::{h2_norm, monitor_v2, ExitReason, Nonlinearity, State, Trajectory};
use crate::spectral::{unstable_count, BoundaryCondition};
use crate::synthesis::{check_certificate, select_h2_constants, CertificateCheck, H2Constants};

pub const LYAPUNOV_SAMPLES: usize = 1000;
const PARSEVAL_FLOOR: f64 = 1e-250;
pub const SECTOR_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

struct Suite {
    checks: Vec<Check>,
}

impl Suite {
    /// Records `value ≤ threshold`.
    fn at_most(&mut self, name: &str, value: f64, threshold: f64, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed: value <= threshold,
            value,
            threshold,
            detail: detail.into(),
        });
    }

    fn flag(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            value: f64::from(u8::from(passed)),
            threshold: 1.0,
            detail: detail.into(),
        });
    }
}

/// Runs every applicable suite for `exp` with the synthesis artifacts `syn`
/// (freshly synthesized or loaded from a certificate file).
pub fn verify(exp: &Experiment, syn: &SynthesisReport, seed: u64) -> Result<VerifyReport> {
    let mut suite = Suite { checks: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spectral_suite(&mut suite, exp)?;
    modal_suite(&mut suite, exp);
    let check = synthesis_suite(&mut suite, exp, syn, &mut rng)?;
    saturation_suite(&mut suite, exp, syn, &mut rng)?;
    if check.ok {
        simulate_suite(&mut suite, exp, syn, &mut rng)?;
    } else {
        suite.flag(
            "simulate.skipped",
            false,
            "certificate invalid; closed-loop monitors not evaluated",
        );
    }
    Ok(VerifyReport {
        seed,
        checks: suite.checks,
    })
}

fn spectral_suite(s: &mut Suite, exp: &Experiment) -> Result<()> {
    let es = &exp.es;
    let closed_form = es.bc() != BoundaryCondition::Clamped;
    let ortho_tol = if closed_form { 1e-10 } else { 1e-7 };
    s.at_most(
        "spectral.orthonormality",
        es.orthonormality_error(),
        ortho_tol,
        format!("{} modes", es.count()),
    );
    let residual = (0..es.count())
        .map(|j| es.residual(j) / es.values()[j].abs().max(1.0))
        .fold(0.0, f64::max);
    s.at_most(
        "spectral.residual",
        residual,
        1e-6,
        "max ‖𝒜e_j − σ_j e_j‖ / max(1, |σ_j|)",
    );
    let length = es.params().length;
    let top = es.bc().constrained_derivatives()[1] as i32;
    let bc = (0..es.count())
        .map(|j| {
            let k = std::f64::consts::PI * (j + 1) as f64 / length;
            es.bc_residual(j) / (k.powi(top) * (2.0 / length).sqrt()).max(1.0)
        })
        .fold(0.0, f64::max);
    s.at_most(
        "spectral.boundary_conditions",
        bc,
        1e-7,
        "max boundary functional, scaled by the derivative size",
    );
    s.flag(
        "spectral.sorted",
        es.values().windows(2).all(|w| w[0] >= w[1]),
        "σ nonincreasing",
    );
    let uc = unstable_count(es)?;
    s.flag(
        "spectral.unstable_count",
        uc == exp.unstable && uc.eta > 0.0,
        format!("n = {}, η = {}", uc.n, uc.eta),
    );
    Ok(())
}

fn modal_suite(s: &mut Suite, exp: &Experiment) {
    let ms = &exp.ms;
    match ms.mode {
        ActuationMode::Internal => {
            let tail = ms.b_tail();
            let worst = (0..ms.inputs())
                .map(|k| {
                    let tail_sq = tail.column(k).norm_squared();
                    tail_sq - ms.input_norm_sq[k] * (1.0 + 1e-12)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            s.at_most("modal.bessel", worst, 0.0, "max_k Σ_{j>n} b_jk² − ‖b_k‖²");
        }
        ActuationMode::Boundary => {
            let eig = eigenvalues(&ms.a);
            let has_zero = eig.iter().any(|z| z.norm() <= 1e-12 * ms.a.amax().max(1.0));
            let mut block: Vec<f64> = (1..=ms.n).map(|i| ms.a[(i, i)]).collect();
            let mut sigma: Vec<f64> = ms.sigma[..ms.n].to_vec();
            block.sort_by(f64::total_cmp);
            sigma.sort_by(f64::total_cmp);
            let off_diag = (1..=ms.n)
                .flat_map(|i| (1..=ms.n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| ms.a[(i, j)].abs())
                .fold(0.0, f64::max);
            s.flag(
                "modal.boundary_structure",
                has_zero && block == sigma && off_diag == 0.0,
                "A has the integrator eigenvalue 0 and diag(σ_1..σ_n) below it",
            );
        }
    }
}

fn synthesis_suite(
    s: &mut Suite,
    exp: &Experiment,
    syn: &SynthesisReport,
    rng: &mut ChaCha8Rng,
) -> Result<CertificateCheck> {
    let ms = &exp.ms;
    let cert = &syn.certificate;
    s.flag(
        "synthesis.stabilizable",
        syn.kalman.stabilizable(),
        format!("Kalman rank {} of {}", syn.kalman.rank, syn.kalman.dim),
    );
    let ac = &ms.a + &ms.b * &syn.gain.k;
    let abscissa = if ms.dim() == 0 {
        f64::NEG_INFINITY
    } else {
        spectral_abscissa(&ac)
    };
    s.flag(
        "synthesis.hurwitz",
        abscissa < 0.0,
        format!("max Re λ(A + BK) = {abscissa:e}"),
    );
    let check = check_certificate(cert, ms, &syn.gain)?;
    s.flag(
        "synthesis.p_positive_definite",
        check.lambda_min_p > 0.0,
        format!("λ_min(P) = {:e}", check.lambda_min_p),
    );
    s.flag(
        "synthesis.m1_negative_definite",
        check.lambda_max_m1 < 0.0 && check.certified_alpha() > 0.0,
        format!("λ_max(M1) = {:e}", check.lambda_max_m1),
    );
    s.at_most(
        "synthesis.alpha_consistent",
        cert.alpha,
        check.certified_alpha().max(0.0),
        "stored α does not exceed the rechecked margin",
    );
    s.flag(
        "synthesis.m2_positive_semidefinite",
        check.lambda_min_m2 >= -1e-9,
        format!("λ_min(M2) = {:e}", check.lambda_min_m2),
    );
    if ms.dim() > 0 && check.lambda_min_p > 0.0 {
        let lyap = ac.transpose() * &cert.p + &cert.p * &ac;
        let worst = (0..LYAPUNOV_SAMPLES)
            .map(|_| {
                let z = random_unit(ms.dim(), rng);
                quad_form(&lyap, &z)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        s.at_most(
            "synthesis.lyapunov_decrease",
            worst,
            0.0,
            format!("max zᵀ(Acᵀ P + P Ac)z over {LYAPUNOV_SAMPLES} unit vectors (< 0 required)"),
        );
        if !cert.ell.is_unbounded() {
            let kc = &syn.gain.k - &cert.c;
            let worst = (0..SECTOR_SAMPLES)
                .map(|_| {
                    let z = on_ellipsoid(&cert.p, rng);
                    (&kc * z).amax()
                })
                .fold(0.0, f64::max);
            s.at_most(
                "synthesis.sector_inclusion",
                worst,
                cert.ell.value() * (1.0 + 1e-9),
                format!("max |((K − C)z)_j| over {SECTOR_SAMPLES} points with zᵀPz = 1"),
            );
        }
    }
    if check.ok && ms.dim() > 0 {
        match select_h2_constants(cert, ms, &syn.gain) {
            Ok(c) => {
                let ok = c.m >= 2.0 * c.c3 * cert.beta_max
                    && c.c1 > 0.0
                    && c.c2 > 0.0
                    && c.c4 >= c.c1 / 2.0
                    && c.a > 0.0;
                s.flag(
                    "synthesis.h2_constants",
                    ok,
                    format!(
                        "M = {:e}, C1..C4 = {}, {}, {:e}, {:e}",
                        c.m, c.c1, c.c2, c.c3, c.c4
                    ),
                );
            }
            Err(e) => s.flag("synthesis.h2_constants", false, e.to_string()),
        }
    }
    Ok(check)
}

fn saturation_suite(
    s: &mut Suite,
    exp: &Experiment,
    syn: &SynthesisReport,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let level = exp.level();
    let mut lipschitz: f64 = 0.0;
    let scale = if level.is_unbounded() {
        10.0
    } else {
        3.0 * level.value()
    };
    for _ in 0..SECTOR_SAMPLES {
        let a = rng.random_range(-scale..scale);
        let b = rng.random_range(-scale..scale);
        let gap = (sat_scalar(a, level) - sat_scalar(b, level)).abs() - (a - b).abs();
        lipschitz = lipschitz.max(gap);
    }
    s.at_most(
        "saturation.lipschitz",
        lipschitz,
        0.0,
        "max |sat(a) − sat(b)| − |a − b|",
    );
    let ms = &exp.ms;
    let cert = &syn.certificate;
    if ms.dim() == 0 || cert.d.len() != ms.inputs() {
        return Ok(());
    }
    let kc = &syn.gain.k - &cert.c;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..SECTOR_SAMPLES {
        let mut z = random_unit(ms.dim(), rng) * rng.random_range(0.0..10.0);
        if !level.is_unbounded() {
            let peak = (&kc * &z).amax();
            if peak > level.value() {
                z *= level.value() / peak * rng.random_range(0.0..1.0);
            }
        }
        let report = sector_condition(&z, &syn.gain.k, &cert.c, &cert.d, level)?;
        worst = worst.max(report.value);
    }
    s.at_most(
        "saturation.sector_condition",
        worst,
        1e-12,
        format!("max φ(Kz)ᵀD(φ(Kz) + Cz) over {SECTOR_SAMPLES} points with |(K − C)z| ≤ ℓ"),
    );
    Ok(())
}

fn simulate_suite(
    s: &mut Suite,
    exp: &Experiment,
    syn: &SynthesisReport,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let ms = &exp.ms;
    let cfg = exp.config.sim_config();
    let nonlinear = cfg.is_nonlinear();
    let initial = exp.initial_state()?;
    let mut run_exp_cfg = exp.config.clone();
    run_exp_cfg.record_every = 1;
    let traj = crate::simulate::run(
        &run_exp_cfg.sim_config(),
        &crate::simulate::RunInputs {
            ms,
            gain: &syn.gain,
            level: exp.level(),
            cert: Some(&syn.certificate),
            constants: syn.constants.as_ref(),
            es: Some(&exp.es),
        },
        initial.clone(),
    )?;
    s.flag(
        "simulate.completed",
        traj.exit_reason == ExitReason::Horizon,
        format!(
            "exit {:?} after {} steps",
            traj.exit_reason, traj.steps_taken
        ),
    );
    let basis = Nonlinearity::new(&exp.es, ms.modes(), exp.config.delta, exp.config.nu)?;
    let parseval = traj
        .states
        .iter()
        .map(|y| {
            let y = DVector::from_column_slice(y);
            let coeff = y.norm_squared();
            // Below this the quadrature squares underflow.
            if coeff < PARSEVAL_FLOOR {
                0.0
            } else {
                (basis.l2_sq(&y) - coeff).abs() / coeff
            }
        })
        .fold(0.0, f64::max);
    // |yᵀ(G − I)y| ≤ J·max|G − I|·|y|² for the Gram matrix G of the basis.
    let gram_slack = ms.modes() as f64 * exp.es.truncated(ms.modes()).orthonormality_error();
    s.at_most(
        "simulate.parseval",
        parseval,
        1e-12 + gram_slack,
        "max |‖y‖² − Σy_j²| / Σy_j² over samples",
    );
    if exp.config.delta > 0.0 && exp.es.bc() != BoundaryCondition::NeumannCH {
        let flux = max_over(&traj, |y| basis.flux(y).abs());
        s.at_most(
            "simulate.ks_flux",
            flux,
            1e-10,
            "max |∫ y² y_x| over samples",
        );
    }
    if exp.config.nu > 0.0 {
        let mut states: Vec<DVector<f64>> = traj
            .states
            .iter()
            .map(|y| DVector::from_column_slice(y))
            .collect();
        let amp = h2_norm(ms, &initial).max(1e-3);
        for _ in 0..100 {
            let y = DVector::from_fn(ms.modes(), |i, _| {
                rng.random_range(-1.0..1.0) * amp / ((i + 1) as f64).powi(3)
            });
            states.push(y);
        }
        let mut pairing = f64::NEG_INFINITY;
        let mut gap: f64 = 0.0;
        for y in &states {
            let (direct, by_parts) = basis.ch_pairing(y);
            pairing = pairing.max(direct);
            gap = gap.max((direct - by_parts).abs());
        }
        s.at_most(
            "simulate.ch_dissipativity",
            pairing,
            1e-12,
            "max ⟨(y³)_xx, y⟩ over samples and 100 random states",
        );
        s.at_most(
            "simulate.ch_integration_by_parts",
            gap,
            1e-10,
            "max |⟨(y³)_xx, y⟩ + 3∫y²y_x²|",
        );
    }
    let z0 = initial.z(ms);
    let inside = ms.dim() > 0 && quad_form(&syn.certificate.p, &z0) <= 1.0;
    if inside && !nonlinear {
        s.flag(
            "simulate.region_invariance",
            !traj.left_region,
            format!("first exit {:?}", traj.first_exit_time),
        );
    }
    if let (Some(constants), ActuationMode::Internal) = (&syn.constants, ms.mode) {
        v2_checks(
            s,
            exp,
            syn,
            constants,
            &traj,
            &initial,
            inside && !nonlinear,
        );
        if inside && !nonlinear {
            tail_check(s, exp, syn, constants, &traj);
        }
    }
    Ok(())
}

fn v2_checks(
    s: &mut Suite,
    exp: &Experiment,
    syn: &SynthesisReport,
    constants: &H2Constants,
    traj: &Trajectory,
    initial: &State,
    envelope: bool,
) {
    let ms = &exp.ms;
    let cert = &syn.certificate;
    let v20 = monitor_v2(initial, ms, cert, constants).v2;
    let h0 = h2_norm(ms, initial);
    s.at_most(
        "simulate.v2_initial",
        v20,
        constants.c4 * h0 * h0 * (1.0 + 1e-12),
        "V2(0) ≤ C4‖y0‖²_{H²}",
    );
    let mut sandwich = f64::NEG_INFINITY;
    for y in &traj.states {
        let st = State::new(DVector::from_column_slice(y));
        let r = monitor_v2(&st, ms, cert, constants);
        sandwich = sandwich.max(r.lower_bound - r.v2);
    }
    s.at_most(
        "simulate.v2_sandwich",
        sandwich,
        0.0,
        "max (lower bound − V2) over samples",
    );
    if envelope {
        let worst = traj
            .times
            .iter()
            .zip(&traj.v2)
            .map(|(t, v)| v / ((-constants.a * t).exp() * v20))
            .fold(0.0, f64::max);
        s.at_most(
            "simulate.v2_envelope",
            worst,
            1.05,
            "max V2(t) / (e^{−at} V2(0))",
        );
    }
}

/// Duhamel bound on the tail coefficients: with `Z = sup_s |z(s)| e^{a s}`,
/// `|y_j(t)| ≤ e^{−ηt}|y_j(0)| + ‖b_j‖‖K‖ Z e^{a·dt} (e^{−at} − e^{−ηt})/(η − a)`.
fn tail_check(
    s: &mut Suite,
    exp: &Experiment,
    syn: &SynthesisReport,
    constants: &H2Constants,
    traj: &Trajectory,
) {
    let ms = &exp.ms;
    let n = ms.n;
    if ms.modes() == n {
        return;
    }
    let a = constants.a;
    let eta = exp.unstable.eta;
    let k_norm = spectral_norm(&syn.gain.k);
    let z_sup = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, y)| DVector::from_column_slice(&y[..n]).norm() * (a * t).exp())
        .fold(0.0, f64::max);
    let lag = (a * exp.config.dt).exp();
    let y0 = &traj.states[0];
    let mut worst: f64 = 0.0;
    for (t, y) in traj.times.iter().zip(&traj.states) {
        let kernel = if (eta - a).abs() <= 1e-12 * eta {
            t * (-eta * t).exp()
        } else {
            ((-a * t).exp() - (-eta * t).exp()) / (eta - a)
        };
        for j in n..ms.modes() {
            let b_norm = ms.input.row(j).norm();
            let bound = (-eta * t).exp() * y0[j].abs() + b_norm * k_norm * z_sup * lag * kernel;
            if bound > 0.0 {
                worst = worst.max(y[j].abs() / bound);
            } else if y[j] != 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    s.at_most(
        "simulate.tail_bound",
        worst,
        1.0 + 1e-9,
        "max |y_j(t)| / Duhamel bound over tail modes and samples",
    );
}

fn max_over(traj: &Trajectory, f: impl Fn(&DVector<f64>) -> f64) -> f64 {
    traj.states
        .iter()
        .map(|y| f(&DVector::from_column_slice(y)))
        .fold(0.0, f64::max)
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let z = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let norm = z.norm();
        if norm > 1e-3 {
            return z / norm;
        }
    }
}

fn on_ellipsoid(p: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let z = random_unit(p.nrows(), rng);
    let v = quad_form(p, &z);
    z / v.sqrt()
}
