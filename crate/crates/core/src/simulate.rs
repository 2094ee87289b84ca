//! Closed-loop modal time integration with Lyapunov monitors.
//!
//! Every stepper is exponential Euler: the diagonal linear part is
//! propagated exactly and the forcing (saturated feedback, lifting drift,
//! projected nonlinearity) is frozen over the step.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::quad_form;
use crate::modal::{ActuationMode, ModalSystem};
use crate::quadrature::{gauss_legendre, Quadrature};
use crate::saturation::{sat_scalar, SaturationLevel};
use crate::spectral::EigenSystem;
use crate::synthesis::{Certificate, Gain, H2Constants};

pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e6;

/// `(e^h − 1)/h` with `φ₁(0) = 1`.
pub fn phi1(h: f64) -> f64 {
    if h.abs() < 1e-5 {
        1.0 + h / 2.0 + h * h / 6.0 + h * h * h / 24.0
    } else {
        h.exp_m1() / h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub nu: f64,
    #[serde(default = "default_threshold")]
    pub blowup_threshold: f64,
    /// Record every `record_every`-th step.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// End the run as soon as `z` leaves the certified ellipsoid.
    #[serde(default)]
    pub stop_on_exit: bool,
}

fn default_threshold() -> f64 {
    DEFAULT_BLOWUP_THRESHOLD
}

fn default_record_every() -> usize {
    1
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            delta: 0.0,
            nu: 0.0,
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            record_every: 1,
            stop_on_exit: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(
                "dt",
                format!("must be > 0, got {}", self.dt),
            ));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::invalid(
                "horizon",
                format!("must be >= 0, got {}", self.horizon),
            ));
        }
        if !(self.delta >= 0.0 && self.nu >= 0.0) {
            return Err(Error::invalid(
                "delta/nu",
                "nonlinearity weights must be >= 0",
            ));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::invalid("blowup_threshold", "must be > 0"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be >= 1"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn is_nonlinear(&self) -> bool {
        self.delta != 0.0 || self.nu != 0.0
    }
}

/// Modal state. `u` is the boundary integrator and stays 0 for internal
/// actuation; `y` holds the retained coefficients (of `w` in boundary mode).
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub u: f64,
    pub y: DVector<f64>,
}

impl State {
    pub fn new(y: DVector<f64>) -> Self {
        Self { u: 0.0, y }
    }

    /// Controlled coordinates `z`.
    pub fn z(&self, ms: &ModalSystem) -> DVector<f64> {
        match ms.mode {
            ActuationMode::Internal => self.y.rows(0, ms.n).into_owned(),
            ActuationMode::Boundary => {
                let mut z = DVector::zeros(ms.n + 1);
                z[0] = self.u;
                z.rows_mut(1, ms.n).copy_from(&self.y.rows(0, ms.n));
                z
            }
        }
    }
}

/// `KS/CH` nonlinearity `𝒩(y) = δ y y_x − ν (y³)_xx`, evaluated on a
/// quadrature grid and projected back onto the retained modes.
#[derive(Clone, Debug)]
pub struct Nonlinearity {
    delta: f64,
    nu: f64,
    weights: DVector<f64>,
    e0: DMatrix<f64>,
    e1: DMatrix<f64>,
    e2: DMatrix<f64>,
    /// `e0ᵀ diag(w)`, the projection onto the modes.
    proj: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct Fields {
    pub y: DVector<f64>,
    pub yx: DVector<f64>,
    pub yxx: DVector<f64>,
}

impl Nonlinearity {
    pub fn new(es: &EigenSystem, count: usize, delta: f64, nu: f64) -> Result<Self> {
        if count > es.count() {
            return Err(Error::Dimension(format!(
                "nonlinearity over {count} modes, {} available",
                es.count()
            )));
        }
        let es = es.truncated(count);
        let quad = es.quadrature().clone();
        Self::with_quadrature(&es, quad, delta, nu)
    }

    pub fn with_quadrature(
        es: &EigenSystem,
        quad: Quadrature,
        delta: f64,
        nu: f64,
    ) -> Result<Self> {
        let e0 = es.table(&quad, 0);
        let e1 = es.table(&quad, 1);
        let e2 = es.table(&quad, 2);
        let weights = DVector::from_vec(quad.weights.clone());
        let mut proj = e0.transpose();
        for (q, w) in quad.weights.iter().enumerate() {
            proj.column_mut(q).scale_mut(*w);
        }
        Ok(Self {
            delta,
            nu,
            weights,
            e0,
            e1,
            e2,
            proj,
        })
    }

    pub fn fields(&self, y: &DVector<f64>) -> Fields {
        Fields {
            y: &self.e0 * y,
            yx: &self.e1 * y,
            yxx: &self.e2 * y,
        }
    }

    /// `f_j = ⟨−𝒩(y), e_j⟩`
    pub fn forcing(&self, y: &DVector<f64>) -> DVector<f64> {
        let f = self.fields(y);
        let values = DVector::from_fn(f.y.len(), |q, _| {
            let (v, vx, vxx) = (f.y[q], f.yx[q], f.yxx[q]);
            let n = self.delta * v * vx - self.nu * (6.0 * v * vx * vx + 3.0 * v * v * vxx);
            -n
        });
        &self.proj * values
    }

    fn integrate(&self, values: impl Iterator<Item = f64>) -> f64 {
        values.zip(self.weights.iter()).map(|(v, w)| v * w).sum()
    }

    /// `∫ y² y_x dx`, which vanishes when `y(0) = y(L) = 0`.
    pub fn flux(&self, y: &DVector<f64>) -> f64 {
        let f = self.fields(y);
        self.integrate((0..f.y.len()).map(|q| f.y[q] * f.y[q] * f.yx[q]))
    }

    /// `⟨(y³)_xx, y⟩` and `−3 ∫ y² y_x² dx`; equal under all three BC families.
    pub fn ch_pairing(&self, y: &DVector<f64>) -> (f64, f64) {
        let f = self.fields(y);
        let direct = self.integrate((0..f.y.len()).map(|q| {
            let (v, vx, vxx) = (f.y[q], f.yx[q], f.yxx[q]);
            (6.0 * v * vx * vx + 3.0 * v * v * vxx) * v
        }));
        let by_parts =
            self.integrate((0..f.y.len()).map(|q| -3.0 * f.y[q] * f.y[q] * f.yx[q] * f.yx[q]));
        (direct, by_parts)
    }

    /// `‖y‖²` by quadrature (for Parseval checks).
    pub fn l2_sq(&self, y: &DVector<f64>) -> f64 {
        let f = self.fields(y);
        self.integrate(f.y.iter().map(|v| v * v))
    }
}

/// Precomputed exponential-Euler factors for one system and step size.
#[derive(Clone, Debug)]
pub struct Stepper<'a> {
    ms: &'a ModalSystem,
    gain: &'a Gain,
    level: SaturationLevel,
    dt: f64,
    decay: DVector<f64>,
    phi: DVector<f64>,
    nonlinearity: Option<Nonlinearity>,
}

/// Control data of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepControl {
    /// Commanded input `Kz` before saturation.
    pub commanded: DVector<f64>,
    pub applied: DVector<f64>,
}

impl StepControl {
    pub fn active(&self) -> Vec<bool> {
        self.commanded
            .iter()
            .zip(self.applied.iter())
            .map(|(c, a)| c != a)
            .collect()
    }
}

impl<'a> Stepper<'a> {
    pub fn new(
        ms: &'a ModalSystem,
        gain: &'a Gain,
        level: SaturationLevel,
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
        }
        if gain.k.shape() != (ms.inputs(), ms.dim()) {
            return Err(Error::Dimension(format!(
                "gain {:?} does not match system ({}, {})",
                gain.k.shape(),
                ms.inputs(),
                ms.dim()
            )));
        }
        let decay = DVector::from_iterator(ms.modes(), ms.sigma.iter().map(|s| (s * dt).exp()));
        let phi = DVector::from_iterator(ms.modes(), ms.sigma.iter().map(|s| phi1(s * dt) * dt));
        Ok(Self {
            ms,
            gain,
            level,
            dt,
            decay,
            phi,
            nonlinearity: None,
        })
    }

    pub fn with_nonlinearity(mut self, nl: Nonlinearity) -> Result<Self> {
        if self.ms.mode == ActuationMode::Boundary {
            return Err(Error::invalid(
                "delta/nu",
                "the boundary loop is linear; nonlinear terms are not supported",
            ));
        }
        if nl.e0.ncols() != self.ms.modes() {
            return Err(Error::Dimension("nonlinearity mode count mismatch".into()));
        }
        self.nonlinearity = Some(nl);
        Ok(self)
    }

    pub fn nonlinearity(&self) -> Option<&Nonlinearity> {
        self.nonlinearity.as_ref()
    }

    pub fn control(&self, state: &State) -> StepControl {
        let commanded = &self.gain.k * state.z(self.ms);
        let applied = commanded.map(|v| sat_scalar(v, self.level));
        StepControl { commanded, applied }
    }

    /// Advances one step and returns the control held over it.
    pub fn step(&self, state: &mut State) -> StepControl {
        let ctrl = self.control(state);
        let mut forcing = &self.ms.input * &ctrl.applied;
        if let Some(drift) = &self.ms.drift {
            forcing.axpy(state.u, drift, 1.0);
        }
        if let Some(nl) = &self.nonlinearity {
            forcing += nl.forcing(&state.y);
        }
        if self.ms.mode == ActuationMode::Boundary {
            state.u += self.dt * ctrl.applied[0];
        }
        state.y.component_mul_assign(&self.decay);
        state.y += forcing.component_mul(&self.phi);
        ctrl
    }
}

/// `‖y‖_{H²}` from the Gram matrices (plus `|u|` in boundary mode).
pub fn h2_norm(ms: &ModalSystem, state: &State) -> f64 {
    let y = &state.y;
    let sq = y.norm_squared() + quad_form(&ms.gram_d1, y) + quad_form(&ms.gram_d2, y);
    (sq + state.u * state.u).sqrt()
}

fn check_blowup(ms: &ModalSystem, state: &State, time: f64, threshold: f64) -> Result<()> {
    let norm = h2_norm(ms, state);
    if !norm.is_finite() || norm > threshold {
        return Err(Error::BlowUp {
            time,
            norm,
            threshold,
        });
    }
    Ok(())
}

/// One exponential-Euler step of `ẏ_j = σ_j y_j + (B sat(Kz))_j`.
pub fn step_linear_closed_loop(
    y: &DVector<f64>,
    ms: &ModalSystem,
    gain: &Gain,
    level: SaturationLevel,
    dt: f64,
) -> Result<DVector<f64>> {
    let stepper = Stepper::new(ms, gain, level, dt)?;
    let mut state = State::new(y.clone());
    stepper.step(&mut state);
    check_blowup(ms, &state, dt, DEFAULT_BLOWUP_THRESHOLD)?;
    Ok(state.y)
}

/// As [`step_linear_closed_loop`] with the projected nonlinearity added.
pub fn step_nonlinear_closed_loop(
    y: &DVector<f64>,
    ms: &ModalSystem,
    gain: &Gain,
    level: SaturationLevel,
    nl: &Nonlinearity,
    config: &SimConfig,
) -> Result<DVector<f64>> {
    let stepper = Stepper::new(ms, gain, level, config.dt)?.with_nonlinearity(nl.clone())?;
    let mut state = State::new(y.clone());
    stepper.step(&mut state);
    check_blowup(ms, &state, config.dt, config.blowup_threshold)?;
    Ok(state.y)
}

/// One step of the boundary loop `u̇ = sat(h)`, `ẇ_j = σ_j w_j + a_j u + b_j sat(h)`.
pub fn step_boundary_closed_loop(
    state: &State,
    ms: &ModalSystem,
    gain: &Gain,
    level: SaturationLevel,
    dt: f64,
) -> Result<State> {
    if ms.mode != ActuationMode::Boundary {
        return Err(Error::invalid(
            "mode",
            "boundary stepper needs a boundary system",
        ));
    }
    let stepper = Stepper::new(ms, gain, level, dt)?;
    let mut next = state.clone();
    stepper.step(&mut next);
    check_blowup(ms, &next, dt, DEFAULT_BLOWUP_THRESHOLD)?;
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    Horizon,
    BlowUp,
    LeftRegion,
}

/// Monitor channel selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// `‖y‖_{L²}` (of `w` in boundary mode)
    L2,
    /// `‖∂ₓy‖`
    H1,
    /// `‖∂ₓ²y‖`
    H2,
    /// Full H² norm `sqrt(‖y‖² + ‖∂ₓy‖² + ‖∂ₓ²y‖²)`
    H2Norm,
    V1,
    V2,
    /// Boundary mode: `|u| + ‖w‖`
    BoundaryNorm,
    /// Boundary mode: `‖y‖` of the reconstructed field `y = w + d·u`
    YL2,
}

impl Channel {
    pub fn parse(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_string()))
            .map_err(|_| Error::invalid("channel", format!("unknown monitor channel `{name}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub mode: ActuationMode,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Boundary integrator `u`; empty for internal actuation.
    pub boundary_u: Vec<f64>,
    /// Commanded inputs `Kz` (or `h`) before saturation.
    pub controls: Vec<Vec<f64>>,
    pub sat_active: Vec<Vec<bool>>,
    pub l2: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub y_l2: Vec<f64>,
    /// `zᵀPz ≤ 1` at each sample (true when no certificate is given).
    pub in_region: Vec<bool>,
    pub exit_reason: ExitReason,
    pub left_region: bool,
    pub first_exit_time: Option<f64>,
    /// Steps with at least one saturated channel, out of `steps_taken`.
    pub saturated_steps: usize,
    pub steps_taken: usize,
    pub blowup: Option<(f64, f64)>,
    pub blowup_threshold: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channel(&self, ch: Channel) -> Vec<f64> {
        match ch {
            Channel::L2 => self.l2.clone(),
            Channel::H1 => self.h1.clone(),
            Channel::H2 => self.h2.clone(),
            Channel::H2Norm => (0..self.len())
                .map(|i| (self.l2[i].powi(2) + self.h1[i].powi(2) + self.h2[i].powi(2)).sqrt())
                .collect(),
            Channel::V1 => self.v1.clone(),
            Channel::V2 => self.v2.clone(),
            Channel::BoundaryNorm => (0..self.len())
                .map(|i| self.boundary_u.get(i).copied().unwrap_or(0.0).abs() + self.l2[i])
                .collect(),
            Channel::YL2 => self.y_l2.clone(),
        }
    }

    pub fn sat_duty_cycle(&self) -> f64 {
        if self.steps_taken == 0 {
            0.0
        } else {
            self.saturated_steps as f64 / self.steps_taken as f64
        }
    }

    /// Turns a blown-up run into the corresponding error.
    pub fn require_completed(&self) -> Result<()> {
        match (self.exit_reason, self.blowup) {
            (ExitReason::BlowUp, Some((time, norm))) => Err(Error::BlowUp {
                time,
                norm,
                threshold: self.blowup_threshold,
            }),
            _ => Ok(()),
        }
    }

    /// CSV with header `t, y_1..y_J, u_1..u_m, sat_active_1..m, l2, h1, h2,
    /// v1, v2` and, in boundary mode, trailing `boundary_u, y_l2`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let j = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=j).map(|i| format!("y_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.extend((1..=m).map(|i| format!("sat_active_{i}")));
        header.extend(["l2", "h1", "h2", "v1", "v2"].map(String::from));
        let boundary = self.mode == ActuationMode::Boundary;
        if boundary {
            header.extend(["boundary_u", "y_l2"].map(String::from));
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![fmt(self.times[i])];
            row.extend(self.states[i].iter().map(|&v| fmt(v)));
            row.extend(self.controls[i].iter().map(|&v| fmt(v)));
            row.extend(self.sat_active[i].iter().map(|&b| u8::from(b).to_string()));
            for v in [self.l2[i], self.h1[i], self.h2[i], self.v1[i], self.v2[i]] {
                row.push(fmt(v));
            }
            if boundary {
                row.push(fmt(self.boundary_u[i]));
                row.push(fmt(self.y_l2[i]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// `V2 = (M/2) zᵀPz + Σ_j (−σ_j) y_j²` and the lower sandwich bound
/// `(C1/2)|z|² + (C1/(2C2))‖∂ₓ²y‖²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct V2Report {
    pub v2: f64,
    pub lower_bound: f64,
}

pub fn monitor_v2(
    state: &State,
    ms: &ModalSystem,
    cert: &Certificate,
    constants: &H2Constants,
) -> V2Report {
    let z = state.z(ms);
    let v1 = quad_form(&cert.p, &z);
    let spectral: f64 = state.y.iter().zip(&ms.sigma).map(|(y, s)| -s * y * y).sum();
    let h2_sq = quad_form(&ms.gram_d2, &state.y);
    V2Report {
        v2: 0.5 * constants.m * v1 + spectral,
        lower_bound: 0.5 * constants.c1 * z.norm_squared()
            + constants.c1 / (2.0 * constants.c2) * h2_sq,
    }
}

/// Everything a run needs besides the initial state.
pub struct RunInputs<'a> {
    pub ms: &'a ModalSystem,
    pub gain: &'a Gain,
    pub level: SaturationLevel,
    pub cert: Option<&'a Certificate>,
    pub constants: Option<&'a H2Constants>,
    /// Required when the configuration enables a nonlinearity.
    pub es: Option<&'a EigenSystem>,
}

fn empty_trajectory(mode: ActuationMode, blowup_threshold: f64) -> Trajectory {
    Trajectory {
        mode,
        times: Vec::new(),
        states: Vec::new(),
        boundary_u: Vec::new(),
        controls: Vec::new(),
        sat_active: Vec::new(),
        l2: Vec::new(),
        h1: Vec::new(),
        h2: Vec::new(),
        v1: Vec::new(),
        v2: Vec::new(),
        y_l2: Vec::new(),
        in_region: Vec::new(),
        exit_reason: ExitReason::Horizon,
        left_region: false,
        first_exit_time: None,
        saturated_steps: 0,
        steps_taken: 0,
        blowup: None,
        blowup_threshold,
    }
}

fn v1_of(inputs: &RunInputs<'_>, state: &State) -> f64 {
    inputs
        .cert
        .map_or(f64::NAN, |c| quad_form(&c.p, &state.z(inputs.ms)))
}

fn record(
    traj: &mut Trajectory,
    inputs: &RunInputs<'_>,
    t: f64,
    state: &State,
    ctrl: &StepControl,
) {
    let ms = inputs.ms;
    let y = &state.y;
    let l2 = y.norm();
    let v1 = v1_of(inputs, state);
    let v2 = match (inputs.cert, inputs.constants) {
        (Some(c), Some(k)) => monitor_v2(state, ms, c, k).v2,
        _ => f64::NAN,
    };
    let y_l2 = match ms.lifting {
        Some(lift) if ms.mode == ActuationMode::Boundary => {
            // ⟨w, d⟩ = −Σ w_j b_j because b = −d.
            let wd = -y.dot(&ms.input.column(0));
            let dn = lift.d_norm();
            (l2 * l2 + 2.0 * state.u * wd + state.u * state.u * dn * dn)
                .max(0.0)
                .sqrt()
        }
        _ => l2,
    };
    traj.times.push(t);
    traj.states.push(y.iter().copied().collect());
    if ms.mode == ActuationMode::Boundary {
        traj.boundary_u.push(state.u);
    }
    traj.controls.push(ctrl.commanded.iter().copied().collect());
    traj.sat_active.push(ctrl.active());
    traj.l2.push(l2);
    traj.h1.push(quad_form(&ms.gram_d1, y).max(0.0).sqrt());
    traj.h2.push(quad_form(&ms.gram_d2, y).max(0.0).sqrt());
    traj.v1.push(v1);
    traj.v2.push(v2);
    traj.y_l2.push(y_l2);
    traj.in_region.push(inputs.cert.is_none() || v1 <= 1.0);
}

/// Integrates from `initial` to the horizon, a blow-up, or (optionally) the
/// first exit from the certified ellipsoid. A blow-up ends the run with
/// `ExitReason::BlowUp`; [`Trajectory::require_completed`] converts it into
/// an error.
pub fn run(config: &SimConfig, inputs: &RunInputs<'_>, initial: State) -> Result<Trajectory> {
    config.validate()?;
    let ms = inputs.ms;
    if initial.y.len() != ms.modes() {
        return Err(Error::Dimension(format!(
            "initial state has {} modes, system retains {}",
            initial.y.len(),
            ms.modes()
        )));
    }
    let mut stepper = Stepper::new(ms, inputs.gain, inputs.level, config.dt)?;
    if config.is_nonlinear() {
        let es = inputs.es.ok_or_else(|| {
            Error::invalid("delta/nu", "nonlinear runs need the eigenfunction basis")
        })?;
        let nl = Nonlinearity::new(es, ms.modes(), config.delta, config.nu)?;
        stepper = stepper.with_nonlinearity(nl)?;
    }
    let mut traj = empty_trajectory(ms.mode, config.blowup_threshold);
    let mut state = initial;
    let ctrl = stepper.control(&state);
    record(&mut traj, inputs, 0.0, &state, &ctrl);
    if inputs.cert.is_some() && !traj.in_region[0] {
        traj.left_region = true;
        traj.first_exit_time = Some(0.0);
    }
    let steps = config.steps();
    for k in 1..=steps {
        let applied = stepper.step(&mut state);
        traj.steps_taken += 1;
        if applied.active().iter().any(|&a| a) {
            traj.saturated_steps += 1;
        }
        let t = k as f64 * config.dt;
        let norm = h2_norm(ms, &state);
        if !norm.is_finite() || norm > config.blowup_threshold {
            let ctrl = stepper.control(&state);
            record(&mut traj, inputs, t, &state, &ctrl);
            traj.exit_reason = ExitReason::BlowUp;
            traj.blowup = Some((t, norm));
            return Ok(traj);
        }
        let outside = inputs.cert.is_some() && v1_of(inputs, &state) > 1.0;
        if outside && !traj.left_region {
            traj.left_region = true;
            traj.first_exit_time = Some(t);
        }
        if k % config.record_every == 0 || k == steps || (outside && config.stop_on_exit) {
            let ctrl = stepper.control(&state);
            record(&mut traj, inputs, t, &state, &ctrl);
        }
        if outside && config.stop_on_exit {
            traj.exit_reason = ExitReason::LeftRegion;
            return Ok(traj);
        }
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    /// `−slope` of the least-squares line through `ln(channel)`.
    pub rate: f64,
    /// `exp(intercept) / channel(t = first sample)`, so that the fit reads
    /// `channel(t) ≈ prefactor · e^{−rate·t} · channel(0)`.
    pub prefactor: f64,
    pub r_squared: f64,
    pub samples: usize,
}

impl DecayFit {
    pub fn envelope(&self, t: f64, initial: f64) -> f64 {
        self.prefactor * (-self.rate * t).exp() * initial
    }
}

/// Least-squares fit of `ln(channel)` against `t` on `[t_start, T]`.
pub fn fit_decay_rate(traj: &Trajectory, channel: Channel, t_start: f64) -> Result<DecayFit> {
    let values = traj.channel(channel);
    let name = || format!("{channel:?}").to_lowercase();
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for (&t, &v) in traj.times.iter().zip(&values) {
        if t + 1e-12 < t_start {
            continue;
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositiveChannel {
                channel: name(),
                time: t,
            });
        }
        ts.push(t);
        logs.push(v.ln());
    }
    if ts.len() < 2 {
        return Err(Error::invalid(
            "t_start",
            "fewer than two samples in the fitting window",
        ));
    }
    let first = values[0];
    if !(first > 0.0 && first.is_finite()) {
        return Err(Error::NonPositiveChannel {
            channel: name(),
            time: traj.times[0],
        });
    }
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let lm = logs.iter().sum::<f64>() / n;
    let sxx: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
    let sxy: f64 = ts.iter().zip(&logs).map(|(t, l)| (t - tm) * (l - lm)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = lm - slope * tm;
    let ss_tot: f64 = logs.iter().map(|l| (l - lm).powi(2)).sum();
    let ss_res: f64 = ts
        .iter()
        .zip(&logs)
        .map(|(t, l)| (l - intercept - slope * t).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(DecayFit {
        rate: -slope,
        prefactor: intercept.exp() / first,
        r_squared,
        samples: ts.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallBound {
    pub times: Vec<f64>,
    /// `exp(∫b)·w^{1/q}` where `w > 0`, NaN afterwards.
    pub bound: Vec<f64>,
    pub w: Vec<f64>,
    /// First grid time with `w ≤ 0`.
    pub expired_at: Option<f64>,
}

impl GronwallBound {
    pub fn require_valid(&self) -> Result<()> {
        match self.expired_at {
            Some(time) => {
                let idx = self.times.iter().position(|&t| t == time).unwrap_or(0);
                Err(Error::BoundExpired {
                    time,
                    w: self.w[idx],
                })
            }
            None => Ok(()),
        }
    }
}

const GRONWALL_ORDER: usize = 10;
const GRONWALL_MAX_PANEL: f64 = 0.25;

/// Bernoulli-type comparison bound for `v' ≤ b v + k v^p`, `p ≠ 1`:
/// `v(t) ≤ exp(∫₀ᵗ b)·w(t)^{1/q}` with `q = 1 − p` and
/// `w(t) = v0^q + q ∫₀ᵗ k(s) exp(−q ∫₀ˢ b) ds`.
pub fn gronwall_bound(
    v0: f64,
    b: &dyn Fn(f64) -> f64,
    k: &dyn Fn(f64) -> f64,
    p: f64,
    t_grid: &[f64],
) -> Result<GronwallBound> {
    if !(p >= 0.0 && p.is_finite()) || p == 1.0 {
        return Err(Error::invalid(
            "p",
            format!("need p >= 0 and p != 1, got {p}"),
        ));
    }
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(Error::invalid("v0", format!("must be > 0, got {v0}")));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(
            "t_grid",
            "must be non-empty and strictly increasing",
        ));
    }
    let q = 1.0 - p;
    let (xr, wr) = gauss_legendre(GRONWALL_ORDER);
    let gl = |a: f64, c: f64, f: &dyn Fn(f64) -> f64| -> f64 {
        let h = 0.5 * (c - a);
        xr.iter()
            .zip(&wr)
            .map(|(x, w)| w * f(a + h * (x + 1.0)))
            .sum::<f64>()
            * h
    };
    let mut big_b = 0.0;
    let mut integral = 0.0;
    let mut out = GronwallBound {
        times: t_grid.to_vec(),
        bound: Vec::with_capacity(t_grid.len()),
        w: Vec::with_capacity(t_grid.len()),
        expired_at: None,
    };
    let push = |out: &mut GronwallBound, t: f64, big_b: f64, integral: f64| {
        let w = v0.powf(q) + q * integral;
        out.w.push(w);
        if w > 0.0 && out.expired_at.is_none() {
            out.bound.push(big_b.exp() * w.powf(1.0 / q));
        } else {
            out.expired_at.get_or_insert(t);
            out.bound.push(f64::NAN);
        }
    };
    push(&mut out, t_grid[0], 0.0, 0.0);
    for win in t_grid.windows(2) {
        let panels = ((win[1] - win[0]) / GRONWALL_MAX_PANEL).ceil().max(1.0) as usize;
        let h = (win[1] - win[0]) / panels as f64;
        for i in 0..panels {
            let a = win[0] + i as f64 * h;
            let c = a + h;
            let b_at_a = big_b;
            let integrand = |s: f64| k(s) * (-q * (b_at_a + gl(a, s, b))).exp();
            integral += gl(a, c, &integrand);
            big_b += gl(a, c, b);
        }
        push(&mut out, win[1], big_b, integral);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPreset {
    /// Only the first retained mode.
    FirstMode,
    /// Equal weight on every unstable mode.
    Unstable,
    /// `(−1)^j / j²` on all retained modes.
    Smooth,
    /// Seeded random coefficients decaying like `j^{-3}`.
    Random,
}

/// Initial state from a preset, scaled to the given H² norm.
pub fn preset_state(
    preset: InitialPreset,
    amplitude: f64,
    ms: &ModalSystem,
    seed: u64,
) -> Result<State> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::invalid("amplitude", "must be finite and >= 0"));
    }
    let j = ms.modes();
    if j == 0 {
        return Err(Error::invalid("modes", "no retained modes"));
    }
    let mut y = DVector::zeros(j);
    match preset {
        InitialPreset::FirstMode => y[0] = 1.0,
        InitialPreset::Unstable => {
            for i in 0..ms.n.max(1).min(j) {
                y[i] = 1.0;
            }
        }
        InitialPreset::Smooth => {
            for i in 0..j {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                y[i] = sign / ((i + 1) as f64).powi(2);
            }
        }
        InitialPreset::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..j {
                y[i] = rng.random_range(-1.0..1.0) / ((i + 1) as f64).powi(3);
            }
        }
    }
    let norm = h2_norm(ms, &State::new(y.clone()));
    if norm > 0.0 {
        y *= amplitude / norm;
    }
    Ok(State::new(y))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BasinEstimate {
    /// Largest amplitude observed to decay.
    pub epsilon: f64,
    /// Smallest amplitude observed not to decay (None if all tested decayed).
    pub failure: Option<f64>,
    pub evaluations: usize,
}

/// Bisection on the initial amplitude between a decaying `lo` and a
/// non-decaying `hi`.
pub fn estimate_basin(
    lo: f64,
    hi: f64,
    iterations: usize,
    mut decays: impl FnMut(f64) -> Result<bool>,
) -> Result<BasinEstimate> {
    if !(0.0 < lo && lo < hi) {
        return Err(Error::invalid("basin_search", "need 0 < lo < hi"));
    }
    let mut evaluations = 2;
    if decays(hi)? {
        return Ok(BasinEstimate {
            epsilon: hi,
            failure: None,
            evaluations,
        });
    }
    if !decays(lo)? {
        return Ok(BasinEstimate {
            epsilon: 0.0,
            failure: Some(lo),
            evaluations,
        });
    }
    let (mut good, mut bad) = (lo, hi);
    for _ in 0..iterations {
        // Geometric midpoint: amplitudes span decades.
        let mid = (good * bad).sqrt();
        evaluations += 1;
        if decays(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(BasinEstimate {
        epsilon: good,
        failure: Some(bad),
        evaluations,
    })
}
