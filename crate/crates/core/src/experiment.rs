//! JSON experiment configuration and the end-to-end pipeline built from it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modal::{
    actuator_coefficients, assemble_boundary, assemble_internal, ActuationMode, ActuatorShape,
    Lifting, ModalSystem,
};
use crate::saturation::SaturationLevel;
use crate::simulate::{preset_state, run, InitialPreset, RunInputs, SimConfig, State, Trajectory};
use crate::spectral::{
    eigen_system, unstable_count, BoundaryCondition, EigenSystem, OperatorParams, UnstableCount,
};
use crate::synthesis::{
    build_certificate, check_certificate, design_gain, kalman_diagnose, select_h2_constants,
    Certificate, CertificateCheck, Gain, GainTarget, H2Constants, KalmanReport,
};

/// Environment variable overriding `seed`.
pub const SEED_ENV: &str = "SATSTAB_SEED";

/// Modes computed when `modes` is not given, before the `8n` rule applies.
pub const DEFAULT_MODES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Modal {
        modal: Vec<f64>,
    },
    Preset {
        preset: InitialPreset,
        amplitude: f64,
    },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Preset {
            preset: InitialPreset::Smooth,
            amplitude: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinSearch {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_basin_iterations")]
    pub iterations: usize,
    /// A run decays when it reaches the horizon with final H² norm at most
    /// `decay_factor` times the initial one.
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
}

fn default_decay_factor() -> f64 {
    1e-2
}

fn default_basin_iterations() -> usize {
    12
}

fn default_ell() -> SaturationLevel {
    SaturationLevel::UNBOUNDED
}

fn default_dt() -> f64 {
    1e-3
}

fn default_horizon() -> f64 {
    5.0
}

fn default_actuation() -> ActuationMode {
    ActuationMode::Internal
}

fn default_threshold() -> f64 {
    crate::simulate::DEFAULT_BLOWUP_THRESHOLD
}

fn default_record_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub bc: BoundaryCondition,
    pub lambda: f64,
    pub length: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub nu: f64,
    #[serde(default = "default_ell")]
    pub ell: SaturationLevel,
    #[serde(default = "default_actuation")]
    pub actuation: ActuationMode,
    #[serde(default)]
    pub actuators: Vec<ActuatorShape>,
    #[serde(default)]
    pub synthesis: GainTarget,
    /// Retained modes `J`; defaults to `max(64, 8n)`.
    #[serde(default, alias = "J")]
    pub modes: Option<usize>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon", alias = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub seed: u64,
    /// Output directory.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub basin_search: Option<BasinSearch>,
    #[serde(default = "default_threshold")]
    pub blowup_threshold: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Seed after applying the `SATSTAB_SEED` override.
    pub fn effective_seed(&self) -> Result<u64> {
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::invalid("SATSTAB_SEED", format!("not an integer: `{v}`"))),
            Err(_) => Ok(self.seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::invalid(
                "lambda",
                format!("must be > 0, got {}", self.lambda),
            ));
        }
        if self.lambda == 0.0 && self.bc != BoundaryCondition::Clamped {
            return Err(Error::invalid(
                "lambda",
                "must be > 0 (lambda = 0 is only accepted for the clamped beam limit)",
            ));
        }
        OperatorParams::new(self.lambda, self.length)?;
        match self.actuation {
            ActuationMode::Internal => {
                if self.actuators.is_empty() {
                    return Err(Error::invalid(
                        "actuators",
                        "internal actuation needs at least one actuator",
                    ));
                }
                for a in &self.actuators {
                    a.validate(self.length)?;
                }
            }
            ActuationMode::Boundary => {
                if self.bc != BoundaryCondition::Clamped {
                    return Err(Error::invalid(
                        "actuation",
                        "boundary actuation requires bc = \"clamped\"",
                    ));
                }
                if !self.actuators.is_empty() {
                    return Err(Error::invalid(
                        "actuators",
                        "boundary actuation uses the lifting; leave actuators empty",
                    ));
                }
                if self.delta != 0.0 || self.nu != 0.0 {
                    return Err(Error::invalid(
                        "delta/nu",
                        "the boundary loop is linear; set delta = nu = 0",
                    ));
                }
            }
        }
        if let Some(j) = self.modes {
            if j == 0 {
                return Err(Error::invalid("modes", "must be >= 1"));
            }
        }
        self.sim_config().validate()?;
        match &self.initial {
            InitialSpec::Modal { modal } => {
                if modal.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(
                        "initial",
                        "modal coefficients must be finite",
                    ));
                }
            }
            InitialSpec::Preset { amplitude, .. } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(Error::invalid(
                        "initial",
                        "amplitude must be finite and >= 0",
                    ));
                }
            }
        }
        if let Some(b) = &self.basin_search {
            if !(b.lo > 0.0 && b.hi > b.lo) {
                return Err(Error::invalid("basin_search", "need 0 < lo < hi"));
            }
            if !(b.decay_factor > 0.0 && b.decay_factor < 1.0) {
                return Err(Error::invalid(
                    "basin_search",
                    "decay_factor must lie in (0, 1)",
                ));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Result<OperatorParams> {
        OperatorParams::new(self.lambda, self.length)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            horizon: self.horizon,
            delta: self.delta,
            nu: self.nu,
            blowup_threshold: self.blowup_threshold,
            record_every: self.record_every,
            stop_on_exit: false,
        }
    }
}

/// Spectrum with `J` resolved: the configured `modes`, else `max(64, 8n)`.
pub fn resolve_spectrum(cfg: &ExperimentConfig) -> Result<(EigenSystem, UnstableCount)> {
    let params = cfg.params()?;
    let first = cfg.modes.unwrap_or(DEFAULT_MODES);
    let es = eigen_system(params, cfg.bc, first)?;
    let uc = unstable_count(&es)?;
    if cfg.modes.is_none() && 8 * uc.n > first {
        let es = eigen_system(params, cfg.bc, 8 * uc.n)?;
        let uc = unstable_count(&es)?;
        return Ok((es, uc));
    }
    Ok((es, uc))
}

/// Output of the synthesis stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub mode: ActuationMode,
    pub n: usize,
    pub eta: f64,
    pub kalman: KalmanReport,
    pub gain: Gain,
    pub certificate: Certificate,
    pub check: CertificateCheck,
    pub constants: Option<H2Constants>,
}

/// Spectrum, modal system and saturation level for one configuration.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub es: EigenSystem,
    pub unstable: UnstableCount,
    pub ms: ModalSystem,
}

impl Experiment {
    pub fn assemble(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (es, unstable) = resolve_spectrum(&config)?;
        let ms = match config.actuation {
            ActuationMode::Internal => {
                let coeffs = actuator_coefficients(&es, &config.actuators, es.count())?;
                assemble_internal(&es, &coeffs, &config.actuators, unstable.n)?
            }
            ActuationMode::Boundary => {
                let lifting = Lifting::new(config.length, config.lambda);
                assemble_boundary(&es, lifting, unstable.n)?
            }
        };
        Ok(Self {
            config,
            es,
            unstable,
            ms,
        })
    }

    pub fn level(&self) -> SaturationLevel {
        self.config.ell
    }

    /// Kalman diagnostics, gain, certificate and H² constants.
    pub fn synthesize(&self) -> Result<SynthesisReport> {
        let kalman = kalman_diagnose(&self.ms)?;
        let gain = design_gain(&self.ms, &self.config.synthesis)?;
        let certificate = build_certificate(&self.ms, &gain, self.level())?;
        let check = check_certificate(&certificate, &self.ms, &gain)?;
        if !check.ok {
            return Err(Error::CertificateFailure(format!(
                "independent recheck failed: λ_max(M1) = {}, λ_min(M2) = {}",
                check.lambda_max_m1, check.lambda_min_m2
            )));
        }
        let constants = if self.ms.dim() > 0 {
            Some(select_h2_constants(&certificate, &self.ms, &gain)?)
        } else {
            None
        };
        Ok(SynthesisReport {
            mode: self.ms.mode,
            n: self.unstable.n,
            eta: self.unstable.eta,
            kalman,
            gain,
            certificate,
            check,
            constants,
        })
    }

    /// Initial state from the configuration (`u(0) = 0` in boundary mode).
    pub fn initial_state(&self) -> Result<State> {
        self.initial_with_amplitude(None)
    }

    /// Initial state with the preset amplitude replaced by `amplitude`.
    pub fn initial_with_amplitude(&self, amplitude: Option<f64>) -> Result<State> {
        let j = self.ms.modes();
        match &self.config.initial {
            InitialSpec::Modal { modal } => {
                if modal.len() > j {
                    return Err(Error::invalid(
                        "initial",
                        format!("{} modal coefficients for {j} retained modes", modal.len()),
                    ));
                }
                let mut y = DVector::zeros(j);
                y.rows_mut(0, modal.len()).copy_from_slice(modal);
                if let Some(a) = amplitude {
                    let norm = crate::simulate::h2_norm(&self.ms, &State::new(y.clone()));
                    if norm > 0.0 {
                        y *= a / norm;
                    }
                }
                Ok(State::new(y))
            }
            InitialSpec::Preset {
                preset,
                amplitude: base,
            } => preset_state(
                *preset,
                amplitude.unwrap_or(*base),
                &self.ms,
                self.config.effective_seed()?,
            ),
        }
    }

    pub fn simulate(&self, syn: &SynthesisReport, initial: State) -> Result<Trajectory> {
        let inputs = RunInputs {
            ms: &self.ms,
            gain: &syn.gain,
            level: self.level(),
            cert: Some(&syn.certificate),
            constants: syn.constants.as_ref(),
            es: Some(&self.es),
        };
        run(&self.config.sim_config(), &inputs, initial)
    }
}
