//! Command-line front end. Flags only pick the subcommand and file paths;
//! everything else lives in the JSON experiment config.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{Experiment, ExperimentConfig, SynthesisReport};
use crate::modal::ActuationMode;
use crate::simulate::{
    estimate_basin, fit_decay_rate, gronwall_bound, BasinEstimate, Channel, DecayFit, ExitReason,
    Trajectory,
};
use crate::spectral::EigenSystem;
use crate::synthesis::{
    check_certificate, design_gain, kalman_diagnose, select_h2_constants, Certificate,
};
use crate::verify::verify;

#[derive(Debug, Parser)]
#[command(
    name = "satstab",
    version,
    about = "Saturated modal feedback for KS/CH-type equations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Io {
    /// Experiment config (JSON).
    pub config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues and eigenfunction diagnostics.
    Spectrum(Io),
    /// Modal matrices A, B and the tail coupling.
    Modal(Io),
    /// Gain, LMI certificate and H² constants.
    Synth {
        #[command(flatten)]
        io: Io,
        /// Witnesses `{p, d, c}` (or a previous synth output) to check
        /// instead of constructing a certificate.
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Closed-loop simulation.
    Simulate {
        #[command(flatten)]
        io: Io,
        /// Synth output to reuse instead of synthesizing.
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Invariant suites over all modules.
    Verify {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Nonlinear Gronwall bound from a `GronwallConfig`.
    Gronwall(Io),
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Spectrum(io) => cmd_spectrum(&io),
        Command::Modal(io) => cmd_modal(&io),
        Command::Synth { io, certificate } => cmd_synth(&io, certificate.as_deref()),
        Command::Simulate { io, certificate } => cmd_simulate(&io, certificate.as_deref()),
        Command::Verify { io, certificate } => cmd_verify(&io, certificate.as_deref()),
        Command::Gronwall(io) => cmd_gronwall(&io),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(&fs::read_to_string(path)?)
}

fn out_dir(io: &Io, configured: Option<&str>) -> Result<PathBuf> {
    let dir = io
        .out
        .clone()
        .or_else(|| configured.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((1..=m.ncols()).map(|j| format!("col_{j}")))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SpectrumSummary<'a> {
    bc: &'a str,
    lambda: f64,
    length: f64,
    modes: usize,
    n: usize,
    eta: f64,
    orthonormality_error: f64,
    max_bc_residual: f64,
    max_scaled_residual: f64,
}

pub fn write_spectrum_csv<W: Write>(es: &EigenSystem, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "sigma", "bc_residual", "norm_error"])?;
    for (j, sigma) in es.values().iter().enumerate() {
        w.write_record([
            (j + 1).to_string(),
            format!("{sigma}"),
            format!("{}", es.bc_residual(j)),
            format!("{}", es.norm_error(j)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_spectrum(io: &Io) -> Result<()> {
    let cfg = load_config(&io.config)?;
    let (es, uc) = crate::experiment::resolve_spectrum(&cfg)?;
    let dir = out_dir(io, cfg.output.as_deref())?;
    write_spectrum_csv(&es, fs::File::create(dir.join("spectrum.csv"))?)?;
    let summary = SpectrumSummary {
        bc: cfg.bc.name(),
        lambda: cfg.lambda,
        length: cfg.length,
        modes: es.count(),
        n: uc.n,
        eta: uc.eta,
        orthonormality_error: es.orthonormality_error(),
        max_bc_residual: (0..es.count())
            .map(|j| es.bc_residual(j))
            .fold(0.0, f64::max),
        max_scaled_residual: (0..es.count())
            .map(|j| es.residual(j) / es.values()[j].abs().max(1.0))
            .fold(0.0, f64::max),
    };
    write_json(&dir.join("spectrum.json"), &summary)?;
    println!(
        "{} modes, n = {}, η = {}, σ_1 = {}",
        es.count(),
        uc.n,
        uc.eta,
        es.values()[0]
    );
    Ok(())
}

#[derive(Serialize)]
struct ModalSummary {
    mode: ActuationMode,
    n: usize,
    eta: f64,
    modes: usize,
    inputs: usize,
    input_norm_sq: Vec<f64>,
}

fn cmd_modal(io: &Io) -> Result<()> {
    let cfg = load_config(&io.config)?;
    let dir = out_dir(io, cfg.output.as_deref())?;
    let exp = Experiment::assemble(cfg)?;
    let ms = &exp.ms;
    write_matrix_csv(&dir.join("modal_a.csv"), &ms.a)?;
    write_matrix_csv(&dir.join("modal_b.csv"), &ms.b)?;
    write_matrix_csv(&dir.join("modal_b_tail.csv"), &ms.b_tail())?;
    write_json(
        &dir.join("modal.json"),
        &ModalSummary {
            mode: ms.mode,
            n: ms.n,
            eta: exp.unstable.eta,
            modes: ms.modes(),
            inputs: ms.inputs(),
            input_norm_sq: ms.input_norm_sq.clone(),
        },
    )?;
    println!(
        "{:?} actuation: n = {}, η = {}",
        ms.mode, ms.n, exp.unstable.eta
    );
    Ok(())
}

/// Witness matrices for `synth --certificate`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Witnesses {
    #[serde(with = "crate::serde_matrix")]
    p: DMatrix<f64>,
    d: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    c: DMatrix<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CertificateInput {
    Report(Box<SynthesisReport>),
    Witnesses(Witnesses),
}

fn read_certificate_input(path: &Path) -> Result<CertificateInput> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| {
        Error::Config(format!(
            "{}: expected a synth output or {{p, d, c}} witnesses ({e})",
            path.display()
        ))
    })
}

/// Synthesis artifacts from a file, rechecked against the experiment. The
/// stored `check` is recomputed; nothing in the file is trusted.
fn load_report(exp: &Experiment, path: &Path) -> Result<SynthesisReport> {
    let ms = &exp.ms;
    let mut report = match read_certificate_input(path)? {
        CertificateInput::Report(r) => *r,
        CertificateInput::Witnesses(w) => {
            let kalman = kalman_diagnose(ms)?;
            let gain = design_gain(ms, &exp.config.synthesis)?;
            let certificate = Certificate::from_witnesses(w.p, w.d, w.c, exp.level(), ms, &gain)?;
            let check = check_certificate(&certificate, ms, &gain)?;
            SynthesisReport {
                mode: ms.mode,
                n: exp.unstable.n,
                eta: exp.unstable.eta,
                kalman,
                gain,
                certificate,
                check,
                constants: None,
            }
        }
    };
    if report.gain.k.shape() != (ms.inputs(), ms.dim()) {
        return Err(Error::Dimension(format!(
            "certificate gain is {:?}, system needs ({}, {})",
            report.gain.k.shape(),
            ms.inputs(),
            ms.dim()
        )));
    }
    report.check = check_certificate(&report.certificate, ms, &report.gain)?;
    if report.check.ok && report.constants.is_none() && ms.dim() > 0 {
        report.constants = Some(select_h2_constants(&report.certificate, ms, &report.gain)?);
    }
    Ok(report)
}

pub fn synth_text(report: &SynthesisReport) -> String {
    let c = &report.certificate;
    let mut s = String::new();
    s.push_str(&format!(
        "actuation {:?}: n = {}, η = {}\n",
        report.mode, report.n, report.eta
    ));
    s.push_str(&format!(
        "Kalman rank {} / {} ({})\n",
        report.kalman.rank,
        report.kalman.dim,
        if report.kalman.controllable {
            "controllable"
        } else {
            "not controllable"
        }
    ));
    s.push_str(&format!("K = {:?}\n", report.gain.k.as_slice()));
    s.push_str(&format!(
        "closed-loop spectrum = {:?}\n",
        report.gain.closed_loop_spectrum
    ));
    s.push_str(&format!(
        "alpha = {}\nbeta_min = {}\nbeta_max = {}\nell = {}\nD = {:?}\n",
        c.alpha, c.beta_min, c.beta_max, c.ell, c.d
    ));
    s.push_str(&format!(
        "lambda_max(M1) = {}\nlambda_min(M2) = {}\ncertificate ok = {}\n",
        report.check.lambda_max_m1, report.check.lambda_min_m2, report.check.ok
    ));
    if let Some(k) = &report.constants {
        s.push_str(&format!(
            "M = {}\nC1 = {}\nC2 = {}\nC3 = {}\nC4 = {}\na = {}\n",
            k.m, k.c1, k.c2, k.c3, k.c4, k.a
        ));
    }
    s
}

fn cmd_synth(io: &Io, certificate: Option<&Path>) -> Result<()> {
    let cfg = load_config(&io.config)?;
    let dir = out_dir(io, cfg.output.as_deref())?;
    let exp = Experiment::assemble(cfg)?;
    let report = match certificate {
        Some(path) => load_report(&exp, path)?,
        None => exp.synthesize()?,
    };
    write_json(&dir.join("certificate.json"), &report)?;
    let text = synth_text(&report);
    fs::write(dir.join("synth_report.txt"), &text)?;
    print!("{text}");
    if !report.check.ok {
        return Err(Error::CertificateFailure(format!(
            "λ_max(M1) = {}, λ_min(M2) = {}, λ_min(P) = {}",
            report.check.lambda_max_m1, report.check.lambda_min_m2, report.check.lambda_min_p
        )));
    }
    Ok(())
}

fn synthesis_for(exp: &Experiment, certificate: Option<&Path>) -> Result<SynthesisReport> {
    match certificate {
        Some(path) => load_report(exp, path),
        None => exp.synthesize(),
    }
}

#[derive(Debug, Serialize)]
pub struct SimulationSummary {
    pub exit_reason: ExitReason,
    pub steps: usize,
    pub samples: usize,
    /// Fitted decay of `‖y‖` (of `|u| + ‖w‖` in boundary mode).
    pub rate: Option<DecayFit>,
    pub h2_rate: Option<DecayFit>,
    pub sat_duty_cycle: f64,
    pub left_region: bool,
    pub first_exit_time: Option<f64>,
    pub blowup: Option<(f64, f64)>,
    pub basin: Option<BasinEstimate>,
}

pub fn summarize(traj: &Trajectory) -> SimulationSummary {
    let main = match traj.mode {
        ActuationMode::Internal => Channel::L2,
        ActuationMode::Boundary => Channel::BoundaryNorm,
    };
    SimulationSummary {
        exit_reason: traj.exit_reason,
        steps: traj.steps_taken,
        samples: traj.len(),
        rate: fit_decay_rate(traj, main, 0.0).ok(),
        h2_rate: fit_decay_rate(traj, Channel::H2Norm, 0.0).ok(),
        sat_duty_cycle: traj.sat_duty_cycle(),
        left_region: traj.left_region,
        first_exit_time: traj.first_exit_time,
        blowup: traj.blowup,
        basin: None,
    }
}

/// Reached the horizon with the H² norm reduced by at least `factor`.
fn decays(traj: &Trajectory, factor: f64) -> bool {
    let h = traj.channel(Channel::H2Norm);
    traj.exit_reason == ExitReason::Horizon
        && matches!((h.first(), h.last()), (Some(a), Some(b)) if *b <= factor * a)
}

fn cmd_simulate(io: &Io, certificate: Option<&Path>) -> Result<()> {
    let cfg = load_config(&io.config)?;
    let dir = out_dir(io, cfg.output.as_deref())?;
    let exp = Experiment::assemble(cfg)?;
    let report = synthesis_for(&exp, certificate)?;
    if !report.check.ok {
        return Err(Error::CertificateFailure(
            "certificate fails the LMI recheck".into(),
        ));
    }
    let traj = exp.simulate(&report, exp.initial_state()?)?;
    traj.write_csv(fs::File::create(dir.join("trajectory.csv"))?)?;
    let mut summary = summarize(&traj);
    if let Some(search) = &exp.config.basin_search {
        summary.basin = Some(estimate_basin(
            search.lo,
            search.hi,
            search.iterations,
            |amp| {
                let initial = exp.initial_with_amplitude(Some(amp))?;
                Ok(decays(
                    &exp.simulate(&report, initial)?,
                    search.decay_factor,
                ))
            },
        )?);
    }
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "exit {:?} after {} steps; rate {:?}; sat duty cycle {}",
        summary.exit_reason,
        summary.steps,
        summary.rate.map(|f| f.rate),
        summary.sat_duty_cycle
    );
    traj.require_completed()
}

fn cmd_verify(io: &Io, certificate: Option<&Path>) -> Result<()> {
    let cfg = load_config(&io.config)?;
    let dir = out_dir(io, cfg.output.as_deref())?;
    let seed = cfg.effective_seed()?;
    let exp = Experiment::assemble(cfg)?;
    let report = synthesis_for(&exp, certificate)?;
    let result = verify(&exp, &report, seed)?;
    for c in &result.checks {
        println!(
            "{} {}: {:e} (threshold {:e}) {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold,
            c.detail
        );
    }
    write_json(&dir.join("verify.json"), &result)?;
    if result.passed() {
        Ok(())
    } else {
        Err(Error::VerificationFailed(
            result.failures().into_iter().map(String::from).collect(),
        ))
    }
}

/// Coefficient function of the Gronwall inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    Constant(f64),
    /// `scale · e^{rate·t}`
    Exponential {
        scale: f64,
        rate: f64,
    },
}

impl Coefficient {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Coefficient::Constant(c) => c,
            Coefficient::Exponential { scale, rate } => scale * (rate * t).exp(),
        }
    }
}

fn default_points() -> usize {
    101
}

/// `v' ≤ b(t) v + k(t) v^p`, `v(0) = v0`, bound sampled on `points`
/// equispaced times in `[0, t_end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallConfig {
    pub v0: f64,
    pub p: f64,
    pub b: Coefficient,
    pub k: Coefficient,
    pub t_end: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub output: Option<String>,
}

fn cmd_gronwall(io: &Io) -> Result<()> {
    let cfg: GronwallConfig = serde_json::from_str(&fs::read_to_string(&io.config)?)?;
    if !(cfg.t_end > 0.0) || cfg.points < 2 {
        return Err(Error::invalid(
            "t_end/points",
            "need t_end > 0 and points >= 2",
        ));
    }
    let dir = out_dir(io, cfg.output.as_deref())?;
    let grid: Vec<f64> = (0..cfg.points)
        .map(|i| cfg.t_end * i as f64 / (cfg.points - 1) as f64)
        .collect();
    let bound = gronwall_bound(cfg.v0, &|t| cfg.b.eval(t), &|t| cfg.k.eval(t), cfg.p, &grid)?;
    let mut w = csv::Writer::from_path(dir.join("gronwall.csv"))?;
    w.write_record(["t", "w", "bound"])?;
    for ((t, wv), b) in grid.iter().zip(&bound.w).zip(&bound.bound) {
        w.write_record([t.to_string(), wv.to_string(), b.to_string()])?;
    }
    w.flush()?;
    match bound.expired_at {
        Some(t) => println!("bound expires at t = {t}"),
        None => println!("bound valid on [0, {}]", cfg.t_end),
    }
    bound.require_valid()
}
