//! The `wacal` command line.
//!
//! Settings resolve in three layers: command-line flags override the
//! `--config` manifest, which overrides the built-in defaults. The
//! effective settings are written next to every result.
//!
//! Exit codes: 0 on success, 2 when a calibration ran but failed (no
//! convergence, no solution, or a failed score), 1 on usage, input or
//! output errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::calibrate::{calibrate, CalibConfig, CalibError, CalibReport, LossKind};
use crate::catalog::pose_sampler_for;
use crate::evaluate::RunScore;
use crate::io::{self, IoError};
use crate::models::{CameraSpec, ModelKind};
use crate::simulate::{simulate, SimConfig, SimError};
use crate::study::{run_study, score_against, StudyConfig, StudyError};
use crate::targets::{TargetConfig, TargetLayout};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "wacal", version, about = "Wide-angle camera calibration and simulation")]
pub struct Cli {
    /// Worker threads for parallel sections (defaults to all cores).
    #[arg(long, global = true, env = "WACAL_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate a camera from corner observations.
    Calibrate(CalibrateArgs),
    /// Simulate noisy corner observations from a known camera.
    Simulate(SimulateArgs),
    /// Score a calibration report against ground truth.
    Evaluate(EvaluateArgs),
    /// Simulate, calibrate and score over several seeds.
    Study(StudyArgs),
}

/// Flags shared by `calibrate` and `study`.
#[derive(Debug, Default, Args)]
pub struct CalibFlags {
    /// Robust loss: none, huber or cauchy.
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Loss scale in pixels.
    #[arg(long)]
    pub loss_scale: Option<f64>,
    /// Trimming threshold in pixels.
    #[arg(long)]
    pub trim: Option<f64>,
    /// Number of trim-and-refit rounds.
    #[arg(long)]
    pub trim_rounds: Option<usize>,
    /// Iteration cap of each optimization.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Relative cost change that ends the optimization.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size)]
    pub image_size: Option<[u32; 2]>,
    /// Largest KB8 incidence angle in degrees.
    #[arg(long)]
    pub theta_max_deg: Option<f64>,
    /// Numerator and denominator terms of the rational model, as P,Q.
    #[arg(long, value_parser = parse_order)]
    pub rational_order: Option<[usize; 2]>,
    /// Use the 11-parameter thin-prism layout.
    #[arg(long)]
    pub thin_prism_extended: bool,
    /// Multiply the initial focal length (fault injection).
    #[arg(long)]
    pub init_focal_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Model kind, e.g. radtan, kb8, eucm, ds, mei.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Target description file.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Observations in JSON Lines format.
    #[arg(long)]
    pub obs: Option<PathBuf>,
    /// Report file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest with defaults for any of the settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub calib: CalibFlags,
}

/// Flags shared by `simulate` and `study`.
#[derive(Debug, Default, Args)]
pub struct SimFlags {
    /// Number of frames to simulate.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Pixel noise per axis.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Camera distance range in meters, as MIN,MAX.
    #[arg(long, value_parser = parse_range)]
    pub distance_range: Option<[f64; 2]>,
    /// Largest board tilt away from the camera in degrees.
    #[arg(long)]
    pub max_tilt_deg: Option<f64>,
    /// Fraction of the board corners that must land inside the image.
    #[arg(long)]
    pub in_image_fraction: Option<f64>,
    /// Observe circle centers of this radius (meters) through the
    /// projected ellipse.
    #[arg(long)]
    pub circle_radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Ground-truth camera spec (or a truth/report file containing one).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Target description; a 7×10 AprilGrid when omitted.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Random seed; equal seeds give identical output.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest with defaults for any of the settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Calibration report to score.
    #[arg(long)]
    pub report: PathBuf,
    /// Ground-truth spec or truth file.
    #[arg(long)]
    pub truth: PathBuf,
    /// Score file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Ground-truth camera spec.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Target description; a 7×10 AprilGrid when omitted.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Comma-separated model kinds; the truth model when omitted.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<ModelKind>>,
    /// Number of seeds, run as seeds 0..N.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Label of the lens case in the summary.
    #[arg(long)]
    pub group: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest with defaults for any of the settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub calib: CalibFlags,
    #[command(flatten)]
    pub sim: SimFlags,
}

/// Settings file accepted by `--config`. Every field is optional; the
/// `calib` and `sim` sections may set any subset of their fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calib: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<Value>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Usage(String),
    #[error("invalid settings: {0}")]
    Settings(#[from] serde_json::Error),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Eval(#[from] crate::evaluate::EvalError),
}

fn parse_size(s: &str) -> Result<[u32; 2], String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    Ok([
        w.trim().parse().map_err(|_| "bad width")?,
        h.trim().parse().map_err(|_| "bad height")?,
    ])
}

fn parse_order(s: &str) -> Result<[usize; 2], String> {
    let (p, q) = s.split_once(',').ok_or("expected P,Q")?;
    Ok([
        p.trim().parse().map_err(|_| "bad P")?,
        q.trim().parse().map_err(|_| "bad Q")?,
    ])
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    Ok([
        a.trim().parse().map_err(|_| "bad MIN")?,
        b.trim().parse().map_err(|_| "bad MAX")?,
    ])
}

fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing --{flag} (or the matching manifest field)")))
}

/// Overwrites the fields of `base` with those of `patch`, recursing into
/// nested objects.
fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn layered<T: Serialize + for<'de> Deserialize<'de>>(defaults: &T, patch: Option<&Value>) -> Result<T, CliError> {
    let mut v = serde_json::to_value(defaults)?;
    if let Some(p) = patch {
        merge(&mut v, p);
    }
    Ok(serde_json::from_value(v)?)
}

fn read_manifest(path: Option<&Path>) -> Result<RunManifest, CliError> {
    match path {
        Some(p) => Ok(io::read_json(p)?),
        None => Ok(RunManifest::default()),
    }
}

/// Effective calibration settings for `kind`.
fn resolve_calib(kind: Option<ModelKind>, manifest: &RunManifest, flags: &CalibFlags) -> Result<CalibConfig, CliError> {
    let file_kind = manifest
        .calib
        .as_ref()
        .and_then(|c| c.get("model_kind"))
        .map(|v| serde_json::from_value::<ModelKind>(v.clone()))
        .transpose()?;
    let kind = kind
        .or(file_kind)
        .ok_or_else(|| CliError::Usage("missing --model (or calib.model_kind in the manifest)".into()))?;
    let mut c = layered(&CalibConfig::new(kind), manifest.calib.as_ref())?;
    c.model_kind = kind;
    if let Some(k) = flags.loss {
        c.loss.kind = k;
    }
    if let Some(s) = flags.loss_scale {
        c.loss.scale = s;
    }
    if let Some(t) = flags.trim {
        c.trim_threshold = t;
    }
    if let Some(r) = flags.trim_rounds {
        c.trim_rounds = r;
    }
    if let Some(n) = flags.max_iterations {
        c.max_lm_iterations = n;
    }
    if let Some(t) = flags.tolerance {
        c.lm_tolerance = t;
    }
    if let Some(s) = flags.image_size {
        c.image_size = Some(s);
    }
    if let Some(t) = flags.theta_max_deg {
        c.theta_max = Some(t.to_radians());
    }
    if let Some(o) = flags.rational_order {
        c.rational_order = Some(o);
    }
    if flags.thin_prism_extended {
        c.thin_prism_extended = true;
    }
    if let Some(s) = flags.init_focal_scale {
        c.init_focal_scale = s;
    }
    c.validate()?;
    Ok(c)
}

/// Effective simulation settings. The pose sampler defaults to the one
/// suited to the truth camera's field of view.
fn resolve_sim(
    truth: &CameraSpec,
    manifest: &RunManifest,
    flags: &SimFlags,
    seed: Option<u64>,
) -> Result<SimConfig, CliError> {
    let defaults = SimConfig {
        pose_sampler: pose_sampler_for(truth),
        ..SimConfig::default()
    };
    let mut c = layered(&defaults, manifest.sim.as_ref())?;
    if let Some(f) = flags.frames {
        c.frames = f;
    }
    if let Some(s) = flags.sigma {
        c.noise_sigma = s;
    }
    if let Some(r) = flags.distance_range {
        c.pose_sampler.distance_range = r;
    }
    if let Some(t) = flags.max_tilt_deg {
        c.pose_sampler.max_tilt_deg = t;
    }
    if let Some(f) = flags.in_image_fraction {
        c.pose_sampler.in_image_fraction = f;
    }
    if let Some(r) = flags.circle_radius {
        c.circle_radius = Some(r);
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn load_target(path: Option<&Path>) -> Result<(TargetConfig, TargetLayout), CliError> {
    match path {
        Some(p) => {
            let layout = io::read_target(p)?;
            Ok((layout.config.clone(), layout))
        }
        None => {
            let cfg = TargetConfig::default_aprilgrid();
            let layout = cfg.build().map_err(|e| CliError::Usage(e.to_string()))?;
            Ok((cfg, layout))
        }
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| {
        CliError::Io(IoError::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn print_report(report: &CalibReport) {
    println!(
        "{}: rms {:.4} px over {} corners, {} iterations, converged {}",
        report.spec.kind, report.rms, report.inliers_used, report.iterations, report.converged
    );
    if report.trimmed > 0 || !report.frames_dropped.is_empty() {
        println!(
            "trimmed {} corners in {} rounds, dropped frames {:?}",
            report.trimmed, report.trim_rounds_run, report.frames_dropped
        );
    }
    match report.condition_number {
        Some(c) => println!("intrinsic condition number {c:.3e}"),
        None => println!("intrinsic condition number inf"),
    }
    println!("{:<8} {:>18} {:>14}", "param", "value", "std");
    for ((name, value), std) in report
        .spec
        .param_names()
        .iter()
        .zip(&report.spec.params)
        .zip(&report.param_std)
    {
        let std = std.map_or_else(|| "n/a".to_string(), |s| format!("{s:.6e}"));
        println!("{name:<8} {value:>18.8} {std:>14}");
    }
}

fn print_score(score: &RunScore) {
    for (name, e) in score.param_names.iter().zip(&score.param_errors) {
        println!("{name:<8} {e:>+16.6e}");
    }
    if let Some(f) = score.focal_error_max {
        println!("max focal error {f:.4} px");
    }
    println!("failed {} ({})", score.failed, score.failure_reason);
}

pub fn cmd_calibrate(args: CalibrateArgs) -> Result<i32, CliError> {
    let manifest = read_manifest(args.config.as_deref())?;
    let config = resolve_calib(args.model, &manifest, &args.calib)?;
    let target_path = required(args.target.or(manifest.target.clone()), "target")?;
    let obs_path = required(args.obs.or(manifest.observations.clone()), "obs")?;
    let out = required(args.out.or(manifest.output.clone()), "out")?;
    let target = io::read_target(&target_path)?;
    let obs = io::read_observations(&obs_path)?;
    let report = match calibrate(&obs, &target, &config) {
        Ok(r) => r,
        Err(e @ (CalibError::InvalidConfig(_) | CalibError::UnknownPoint { .. } | CalibError::TooFewFrames { .. })) => {
            return Err(e.into())
        }
        Err(e) => {
            eprintln!("calibration failed: {e}");
            return Ok(EXIT_FAILED);
        }
    };
    io::write_json(&out, &report)?;
    print_report(&report);
    Ok(if report.converged { EXIT_OK } else { EXIT_FAILED })
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<i32, CliError> {
    let manifest = read_manifest(args.config.as_deref())?;
    let truth_path = required(args.truth.or(manifest.truth.clone()), "truth")?;
    let out = required(args.out.or(manifest.output.clone()), "out")?;
    let spec = io::read_spec(&truth_path)?;
    let (_, target) = load_target(args.target.as_deref().or(manifest.target.as_deref()))?;
    let config = resolve_sim(&spec, &manifest, &args.sim, args.seed)?;
    let (obs, truth) = simulate(&spec, &target, &config)?;
    create_dir(&out)?;
    io::write_observations(&out.join("observations.jsonl"), &obs)?;
    io::write_json(&out.join("truth.json"), &truth)?;
    io::write_json(&out.join("sim_config.json"), &config)?;
    println!(
        "{} frames, {} corners written to {}",
        obs.frames.len(),
        obs.num_corners(),
        out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_evaluate(args: EvaluateArgs) -> Result<i32, CliError> {
    let report: CalibReport = io::read_json(&args.report)?;
    let truth = io::read_spec(&args.truth)?;
    let score = score_against(&report, &truth)?;
    if let Some(out) = &args.out {
        io::write_json(out, &score)?;
    }
    print_score(&score);
    Ok(if score.failed { EXIT_FAILED } else { EXIT_OK })
}

pub fn cmd_study(args: StudyArgs) -> Result<i32, CliError> {
    let manifest = read_manifest(args.config.as_deref())?;
    let truth_path = required(args.truth.or(manifest.truth.clone()), "truth")?;
    let out = required(args.out.or(manifest.output.clone()), "out")?;
    let spec = io::read_spec(&truth_path)?;
    let (target_config, _) = load_target(args.target.as_deref().or(manifest.target.as_deref()))?;
    let models = match (args.models, &manifest.models) {
        (Some(m), _) => m,
        (None, Some(names)) => names
            .iter()
            .map(|n| n.parse::<ModelKind>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Usage(e.to_string()))?,
        (None, None) => vec![spec.kind],
    };
    let seeds = match (args.seeds, &manifest.seeds) {
        (Some(n), _) => (0..n).collect(),
        (None, Some(s)) => s.clone(),
        (None, None) => (0..9).collect(),
    };
    let calib = resolve_calib(Some(models[0]), &manifest, &args.calib)?;
    let sim = resolve_sim(&spec, &manifest, &args.sim, None)?;
    let group = args
        .group
        .or(manifest.group.clone())
        .unwrap_or_else(|| spec.kind.name().to_string());
    let config = StudyConfig {
        group,
        truth: spec,
        target: target_config,
        models,
        seeds,
        sim,
        calib,
    };
    let outcome = run_study(&config)?;
    create_dir(&out)?;
    io::write_json(&out.join("study_config.json"), &config)?;
    io::write_text(&out.join("summary.csv"), &outcome.summary.to_csv())?;
    let table = outcome.summary.failure_table();
    io::write_text(&out.join("failures.tsv"), &table)?;
    let mut runs = String::new();
    for r in &outcome.runs {
        runs.push_str(&serde_json::to_string(r)?);
        runs.push('\n');
    }
    io::write_text(&out.join("runs.jsonl"), &runs)?;
    print!("{table}");
    Ok(EXIT_OK)
}

fn configure_threads(jobs: Option<usize>) {
    if let Some(n) = jobs.filter(|n| *n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    configure_threads(cli.jobs);
    let result = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Study(a) => cmd_study(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
