//! Monte-Carlo studies: simulate a camera over several seeds, calibrate
//! each sequence with one or more models and score the results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{calibrate, CalibConfig, CalibReport, ObservationSet};
use crate::evaluate::{aggregate, classify_failure, score_run, EvalError, LabeledScore, RunScore, StudySummary};
use crate::models::{CameraSpec, ModelKind};
use crate::simulate::{simulate, SimConfig, SimError, Truth};
use crate::targets::{TargetConfig, TargetError};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("seed {seed}: {source}")]
    Simulation {
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid study: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Label of the lens case, used as the summary group.
    pub group: String,
    pub truth: CameraSpec,
    pub target: TargetConfig,
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    /// Simulation settings; the seed is replaced per run.
    pub sim: SimConfig,
    /// Calibration settings; the model kind is replaced per run.
    pub calib: CalibConfig,
}

impl StudyConfig {
    /// Nine seeds, default simulation and calibration settings with the pose
    /// sampler suited to the truth camera, the truth model as the only
    /// calibrated model.
    pub fn new(group: &str, truth: CameraSpec) -> Self {
        let kind = truth.kind;
        Self {
            group: group.to_string(),
            target: TargetConfig::default_aprilgrid(),
            models: vec![kind],
            seeds: (0..9).collect(),
            sim: SimConfig {
                pose_sampler: crate::catalog::pose_sampler_for(&truth),
                ..SimConfig::default()
            },
            calib: CalibConfig::new(kind),
            truth,
        }
    }
}

/// One simulate → calibrate → score run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRun {
    pub seed: u64,
    pub group: String,
    pub score: RunScore,
    /// Calibration error message when no solution was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyOutcome {
    pub runs: Vec<StudyRun>,
    pub reports: Vec<Option<CalibReport>>,
    pub summary: StudySummary,
}

/// Scores `report` against `truth`: parameter by parameter when the models
/// match, through the focal-length mapping otherwise.
pub fn score_against(report: &CalibReport, truth: &CameraSpec) -> Result<RunScore, EvalError> {
    if report.spec.kind == truth.kind && report.spec.params.len() == truth.params.len() {
        score_run(report, truth)
    } else {
        classify_failure(report, truth)
    }
}

fn calib_config(base: &CalibConfig, kind: ModelKind, truth: &CameraSpec) -> CalibConfig {
    let mut c = base.clone();
    c.model_kind = kind;
    if c.image_size.is_none() {
        c.image_size = Some([truth.width, truth.height]);
    }
    c
}

/// Runs every `(seed, model)` pair. Seeds run in parallel on the current
/// rayon pool. A failed simulation aborts the study; failed calibrations
/// are recorded as `no_solution` runs.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome, StudyError> {
    if config.models.is_empty() || config.seeds.is_empty() {
        return Err(StudyError::Invalid("need at least one model and one seed".into()));
    }
    let target = config.target.build()?;
    let data: Vec<(u64, ObservationSet, Truth)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let sim = SimConfig {
                seed,
                ..config.sim.clone()
            };
            simulate(&config.truth, &target, &sim)
                .map(|(obs, truth)| (seed, obs, truth))
                .map_err(|source| StudyError::Simulation { seed, source })
        })
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, ModelKind)> = (0..data.len())
        .flat_map(|i| config.models.iter().map(move |&m| (i, m)))
        .collect();
    let results: Vec<(StudyRun, Option<CalibReport>)> = jobs
        .par_iter()
        .map(|&(i, kind)| {
            let (seed, obs, truth) = &data[i];
            let cc = calib_config(&config.calib, kind, &truth.spec);
            let (score, error, report) = match calibrate(obs, &target, &cc) {
                Ok(report) => (score_against(&report, &truth.spec)?, None, Some(report)),
                Err(e) => {
                    log::info!("seed {seed}, {kind}: no solution: {e}");
                    (RunScore::no_solution(kind), Some(e.to_string()), None)
                }
            };
            Ok((
                StudyRun {
                    seed: *seed,
                    group: config.group.clone(),
                    score,
                    error,
                },
                report,
            ))
        })
        .collect::<Result<_, StudyError>>()?;
    let (runs, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let labeled: Vec<LabeledScore> = runs
        .iter()
        .map(|r| LabeledScore {
            group: r.group.clone(),
            score: r.score.clone(),
        })
        .collect();
    Ok(StudyOutcome {
        summary: aggregate(&labeled),
        runs,
        reports,
    })
}
