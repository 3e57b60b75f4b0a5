//! Scoring calibrations against ground truth and summarizing many runs.
//!
//! A run fails when no solution was produced, when the solver did not
//! converge, or when either focal length is off by 100 px or more. Focal
//! lengths are compared through [`CameraSpec::equivalent_focal`], so runs of
//! one model can be scored against the truth of another.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{CalibReport, FramePose};
use crate::models::{CameraSpec, ModelKind};

/// Focal deviation (px) at which a run counts as failed.
pub const FOCAL_FAILURE_PX: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("cannot compare {estimate} parameters with {truth} parameters")]
    KindMismatch { estimate: ModelKind, truth: ModelKind },
    #[error("parameter layouts differ: {estimate} vs {truth} values")]
    LayoutMismatch { estimate: usize, truth: usize },
    #[error("no focal length comparable between {estimate} and {truth}")]
    Incomparable { estimate: ModelKind, truth: ModelKind },
    #[error("malformed summary: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    None,
    NoSolution,
    FocalRule,
    NonConvergence,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::None => "none",
            FailureReason::NoSolution => "no_solution",
            FailureReason::FocalRule => "focal_rule",
            FailureReason::NonConvergence => "non_convergence",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Score of one calibration run against its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub model: ModelKind,
    pub param_names: Vec<String>,
    /// Estimate minus truth, in the order of `param_names`.
    pub param_errors: Vec<f64>,
    /// `max(|Δfx|, |Δfy|)` of the perspective-equivalent focal lengths.
    pub focal_error_max: Option<f64>,
    pub rms: Option<f64>,
    pub failed: bool,
    pub failure_reason: FailureReason,
}

impl RunScore {
    /// Score of a run that produced no calibration at all.
    pub fn no_solution(model: ModelKind) -> Self {
        Self {
            model,
            param_names: Vec::new(),
            param_errors: Vec::new(),
            focal_error_max: None,
            rms: None,
            failed: true,
            failure_reason: FailureReason::NoSolution,
        }
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.param_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.param_errors[i])
    }
}

fn focal_deviation(estimate: &CameraSpec, truth: &CameraSpec) -> Result<(f64, f64), EvalError> {
    let (efx, efy) = estimate.equivalent_focal();
    let (tfx, tfy) = truth.equivalent_focal();
    let d = (efx - tfx, efy - tfy);
    if d.0.is_finite() && d.1.is_finite() {
        Ok(d)
    } else {
        Err(EvalError::Incomparable {
            estimate: estimate.kind,
            truth: truth.kind,
        })
    }
}

fn reason(converged: bool, focal_error_max: f64) -> FailureReason {
    if !converged {
        FailureReason::NonConvergence
    } else if focal_error_max >= FOCAL_FAILURE_PX {
        FailureReason::FocalRule
    } else {
        FailureReason::None
    }
}

/// Applies the failure rule. The errors cover the comparable quantities
/// only: equivalent focal lengths and principal point.
pub fn classify_failure(report: &CalibReport, truth: &CameraSpec) -> Result<RunScore, EvalError> {
    let (dfx, dfy) = focal_deviation(&report.spec, truth)?;
    let (ecx, ecy) = report.spec.principal_point();
    let (tcx, tcy) = truth.principal_point();
    let focal_error_max = dfx.abs().max(dfy.abs());
    let failure_reason = reason(report.converged, focal_error_max);
    Ok(RunScore {
        model: report.spec.kind,
        param_names: ["fx", "fy", "cx", "cy"].map(String::from).to_vec(),
        param_errors: vec![dfx, dfy, ecx - tcx, ecy - tcy],
        focal_error_max: Some(focal_error_max),
        rms: Some(report.rms),
        failed: failure_reason != FailureReason::None,
        failure_reason,
    })
}

/// Element-wise parameter errors plus the failure classification. Both
/// specs must use the same model and layout.
pub fn score_run(report: &CalibReport, truth: &CameraSpec) -> Result<RunScore, EvalError> {
    if report.spec.kind != truth.kind {
        return Err(EvalError::KindMismatch {
            estimate: report.spec.kind,
            truth: truth.kind,
        });
    }
    if report.spec.params.len() != truth.params.len() {
        return Err(EvalError::LayoutMismatch {
            estimate: report.spec.params.len(),
            truth: truth.params.len(),
        });
    }
    let base = classify_failure(report, truth)?;
    Ok(RunScore {
        param_names: truth.param_names(),
        param_errors: report
            .spec
            .params
            .iter()
            .zip(&truth.params)
            .map(|(e, t)| e - t)
            .collect(),
        ..base
    })
}

/// Median rotation (degrees) and translation (meters) error over the
/// frames present in both pose lists.
pub fn pose_errors(estimate: &[FramePose], truth: &[FramePose]) -> Option<(f64, f64)> {
    let mut rot = Vec::new();
    let mut trans = Vec::new();
    for e in estimate {
        if let Some(t) = truth.iter().find(|t| t.frame == e.frame) {
            let d = t.pose.local(&e.pose);
            rot.push(d.fixed_rows::<3>(0).norm().to_degrees());
            trans.push((e.pose.translation - t.pose.translation).norm());
        }
    }
    if rot.is_empty() {
        return None;
    }
    Some((quantile(&sorted(rot), 0.5), quantile(&sorted(trans), 0.5)))
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Linearly interpolated quantile of sorted data (R type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quantiles {
    pub const STATS: [&'static str; 5] = ["min", "q1", "median", "q3", "max"];

    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let s = sorted(values.to_vec());
        Some(Self {
            min: s[0],
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        })
    }

    pub fn values(&self) -> [f64; 5] {
        [self.min, self.q1, self.median, self.q3, self.max]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub param: String,
    /// `None` when every run of the group failed.
    pub quantiles: Option<Quantiles>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub model: ModelKind,
    pub runs: usize,
    pub failures: usize,
    pub params: Vec<ParamSummary>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub groups: Vec<GroupSummary>,
}

/// A score tagged with the case it belongs to (lens, tool setup, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub group: String,
    pub score: RunScore,
}

/// Box-plot statistics per `(group, model)`. Quantiles use the runs that
/// did not fail; failure counts use all of them.
pub fn aggregate(scores: &[LabeledScore]) -> StudySummary {
    let mut by_group: BTreeMap<(String, ModelKind), Vec<&RunScore>> = BTreeMap::new();
    for s in scores {
        by_group
            .entry((s.group.clone(), s.score.model))
            .or_default()
            .push(&s.score);
    }
    let groups = by_group
        .into_iter()
        .map(|((group, model), runs)| {
            let names = runs
                .iter()
                .map(|r| &r.param_names)
                .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b.cmp(a)))
                .cloned()
                .unwrap_or_default();
            let ok: Vec<&&RunScore> = runs.iter().filter(|r| !r.failed).collect();
            let mut params: Vec<ParamSummary> = names
                .iter()
                .map(|name| {
                    let v: Vec<f64> = ok.iter().filter_map(|r| r.error(name)).collect();
                    ParamSummary {
                        param: name.clone(),
                        quantiles: Quantiles::of(&v),
                    }
                })
                .collect();
            let rms: Vec<f64> = ok.iter().filter_map(|r| r.rms).collect();
            params.push(ParamSummary {
                param: "rms".into(),
                quantiles: Quantiles::of(&rms),
            });
            GroupSummary {
                group,
                model,
                runs: runs.len(),
                failures: runs.iter().filter(|r| r.failed).count(),
                params,
            }
        })
        .collect();
    StudySummary { groups }
}

const CSV_HEADER: &str = "group,model,param,stat,value";
const NA: &str = "NA";

impl StudySummary {
    /// One row per `(group, model, param, stat)`, followed by the run and
    /// failure counts of each group under the parameter name `*`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for g in &self.groups {
            for p in &g.params {
                for (i, stat) in Quantiles::STATS.iter().enumerate() {
                    let value = match &p.quantiles {
                        Some(q) => q.values()[i].to_string(),
                        None => NA.to_string(),
                    };
                    let _ = writeln!(out, "{},{},{},{},{}", g.group, g.model, p.param, stat, value);
                }
            }
            let _ = writeln!(out, "{},{},*,runs,{}", g.group, g.model, g.runs);
            let _ = writeln!(out, "{},{},*,failures,{}", g.group, g.model, g.failures);
        }
        out
    }

    /// Failure counts with one row per model and one column per group;
    /// cells read `failures/runs`.
    pub fn failure_table(&self) -> String {
        let mut cases: Vec<&str> = self.groups.iter().map(|g| g.group.as_str()).collect();
        cases.dedup();
        cases.sort_unstable();
        cases.dedup();
        let mut models: Vec<ModelKind> = self.groups.iter().map(|g| g.model).collect();
        models.sort_unstable();
        models.dedup();
        let mut out = String::from("model");
        for c in &cases {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for m in models {
            out.push_str(m.name());
            for c in &cases {
                out.push('\t');
                match self.groups.iter().find(|g| g.model == m && g.group == *c) {
                    Some(g) => {
                        let _ = write!(out, "{}/{}", g.failures, g.runs);
                    }
                    None => out.push('-'),
                }
            }
            out.push('\n');
        }
        out
    }
}

impl FromStr for StudySummary {
    type Err = EvalError;

    /// Parses the output of [`StudySummary::to_csv`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = s.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(EvalError::Parse("missing header".into()));
        }
        let mut groups: Vec<GroupSummary> = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = |m: &str| EvalError::Parse(format!("line {}: {m}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            let [group, model, param, stat, value] = f[..] else {
                return Err(bad("expected 5 fields"));
            };
            let model: ModelKind = model.parse().map_err(|_| bad("unknown model"))?;
            if groups.last().is_none_or(|g| g.group != group || g.model != model) {
                groups.push(GroupSummary {
                    group: group.to_string(),
                    model,
                    runs: 0,
                    failures: 0,
                    params: Vec::new(),
                });
            }
            let g = groups.last_mut().expect("pushed above");
            if param == "*" {
                let count: usize = value.parse().map_err(|_| bad("count"))?;
                match stat {
                    "runs" => g.runs = count,
                    "failures" => g.failures = count,
                    _ => return Err(bad("unknown count")),
                }
                continue;
            }
            let idx = Quantiles::STATS
                .iter()
                .position(|s| *s == stat)
                .ok_or_else(|| bad("unknown stat"))?;
            if idx == 0 {
                g.params.push(ParamSummary {
                    param: param.to_string(),
                    quantiles: None,
                });
            }
            let p = g
                .params
                .last_mut()
                .filter(|p| p.param == param)
                .ok_or_else(|| bad("stat out of order"))?;
            if value == NA {
                continue;
            }
            let v: f64 = value.parse().map_err(|_| bad("value"))?;
            let q = p.quantiles.get_or_insert(Quantiles {
                min: v,
                q1: v,
                median: v,
                q3: v,
                max: v,
            });
            match idx {
                0 => q.min = v,
                1 => q.q1 = v,
                2 => q.median = v,
                3 => q.q3 = v,
                _ => q.max = v,
            }
        }
        Ok(StudySummary { groups })
    }
}
