//! Target-based intrinsic calibration.
//!
//! [`calibrate`] runs the whole pipeline: frames with fewer than four
//! corners are discarded, intrinsics and poses are initialized from plane
//! homographies, then [`refine`] jointly optimizes intrinsics and poses with
//! a robust Levenberg-Marquardt solver, and [`trim_outliers`] removes large
//! residuals and re-optimizes.

mod homography;
mod init;
mod refine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pixel, Point3, Pose};
use crate::models::{CameraSpec, ModelError, ModelKind};
use crate::targets::TargetLayout;

pub use homography::{calibration_matrix, estimate_homography, init_pinhole_intrinsics, init_pose_from_homography};
use init::uses_pinhole_init;
pub use init::{init_wideangle_intrinsics, initialize, neutral_spec, Initialization};
use refine::refine_core;
pub use refine::{compute_covariance, compute_rms, refine, trim_outliers, Covariance};

/// Fewest corners a frame needs to enter initialization or refinement.
pub const MIN_CORNERS: usize = 4;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("need at least {need} usable frames, got {got}")]
    TooFewFrames { got: usize, need: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("ill-conditioned initialization (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("no focal-length candidate produced a finite residual")]
    NoFiniteCandidate,
    #[error("target is behind the camera for every homography sign")]
    NegativeDepth,
    #[error("frame {frame}: point id {id} is not on the target")]
    UnknownPoint { frame: i64, id: usize },
    #[error("no inlier observations")]
    EmptyInliers,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One detected target point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corner {
    pub id: usize,
    pub pixel: Pixel,
}

impl Serialize for Corner {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.id, self.pixel.x, self.pixel.y).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Corner {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (id, u, v) = <(usize, f64, f64)>::deserialize(d)?;
        Ok(Corner {
            id,
            pixel: Pixel::new(u, v),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    #[serde(rename = "frame")]
    pub id: i64,
    pub corners: Vec<Corner>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub frames: Vec<Frame>,
}

impl ObservationSet {
    pub fn num_corners(&self) -> usize {
        self.frames.iter().map(|f| f.corners.len()).sum()
    }

    /// Every corner id must exist on the target.
    pub fn check_ids(&self, target: &TargetLayout) -> Result<(), CalibError> {
        for f in &self.frames {
            if let Some(c) = f.corners.iter().find(|c| c.id >= target.len()) {
                return Err(CalibError::UnknownPoint { frame: f.id, id: c.id });
            }
        }
        Ok(())
    }

    /// Copy without the frames that have fewer than [`MIN_CORNERS`] corners.
    pub fn usable(&self) -> ObservationSet {
        ObservationSet {
            frames: self
                .frames
                .iter()
                .filter(|f| f.corners.len() >= MIN_CORNERS)
                .cloned()
                .collect(),
        }
    }

    /// `(target point, pixel)` pairs of one frame.
    pub(crate) fn correspondences(frame: &Frame, target: &TargetLayout) -> Vec<(Point3, Pixel)> {
        frame
            .corners
            .iter()
            .filter_map(|c| target.point(c.id).map(|p| (p, c.pixel)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    None,
    Huber,
    Cauchy,
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "l2" | "squared" => Ok(LossKind::None),
            "huber" => Ok(LossKind::Huber),
            "cauchy" => Ok(LossKind::Cauchy),
            _ => Err(format!("unknown loss '{s}' (expected none, huber or cauchy)")),
        }
    }
}

/// Robust loss on the squared residual norm `s = ‖r‖²` with scale `δ` in
/// pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustLoss {
    pub kind: LossKind,
    pub scale: f64,
}

impl Default for RobustLoss {
    fn default() -> Self {
        Self {
            kind: LossKind::Huber,
            scale: 1.0,
        }
    }
}

impl RobustLoss {
    pub fn none() -> Self {
        Self {
            kind: LossKind::None,
            scale: 1.0,
        }
    }

    /// `ρ(s)`.
    pub fn cost(&self, s: f64) -> f64 {
        let d2 = self.scale * self.scale;
        match self.kind {
            LossKind::None => s,
            LossKind::Huber if s <= d2 => s,
            LossKind::Huber => 2.0 * self.scale * s.sqrt() - d2,
            LossKind::Cauchy => d2 * (s / d2).ln_1p(),
        }
    }

    /// `ρ'(s)`, the reweighting factor of the squared residual.
    pub fn weight(&self, s: f64) -> f64 {
        let d2 = self.scale * self.scale;
        match self.kind {
            LossKind::None => 1.0,
            LossKind::Huber if s <= d2 => 1.0,
            LossKind::Huber => self.scale / s.sqrt(),
            LossKind::Cauchy => 1.0 / (1.0 + s / d2),
        }
    }
}

fn default_trim_threshold() -> f64 {
    2.0
}
fn default_trim_rounds() -> usize {
    2
}
fn default_max_iterations() -> usize {
    100
}
fn default_tolerance() -> f64 {
    1e-10
}
fn default_focal_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibConfig {
    pub model_kind: ModelKind,
    #[serde(default)]
    pub loss: RobustLoss,
    /// Pixels; see [`trim_outliers`].
    #[serde(default = "default_trim_threshold")]
    pub trim_threshold: f64,
    #[serde(default = "default_trim_rounds")]
    pub trim_rounds: usize,
    #[serde(default = "default_max_iterations")]
    pub max_lm_iterations: usize,
    /// Relative cost decrease below which the solver stops.
    #[serde(default = "default_tolerance")]
    pub lm_tolerance: f64,
    /// `[p, q]` numerator/denominator terms of the rational model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rational_order: Option<[usize; 2]>,
    /// Use the 11-parameter thin-prism layout.
    #[serde(default)]
    pub thin_prism_extended: bool,
    /// Largest incidence angle accepted by the KB8 model (radians).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_max: Option<f64>,
    /// `[width, height]` in pixels; inferred from the corner extent when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[u32; 2]>,
    /// Multiplies the initial focal length; 1 leaves initialization alone.
    #[serde(default = "default_focal_scale")]
    pub init_focal_scale: f64,
}

impl CalibConfig {
    pub fn new(model_kind: ModelKind) -> Self {
        Self {
            model_kind,
            loss: RobustLoss::default(),
            trim_threshold: default_trim_threshold(),
            trim_rounds: default_trim_rounds(),
            max_lm_iterations: default_max_iterations(),
            lm_tolerance: default_tolerance(),
            rational_order: None,
            thin_prism_extended: false,
            theta_max: None,
            image_size: None,
            init_focal_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        let bad = |m: &str| Err(CalibError::InvalidConfig(m.to_string()));
        if self.loss.kind != LossKind::None && !(self.loss.scale > 0.0) {
            return bad("loss scale must be positive");
        }
        if self.max_lm_iterations < 1 {
            return bad("max_lm_iterations must be at least 1");
        }
        if !(self.lm_tolerance >= 0.0) {
            return bad("lm_tolerance must be non-negative");
        }
        if !(self.trim_threshold > 0.0) {
            return bad("trim_threshold must be positive");
        }
        if !(self.init_focal_scale > 0.0 && self.init_focal_scale.is_finite()) {
            return bad("init_focal_scale must be positive");
        }
        if let Some([p, q]) = self.rational_order {
            if p > 3 || q > 3 {
                return bad("rational order terms must be at most 3");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub frame: i64,
    pub pose: Pose,
}

/// Outcome of a calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibReport {
    pub config: CalibConfig,
    pub spec: CameraSpec,
    pub poses: Vec<FramePose>,
    pub rms: f64,
    /// One entry per parameter; `None` when the information matrix is
    /// singular.
    pub param_std: Vec<Option<f64>>,
    /// Condition number of the correlation matrix of the intrinsic block;
    /// `None` stands for infinity.
    pub condition_number: Option<f64>,
    pub inliers_used: usize,
    pub trimmed: usize,
    pub trim_rounds_run: usize,
    pub frames_dropped: Vec<i64>,
    pub converged: bool,
    pub iterations: usize,
    /// Robust cost after every accepted step, starting with the initial
    /// cost.
    pub cost_history: Vec<f64>,
}

impl CalibReport {
    pub fn pose(&self, frame: i64) -> Option<&Pose> {
        self.poses.iter().find(|p| p.frame == frame).map(|p| &p.pose)
    }
}

/// Full pipeline: initialization, robust refinement, trimming.
pub fn calibrate(obs: &ObservationSet, target: &TargetLayout, config: &CalibConfig) -> Result<CalibReport, CalibError> {
    config.validate()?;
    obs.check_ids(target)?;
    let usable = obs.usable();
    let mut dropped: Vec<i64> = obs
        .frames
        .iter()
        .filter(|f| f.corners.len() < MIN_CORNERS)
        .map(|f| f.id)
        .collect();
    for id in &dropped {
        log::warn!("frame {id}: fewer than {MIN_CORNERS} corners, excluded");
    }
    let init = initialize(&usable, target, config)?;
    let (spec, poses) = if uses_pinhole_init(config.model_kind) {
        (init.spec.clone(), init.poses.clone())
    } else {
        refine_core(&init.observations, target, &init.spec, &init.poses, config)?
    };
    let spec = fit_theta_max(spec, &poses, &init.observations, target, config);
    let report = refine(&init.observations, target, &spec, &poses, config)?;
    dropped.extend(init.dropped);
    let (_, mut report) = if config.trim_rounds > 0 {
        trim_outliers(&report, &init.observations, target, config)?
    } else {
        (init.observations, report)
    };
    dropped.extend(std::mem::take(&mut report.frames_dropped));
    dropped.sort_unstable();
    dropped.dedup();
    report.frames_dropped = dropped;
    Ok(report)
}

/// Margin added to the widest observed ray angle when the KB-8 domain is
/// not configured.
const THETA_MARGIN: f64 = 10.0 * std::f64::consts::PI / 180.0;

/// Restricts a KB-8 model to the angles the data covers. The polynomial
/// only has to be monotone where it is used, so an unconfigured domain is
/// set to the widest observed ray plus a margin.
fn fit_theta_max(
    spec: CameraSpec,
    poses: &[Pose],
    obs: &ObservationSet,
    target: &TargetLayout,
    config: &CalibConfig,
) -> CameraSpec {
    if spec.kind != ModelKind::KB8 || config.theta_max.is_some() {
        return spec;
    }
    let mut widest: f64 = 0.0;
    for (frame, pose) in obs.frames.iter().zip(poses) {
        for c in &frame.corners {
            if let Some(x) = target.point(c.id) {
                let xc = pose.apply(&x);
                widest = widest.max(xc.xy().norm().atan2(xc.z));
            }
        }
    }
    let theta_max = (widest + THETA_MARGIN).min(std::f64::consts::PI);
    let narrowed = spec.clone().with_theta_max(theta_max);
    if narrowed.validate().is_ok() {
        narrowed
    } else {
        spec
    }
}

/// Spec of `kind` with the layout options of `config` applied.
pub(crate) fn configure_spec(spec: CameraSpec, config: &CalibConfig) -> CameraSpec {
    let mut spec = spec;
    if spec.kind == ModelKind::KB8 {
        if let Some(t) = config.theta_max {
            spec = spec.with_theta_max(t);
        }
    }
    spec
}
