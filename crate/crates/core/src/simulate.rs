//! Synthetic corner observations from a known camera.
//!
//! Randomness comes from `ChaCha8Rng` seeded with [`SimConfig::seed`]. Pose
//! sampling draws from stream 0 and pixel noise from stream 1, so changing
//! the noise level leaves the poses untouched.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{Corner, Frame, FramePose, ObservationSet, MIN_CORNERS};
use crate::geometry::{Pixel, Point3, Pose};
use crate::models::CameraSpec;
use crate::targets::TargetLayout;

/// Recorded with every truth file.
pub const GENERATOR_ID: &str = "rand_chacha::ChaCha8Rng/seed_from_u64; stream 0 poses, stream 1 noise";

const POSE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const MAX_REJECTIONS: usize = 1000;
const RIM_SAMPLES: usize = 32;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("pose sampler rejected {0} consecutive poses; the configuration is infeasible")]
    Infeasible(usize),
    #[error("frame {frame} keeps only {got} corners")]
    TooFewCorners { frame: i64, got: usize },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSampler {
    /// Distance of the camera center from the target center (meters).
    pub distance_range: [f64; 2],
    /// Largest angle between the target normal and the camera offset.
    pub max_tilt_deg: f64,
    /// Fraction of target points that must project inside the image.
    pub in_image_fraction: f64,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            distance_range: [0.45, 1.0],
            max_tilt_deg: 50.0,
            in_image_fraction: 0.6,
        }
    }
}

impl PoseSampler {
    /// Close, oblique views that put part of the target at incidence angles
    /// beyond 90° for fisheye lenses.
    pub fn close_range() -> Self {
        Self {
            distance_range: [0.12, 0.45],
            max_tilt_deg: 75.0,
            in_image_fraction: 0.6,
        }
    }
}

fn default_sigma() -> f64 {
    0.7
}
fn default_frames() -> usize {
    40
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Per-axis standard deviation of the pixel noise.
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pose_sampler: PoseSampler,
    /// Drop frames with fewer than four visible corners instead of failing.
    #[serde(default = "default_true")]
    pub drop_invalid: bool,
    /// When set, each point is the center of a circle of this radius
    /// (meters) and is observed as the center of the projected ellipse.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circle_radius: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            noise_sigma: default_sigma(),
            frames: default_frames(),
            seed: 0,
            pose_sampler: PoseSampler::default(),
            drop_invalid: true,
            circle_radius: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        let s = &self.pose_sampler;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if self.frames < 3 {
            return bad("at least 3 frames are required");
        }
        if !(s.distance_range[0] > 0.0 && s.distance_range[0] <= s.distance_range[1]) {
            return bad("distance_range must be positive and ordered");
        }
        if !(0.0..90.0).contains(&s.max_tilt_deg) {
            return bad("max_tilt_deg must lie in [0, 90)");
        }
        if !(0.0..=1.0).contains(&s.in_image_fraction) {
            return bad("in_image_fraction must lie in [0, 1]");
        }
        if let Some(r) = self.circle_radius {
            if !(r > 0.0) {
                return bad("circle_radius must be positive");
            }
        }
        Ok(())
    }
}

/// Ground truth behind a simulated observation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: CameraSpec,
    pub poses: Vec<FramePose>,
    #[serde(default)]
    pub generator: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_sigma: f64,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Camera looking from `center` toward `aim`, rolled by `roll` about its
/// optical axis.
fn look_at(center: &Point3, aim: &Point3, roll: f64) -> Pose {
    let z = (aim - center).normalize();
    let e = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x0 = (e - z * e.dot(&z)).normalize();
    let y0 = z.cross(&x0);
    let x = x0 * roll.cos() + y0 * roll.sin();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Pose::new(r, -(r * center))
}

fn visible_fraction(spec: &CameraSpec, target: &TargetLayout, pose: &Pose) -> f64 {
    let n = target
        .positions()
        .filter(|x| spec.project(&pose.apply(x)).ok().is_some_and(|m| spec.in_image(&m)))
        .count();
    n as f64 / target.len().max(1) as f64
}

/// Draws `config.frames` poses around the target.
pub fn sample_poses(spec: &CameraSpec, target: &TargetLayout, config: &SimConfig) -> Result<Vec<Pose>, SimError> {
    config.validate()?;
    let s = &config.pose_sampler;
    let mut rng = rng(config.seed, POSE_STREAM);
    let center = target.center();
    let (lo, hi) = target.bounds();
    let max_tilt = s.max_tilt_deg.to_radians();
    let mut poses = Vec::with_capacity(config.frames);
    let mut rejections = 0;
    while poses.len() < config.frames {
        let d = if s.distance_range[1] > s.distance_range[0] {
            rng.random_range(s.distance_range[0]..=s.distance_range[1])
        } else {
            s.distance_range[0]
        };
        let tilt = if max_tilt > 0.0 {
            rng.random_range(0.0..=max_tilt)
        } else {
            0.0
        };
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let roll = rng.random_range(0.0..std::f64::consts::TAU);
        let aim = Point3::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y), 0.0);
        let cam = center + Vector3::new(tilt.sin() * phi.cos(), tilt.sin() * phi.sin(), -tilt.cos()) * d;
        let pose = look_at(&cam, &aim, roll);
        if visible_fraction(spec, target, &pose) >= s.in_image_fraction {
            poses.push(pose);
            rejections = 0;
        } else {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(SimError::Infeasible(rejections));
            }
        }
    }
    Ok(poses)
}

/// Center of the conic through `pts` (algebraic least squares).
fn conic_center(pts: &[Pixel]) -> Option<Pixel> {
    let n = pts.len() as f64;
    let mean = pts.iter().sum::<Pixel>() / n;
    let scale = pts.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
    if !(scale > 0.0) {
        return None;
    }
    let a = DMatrix::from_fn(pts.len(), 6, |i, j| {
        let q = (pts[i] - mean) / scale;
        [q.x * q.x, q.x * q.y, q.y * q.y, q.x, q.y, 1.0][j]
    });
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let sv = &svd.singular_values;
    let imin = (0..sv.len()).min_by(|&i, &j| sv[i].total_cmp(&sv[j]))?;
    let c = vt.row(imin);
    let m = Matrix2::new(2.0 * c[0], c[1], c[1], 2.0 * c[2]);
    let q = m.lu().solve(&Vector2::new(-c[3], -c[4]))?;
    Some(mean + q * scale)
}

/// Observed center of the circle of radius `r` around `x` (target frame).
fn circle_observation(spec: &CameraSpec, pose: &Pose, x: &Point3, r: f64) -> Option<Pixel> {
    let rim: Option<Vec<Pixel>> = (0..RIM_SAMPLES)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / RIM_SAMPLES as f64;
            spec.project(&pose.apply(&(x + Vector3::new(r * a.cos(), r * a.sin(), 0.0))))
                .ok()
        })
        .collect();
    conic_center(&rim?)
}

/// Projects every target point through every pose and adds noise.
pub fn synthesize_observations(
    spec: &CameraSpec,
    target: &TargetLayout,
    poses: &[Pose],
    config: &SimConfig,
) -> Result<(ObservationSet, Truth), SimError> {
    config.validate()?;
    let mut rng = rng(config.seed, NOISE_STREAM);
    let noise = (config.noise_sigma > 0.0).then(|| Normal::new(0.0, config.noise_sigma).expect("sigma checked"));
    let mut frames = Vec::with_capacity(poses.len());
    let mut truth_poses = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let id = i as i64;
        let mut corners = Vec::new();
        for (pid, x) in target.positions().enumerate() {
            let Some(m) = spec.project(&pose.apply(&x)).ok() else {
                continue;
            };
            if !spec.in_image(&m) {
                continue;
            }
            let m = match config.circle_radius {
                Some(r) => match circle_observation(spec, pose, &x, r) {
                    Some(c) => c,
                    None => continue,
                },
                None => m,
            };
            let m = match &noise {
                Some(n) => m + Pixel::new(n.sample(&mut rng), n.sample(&mut rng)),
                None => m,
            };
            corners.push(Corner { id: pid, pixel: m });
        }
        if corners.len() < MIN_CORNERS {
            if config.drop_invalid {
                log::warn!("frame {id}: {} visible corners; dropped", corners.len());
                continue;
            }
            return Err(SimError::TooFewCorners {
                frame: id,
                got: corners.len(),
            });
        }
        frames.push(Frame { id, corners });
        truth_poses.push(FramePose { frame: id, pose: *pose });
    }
    Ok((
        ObservationSet { frames },
        Truth {
            spec: spec.clone(),
            poses: truth_poses,
            generator: GENERATOR_ID.to_string(),
            seed: config.seed,
            noise_sigma: config.noise_sigma,
        },
    ))
}

/// [`sample_poses`] followed by [`synthesize_observations`].
pub fn simulate(
    spec: &CameraSpec,
    target: &TargetLayout,
    config: &SimConfig,
) -> Result<(ObservationSet, Truth), SimError> {
    let poses = sample_poses(spec, target, config)?;
    synthesize_observations(spec, target, &poses, config)
}
