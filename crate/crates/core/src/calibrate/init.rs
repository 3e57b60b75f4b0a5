//! Initial intrinsics and poses.
//!
//! Models with a pinhole core and mild distortion start from the
//! closed-form pinhole solution with zero distortion. Wide-angle and
//! omnidirectional models start from the image center and neutral
//! distortion, with the focal length picked by a 1-D search: for each
//! candidate, corners are unprojected, mapped onto the normalized plane and
//! fitted with one homography per frame. The candidate whose rays are most
//! consistent with a plane wins.

use nalgebra::{Matrix3, Vector3};

use super::homography::{calibration_matrix, estimate_homography, init_pinhole_intrinsics, init_pose_from_homography};
use super::{configure_spec, CalibConfig, CalibError, Frame, ObservationSet};
use crate::geometry::{Pixel, Point3, Pose};
use crate::models::{CameraSpec, ModelKind};
use crate::targets::TargetLayout;

/// Fewest frames accepted by the focal search.
const MIN_WIDE_FRAMES: usize = 5;
/// Corners per frame used while scoring focal candidates.
const SCORE_SUBSAMPLE: usize = 40;
/// Rays closer than this (cosine) to the image plane are not used for
/// homographies.
const MIN_RAY_COS: f64 = 0.2;
const GRID_POINTS: usize = 48;
const GOLDEN_ITERS: usize = 30;

/// Starting point for [`super::refine`].
#[derive(Clone, Debug)]
pub struct Initialization {
    pub spec: CameraSpec,
    /// One pose per frame of `observations`.
    pub poses: Vec<Pose>,
    /// The input frames for which a pose could be initialized.
    pub observations: ObservationSet,
    /// Frames left out because no pose could be computed.
    pub dropped: Vec<i64>,
}

pub(crate) fn uses_pinhole_init(kind: ModelKind) -> bool {
    matches!(
        kind,
        ModelKind::Pinhole
            | ModelKind::RadTan
            | ModelKind::RadTanBackward
            | ModelKind::Division
            | ModelKind::Rational
            | ModelKind::ThinPrism
    )
}

/// Spec of `kind` whose perspective-equivalent focal lengths are `(fx, fy)`
/// at principal point `(cx, cy)`, with distortion at its neutral values.
pub fn neutral_spec(
    kind: ModelKind,
    [fx, fy, cx, cy]: [f64; 4],
    width: u32,
    height: u32,
    config: &CalibConfig,
) -> Result<CameraSpec, CalibError> {
    let mut p = vec![fx, fy, cx, cy];
    let mut order = None;
    match kind {
        ModelKind::Pinhole => {}
        ModelKind::RadTan | ModelKind::RadTanBackward | ModelKind::KB8 => p.extend([0.0; 4]),
        ModelKind::Division => p.push(0.0),
        ModelKind::Rational => {
            let [np, nq] = config.rational_order.unwrap_or([2, 1]);
            p.extend(std::iter::repeat_n(0.0, np + nq));
            order = Some((np, nq));
        }
        ModelKind::ThinPrism => {
            let n = if config.thin_prism_extended { 7 } else { 5 };
            p.extend(std::iter::repeat_n(0.0, n));
        }
        ModelKind::Scaramuzza => {
            let f = (fx * fy).sqrt();
            p = vec![f, -1.0 / (3.0 * f), 0.0, 0.0, cx, cy, fx / fy, 0.0, 0.0];
        }
        ModelKind::FOV => p.push(1.0),
        ModelKind::UCM => {
            p = vec![2.0 * fx, 2.0 * fy, cx, cy, 1.0];
        }
        ModelKind::UCMAlpha => p.push(0.5),
        ModelKind::DS => p.extend([0.0, 0.5]),
        ModelKind::EUCM => p.extend([0.5, 1.0]),
        ModelKind::Mei => {
            p = vec![2.0 * fx, 2.0 * fy, cx, cy, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        }
    }
    let mut spec = CameraSpec::unchecked(kind, p, width, height);
    if let Some((np, nq)) = order {
        spec = spec.with_rational_order(np, nq);
    }
    let spec = configure_spec(spec, config);
    spec.validate()?;
    Ok(spec)
}

/// Homography from the target plane onto the normalized image plane
/// `(x/z, y/z)` of the rays of `frame` under `spec`, together with the
/// correspondences used.
fn normalized_homography(
    spec: &CameraSpec,
    frame: &Frame,
    target: &TargetLayout,
    stride: usize,
) -> Option<(Matrix3<f64>, Vec<(Point3, Vector3<f64>)>)> {
    let mut corr = Vec::new();
    let mut rays = Vec::new();
    for c in frame.corners.iter().step_by(stride.max(1)) {
        let Some(x) = target.point(c.id) else { continue };
        let Some(ray) = spec.unproject(&c.pixel) else { continue };
        let d = *ray.dir();
        if d.z < MIN_RAY_COS {
            continue;
        }
        corr.push((x, Pixel::new(d.x / d.z, d.y / d.z)));
        rays.push((x, d));
    }
    if corr.len() < 6 {
        return None;
    }
    let h = estimate_homography(&corr).ok()?;
    Some((h, rays))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median over frames of the median angular misfit (scaled by the focal
/// length to pixel units) between unprojected rays and the best plane
/// homography. `None` when fewer than half of the frames can be scored.
fn focal_score(spec: &CameraSpec, frames: &[Frame], target: &TargetLayout, focal: f64) -> Option<f64> {
    let mut per_frame = Vec::new();
    for f in frames {
        let stride = f.corners.len().div_ceil(SCORE_SUBSAMPLE);
        let Some((h, rays)) = normalized_homography(spec, f, target, stride) else {
            continue;
        };
        let mut errs: Vec<f64> = rays
            .iter()
            .map(|(x, d)| {
                let pred = h * Vector3::new(x.x, x.y, 1.0);
                let pred = if pred.z < 0.0 { -pred } else { pred };
                d.cross(&pred).norm().atan2(d.dot(&pred)) * focal
            })
            .collect();
        per_frame.push(median(&mut errs));
    }
    if per_frame.len() * 2 < frames.len() || per_frame.is_empty() {
        return None;
    }
    let m = median(&mut per_frame);
    m.is_finite().then_some(m)
}

/// Coarse intrinsics for wide-angle and omnidirectional models.
pub fn init_wideangle_intrinsics(
    obs: &ObservationSet,
    target: &TargetLayout,
    kind: ModelKind,
    width: u32,
    height: u32,
    config: &CalibConfig,
) -> Result<CameraSpec, CalibError> {
    let frames: Vec<Frame> = obs.usable().frames;
    if frames.len() < MIN_WIDE_FRAMES {
        return Err(CalibError::TooFewFrames {
            got: frames.len(),
            need: MIN_WIDE_FRAMES,
        });
    }
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let half = width.max(height) as f64 / 2.0;
    let (lo, hi) = (0.1 * half, 1.5 * half);
    let score = |f: f64| -> f64 {
        neutral_spec(kind, [f, f, cx, cy], width, height, config)
            .ok()
            .and_then(|s| focal_score(&s, &frames, target, f))
            .unwrap_or(f64::INFINITY)
    };
    // Geometric grid, then golden-section search in log f around the best
    // grid point.
    let ratio = (hi / lo).powf(1.0 / (GRID_POINTS - 1) as f64);
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| lo * ratio.powi(i as i32)).collect();
    let scores: Vec<f64> = grid.iter().map(|&f| score(f)).collect();
    let best = (0..GRID_POINTS)
        .min_by(|&i, &j| scores[i].total_cmp(&scores[j]))
        .unwrap();
    if !scores[best].is_finite() {
        return Err(CalibError::NoFiniteCandidate);
    }
    let mut a = grid[best.saturating_sub(1)].ln();
    let mut b = grid[(best + 1).min(GRID_POINTS - 1)].ln();
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut sc, mut sd) = (score(c.exp()), score(d.exp()));
    for _ in 0..GOLDEN_ITERS {
        if sc < sd {
            b = d;
            d = c;
            sd = sc;
            c = b - g * (b - a);
            sc = score(c.exp());
        } else {
            a = c;
            c = d;
            sc = sd;
            d = a + g * (b - a);
            sd = score(d.exp());
        }
    }
    let (f, s) = if sc < sd { (c.exp(), sc) } else { (d.exp(), sd) };
    let f = if s <= scores[best] { f } else { grid[best] };
    log::debug!(
        "{kind}: initial focal {f:.2} px (median misfit {:.3} px)",
        s.min(scores[best])
    );
    neutral_spec(kind, [f, f, cx, cy], width, height, config)
}

/// Initial spec and per-frame poses for `config.model_kind`.
pub fn initialize(
    obs: &ObservationSet,
    target: &TargetLayout,
    config: &CalibConfig,
) -> Result<Initialization, CalibError> {
    let frames = obs.usable().frames;
    if frames.is_empty() {
        return Err(CalibError::TooFewFrames { got: 0, need: 3 });
    }
    let kind = config.model_kind;
    let (width, height) = infer_image_size(obs, config)?;
    let center = target.center();
    let scale = config.init_focal_scale;

    let mut poses = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let spec;
    if uses_pinhole_init(kind) {
        let mut hs = Vec::new();
        let mut hs_frames = Vec::new();
        for f in &frames {
            match estimate_homography(&ObservationSet::correspondences(f, target)) {
                Ok(h) => {
                    hs.push(h);
                    hs_frames.push(f.clone());
                }
                Err(e) => {
                    log::warn!("frame {}: {e}; excluded", f.id);
                    dropped.push(f.id);
                }
            }
        }
        let pin = init_pinhole_intrinsics(&hs, width, height)?;
        let p = &pin.params;
        let k4 = [p[0] * scale, p[1] * scale, p[2], p[3]];
        spec = neutral_spec(kind, k4, width, height, config)?;
        let kinv = calibration_matrix(k4[0], k4[1], k4[2], k4[3])
            .try_inverse()
            .ok_or_else(|| CalibError::Degenerate("singular calibration matrix".into()))?;
        for (h, f) in hs.iter().zip(hs_frames) {
            match init_pose_from_homography(&(kinv * h), &center) {
                Ok(pose) => {
                    poses.push(pose);
                    kept.push(f);
                }
                Err(e) => {
                    log::warn!("frame {}: {e}; excluded", f.id);
                    dropped.push(f.id);
                }
            }
        }
    } else {
        let coarse = init_wideangle_intrinsics(obs, target, kind, width, height, config)?;
        let (fx, fy) = coarse.equivalent_focal();
        let (cx, cy) = coarse.principal_point();
        spec = neutral_spec(kind, [fx * scale, fy * scale, cx, cy], width, height, config)?;
        for f in frames {
            let pose = normalized_homography(&spec, &f, target, 1)
                .ok_or(CalibError::Degenerate("too few usable rays".into()))
                .and_then(|(h, _)| init_pose_from_homography(&h, &center));
            match pose {
                Ok(pose) => {
                    poses.push(pose);
                    kept.push(f);
                }
                Err(e) => {
                    log::warn!("frame {}: {e}; excluded", f.id);
                    dropped.push(f.id);
                }
            }
        }
    }
    if kept.len() < 3 {
        return Err(CalibError::TooFewFrames {
            got: kept.len(),
            need: 3,
        });
    }
    Ok(Initialization {
        spec,
        poses,
        observations: ObservationSet { frames: kept },
        dropped,
    })
}

/// Image size from the configuration, or the corner extent rounded up when
/// none is given.
fn infer_image_size(obs: &ObservationSet, config: &CalibConfig) -> Result<(u32, u32), CalibError> {
    if let Some([w, h]) = config.image_size {
        return Ok((w, h));
    }
    let mut umax: f64 = 0.0;
    let mut vmax: f64 = 0.0;
    for c in obs.frames.iter().flat_map(|f| &f.corners) {
        umax = umax.max(c.pixel.x);
        vmax = vmax.max(c.pixel.y);
    }
    if umax <= 0.0 || vmax <= 0.0 {
        return Err(CalibError::EmptyInliers);
    }
    Ok((umax.ceil() as u32 + 1, vmax.ceil() as u32 + 1))
}
