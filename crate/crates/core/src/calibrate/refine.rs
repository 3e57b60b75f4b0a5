//! Joint Levenberg-Marquardt refinement of intrinsics and poses.
//!
//! The normal equations have one dense intrinsic block and one 6×6 block
//! per frame. Pose blocks are eliminated with the Schur complement, so each
//! step solves a `P×P` system. Robust losses enter through iteratively
//! reweighted least squares; a step is accepted only when the robust cost
//! decreases.

use nalgebra::{DMatrix, DVector, Dyn, Matrix2x3, Matrix6, OMatrix, Vector2, Vector6, U2, U6};
use rayon::prelude::*;

use super::{CalibConfig, CalibError, CalibReport, FramePose, ObservationSet, MIN_CORNERS};
use crate::geometry::{skew, Pixel, Point3, Pose, PoseTangent};
use crate::models::{project_with_jacobians, CameraSpec, ModelKind};
use crate::targets::TargetLayout;

const LAMBDA_INIT: f64 = 1e-4;
const LAMBDA_UP: f64 = 2.0;
const LAMBDA_DOWN: f64 = 1.0 / 3.0;
const LAMBDA_MAX: f64 = 1e12;
/// Mean squared residual (px²) below which the fit counts as exact.
const EXACT_COST: f64 = 1e-24;
/// Relative step size below which the solver stops.
const STEP_TOL: f64 = 1e-13;
/// Eigenvalue ratio below which the intrinsic information is singular.
const SINGULAR_RATIO: f64 = 1e-15;

type ParamPoseBlock = OMatrix<f64, Dyn, U6>;
type RowJacobian = OMatrix<f64, U2, Dyn>;
type PoseJacobian = OMatrix<f64, U2, U6>;

/// Step along the second-order correction used to probe curvature.
const GEODESIC_PROBE: f64 = 0.1;
/// Largest accepted ratio `2‖a‖ / ‖v‖` of correction to step.
const GEODESIC_MAX_RATIO: f64 = 0.75;

struct FrameObs {
    id: i64,
    points: Vec<(Point3, Pixel)>,
}

/// Maps the free variables of the solver onto the parameter vector. Each
/// free variable moves one group of parameters by the same amount.
struct ParamMap {
    groups: Vec<Vec<usize>>,
    np: usize,
}

impl ParamMap {
    fn for_spec(spec: &CameraSpec) -> Self {
        let np = spec.params.len();
        let groups = match spec.kind {
            // The stretch matrix `[c d; e 1]` and a roll of every pose form
            // a one-parameter family of equivalent solutions; keeping the
            // stretch symmetric (`d = e`) removes it.
            ModelKind::Scaramuzza => {
                let mut g: Vec<Vec<usize>> = (0..7).map(|i| vec![i]).collect();
                g.push(vec![7, 8]);
                g
            }
            _ => (0..np).map(|i| vec![i]).collect(),
        };
        Self { groups, np }
    }

    /// Map that frees only the listed parameters.
    fn subset(spec: &CameraSpec, free: &[usize]) -> Self {
        Self {
            groups: free.iter().map(|&i| vec![i]).collect(),
            np: spec.params.len(),
        }
    }

    fn nq(&self) -> usize {
        self.groups.len()
    }

    fn reduce(&self, jk: &crate::models::ParamJacobian) -> RowJacobian {
        RowJacobian::from_fn(self.nq(), |r, q| self.groups[q].iter().map(|&i| jk[(r, i)]).sum())
    }

    fn expand(&self, dq: &DVector<f64>) -> Vec<f64> {
        let mut d = vec![0.0; self.np];
        for (q, g) in self.groups.iter().enumerate() {
            for &i in g {
                d[i] = dq[q];
            }
        }
        d
    }
}

struct PointLin {
    index: usize,
    weight: f64,
    residual: Vector2<f64>,
    jk: RowJacobian,
    jp: PoseJacobian,
}

struct FrameBlock {
    w: ParamPoseBlock,
    v: Matrix6<f64>,
    gp: Vector6<f64>,
    points: Vec<PointLin>,
}

struct Linearization {
    u: DMatrix<f64>,
    gk: DVector<f64>,
    frames: Vec<FrameBlock>,
    cost: f64,
    weighted_sq: f64,
    active: Vec<Vec<bool>>,
    n_active: usize,
}

fn pose_jacobian(jx: &Matrix2x3<f64>, xc: &Point3) -> PoseJacobian {
    let mut j = PoseJacobian::zeros();
    let rot = jx * (-skew(xc));
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&rot);
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(jx);
    j
}

fn linearize(
    spec: &CameraSpec,
    poses: &[Pose],
    frames: &[FrameObs],
    map: &ParamMap,
    config: &CalibConfig,
) -> Linearization {
    let nq = map.nq();
    let loss = config.loss;
    let parts: Vec<_> = frames
        .par_iter()
        .zip(poses.par_iter())
        .map(|(f, pose)| {
            let mut u = DMatrix::<f64>::zeros(nq, nq);
            let mut gk = DVector::<f64>::zeros(nq);
            let mut w = ParamPoseBlock::zeros(nq);
            let mut v = Matrix6::<f64>::zeros();
            let mut gp = Vector6::<f64>::zeros();
            let mut cost = 0.0;
            let mut wsq = 0.0;
            let mut active = vec![false; f.points.len()];
            let mut points = Vec::with_capacity(f.points.len());
            for (k, (x, m)) in f.points.iter().enumerate() {
                let xc = pose.apply(x);
                let Some((pix, jx, jk_full)) = project_with_jacobians(spec, &xc) else {
                    continue;
                };
                let r = pix - m;
                let s = r.norm_squared();
                let wt = loss.weight(s);
                cost += loss.cost(s);
                wsq += wt * s;
                active[k] = true;
                let jp = pose_jacobian(&jx, &xc);
                let jk = map.reduce(&jk_full);
                let jkt = jk.transpose();
                u.gemm(wt, &jkt, &jk, 1.0);
                gk.gemv(wt, &jkt, &r, 1.0);
                w.gemm(wt, &jkt, &jp, 1.0);
                v += jp.transpose() * jp * wt;
                gp += jp.transpose() * r * wt;
                points.push(PointLin {
                    index: k,
                    weight: wt,
                    residual: r,
                    jk,
                    jp,
                });
            }
            (u, gk, FrameBlock { w, v, gp, points }, cost, wsq, active)
        })
        .collect();
    let mut lin = Linearization {
        u: DMatrix::zeros(nq, nq),
        gk: DVector::zeros(nq),
        frames: Vec::with_capacity(parts.len()),
        cost: 0.0,
        weighted_sq: 0.0,
        active: Vec::with_capacity(parts.len()),
        n_active: 0,
    };
    for (u, gk, fb, cost, wsq, active) in parts {
        lin.u += u;
        lin.gk += gk;
        lin.n_active += fb.points.len();
        lin.frames.push(fb);
        lin.cost += cost;
        lin.weighted_sq += wsq;
        lin.active.push(active);
    }
    lin
}

/// Robust cost over the active points; `None` if any of them no longer
/// projects.
fn cost_at(
    spec: &CameraSpec,
    poses: &[Pose],
    frames: &[FrameObs],
    active: &[Vec<bool>],
    config: &CalibConfig,
) -> Option<f64> {
    let loss = config.loss;
    frames
        .par_iter()
        .zip(poses.par_iter())
        .zip(active.par_iter())
        .map(|((f, pose), act)| {
            let mut c = 0.0;
            for ((x, m), &a) in f.points.iter().zip(act) {
                if !a {
                    continue;
                }
                let p = spec.project(&pose.apply(x)).ok()?;
                c += loss.cost((p - m).norm_squared());
            }
            Some(c)
        })
        .sum()
}

fn damped(m: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let maxd = m.diagonal().amax();
    let mut out = m.clone();
    for i in 0..m.nrows() {
        out[(i, i)] += lambda * m[(i, i)].max(1e-14 * maxd).max(f64::MIN_POSITIVE);
    }
    out
}

fn damped6(m: &Matrix6<f64>, lambda: f64) -> Matrix6<f64> {
    let maxd = m.diagonal().amax();
    let mut out = *m;
    for i in 0..6 {
        out[(i, i)] += lambda * m[(i, i)].max(1e-14 * maxd).max(f64::MIN_POSITIVE);
    }
    out
}

fn inv6(m: &Matrix6<f64>) -> Option<Matrix6<f64>> {
    m.cholesky().map(|c| c.inverse()).or_else(|| m.try_inverse())
}

enum Factor {
    Cholesky(nalgebra::Cholesky<f64, Dyn>),
    Svd(nalgebra::SVD<f64, Dyn, Dyn>),
}

/// Factorization of the (damped) normal equations with the pose blocks
/// eliminated: `S = U − Σ W V⁻¹ Wᵀ`, solved after Jacobi scaling.
struct Reduced {
    s: DMatrix<f64>,
    scale: DVector<f64>,
    factor: Factor,
    vinvs: Vec<Matrix6<f64>>,
}

impl Reduced {
    fn new(lin: &Linearization, lambda: f64) -> Option<Self> {
        let mut s = if lambda > 0.0 {
            damped(&lin.u, lambda)
        } else {
            lin.u.clone()
        };
        let mut vinvs = Vec::with_capacity(lin.frames.len());
        for fb in &lin.frames {
            let vd = if lambda > 0.0 { damped6(&fb.v, lambda) } else { fb.v };
            let vinv = inv6(&vd)?;
            s -= &fb.w * vinv * fb.w.transpose();
            vinvs.push(vinv);
        }
        let s = (&s + s.transpose()) * 0.5;
        let n = s.nrows();
        let scale = DVector::from_iterator(
            n,
            (0..n).map(|i| if s[(i, i)] > 0.0 { 1.0 / s[(i, i)].sqrt() } else { 1.0 }),
        );
        let sn = DMatrix::from_fn(n, n, |i, j| s[(i, j)] * scale[i] * scale[j]);
        let factor = match sn.clone().cholesky() {
            Some(c) => Factor::Cholesky(c),
            None => Factor::Svd(sn.svd(true, true)),
        };
        Some(Self {
            s,
            scale,
            factor,
            vinvs,
        })
    }

    /// Solves the full system with right-hand side `(-gk, -gp_i)`.
    fn solve(
        &self,
        lin: &Linearization,
        gk: &DVector<f64>,
        gps: &[Vector6<f64>],
    ) -> Option<(DVector<f64>, Vec<PoseTangent>)> {
        let mut b = -gk.clone();
        for ((fb, vinv), gp) in lin.frames.iter().zip(&self.vinvs).zip(gps) {
            b += &fb.w * (vinv * gp);
        }
        let bn = b.component_mul(&self.scale);
        let y = match &self.factor {
            Factor::Cholesky(c) => c.solve(&bn),
            Factor::Svd(svd) => svd.solve(&bn, 1e-14).ok()?,
        };
        let dk = y.component_mul(&self.scale);
        if !dk.iter().all(|v| v.is_finite()) {
            return None;
        }
        let dposes = lin
            .frames
            .iter()
            .zip(&self.vinvs)
            .zip(gps)
            .map(|((fb, vinv), gp)| vinv * (-gp - fb.w.transpose() * &dk))
            .collect();
        Some((dk, dposes))
    }
}

fn apply_step(
    spec: &CameraSpec,
    poses: &[Pose],
    map: &ParamMap,
    dk: &DVector<f64>,
    dposes: &[PoseTangent],
    t: f64,
) -> (CameraSpec, Vec<Pose>) {
    let d = map.expand(dk);
    let mut trial = spec.clone();
    for (p, di) in trial.params.iter_mut().zip(d) {
        *p += t * di;
    }
    let poses = poses.iter().zip(dposes).map(|(p, d)| p.retract(&(d * t))).collect();
    (trial, poses)
}

/// Second-order (geodesic acceleration) correction to the step `v`:
/// solves the same damped system with the directional second derivative of
/// the residuals, estimated by a finite difference along `v`.
fn geodesic_correction(
    spec: &CameraSpec,
    poses: &[Pose],
    frames: &[FrameObs],
    map: &ParamMap,
    lin: &Linearization,
    reduced: &Reduced,
    v: &(DVector<f64>, Vec<PoseTangent>),
) -> Option<(DVector<f64>, Vec<PoseTangent>)> {
    let h = GEODESIC_PROBE;
    let (probe_spec, probe_poses) = apply_step(spec, poses, map, &v.0, &v.1, h);
    let nq = map.nq();
    let parts: Option<Vec<(DVector<f64>, Vector6<f64>)>> = lin
        .frames
        .par_iter()
        .zip(frames.par_iter())
        .zip(probe_poses.par_iter())
        .zip(v.1.par_iter())
        .map(|(((fb, f), pose), dp)| {
            let mut gk = DVector::zeros(nq);
            let mut gp = Vector6::zeros();
            for pl in &fb.points {
                let (x, m) = &f.points[pl.index];
                let ph = probe_spec.project(&pose.apply(x)).ok()?;
                let jv = &pl.jk * &v.0 + pl.jp * dp;
                let rvv = (((ph - m) - pl.residual) / h - jv) * (2.0 / h);
                gk.gemv(pl.weight, &pl.jk.transpose(), &rvv, 1.0);
                gp += pl.jp.transpose() * rvv * pl.weight;
            }
            Some((gk, gp))
        })
        .collect();
    let parts = parts?;
    let mut gk = DVector::zeros(nq);
    let mut gps = Vec::with_capacity(parts.len());
    for (g, p) in parts {
        gk += g;
        gps.push(p);
    }
    reduced.solve(lin, &gk, &gps)
}

/// Norm of a step with each variable scaled by the square root of its
/// curvature.
fn scaled_norm(lin: &Linearization, dk: &DVector<f64>, dposes: &[PoseTangent]) -> f64 {
    let mut acc = 0.0;
    for i in 0..dk.len() {
        acc += lin.u[(i, i)] * dk[i] * dk[i];
    }
    for (fb, d) in lin.frames.iter().zip(dposes) {
        for i in 0..6 {
            acc += fb.v[(i, i)] * d[i] * d[i];
        }
    }
    acc.sqrt()
}

/// Clamps the constrained parameters back into their admissible box.
fn project_to_box(kind: ModelKind, p: &mut [f64]) {
    const TINY: f64 = 1e-9;
    match kind {
        ModelKind::EUCM => {
            p[4] = p[4].clamp(0.0, 1.0);
            p[5] = p[5].max(TINY);
        }
        ModelKind::DS => {
            p[4] = p[4].clamp(-1.0 + TINY, 1.0 - TINY);
            p[5] = p[5].clamp(TINY, 1.0);
        }
        ModelKind::UCMAlpha => p[4] = p[4].clamp(0.0, 1.0 - TINY),
        ModelKind::UCM | ModelKind::Mei | ModelKind::FOV => p[4] = p[4].max(0.0),
        _ => {}
    }
}

struct Solution {
    spec: CameraSpec,
    poses: Vec<Pose>,
    lin: Linearization,
    map: ParamMap,
    converged: bool,
    iterations: usize,
    history: Vec<f64>,
}

fn solve(frames: &[FrameObs], spec: CameraSpec, poses: Vec<Pose>, map: ParamMap, config: &CalibConfig) -> Solution {
    let mut spec = spec;
    let mut poses = poses;
    let mut lin = linearize(&spec, &poses, frames, &map, config);
    let mut cost = lin.cost;
    let mut history = vec![cost];
    let mut lambda = LAMBDA_INIT;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_lm_iterations {
        if cost <= EXACT_COST * lin.n_active.max(1) as f64 {
            converged = true;
            break;
        }
        iterations += 1;
        let gps: Vec<Vector6<f64>> = lin.frames.iter().map(|f| f.gp).collect();
        let mut accepted = None;
        while lambda <= LAMBDA_MAX {
            if let Some(trial) = try_step(&spec, &poses, frames, &map, &lin, &gps, lambda, cost, config) {
                accepted = Some(trial);
                break;
            }
            lambda *= LAMBDA_UP;
        }
        let Some((trial, trial_poses, new_cost, rel_step)) = accepted else {
            // No decrease is possible at any damping: a (numerical) minimum.
            converged = true;
            break;
        };
        lambda = (lambda * LAMBDA_DOWN).max(1e-15);
        let rel = (cost - new_cost) / cost;
        log::trace!("iteration {iterations}: cost {new_cost:.6e}, lambda {lambda:.1e}, step {rel_step:.1e}");
        spec = trial;
        poses = trial_poses;
        cost = new_cost;
        history.push(cost);
        lin = linearize(&spec, &poses, frames, &map, config);
        if rel < config.lm_tolerance || rel_step < STEP_TOL {
            converged = true;
            break;
        }
    }
    Solution {
        spec,
        poses,
        lin,
        map,
        converged,
        iterations,
        history,
    }
}

/// One damped step at `lambda`; `Some` when it lowers the robust cost.
#[allow(clippy::too_many_arguments)]
fn try_step(
    spec: &CameraSpec,
    poses: &[Pose],
    frames: &[FrameObs],
    map: &ParamMap,
    lin: &Linearization,
    gps: &[Vector6<f64>],
    lambda: f64,
    cost: f64,
    config: &CalibConfig,
) -> Option<(CameraSpec, Vec<Pose>, f64, f64)> {
    let reduced = Reduced::new(lin, lambda)?;
    let (mut dk, mut dposes) = reduced.solve(lin, &lin.gk, gps)?;
    if let Some((ak, aposes)) =
        geodesic_correction(spec, poses, frames, map, lin, &reduced, &(dk.clone(), dposes.clone()))
    {
        let ratio = 2.0 * scaled_norm(lin, &ak, &aposes) / scaled_norm(lin, &dk, &dposes);
        if ratio <= GEODESIC_MAX_RATIO {
            dk += ak * 0.5;
            for (d, a) in dposes.iter_mut().zip(&aposes) {
                *d += a * 0.5;
            }
        }
    }
    let (mut trial, trial_poses) = apply_step(spec, poses, map, &dk, &dposes, 1.0);
    project_to_box(trial.kind, &mut trial.params);
    if let Err(e) = trial.validate() {
        log::trace!("step rejected at lambda {lambda:.1e}: {e}");
        return None;
    }
    let Some(c) = cost_at(&trial, &trial_poses, frames, &lin.active, config) else {
        log::trace!("step rejected at lambda {lambda:.1e}: a point stopped projecting");
        return None;
    };
    if c >= cost {
        log::trace!("step rejected at lambda {lambda:.1e}: cost rises by {:.3e}", c - cost);
        return None;
    }
    let rel_step = map
        .expand(&dk)
        .iter()
        .zip(&spec.params)
        .map(|(d, p)| d.abs() / p.abs().max(1e-8))
        .fold(0.0, f64::max);
    Some((trial, trial_poses, c, rel_step))
}

/// Per-parameter standard deviations and the redundancy diagnostic.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariance {
    pub param_std: Vec<Option<f64>>,
    /// `None` when the intrinsic block is singular.
    pub condition_number: Option<f64>,
    /// Residual variance estimate (px²).
    pub sigma2: f64,
}

fn covariance_from(lin: &Linearization, map: &ParamMap) -> Covariance {
    let unavailable = Covariance {
        param_std: vec![None; map.np],
        condition_number: None,
        sigma2: f64::NAN,
    };
    let dof = 2 * lin.n_active as i64 - map.nq() as i64 - 6 * lin.frames.len() as i64;
    let Some(s) = Reduced::new(lin, 0.0).map(|r| r.s) else {
        return unavailable;
    };
    let n = s.nrows();
    if (0..n).any(|i| !(s[(i, i)] > 0.0)) {
        return unavailable;
    }
    let d = DVector::from_iterator(n, (0..n).map(|i| 1.0 / s[(i, i)].sqrt()));
    let corr = DMatrix::from_fn(n, n, |i, j| s[(i, j)] * d[i] * d[j]);
    let eig = corr.clone().symmetric_eigen();
    let emax = eig.eigenvalues.max();
    let emin = eig.eigenvalues.min();
    if !(emin > SINGULAR_RATIO * emax) {
        return unavailable;
    }
    let cond = emax / emin;
    let sigma2 = if dof > 0 {
        lin.weighted_sq / dof as f64
    } else {
        f64::NAN
    };
    let Some(inv) = corr.try_inverse() else {
        return unavailable;
    };
    let mut param_std = vec![None; map.np];
    for (q, group) in map.groups.iter().enumerate() {
        let v = sigma2 * inv[(q, q)] * d[q] * d[q];
        for &i in group {
            param_std[i] = (v >= 0.0 && v.is_finite()).then(|| v.sqrt());
        }
    }
    Covariance {
        param_std,
        condition_number: Some(cond),
        sigma2,
    }
}

/// Frames of `obs` paired with their initial poses; frames with fewer than
/// the minimum number of corners are skipped.
fn frame_obs(obs: &ObservationSet, target: &TargetLayout) -> Result<Vec<FrameObs>, CalibError> {
    obs.check_ids(target)?;
    Ok(obs
        .frames
        .iter()
        .map(|f| FrameObs {
            id: f.id,
            points: ObservationSet::correspondences(f, target),
        })
        .collect())
}

/// Jointly refines `init_spec` and `init_poses` (one per frame of `obs`).
pub fn refine(
    obs: &ObservationSet,
    target: &TargetLayout,
    init_spec: &CameraSpec,
    init_poses: &[Pose],
    config: &CalibConfig,
) -> Result<CalibReport, CalibError> {
    config.validate()?;
    init_spec.validate()?;
    if init_poses.len() != obs.frames.len() {
        return Err(CalibError::InvalidConfig(format!(
            "{} initial poses for {} frames",
            init_poses.len(),
            obs.frames.len()
        )));
    }
    let all = frame_obs(obs, target)?;
    let mut frames = Vec::new();
    let mut poses = Vec::new();
    let mut dropped = Vec::new();
    for (f, pose) in all.into_iter().zip(init_poses) {
        let valid = f
            .points
            .iter()
            .filter(|(x, _)| init_spec.project(&pose.apply(x)).valid)
            .count();
        if f.points.len() < MIN_CORNERS || valid < MIN_CORNERS {
            log::warn!(
                "frame {}: only {valid} corners project at the initial estimate; dropped",
                f.id
            );
            dropped.push(f.id);
        } else {
            frames.push(f);
            poses.push(*pose);
        }
    }
    if frames.len() < 3 {
        return Err(CalibError::TooFewFrames {
            got: frames.len(),
            need: 3,
        });
    }
    let map = ParamMap::for_spec(init_spec);
    let sol = solve(&frames, init_spec.clone(), poses, map, config);
    let cov = covariance_from(&sol.lin, &sol.map);
    let rms = if sol.lin.n_active > 0 {
        (sum_sq(&sol.spec, &sol.poses, &frames, &sol.lin.active) / sol.lin.n_active as f64).sqrt()
    } else {
        return Err(CalibError::EmptyInliers);
    };
    Ok(CalibReport {
        config: config.clone(),
        spec: sol.spec,
        poses: frames
            .iter()
            .zip(&sol.poses)
            .map(|(f, p)| FramePose { frame: f.id, pose: *p })
            .collect(),
        rms,
        param_std: cov.param_std,
        condition_number: cov.condition_number,
        inliers_used: sol.lin.n_active,
        trimmed: 0,
        trim_rounds_run: 0,
        frames_dropped: dropped,
        converged: sol.converged,
        iterations: sol.iterations,
        cost_history: sol.history,
    })
}

/// Fits focal length, principal point and poses with the remaining
/// parameters held at their current values. Frames with too few valid
/// projections keep their poses.
pub(crate) fn refine_core(
    obs: &ObservationSet,
    target: &TargetLayout,
    spec: &CameraSpec,
    poses: &[Pose],
    config: &CalibConfig,
) -> Result<(CameraSpec, Vec<Pose>), CalibError> {
    let free: Vec<usize> = match spec.kind {
        ModelKind::Scaramuzza => vec![0, 4, 5],
        ModelKind::KB8 => vec![0, 1, 2, 3, 4],
        _ => vec![0, 1, 2, 3],
    };
    let all = frame_obs(obs, target)?;
    let mut keep = Vec::new();
    let mut frames = Vec::new();
    let mut sub = Vec::new();
    for (i, (f, pose)) in all.into_iter().zip(poses).enumerate() {
        let valid = f
            .points
            .iter()
            .filter(|(x, _)| spec.project(&pose.apply(x)).valid)
            .count();
        if valid >= MIN_CORNERS {
            keep.push(i);
            frames.push(f);
            sub.push(*pose);
        }
    }
    if frames.len() < 3 {
        return Ok((spec.clone(), poses.to_vec()));
    }
    let sol = solve(&frames, spec.clone(), sub, ParamMap::subset(spec, &free), config);
    let mut out = poses.to_vec();
    for (i, p) in keep.into_iter().zip(sol.poses) {
        out[i] = p;
    }
    log::debug!("core fit: {:?} after {} iterations", sol.spec.params, sol.iterations);
    Ok((sol.spec, out))
}

fn sum_sq(spec: &CameraSpec, poses: &[Pose], frames: &[FrameObs], active: &[Vec<bool>]) -> f64 {
    let mut acc = 0.0;
    for ((f, pose), act) in frames.iter().zip(poses).zip(active) {
        for ((x, m), &a) in f.points.iter().zip(act) {
            if a {
                if let Some(p) = spec.project(&pose.apply(x)).ok() {
                    acc += (p - m).norm_squared();
                }
            }
        }
    }
    acc
}

/// Root mean square of the 2-D residuals over the inlier corners. Frames
/// without a pose in `poses` and corners that do not project are skipped.
/// `inliers`, when given, has one flag per corner of each frame.
pub fn compute_rms(
    spec: &CameraSpec,
    poses: &[FramePose],
    obs: &ObservationSet,
    target: &TargetLayout,
    inliers: Option<&[Vec<bool>]>,
) -> Result<f64, CalibError> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (fi, f) in obs.frames.iter().enumerate() {
        let Some(pose) = poses.iter().find(|p| p.frame == f.id) else {
            continue;
        };
        for (ci, c) in f.corners.iter().enumerate() {
            if let Some(mask) = inliers {
                if !mask[fi][ci] {
                    continue;
                }
            }
            let x = target
                .point(c.id)
                .ok_or(CalibError::UnknownPoint { frame: f.id, id: c.id })?;
            if let Some(p) = spec.project(&pose.pose.apply(&x)).ok() {
                acc += (p - c.pixel).norm_squared();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(CalibError::EmptyInliers);
    }
    Ok((acc / n as f64).sqrt())
}

/// Standard deviations of the intrinsics at the estimate of `report`, with
/// the poses marginalized out.
pub fn compute_covariance(
    report: &CalibReport,
    obs: &ObservationSet,
    target: &TargetLayout,
) -> Result<Covariance, CalibError> {
    let mut frames = Vec::new();
    let mut poses = Vec::new();
    for f in frame_obs(obs, target)? {
        if let Some(p) = report.pose(f.id) {
            frames.push(f);
            poses.push(*p);
        }
    }
    if frames.is_empty() {
        return Err(CalibError::EmptyInliers);
    }
    let map = ParamMap::for_spec(&report.spec);
    let lin = linearize(&report.spec, &poses, &frames, &map, &report.config);
    Ok(covariance_from(&lin, &map))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Removes corners whose residual norm exceeds
/// `max(trim_threshold, 3·1.4826·MAD)` and re-refines, up to
/// `config.trim_rounds` times. Returns the reduced observations with the
/// final report.
pub fn trim_outliers(
    report: &CalibReport,
    obs: &ObservationSet,
    target: &TargetLayout,
    config: &CalibConfig,
) -> Result<(ObservationSet, CalibReport), CalibError> {
    obs.check_ids(target)?;
    let mut current = ObservationSet {
        frames: obs
            .frames
            .iter()
            .filter(|f| report.pose(f.id).is_some())
            .cloned()
            .collect(),
    };
    let mut rep = report.clone();
    let mut trimmed = report.trimmed;
    let mut rounds = report.trim_rounds_run;
    let mut dropped = report.frames_dropped.clone();
    for _ in 0..config.trim_rounds {
        let norms: Vec<Vec<f64>> = current
            .frames
            .iter()
            .map(|f| {
                let pose = rep.pose(f.id);
                f.corners
                    .iter()
                    .map(|c| {
                        let x = target.point(c.id).expect("ids checked");
                        pose.and_then(|p| rep.spec.project(&p.apply(&x)).ok())
                            .map(|p| (p - c.pixel).norm())
                            .unwrap_or(f64::INFINITY)
                    })
                    .collect()
            })
            .collect();
        let mut finite: Vec<f64> = norms.iter().flatten().copied().filter(|v| v.is_finite()).collect();
        let med = median(&mut finite);
        let mut dev: Vec<f64> = finite.iter().map(|v| (v - med).abs()).collect();
        let mad = median(&mut dev);
        let threshold = config.trim_threshold.max(3.0 * 1.4826 * mad);
        let mut removed = 0;
        let mut next = ObservationSet::default();
        let mut next_poses = Vec::new();
        for (f, fn_) in current.frames.iter().zip(&norms) {
            let corners: Vec<_> = f
                .corners
                .iter()
                .zip(fn_)
                .filter(|(_, &n)| n <= threshold)
                .map(|(c, _)| *c)
                .collect();
            removed += f.corners.len() - corners.len();
            if corners.len() < MIN_CORNERS {
                log::warn!("frame {}: {} corners left after trimming; dropped", f.id, corners.len());
                removed += corners.len();
                dropped.push(f.id);
                continue;
            }
            next_poses.push(*rep.pose(f.id).expect("frames carry poses"));
            next.frames.push(super::Frame { id: f.id, corners });
        }
        if removed == 0 {
            break;
        }
        if next.frames.len() < 3 {
            return Err(CalibError::TooFewFrames {
                got: next.frames.len(),
                need: 3,
            });
        }
        log::info!(
            "trim round {}: threshold {threshold:.3} px, {removed} corners removed",
            rounds + 1
        );
        trimmed += removed;
        rounds += 1;
        let mut next_rep = refine(&next, target, &rep.spec, &next_poses, config)?;
        dropped.append(&mut next_rep.frames_dropped);
        current = ObservationSet {
            frames: next
                .frames
                .into_iter()
                .filter(|f| next_rep.pose(f.id).is_some())
                .collect(),
        };
        rep = next_rep;
    }
    rep.trimmed = trimmed;
    rep.trim_rounds_run = rounds;
    rep.frames_dropped = dropped;
    Ok((current, rep))
}
