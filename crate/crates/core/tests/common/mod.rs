//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix2x3, Rotation3, Vector3};
use wacal::calibrate::{CalibConfig, CalibReport, ObservationSet};
use wacal::catalog;
use wacal::models::project_with_jacobians;
use wacal::simulate::{simulate, SimConfig, Truth};
use wacal::{CameraSpec, Pixel, Point3, Pose, TargetConfig, TargetLayout};

pub fn aprilgrid() -> TargetLayout {
    TargetConfig::default_aprilgrid().build().unwrap()
}

/// Simulates `frames` frames of the default AprilGrid with the sampler
/// suited to `spec`.
pub fn simulated(spec: &CameraSpec, seed: u64, sigma: f64, frames: usize) -> (ObservationSet, Truth) {
    let cfg = SimConfig {
        noise_sigma: sigma,
        frames,
        seed,
        pose_sampler: catalog::pose_sampler_for(spec),
        ..SimConfig::default()
    };
    simulate(spec, &aprilgrid(), &cfg).unwrap()
}

pub fn config_for(spec: &CameraSpec) -> CalibConfig {
    let mut c = CalibConfig::new(spec.kind);
    c.image_size = Some([spec.width, spec.height]);
    if let Some([p, q]) = spec.rational_order {
        c.rational_order = Some([p, q]);
    }
    c.thin_prism_extended = spec.params.len() == 11 && spec.kind == wacal::ModelKind::ThinPrism;
    c
}

/// Angle between two directions, accurate for tiny angles.
pub fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let (a, b) = (a.normalize(), b.normalize());
    2.0 * ((a - b).norm() / 2.0).min(1.0).asin()
}

/// Pixel → ray → point → pixel → ray: returns the angle between the two
/// rays, or `None` when the pixel does not unproject.
pub fn ray_round_trip(spec: &CameraSpec, m: &Pixel, depth: f64) -> Option<f64> {
    let r0 = spec.unproject(m)?;
    let x = r0.dir() * depth;
    let p = spec.project(&x).ok()?;
    let r1 = spec.unproject(&p)?;
    Some(angle(r0.dir(), r1.dir()))
}

/// Relative error between the analytic Jacobians and central differences
/// of the forward projection. The point block uses `h = 1e-6·max(1, |x|)`;
/// parameter columns are scaled by `|p|` (1e-3 for zero parameters) so the
/// comparison is insensitive to parameter units.
pub fn jacobian_error(spec: &CameraSpec, x: &Point3) -> f64 {
    let (_, jx, jk) = project_with_jacobians(spec, x).expect("projectable");
    let h = 1e-6 * x.norm().max(1.0);
    let mut fd_x = Matrix2x3::zeros();
    for c in 0..3 {
        let mut a = *x;
        let mut b = *x;
        a[c] += h;
        b[c] -= h;
        fd_x.set_column(c, &((spec.project(&a).pixel - spec.project(&b).pixel) / (2.0 * h)));
    }
    let point_err = (fd_x - jx).norm() / jx.norm();
    let np = spec.params.len();
    let mut fd_k = DMatrix::zeros(2, np);
    let mut an_k = DMatrix::zeros(2, np);
    for k in 0..np {
        let scale = if spec.params[k] != 0.0 {
            spec.params[k].abs()
        } else {
            1e-3
        };
        let hk = 1e-6 * scale;
        let mut a = spec.clone();
        let mut b = spec.clone();
        a.params[k] += hk;
        b.params[k] -= hk;
        let d = (a.project(x).pixel - b.project(x).pixel) / (2.0 * hk);
        fd_k.set_column(k, &(d * scale));
        an_k.set_column(k, &(jk.column(k) * scale));
    }
    let param_err = (fd_k - &an_k).norm() / an_k.norm();
    point_err.max(param_err)
}

/// Largest pixel difference between two cameras over rays within
/// `max_angle` of the optical axis (points that neither camera projects
/// are skipped; points that only one projects count as infinite).
pub fn projection_gap(a: &CameraSpec, b: &CameraSpec, max_angle: f64, samples: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let n = (samples as f64).sqrt().ceil() as usize;
    for i in 0..n {
        for j in 0..n {
            let theta = max_angle * (i as f64 + 0.5) / n as f64;
            let phi = std::f64::consts::TAU * j as f64 / n as f64;
            let x = Point3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()) * 2.0;
            let pa = a.project(&x);
            let pb = b.project(&x);
            match (pa.valid, pb.valid) {
                (true, true) => worst = worst.max((pa.pixel - pb.pixel).amax()),
                (false, false) => {}
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}

/// Largest reprojection difference between an estimate and the truth over
/// the truth's observed points.
pub fn reprojection_gap(report: &CalibReport, truth: &Truth, target: &TargetLayout) -> f64 {
    let mut worst: f64 = 0.0;
    for fp in &truth.poses {
        let Some(est) = report.pose(fp.frame) else { continue };
        for x in target.positions() {
            let t = truth.spec.project(&fp.pose.apply(&x));
            if !t.valid || !truth.spec.in_image(&t.pixel) {
                continue;
            }
            let e = report.spec.project(&est.apply(&x));
            worst = worst.max(if e.valid {
                (e.pixel - t.pixel).amax()
            } else {
                f64::INFINITY
            });
        }
    }
    worst
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Cramér-Rao lower bound on the intrinsic standard deviations for the
/// corners in `obs` seen from the true poses under isotropic pixel noise
/// `sigma`. The Fisher information is built from a central-difference
/// Jacobian over intrinsics and per-frame poses (rotation perturbed as
/// `exp(δω)·R`, translation additively).
pub fn crlb_std(truth: &Truth, obs: &ObservationSet, target: &TargetLayout, sigma: f64) -> Vec<f64> {
    let spec = &truth.spec;
    let ni = spec.params.len();
    let frames: Vec<(&Pose, Vec<Point3>)> = obs
        .frames
        .iter()
        .filter_map(|f| {
            let fp = truth.poses.iter().find(|p| p.frame == f.id)?;
            Some((
                &fp.pose,
                f.corners.iter().map(|c| target.point(c.id).unwrap()).collect(),
            ))
        })
        .collect();
    let nres: usize = frames.iter().map(|(_, pts)| 2 * pts.len()).sum();
    let np = ni + 6 * frames.len();
    let mut jac = DMatrix::<f64>::zeros(nres, np);

    let residuals = |s: &CameraSpec, poses: &[Pose], out: &mut Vec<f64>| {
        out.clear();
        for ((_, pts), pose) in frames.iter().zip(poses) {
            for x in pts {
                let p = s.project(&pose.apply(x));
                assert!(p.valid);
                out.push(p.pixel.x);
                out.push(p.pixel.y);
            }
        }
    };
    let base: Vec<Pose> = frames.iter().map(|(p, _)| (*p).clone()).collect();
    let perturb = |pose: &Pose, k: usize, h: f64| {
        let mut rot = pose.rotation;
        let mut t = pose.translation;
        if k < 3 {
            let mut w = Vector3::zeros();
            w[k] = h;
            rot = Rotation3::new(w).into_inner() * rot;
        } else {
            t[k - 3] += h;
        }
        Pose::new(rot, t)
    };
    let (mut ra, mut rb) = (Vec::new(), Vec::new());
    for k in 0..np {
        let (mut sa, mut sb) = (spec.clone(), spec.clone());
        let (mut pa, mut pb) = (base.clone(), base.clone());
        let h;
        if k < ni {
            h = 1e-6 * spec.params[k].abs().max(1e-3);
            sa.params[k] += h;
            sb.params[k] -= h;
        } else {
            let (f, c) = ((k - ni) / 6, (k - ni) % 6);
            h = 1e-7;
            pa[f] = perturb(&base[f], c, h);
            pb[f] = perturb(&base[f], c, -h);
        }
        residuals(&sa, &pa, &mut ra);
        residuals(&sb, &pb, &mut rb);
        for r in 0..nres {
            jac[(r, k)] = (ra[r] - rb[r]) / (2.0 * h);
        }
    }
    let fisher = jac.transpose() * &jac / (sigma * sigma);
    let cov = fisher.try_inverse().expect("information matrix is invertible");
    (0..ni).map(|k| cov[(k, k)].sqrt()).collect()
}
