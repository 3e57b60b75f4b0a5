//! Planar homographies and the closed-form pinhole initialization.

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::CalibError;
use crate::geometry::{nearest_rotation, Pixel, Point3, Pose};
use crate::models::{CameraSpec, ModelKind};

/// Rank test on the normalized DLT system: ratio of the second-smallest to
/// the largest singular value.
const DEGENERATE_RATIO: f64 = 1e-10;
/// Upper bound on `σ_max / σ_second_smallest` of the absolute-conic system.
const MAX_CONDITION: f64 = 1e12;

/// Similarity moving the centroid to the origin with mean distance √2.
fn normalizing_transform(pts: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (mx / n, my / n);
    let mean_dist = pts
        .iter()
        .map(|p| ((p.0 - mx).powi(2) + (p.1 - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0 && mean_dist.is_finite()) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

fn apply_h(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = h * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}

/// Right singular vector of the smallest singular value, plus the ratio
/// used for the rank test and the full singular spectrum.
fn null_vector(a: DMatrix<f64>) -> (nalgebra::DVector<f64>, Vec<f64>) {
    let cols = a.ncols();
    // Pad so that the thin SVD still exposes the full right basis.
    let a = if a.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.rows_mut(0, a.nrows()).copy_from(&a);
        p
    } else {
        a
    };
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let imin = (0..sv.len()).min_by(|&i, &j| sv[i].total_cmp(&sv[j])).unwrap();
    (vt.row(imin).transpose(), sv)
}

/// Normalized DLT homography mapping target-plane `(X, Y)` to pixels.
///
/// The `z` coordinate of the target points is ignored; callers pass points
/// of the `z = 0` plane.
pub fn estimate_homography(correspondences: &[(Point3, Pixel)]) -> Result<Matrix3<f64>, CalibError> {
    if correspondences.len() < 4 {
        return Err(CalibError::Degenerate(format!(
            "homography needs at least 4 correspondences, got {}",
            correspondences.len()
        )));
    }
    let src: Vec<(f64, f64)> = correspondences.iter().map(|(p, _)| (p.x, p.y)).collect();
    let dst: Vec<(f64, f64)> = correspondences.iter().map(|(_, m)| (m.x, m.y)).collect();
    let degenerate = || CalibError::Degenerate("correspondences are collinear or coincident".into());
    let ts = normalizing_transform(&src).ok_or_else(degenerate)?;
    let td = normalizing_transform(&dst).ok_or_else(degenerate)?;

    let n = correspondences.len();
    let mut a = DMatrix::zeros(2 * n, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let (x, y) = apply_h(&ts, s.0, s.1);
        let (u, v) = apply_h(&td, d.0, d.1);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let (h, mut sv) = null_vector(a);
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[sv.len() - 2] <= DEGENERATE_RATIO * sv[0] {
        return Err(degenerate());
    }
    let hn = Matrix3::from_row_slice(h.as_slice());
    let td_inv = td.try_inverse().ok_or_else(degenerate)?;
    let mut hm = td_inv * hn * ts;
    if hm[(2, 2)].abs() > 1e-12 {
        hm /= hm[(2, 2)];
    } else {
        hm /= hm.norm();
    }
    Ok(hm)
}

/// Row of the zero-skew absolute-conic system for columns `i`, `j` of `h`,
/// over `b = (B11, B22, B13, B23, B33)`.
fn conic_row(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 5] {
    let (a, b) = (h.column(i), h.column(j));
    [
        a[0] * b[0],
        a[1] * b[1],
        a[2] * b[0] + a[0] * b[2],
        a[2] * b[1] + a[1] * b[2],
        a[2] * b[2],
    ]
}

/// Closed-form zero-skew pinhole intrinsics from plane homographies
/// (target plane → pixels) of at least three distinct orientations.
pub fn init_pinhole_intrinsics(
    homographies: &[Matrix3<f64>],
    width: u32,
    height: u32,
) -> Result<CameraSpec, CalibError> {
    if homographies.len() < 3 {
        return Err(CalibError::TooFewFrames {
            got: homographies.len(),
            need: 3,
        });
    }
    // Work in pixel coordinates centered on the image and scaled to O(1).
    let s = 2.0 / (width as f64 + height as f64);
    let (u0, v0) = (width as f64 / 2.0, height as f64 / 2.0);
    let t = Matrix3::new(s, 0.0, -s * u0, 0.0, s, -s * v0, 0.0, 0.0, 1.0);

    let mut a = DMatrix::zeros(2 * homographies.len(), 5);
    for (k, h) in homographies.iter().enumerate() {
        let hn = t * h;
        let hn = hn / hn.column(0).norm().max(hn.column(1).norm());
        let r12 = conic_row(&hn, 0, 1);
        let r11 = conic_row(&hn, 0, 0);
        let r22 = conic_row(&hn, 1, 1);
        for c in 0..5 {
            a[(2 * k, c)] = r12[c];
            a[(2 * k + 1, c)] = r11[c] - r22[c];
        }
    }
    let (b, mut sv) = null_vector(a);
    sv.sort_by(|a, b| b.total_cmp(a));
    let cond = sv[0] / sv[sv.len() - 2];
    if !(cond <= MAX_CONDITION) {
        return Err(CalibError::IllConditioned(cond));
    }
    let b = if b[0] < 0.0 { -b } else { b };
    let (b11, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4]);
    if !(b11 > 0.0 && b22 > 0.0) {
        return Err(CalibError::Degenerate("absolute conic is not positive definite".into()));
    }
    let cx = -b13 / b11;
    let cy = -b23 / b22;
    let lambda = b33 - b13 * b13 / b11 - b23 * b23 / b22;
    let fx = (lambda / b11).sqrt();
    let fy = (lambda / b22).sqrt();
    if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
        return Err(CalibError::Degenerate(
            "absolute conic gives no real focal length".into(),
        ));
    }
    let params = vec![fx / s, fy / s, cx / s + u0, cy / s + v0];
    Ok(CameraSpec::new(ModelKind::Pinhole, params, width, height)?)
}

/// Pinhole calibration matrix of the first four parameters.
pub fn calibration_matrix(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
    Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
}

/// Pose of a target plane from a homography onto normalized image
/// coordinates (`K⁻¹·H` for a pinhole camera). The sign is chosen so that
/// `target_center` lies in front of the camera.
pub fn init_pose_from_homography(h: &Matrix3<f64>, target_center: &Point3) -> Result<Pose, CalibError> {
    let m1 = h.column(0).into_owned();
    let m2 = h.column(1).into_owned();
    let m3 = h.column(2).into_owned();
    let scale = 2.0 / (m1.norm() + m2.norm());
    if !(scale.is_finite() && scale > 0.0) {
        return Err(CalibError::Degenerate("homography has vanishing columns".into()));
    }
    for sign in [1.0, -1.0] {
        let l = sign * scale;
        let r1 = m1 * l;
        let r2 = m2 * l;
        let r3 = r1.cross(&r2);
        let r = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]));
        let pose = Pose::new(r, m3 * l);
        if pose.apply(target_center).z > 0.0 {
            return Ok(pose);
        }
    }
    Err(CalibError::NegativeDepth)
}
