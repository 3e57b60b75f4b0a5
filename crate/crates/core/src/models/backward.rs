//! Back-projection pixel → unit ray.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::forward::{
    kb_poly, kb_poly_deriv, mei_distort, newton2, prism_distort, radtan_backward_map, radtan_distort, rational_factor,
    scaramuzza_w, Meta,
};
use super::jet::Jet;
use super::ModelKind;

const UNPROJECT_MAX_ITER: usize = 20;
const KB_TOL: f64 = 1e-12;
const MEI_FIXED_POINT_ITERS: usize = 10;

fn from_normalized(xn: f64, yn: f64) -> Vector3<f64> {
    Vector3::new(xn, yn, 1.0)
}

fn jets(v: &[f64]) -> Vec<Jet<2>> {
    v.iter().map(|&x| Jet::constant(x)).collect()
}

/// Unnormalized ray direction, or `None` outside the invertible region.
pub(crate) fn unproject(kind: ModelKind, meta: &Meta, p: &[f64], u: f64, v: f64) -> Option<Vector3<f64>> {
    let xd = (u - p[2]) / p[0];
    let yd = (v - p[3]) / p[1];
    let r2 = xd * xd + yd * yd;
    match kind {
        ModelKind::Pinhole => Some(from_normalized(xd, yd)),
        ModelKind::RadTan => {
            let d = jets(&p[4..8]);
            let (root, _) = newton2(
                |a, b| radtan_distort(d[0], d[1], d[2], d[3], a, b),
                [xd, yd],
                [xd, yd],
                UNPROJECT_MAX_ITER,
                1e-14,
            )?;
            Some(from_normalized(root[0], root[1]))
        }
        ModelKind::ThinPrism => {
            let d = jets(&p[4..]);
            let (root, _) = newton2(
                |a, b| prism_distort(&d, a, b),
                [xd, yd],
                [xd, yd],
                UNPROJECT_MAX_ITER,
                1e-14,
            )?;
            Some(from_normalized(root[0], root[1]))
        }
        ModelKind::RadTanBackward => {
            let (xn, yn) = radtan_backward_map(&p[4..8], xd, yd);
            Some(from_normalized(xn, yn))
        }
        ModelKind::Division => {
            let den = 1.0 + p[4] * r2;
            if den <= super::forward::EPS {
                return None;
            }
            Some(from_normalized(xd / den, yd / den))
        }
        ModelKind::Rational => {
            let np = meta.rational_order[0];
            let den_coeffs = &p[4 + np..];
            let mut den = 1.0;
            let mut pw = r2;
            for c in den_coeffs {
                den += c * pw;
                pw *= r2;
            }
            if den.abs() <= super::forward::EPS {
                return None;
            }
            let f = rational_factor(&p[4..4 + np], den_coeffs, r2);
            Some(from_normalized(xd * f, yd * f))
        }
        ModelKind::Scaramuzza => {
            let (cx, cy, c, d, e) = (p[4], p[5], p[6], p[7], p[8]);
            let det = c - d * e;
            if det.abs() < 1e-12 {
                return None;
            }
            let du = u - cx;
            let dv = v - cy;
            let uh = (du - d * dv) / det;
            let vh = (c * dv - e * du) / det;
            let rho = (uh * uh + vh * vh).sqrt();
            let w = scaramuzza_w(&p[0..4], rho);
            // The sign of w selects the hemisphere; parameters are taken as-is.
            Some(Vector3::new(uh, vh, w))
        }
        ModelKind::KB8 => {
            let r = r2.sqrt();
            if r < 1e-15 {
                return Some(Vector3::new(0.0, 0.0, 1.0));
            }
            let k = &p[4..8];
            let theta_max = meta.theta_max;
            let mut theta = r.min(theta_max);
            let mut converged = false;
            for _ in 0..UNPROJECT_MAX_ITER {
                let f = kb_poly(k, theta) - r;
                let df = kb_poly_deriv(k, theta);
                if !(df > 0.0) {
                    return None;
                }
                let step = f / df;
                theta -= step;
                if step.abs() <= KB_TOL * (1.0 + theta.abs()) {
                    converged = true;
                    break;
                }
            }
            if !converged || theta < 0.0 || theta > theta_max + 1e-12 {
                return None;
            }
            let s = theta.sin() / r;
            Some(Vector3::new(xd * s, yd * s, theta.cos()))
        }
        ModelKind::FOV => {
            let omega = p[4];
            if omega.abs() < 1e-8 {
                return Some(from_normalized(xd, yd));
            }
            let rd = r2.sqrt();
            if rd * omega.abs() >= PI {
                return None;
            }
            if rd < 1e-15 {
                return Some(Vector3::new(0.0, 0.0, 1.0));
            }
            let s = (rd * omega).sin() / (2.0 * rd * (omega / 2.0).tan());
            Some(Vector3::new(xd * s, yd * s, (rd * omega).cos()))
        }
        ModelKind::UCM => ucm_inverse(p[4], xd, yd),
        ModelKind::UCMAlpha => {
            let alpha = p[4];
            if alpha >= 1.0 {
                return None;
            }
            let xi = alpha / (1.0 - alpha);
            ucm_inverse(xi, xd / (1.0 + xi), yd / (1.0 + xi))
        }
        ModelKind::EUCM => {
            let (alpha, beta) = (p[4], p[5]);
            let arg = 1.0 - (2.0 * alpha - 1.0) * beta * r2;
            if arg < 0.0 {
                return None;
            }
            let den = alpha * arg.sqrt() + 1.0 - alpha;
            if den <= 0.0 {
                return None;
            }
            let zd = (1.0 - beta * alpha * alpha * r2) / den;
            Some(Vector3::new(xd, yd, zd))
        }
        ModelKind::DS => {
            let (xi, alpha) = (p[4], p[5]);
            let arg = 1.0 - (2.0 * alpha - 1.0) * r2;
            if arg < 0.0 {
                return None;
            }
            let zd = (1.0 - alpha * alpha * r2) / (alpha * arg.sqrt() + 1.0 - alpha);
            let inner = zd * zd + (1.0 - xi * xi) * r2;
            if inner < 0.0 {
                return None;
            }
            let s = (zd * xi + inner.sqrt()) / (zd * zd + r2);
            Some(Vector3::new(s * xd, s * yd, s * zd - xi))
        }
        ModelKind::Mei => {
            let skew = p[10];
            let yd = (v - p[3]) / p[1];
            let xd = (u - p[2]) / p[0] - skew * yd;
            let d = &p[5..10];
            // Fixed-point undistortion, then Newton polish.
            let (mut xn, mut yn) = (xd, yd);
            for _ in 0..MEI_FIXED_POINT_ITERS {
                let r2 = xn * xn + yn * yn;
                let radial = 1.0 + d[0] * r2 + d[1] * r2 * r2 + d[2] * r2 * r2 * r2;
                let dx = 2.0 * d[3] * xn * yn + d[4] * (r2 + 2.0 * xn * xn);
                let dy = d[3] * (r2 + 2.0 * yn * yn) + 2.0 * d[4] * xn * yn;
                xn = (xd - dx) / radial;
                yn = (yd - dy) / radial;
            }
            let dj = jets(d);
            let (root, _) = newton2(
                |a, b| mei_distort(&dj, a, b),
                [xd, yd],
                [xn, yn],
                UNPROJECT_MAX_ITER,
                1e-14,
            )?;
            ucm_inverse(p[4], root[0], root[1])
        }
    }
}

fn ucm_inverse(xi: f64, x: f64, y: f64) -> Option<Vector3<f64>> {
    let r2 = x * x + y * y;
    let arg = 1.0 + (1.0 - xi * xi) * r2;
    if arg < 0.0 {
        return None;
    }
    let s = (xi + arg.sqrt()) / (1.0 + r2);
    Some(Vector3::new(s * x, s * y, s - xi))
}
