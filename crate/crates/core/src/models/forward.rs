//! Forward projection for every model kind, generic over the scalar type.
//!
//! Kinds defined through their back-projection (backward radial-tangential,
//! rational, Scaramuzza) are solved in `f64` first and then corrected with
//! one Newton step evaluated in `T`. At the root that step leaves the value
//! unchanged while carrying the implicit-function derivatives.

use std::sync::atomic::{AtomicU64, Ordering};

use super::jet::{Jet, Real};
use super::ModelKind;

/// Denominator threshold, in units of the point norm.
pub(crate) const EPS: f64 = 1e-9;

const FORWARD_MAX_ITER: usize = 20;
const FORWARD_TOL: f64 = 1e-14;

static NONCONVERGED: AtomicU64 = AtomicU64::new(0);

/// How many iterative forward projections have failed to converge in this
/// process.
pub fn forward_nonconvergence_count() -> u64 {
    NONCONVERGED.load(Ordering::Relaxed)
}

fn nonconverged<T>() -> Option<T> {
    NONCONVERGED.fetch_add(1, Ordering::Relaxed);
    None
}

/// Per-spec settings that are not part of the parameter vector.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Meta {
    pub theta_max: f64,
    pub rational_order: [usize; 2],
}

#[inline]
fn affine<T: Real>(p: &[T], xd: T, yd: T) -> [T; 2] {
    [p[0] * xd + p[2], p[1] * yd + p[3]]
}

/// Radial-tangential distortion of normalized coordinates.
pub(crate) fn radtan_distort<T: Real>(k1: T, k2: T, p1: T, p2: T, x: T, y: T) -> (T, T) {
    let r2 = x * x + y * y;
    let radial = T::cst(1.0) + k1 * r2 + k2 * r2 * r2;
    let dx = p1 * x * y * 2.0 + p2 * (r2 + x * x * 2.0);
    let dy = p1 * (r2 + y * y * 2.0) + p2 * x * y * 2.0;
    (x * radial + dx, y * radial + dy)
}

/// Thin-prism distortion; `d` is `[k1, p1, p2, s1, s2]` or
/// `[k1, p1, p2, s1, s2, s3, s4]`.
pub(crate) fn prism_distort<T: Real>(d: &[T], x: T, y: T) -> (T, T) {
    let r2 = x * x + y * y;
    let radial = T::cst(1.0) + d[0] * r2;
    let (p1, p2) = (d[1], d[2]);
    let dx = p1 * x * y * 2.0 + p2 * (r2 + x * x * 2.0);
    let dy = p1 * (r2 + y * y * 2.0) + p2 * x * y * 2.0;
    let (px, py) = if d.len() == 7 {
        (d[3] * r2 + d[4] * r2 * r2, d[5] * r2 + d[6] * r2 * r2)
    } else {
        (d[3] * r2, d[4] * r2)
    };
    (x * radial + dx + px, y * radial + dy + py)
}

/// Backward radial-tangential map: distorted → normalized coordinates.
/// The radial polynomial is evaluated at the distorted radius.
pub(crate) fn radtan_backward_map<T: Real>(d: &[T], xd: T, yd: T) -> (T, T) {
    radtan_distort(d[0], d[1], d[2], d[3], xd, yd)
}

/// Rational factor `(1 + Σ a_j r^{2j}) / (1 + Σ b_j r^{2j})`.
pub(crate) fn rational_factor<T: Real>(num: &[T], den: &[T], r2: T) -> T {
    let poly = |c: &[T]| {
        let mut acc = T::cst(1.0);
        let mut pw = r2;
        for &ck in c {
            acc = acc + ck * pw;
            pw = pw * r2;
        }
        acc
    };
    poly(num) / poly(den)
}

/// Mei radial + decentering distortion; `d` is `[k1, k2, k3, p1, p2]`.
pub(crate) fn mei_distort<T: Real>(d: &[T], x: T, y: T) -> (T, T) {
    let r2 = x * x + y * y;
    let radial = T::cst(1.0) + d[0] * r2 + d[1] * r2 * r2 + d[2] * r2 * r2 * r2;
    let (p1, p2) = (d[3], d[4]);
    (
        x * radial + p1 * x * y * 2.0 + p2 * (r2 + x * x * 2.0),
        y * radial + p1 * (r2 + y * y * 2.0) + p2 * x * y * 2.0,
    )
}

pub(crate) fn kb_poly<T: Real>(k: &[T], theta: T) -> T {
    let t2 = theta * theta;
    let t3 = theta * t2;
    let t5 = t3 * t2;
    let t7 = t5 * t2;
    let t9 = t7 * t2;
    theta + k[0] * t3 + k[1] * t5 + k[2] * t7 + k[3] * t9
}

pub(crate) fn kb_poly_deriv(k: &[f64], theta: f64) -> f64 {
    let t2 = theta * theta;
    1.0 + t2 * (3.0 * k[0] + t2 * (5.0 * k[1] + t2 * (7.0 * k[2] + t2 * 9.0 * k[3])))
}

/// Half-width of the valid cone for the unified model family: a point is
/// projectable iff `z / ρ > -w`.
pub(crate) fn unified_cone(alpha: f64) -> f64 {
    if alpha <= 0.5 {
        alpha / (1.0 - alpha)
    } else {
        (1.0 - alpha) / alpha
    }
}

fn consts<T: Real>(p: &[T]) -> Vec<f64> {
    p.iter().map(|v| v.re()).collect()
}

/// 2D Newton solve of `f(x) = target` starting at `init`. Returns the root
/// and the inverse Jacobian there.
pub(crate) fn newton2(
    f: impl Fn(Jet<2>, Jet<2>) -> (Jet<2>, Jet<2>),
    target: [f64; 2],
    init: [f64; 2],
    max_iter: usize,
    tol: f64,
) -> Option<([f64; 2], [[f64; 2]; 2])> {
    let mut x = init;
    for it in 0..=max_iter {
        let (a, b) = f(Jet::variable(x[0], 0), Jet::variable(x[1], 1));
        let (j00, j01, j10, j11) = (a.eps[0], a.eps[1], b.eps[0], b.eps[1]);
        let det = j00 * j11 - j01 * j10;
        if !det.is_finite() || det.abs() < 1e-300 {
            return None;
        }
        let inv = [[j11 / det, -j01 / det], [-j10 / det, j00 / det]];
        let ra = a.re - target[0];
        let rb = b.re - target[1];
        let dx = inv[0][0] * ra + inv[0][1] * rb;
        let dy = inv[1][0] * ra + inv[1][1] * rb;
        let scale = 1.0 + x[0].abs().max(x[1].abs());
        if dx.abs().max(dy.abs()) <= tol * scale {
            return Some((x, inv));
        }
        if it == max_iter {
            break;
        }
        x = [x[0] - dx, x[1] - dy];
        if !x[0].is_finite() || !x[1].is_finite() {
            return None;
        }
    }
    None
}

/// Newton step in `T` around a root found in `f64`.
fn polish2<T: Real>(root: [f64; 2], inv: [[f64; 2]; 2], residual: (T, T)) -> (T, T) {
    let (ra, rb) = residual;
    (
        T::cst(root[0]) - (ra * inv[0][0] + rb * inv[0][1]),
        T::cst(root[1]) - (ra * inv[1][0] + rb * inv[1][1]),
    )
}

/// Forward projection. `None` when the point is outside the model's
/// projectable region or an iterative solve failed.
pub(crate) fn project<T: Real>(kind: ModelKind, meta: &Meta, p: &[T], x: &[T; 3]) -> Option<[T; 2]> {
    let [xc, yc, zc] = *x;
    let norm = (xc.re() * xc.re() + yc.re() * yc.re() + zc.re() * zc.re()).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let in_front = zc.re() > EPS * norm;
    match kind {
        ModelKind::Pinhole => {
            if !in_front {
                return None;
            }
            Some(affine(p, xc / zc, yc / zc))
        }
        ModelKind::RadTan => {
            if !in_front {
                return None;
            }
            let (xd, yd) = radtan_distort(p[4], p[5], p[6], p[7], xc / zc, yc / zc);
            Some(affine(p, xd, yd))
        }
        ModelKind::ThinPrism => {
            if !in_front {
                return None;
            }
            let (xd, yd) = prism_distort(&p[4..], xc / zc, yc / zc);
            Some(affine(p, xd, yd))
        }
        ModelKind::RadTanBackward => {
            if !in_front {
                return None;
            }
            let xn = xc / zc;
            let yn = yc / zc;
            let d = consts(&p[4..8]);
            let dj: Vec<Jet<2>> = d.iter().map(|&v| Jet::constant(v)).collect();
            let tol = FORWARD_TOL.max(1e-10 / p[0].re().abs().max(1.0));
            let Some((root, inv)) = newton2(
                |a, b| radtan_backward_map(&dj, a, b),
                [xn.re(), yn.re()],
                [xn.re(), yn.re()],
                FORWARD_MAX_ITER,
                tol,
            ) else {
                return nonconverged();
            };
            let (bx, by) = radtan_backward_map(&p[4..8], T::cst(root[0]), T::cst(root[1]));
            let (xd, yd) = polish2(root, inv, (bx - xn, by - yn));
            Some(affine(p, xd, yd))
        }
        ModelKind::Division => {
            if !in_front {
                return None;
            }
            let xn = xc / zc;
            let yn = yc / zc;
            let rn2 = xn * xn + yn * yn;
            let disc = T::cst(1.0) - p[4] * rn2 * 4.0;
            if disc.re() < 0.0 {
                return None;
            }
            // Root of k r_n r_d^2 - r_d + r_n = 0 that stays finite as k -> 0.
            let scale = T::cst(2.0) / (disc.sqrt() + 1.0);
            Some(affine(p, xn * scale, yn * scale))
        }
        ModelKind::Rational => {
            if !in_front {
                return None;
            }
            let [np, _] = meta.rational_order;
            let num = &p[4..4 + np];
            let den = &p[4 + np..];
            let xn = xc / zc;
            let yn = yc / zc;
            let rn2 = xn * xn + yn * yn;
            if rn2.re() < 1e-24 {
                return Some(affine(p, xn, yn));
            }
            let rn = rn2.sqrt();
            let numf = consts(num);
            let denf = consts(den);
            // Solve g(r) = r F(r^2) = r_n.
            let g = |r: Jet<1>| {
                let nj: Vec<Jet<1>> = numf.iter().map(|&v| Jet::constant(v)).collect();
                let dj: Vec<Jet<1>> = denf.iter().map(|&v| Jet::constant(v)).collect();
                r * rational_factor(&nj, &dj, r * r)
            };
            let target = rn.re();
            let mut r = target;
            let mut slope = 0.0;
            let mut ok = false;
            for _ in 0..=FORWARD_MAX_ITER {
                let v = g(Jet::variable(r, 0));
                slope = v.eps[0];
                if !(slope > 0.0) || !v.re.is_finite() {
                    break;
                }
                let step = (v.re - target) / slope;
                if step.abs() <= FORWARD_TOL * (1.0 + r.abs()) {
                    ok = true;
                    break;
                }
                r -= step;
            }
            if !ok || r <= 0.0 {
                return nonconverged();
            }
            let rt = T::cst(r) - (T::cst(r) * rational_factor(num, den, T::cst(r * r)) - rn) / slope;
            let s = rt / rn;
            Some(affine(p, xn * s, yn * s))
        }
        ModelKind::Scaramuzza => scaramuzza_project(p, xc, yc, zc),
        ModelKind::KB8 => {
            let r2 = xc * xc + yc * yc;
            if r2.re() <= (1e-12 * norm).powi(2) {
                if !in_front {
                    return None;
                }
                return Some(affine(p, xc / zc, yc / zc));
            }
            let rc = r2.sqrt();
            let theta = rc.atan2(zc);
            if theta.re() > meta.theta_max {
                return None;
            }
            let d = kb_poly(&p[4..8], theta);
            Some(affine(p, d * xc / rc, d * yc / rc))
        }
        ModelKind::FOV => {
            let omega = p[4];
            let r2 = xc * xc + yc * yc;
            if omega.re().abs() < 1e-8 {
                if !in_front {
                    return None;
                }
                return Some(affine(p, xc / zc, yc / zc));
            }
            let tan_half = (omega * 0.5).tan();
            if r2.re() <= (1e-12 * norm).powi(2) {
                if !in_front {
                    return None;
                }
                // r_d / r_u -> 2 tan(ω/2) / (ω Z)
                let s = tan_half * 2.0 / (omega * zc);
                return Some(affine(p, xc * s, yc * s));
            }
            let ru = r2.sqrt();
            let rd = (ru * tan_half * 2.0).atan2(zc) / omega;
            if rd.re() * omega.re() >= std::f64::consts::PI {
                return None;
            }
            let s = rd / ru;
            Some(affine(p, xc * s, yc * s))
        }
        ModelKind::UCM => {
            let xi = p[4];
            let rho = (xc * xc + yc * yc + zc * zc).sqrt();
            let den = zc + xi * rho;
            let alpha = xi.re() / (1.0 + xi.re());
            if den.re() <= EPS * norm || zc.re() <= -unified_cone(alpha) * norm {
                return None;
            }
            Some(affine(p, xc / den, yc / den))
        }
        ModelKind::UCMAlpha | ModelKind::EUCM => {
            let alpha = p[4];
            let rho = if kind == ModelKind::EUCM {
                (p[5] * (xc * xc + yc * yc) + zc * zc).sqrt()
            } else {
                (xc * xc + yc * yc + zc * zc).sqrt()
            };
            let den = alpha * rho + (T::cst(1.0) - alpha) * zc;
            if den.re() <= EPS * norm || zc.re() <= -unified_cone(alpha.re()) * rho.re() {
                return None;
            }
            Some(affine(p, xc / den, yc / den))
        }
        ModelKind::DS => {
            let xi = p[4];
            let alpha = p[5];
            let d1 = (xc * xc + yc * yc + zc * zc).sqrt();
            let k = xi * d1 + zc;
            let d2 = (xc * xc + yc * yc + k * k).sqrt();
            let den = alpha * d2 + (T::cst(1.0) - alpha) * k;
            let w1 = unified_cone(alpha.re());
            let xr = xi.re();
            let w2 = (w1 + xr) / (2.0 * w1 * xr + xr * xr + 1.0).sqrt();
            if den.re() <= EPS * norm || zc.re() <= -w2 * d1.re() {
                return None;
            }
            Some(affine(p, xc / den, yc / den))
        }
        ModelKind::Mei => {
            let xi = p[4];
            let rho = (xc * xc + yc * yc + zc * zc).sqrt();
            let den = zc + xi * rho;
            let alpha = xi.re() / (1.0 + xi.re());
            if den.re() <= EPS * norm || zc.re() <= -unified_cone(alpha) * norm {
                return None;
            }
            let (xd, yd) = mei_distort(&p[5..10], xc / den, yc / den);
            let s = p[10];
            Some([p[0] * (xd + s * yd) + p[2], p[1] * yd + p[3]])
        }
    }
}

/// Scaramuzza back-projection polynomial `w(ρ) = a0 + a2 ρ² + a3 ρ³ + a4 ρ⁴`.
pub(crate) fn scaramuzza_w<T: Real>(a: &[T], rho: T) -> T {
    let r2 = rho * rho;
    a[0] + a[1] * r2 + a[2] * r2 * rho + a[3] * r2 * r2
}

fn scaramuzza_project<T: Real>(p: &[T], xc: T, yc: T, zc: T) -> Option<[T; 2]> {
    let a = &p[0..4];
    let (cx, cy, c, d, e) = (p[4], p[5], p[6], p[7], p[8]);
    let r2 = xc * xc + yc * yc;
    let norm = (r2.re() + zc.re() * zc.re()).sqrt();
    if r2.re() <= (1e-12 * norm).powi(2) {
        // On the mirror axis: only the hemisphere selected by sign(a0).
        if zc.re() * a[0].re() <= 0.0 {
            return None;
        }
        return Some([cx, cy]);
    }
    let rc = r2.sqrt();
    let m = zc.re() / rc.re();
    let af = consts(a);
    let rho = smallest_positive_root([af[0], -m, af[1], af[2], af[3]])?;
    // F(ρ) = w(ρ) - (Z / r_c) ρ, F'(ρ) = w'(ρ) - Z / r_c.
    let slope = 2.0 * af[1] * rho + 3.0 * af[2] * rho * rho + 4.0 * af[3] * rho.powi(3) - m;
    if slope.abs() < 1e-300 {
        return nonconverged();
    }
    let rho_t = T::cst(rho) - (scaramuzza_w(a, T::cst(rho)) - zc / rc * rho) / slope;
    let uh = rho_t * xc / rc;
    let vh = rho_t * yc / rc;
    Some([c * uh + d * vh + cx, e * uh + vh + cy])
}

/// Smallest positive real root of `Σ c_k ρ^k` (coefficients in ascending
/// degree). Roots come from the companion matrix and are polished by Newton.
pub(crate) fn smallest_positive_root(coeffs: [f64; 5]) -> Option<f64> {
    let mut deg = 4;
    while deg > 0 && coeffs[deg] == 0.0 {
        deg -= 1;
    }
    if deg == 0 {
        return None;
    }
    let eval = |r: f64| {
        let mut v = 0.0;
        let mut dv = 0.0;
        for k in (0..=deg).rev() {
            dv = dv * r + v;
            v = v * r + coeffs[k];
        }
        (v, dv)
    };
    let mut candidates: Vec<f64> = Vec::new();
    if deg == 1 {
        candidates.push(-coeffs[0] / coeffs[1]);
    } else {
        let comp = nalgebra::DMatrix::from_fn(deg, deg, |i, j| {
            if j == deg - 1 {
                -coeffs[i] / coeffs[deg]
            } else if i == j + 1 {
                1.0
            } else {
                0.0
            }
        });
        for z in comp.complex_eigenvalues().iter() {
            if z.im.abs() <= 1e-6 * (1.0 + z.re.abs()) {
                candidates.push(z.re);
            }
        }
    }
    let mut best: Option<f64> = None;
    for mut r in candidates {
        for _ in 0..8 {
            let (v, dv) = eval(r);
            if dv == 0.0 {
                break;
            }
            let step = v / dv;
            r -= step;
            if step.abs() <= 1e-15 * (1.0 + r.abs()) {
                break;
            }
        }
        let (v, _) = eval(r);
        let scale: f64 = coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max) * (1.0 + r.abs()).powi(deg as i32);
        if r > 0.0 && v.abs() <= 1e-9 * scale && best.map_or(true, |b| r < b) {
            best = Some(r);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn companion_roots_of_known_polynomial() {
        // (ρ - 0.5)(ρ - 2)(ρ + 1) = ρ^3 - 1.5ρ^2 - 1.5ρ + 1
        let r = smallest_positive_root([1.0, -1.5, -1.5, 1.0, 0.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-14);
        // ρ^2 + 1 has no real root.
        assert!(smallest_positive_root([1.0, 0.0, 1.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn newton2_solves_radtan_inverse() {
        let d = [-0.2, 0.05, 1e-3, -2e-3].map(Jet::<2>::constant);
        let target = [0.4, -0.3];
        let (root, _) = newton2(
            |a, b| radtan_distort(d[0], d[1], d[2], d[3], a, b),
            target,
            target,
            20,
            1e-15,
        )
        .unwrap();
        let (u, v) = radtan_distort(-0.2, 0.05, 1e-3, -2e-3, root[0], root[1]);
        assert!((u - target[0]).abs() < 1e-14 && (v - target[1]).abs() < 1e-14);
    }
}
