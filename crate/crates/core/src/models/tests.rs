use super::*;
use crate::catalog;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(kind: ModelKind, p: &[f64]) -> CameraSpec {
    CameraSpec::new(kind, p.to_vec(), 1600, 1200).unwrap()
}

fn random_front_point(rng: &mut impl Rng, max_angle: f64) -> Point3 {
    let theta = rng.random_range(0.0..max_angle);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let d = rng.random_range(0.3..5.0);
    Point3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()) * d
}

fn assert_same_projection(a: &CameraSpec, b: &CameraSpec, max_angle: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let x = random_front_point(&mut rng, max_angle);
        let pa = a.project(&x);
        let pb = b.project(&x);
        assert_eq!(pa.valid, pb.valid, "{x:?}");
        if pa.valid {
            let d = (pa.pixel - pb.pixel).amax();
            assert!(d < 1e-12 * pa.pixel.amax().max(1.0), "{} vs {}: {d}", a.kind, b.kind);
        }
    }
}

#[test]
fn pinhole_on_axis_hits_principal_point() {
    let s = spec(ModelKind::Pinhole, &[1000.0, 1000.0, 800.0, 600.0]);
    let r = s.project(&Point3::new(0.0, 0.0, 1.0));
    assert!(r.valid);
    assert_eq!(r.pixel, Pixel::new(800.0, 600.0));
    assert!(!s.project(&Point3::new(0.0, 0.0, -1.0)).valid);
}

#[test]
fn radtan_without_distortion_is_pinhole() {
    let a = spec(ModelKind::RadTan, &[900.0, 910.0, 790.0, 610.0, 0.0, 0.0, 0.0, 0.0]);
    let b = spec(ModelKind::Pinhole, &[900.0, 910.0, 790.0, 610.0]);
    assert_same_projection(&a, &b, 1.2, 1);
    let c = spec(
        ModelKind::ThinPrism,
        &[900.0, 910.0, 790.0, 610.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    );
    assert_same_projection(&c, &b, 1.2, 2);
}

#[test]
fn kb8_on_axis_limit() {
    let s = catalog::mtv185_kb8();
    let r = s.project(&Point3::new(0.0, 0.0, 2.0));
    assert!(r.valid);
    assert_eq!(r.pixel, Pixel::new(s.params[2], s.params[3]));
}

#[test]
fn unified_family_reductions() {
    let ucma = spec(ModelKind::UCMAlpha, &[500.0, 501.0, 800.0, 600.0, 0.6]);
    let ds = spec(ModelKind::DS, &[500.0, 501.0, 800.0, 600.0, 0.0, 0.6]);
    let eucm = spec(ModelKind::EUCM, &[500.0, 501.0, 800.0, 600.0, 0.6, 1.0]);
    assert_same_projection(&ds, &ucma, 1.7, 3);
    assert_same_projection(&eucm, &ucma, 1.7, 4);

    let ucma0 = spec(ModelKind::UCMAlpha, &[500.0, 501.0, 800.0, 600.0, 0.0]);
    let pin = spec(ModelKind::Pinhole, &[500.0, 501.0, 800.0, 600.0]);
    assert_same_projection(&ucma0, &pin, 1.3, 5);

    let mei0 = spec(
        ModelKind::Mei,
        &[500.0, 501.0, 800.0, 600.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    );
    assert_same_projection(&mei0, &pin, 1.3, 6);
}

#[test]
fn principal_point_unprojects_to_axis() {
    for kind in ModelKind::ALL {
        let s = catalog::example_spec(kind);
        let (cx, cy) = s.principal_point();
        let ray = s.unproject(&Pixel::new(cx, cy)).unwrap_or_else(|| panic!("{kind}"));
        assert!((ray.dir() - Vector3::z()).norm() < 1e-12, "{kind}: {:?}", ray.dir());
    }
}

#[test]
fn fov_round_trip_on_pixels() {
    let s = catalog::example_spec(ModelKind::FOV);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let m = Pixel::new(rng.random_range(0.0..1600.0), rng.random_range(0.0..1200.0));
        let ray = s.unproject(&m).unwrap();
        let back = s.project(ray.dir());
        assert!(back.valid);
        assert!((back.pixel - m).amax() < 1e-10, "{m:?} -> {:?}", back.pixel);
    }
}

#[test]
fn kb8_round_trip_up_to_97_degrees() {
    let s = catalog::mtv185_kb8();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let x = random_front_point(&mut rng, 97f64.to_radians());
        let m = s.project(&x).ok().unwrap();
        let ray = s.unproject(&m).unwrap();
        assert!(ray.angle_to(&x) < 1e-8);
    }
}

#[test]
fn kb8_projects_behind_the_camera() {
    let s = catalog::mtv185_kb8().with_theta_max(97f64.to_radians());
    let theta = 95f64.to_radians();
    let x = Point3::new(theta.sin(), 0.0, theta.cos());
    assert!(x.z < 0.0 && x.z > -0.1);
    let x = x * (0.1 / -x.z);
    assert!((x.z + 0.1).abs() < 1e-12);
    assert!(s.project(&x).valid);
    // The equidistant-on-pinhole composition cannot represent this point.
    let pin = spec(ModelKind::Pinhole, &[411.0, 411.0, 800.0, 600.0]);
    assert!(!pin.project(&x).valid);
    // Beyond theta_max the projection is rejected.
    let far = 100f64.to_radians();
    assert!(!s.project(&Point3::new(far.sin(), 0.0, far.cos())).valid);
}

#[test]
fn pinhole_point_jacobian_on_axis() {
    let s = spec(ModelKind::Pinhole, &[1000.0, 990.0, 800.0, 600.0]);
    let j = jacobian_point(&s, &Point3::new(0.0, 0.0, 1.0)).unwrap();
    let want = Matrix2x3::new(1000.0, 0.0, 0.0, 0.0, 990.0, 0.0);
    assert!((j - want).amax() < 1e-12);
    let jp = jacobian_params(&s, &Point3::new(0.3, -0.2, 1.7)).unwrap();
    assert_eq!(jp[(0, 2)], 1.0);
    assert_eq!(jp[(1, 2)], 0.0);
    assert_eq!(jp[(1, 3)], 1.0);
    assert!(jacobian_point(&s, &Point3::new(0.0, 0.0, -1.0)).is_err());
}

#[test]
fn eucm_parameter_validation() {
    let ok = [500.0, 500.0, 800.0, 600.0, 0.5, 1.0];
    assert_eq!(validate_params(ModelKind::EUCM, &ok), Ok(true));
    let bad = [500.0, 500.0, 800.0, 600.0, 0.5, -0.1];
    assert_eq!(validate_params(ModelKind::EUCM, &bad), Ok(false));
    let bad_alpha = [500.0, 500.0, 800.0, 600.0, 1.2, 1.0];
    assert_eq!(validate_params(ModelKind::EUCM, &bad_alpha), Ok(false));
    assert!(matches!(
        validate_params(ModelKind::EUCM, &ok[..5]),
        Err(ModelError::ParamCount { .. })
    ));
    assert_eq!(
        validate_params(ModelKind::DS, &[1.0, 1.0, 0.0, 0.0, 1.0, 0.5]),
        Ok(false)
    );
    assert_eq!(validate_params(ModelKind::FOV, &[1.0, 1.0, 0.0, 0.0, -0.1]), Ok(false));
}

#[test]
fn kb8_monotonicity_check() {
    // d'(θ) = 1 - 1.5 θ² turns negative at θ ≈ 0.82 < π/2.
    let k = [400.0, 400.0, 800.0, 600.0, -0.5, 0.0, 0.0, 0.0];
    let dense_min = (0..=10_000)
        .map(|i| {
            let t = std::f64::consts::FRAC_PI_2 * i as f64 / 10_000.0;
            let h = 1e-6;
            let d = |t: f64| t - 0.5 * t.powi(3);
            (d(t + h) - d(t - h)) / (2.0 * h)
        })
        .fold(f64::INFINITY, f64::min);
    assert!(dense_min < 0.0);
    let s = CameraSpec::unchecked(ModelKind::KB8, k.to_vec(), 1600, 1200).with_theta_max(std::f64::consts::FRAC_PI_2);
    assert!(s.validate().is_err());
    let mild = CameraSpec::unchecked(
        ModelKind::KB8,
        vec![400.0, 400.0, 800.0, 600.0, -0.05, 0.0, 0.0, 0.0],
        1600,
        1200,
    )
    .with_theta_max(std::f64::consts::FRAC_PI_2);
    assert!(mild.validate().is_ok());
}

#[test]
fn ucm_conversion_cases() {
    let u0 = spec(ModelKind::UCM, &[700.0, 710.0, 800.0, 600.0, 0.0]);
    let a0 = ucm_to_alpha(&u0).unwrap();
    assert_eq!(a0.params, vec![700.0, 710.0, 800.0, 600.0, 0.0]);

    let u1 = spec(ModelKind::UCM, &[700.0, 710.0, 800.0, 600.0, 1.0]);
    let a1 = ucm_to_alpha(&u1).unwrap();
    assert_eq!(a1.params, vec![350.0, 355.0, 800.0, 600.0, 0.5]);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let xi = rng.random_range(0.0..3.0);
        let u = spec(ModelKind::UCM, &[700.0, 710.0, 800.0, 600.0, xi]);
        let a = ucm_to_alpha(&u).unwrap();
        let back = alpha_to_ucm(&a).unwrap();
        for (x, y) in back.params.iter().zip(&u.params) {
            assert!((x - y).abs() <= 1e-14 * y.abs().max(1.0));
        }
        assert_same_projection(&u, &a, 1.5, rng.random());
    }

    let one = CameraSpec::unchecked(ModelKind::UCMAlpha, vec![1.0, 1.0, 0.0, 0.0, 1.0], 10, 10);
    assert!(matches!(alpha_to_ucm(&one), Err(ModelError::Conversion(_))));
}

/// Fits the backward radial-tangential coefficients to a forward camera by
/// linear least squares with the forward camera's focal/principal point.
#[test]
fn backward_radtan_fitted_to_forward_camera() {
    let fwd = catalog::s04525();
    let p = &fwd.params;
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut grid = Vec::new();
    for i in 0..=32 {
        for j in 0..=24 {
            grid.push(Pixel::new(i as f64 * 50.0, j as f64 * 50.0));
        }
    }
    for m in &grid {
        let ray = fwd.unproject(m).unwrap();
        let d = ray.dir();
        let (xn, yn) = (d.x / d.z, d.y / d.z);
        let xd = (m.x - p[2]) / p[0];
        let yd = (m.y - p[3]) / p[1];
        let r2 = xd * xd + yd * yd;
        // x_n - x_d = k1 x_d r² + k2 x_d r⁴ + 2 p1 x_d y_d + p2 (r² + 2 x_d²)
        rows.push([xd * r2, xd * r2 * r2, 2.0 * xd * yd, r2 + 2.0 * xd * xd]);
        rhs.push(xn - xd);
        rows.push([yd * r2, yd * r2 * r2, r2 + 2.0 * yd * yd, 2.0 * xd * yd]);
        rhs.push(yn - yd);
    }
    let a = DMatrix::from_fn(rows.len(), 4, |r, c| rows[r][c]);
    let b = DVector::from_vec(rhs);
    let coeffs = a.svd(true, true).solve(&b, 1e-14).unwrap();
    let mut bp = p[..4].to_vec();
    bp.extend(coeffs.iter());
    let bwd = spec(ModelKind::RadTanBackward, &bp);

    let param_diff = (4..8).map(|i| (bwd.params[i] - p[i]).abs()).fold(0.0, f64::max);
    assert!(param_diff > 0.0);

    let mut sq = 0.0;
    for m in &grid {
        let r1 = fwd.unproject(m).unwrap();
        let r2 = bwd.unproject(m).unwrap();
        let (a, b) = (r1.dir(), r2.dir());
        let dx = (a.x / a.z - b.x / b.z) * p[0];
        let dy = (a.y / a.z - b.y / b.z) * p[1];
        sq += dx * dx + dy * dy;
    }
    let rms = (sq / grid.len() as f64).sqrt();
    assert!(rms < 0.05, "backward fit rms {rms} px");
}

#[test]
fn spec_json_layout() {
    let s = catalog::example_spec(ModelKind::Rational);
    let js = serde_json::to_string(&s).unwrap();
    assert!(js.starts_with("{\"kind\":\"Rational\",\"params\":["));
    let back: CameraSpec = serde_json::from_str(&js).unwrap();
    assert_eq!(back, s);
    let bad = r#"{"kind":"EUCM","params":[1,2,3],"width":10,"height":10}"#;
    assert!(serde_json::from_str::<CameraSpec>(bad).is_err());
}

#[test]
fn kind_names_parse_case_insensitively() {
    for kind in ModelKind::ALL {
        assert_eq!(kind.name().to_lowercase().parse::<ModelKind>().unwrap(), kind);
    }
    assert!("nope".parse::<ModelKind>().is_err());
}

#[test]
fn double_sphere_rejects_points_past_fold() {
    let s = catalog::example_spec(ModelKind::DS);
    assert!(!s.project(&Point3::new(0.0, 0.0, -1.0)).valid);
    let ok = s.project(&Point3::new(1.0, 0.0, -0.1));
    assert!(ok.valid);
}

/// Largest of the relative Frobenius errors of the point block and of the
/// parameter block, the latter with columns scaled by the parameter
/// magnitude (the same scaling as the finite-difference steps).
fn fd_check(spec: &CameraSpec, x: &Point3) -> f64 {
    let (pix, jx, jk) = project_with_jacobians(spec, x).unwrap();
    assert!((pix - spec.project(x).pixel).amax() < 1e-9);
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

#[test]
fn jacobians_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for kind in ModelKind::ALL {
        let s = catalog::example_spec(kind);
        let mut n = 0;
        while n < 100 {
            let m = Pixel::new(rng.random_range(50.0..1550.0), rng.random_range(50.0..1150.0));
            let Some(ray) = s.unproject(&m) else { continue };
            let x = ray.dir() * rng.random_range(0.5..3.0);
            if !s.project(&x).valid {
                continue;
            }
            let e = fd_check(&s, &x);
            assert!(e < 1e-5, "{kind}: relative error {e} at {x:?}");
            n += 1;
        }
    }
}
