mod common;

use std::collections::HashSet;

use common::{aprilgrid, config_for, simulated};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wacal::calibrate::{
    calibrate, compute_covariance, compute_rms, init_wideangle_intrinsics, initialize, refine, trim_outliers,
    CalibConfig, CalibError, FramePose, LossKind, ObservationSet,
};
use wacal::catalog;
use wacal::simulate::{synthesize_observations, SimConfig};
use wacal::targets::TargetPoint;
use wacal::{CameraSpec, ModelKind, Pixel, Pose, TargetLayout};

fn untrimmed(spec: &CameraSpec) -> CalibConfig {
    CalibConfig {
        trim_rounds: 0,
        ..config_for(spec)
    }
}

#[test]
fn zero_noise_radtan_recovers_truth() {
    let truth = catalog::s04525();
    let (obs, _) = simulated(&truth, 1, 0.0, 40);
    let r = calibrate(&obs, &aprilgrid(), &config_for(&truth)).unwrap();
    assert!(r.rms < 1e-6, "rms {}", r.rms);
    for (e, t) in r.spec.params.iter().zip(&truth.params) {
        assert!((e - t).abs() <= 1e-5 * t.abs(), "{e} vs {t}");
    }
    assert_eq!(r.trimmed, 0);
    assert!(r.param_std.iter().all(|s| s.unwrap() < 1e-6));
}

#[test]
fn noisy_rms_matches_noise_level() {
    // Residual norms of 2-D Gaussian noise with σ = 0.7 per axis have an
    // RMS of √2·0.7 ≈ 0.99 px, reduced slightly by the fitted parameters.
    let truth = catalog::s04525();
    let (obs, _) = simulated(&truth, 2, 0.7, 40);
    let mut cfg = untrimmed(&truth);
    cfg.loss.kind = LossKind::None;
    let r = calibrate(&obs, &aprilgrid(), &cfg).unwrap();
    let dof = (2 * obs.num_corners()) as f64;
    let expected = 0.7 * (2.0f64 * (dof - (8 + 6 * 40) as f64) / dof).sqrt();
    assert!((r.rms - expected).abs() < 0.02, "rms {} vs {expected}", r.rms);
}

#[test]
fn huber_absorbs_a_single_gross_outlier() {
    let truth = catalog::s04525();
    let (clean, _) = simulated(&truth, 3, 0.7, 40);
    let mut dirty = clean.clone();
    dirty.frames[5].corners[10].pixel += Pixel::new(30.0, 40.0);
    let cfg = untrimmed(&truth);
    let a = calibrate(&clean, &aprilgrid(), &cfg).unwrap();
    let b = calibrate(&dirty, &aprilgrid(), &cfg).unwrap();
    for i in 0..2 {
        let shift = (a.spec.params[i] - b.spec.params[i]).abs();
        assert!(shift < 0.1, "focal shift {shift}");
    }
}

#[test]
fn trimming_removes_corrupted_corners() {
    let truth = catalog::s04525();
    let target = aprilgrid();
    let (clean, _) = simulated(&truth, 4, 0.7, 40);
    let mut dirty = clean.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut corrupted = HashSet::new();
    for f in &mut dirty.frames {
        for c in &mut f.corners {
            if rng.random_bool(0.05) {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                c.pixel += Pixel::new(a.cos(), a.sin()) * 20.0;
                corrupted.insert((f.id, c.id));
            }
        }
    }
    assert!(corrupted.len() > 300);
    let cfg = config_for(&truth);
    let init = initialize(&dirty, &target, &cfg).unwrap();
    let first = refine(&init.observations, &target, &init.spec, &init.poses, &cfg).unwrap();
    let (inliers, trimmed) = trim_outliers(&first, &init.observations, &target, &cfg).unwrap();
    for f in &inliers.frames {
        for c in &f.corners {
            assert!(
                !corrupted.contains(&(f.id, c.id)),
                "corner {} of frame {} kept",
                c.id,
                f.id
            );
        }
    }
    assert!(trimmed.trimmed >= corrupted.len());
    let reference = calibrate(&clean, &target, &cfg).unwrap();
    for i in 0..4 {
        let d = (trimmed.spec.params[i] - reference.spec.params[i]).abs();
        assert!(d < 0.5, "param {i} differs by {d}");
    }
}

#[test]
fn zero_trim_rounds_pass_through() {
    let truth = catalog::s04525();
    let target = aprilgrid();
    let (obs, _) = simulated(&truth, 5, 0.7, 10);
    let cfg = untrimmed(&truth);
    let init = initialize(&obs, &target, &cfg).unwrap();
    let report = refine(&init.observations, &target, &init.spec, &init.poses, &cfg).unwrap();
    let (same_obs, same) = trim_outliers(&report, &init.observations, &target, &cfg).unwrap();
    assert_eq!(same, report);
    assert_eq!(same_obs, init.observations);
}

#[test]
fn clean_data_trims_nothing() {
    let truth = catalog::bm4218();
    let (obs, _) = simulated(&truth, 6, 0.0, 20);
    let r = calibrate(&obs, &aprilgrid(), &config_for(&truth)).unwrap();
    assert_eq!(r.trimmed, 0);
}

#[test]
fn noisy_trim_fraction_follows_rayleigh_tail() {
    // With σ = 0.7 px the residual norm is Rayleigh distributed and the
    // effective threshold stays at 2 px: P(|r| > 2) = exp(-2² / (2σ²)).
    let truth = catalog::s04525();
    let (obs, _) = simulated(&truth, 7, 0.7, 40);
    let r = calibrate(&obs, &aprilgrid(), &config_for(&truth)).unwrap();
    let tail = (-4.0f64 / (2.0 * 0.49)).exp();
    let frac = r.trimmed as f64 / obs.num_corners() as f64;
    assert!((frac - tail).abs() < 0.5 * tail, "trimmed {frac} vs tail {tail}");
}

#[test]
fn robust_losses_with_huge_scale_match_least_squares() {
    let truth = catalog::bm4218();
    let (obs, _) = simulated(&truth, 8, 0.7, 20);
    let mut cfg = untrimmed(&truth);
    cfg.lm_tolerance = 1e-15;
    cfg.loss.kind = LossKind::None;
    let ls = calibrate(&obs, &aprilgrid(), &cfg).unwrap();
    for kind in [LossKind::Huber, LossKind::Cauchy] {
        cfg.loss.kind = kind;
        cfg.loss.scale = 1e6;
        let r = calibrate(&obs, &aprilgrid(), &cfg).unwrap();
        for (a, b) in r.spec.params.iter().zip(&ls.spec.params) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-3), "{kind:?}: {a} vs {b}");
        }
    }
}

#[test]
fn in_plane_target_motion_is_a_gauge() {
    // Moving the target frame within its plane while moving the points
    // back leaves every image unchanged.
    let truth = catalog::s04525();
    let target = aprilgrid();
    let (obs, t) = simulated(&truth, 9, 0.7, 20);
    let g = Pose::from_axis_angle(Vector3::new(0.0, 0.0, 0.7), Vector3::new(0.3, -0.2, 0.0));
    let ginv = g.inverse();
    let moved = TargetLayout {
        config: target.config.clone(),
        points: target
            .points
            .iter()
            .map(|p| TargetPoint {
                id: p.id,
                position: ginv.apply(&p.position.into()).into(),
            })
            .collect(),
    };
    let poses: Vec<Pose> = t.poses.iter().map(|fp| fp.pose.compose(&g)).collect();
    let sim = SimConfig {
        noise_sigma: 0.7,
        seed: 9,
        frames: 20,
        ..SimConfig::default()
    };
    let (obs2, _) = synthesize_observations(&truth, &moved, &poses, &sim).unwrap();
    for (a, b) in obs.frames.iter().zip(&obs2.frames) {
        for (ca, cb) in a.corners.iter().zip(&b.corners) {
            assert!((ca.pixel - cb.pixel).amax() < 1e-9);
        }
    }
    let cfg = config_for(&truth);
    let r1 = calibrate(&obs, &target, &cfg).unwrap();
    let r2 = calibrate(&obs2, &moved, &cfg).unwrap();
    for (a, b) in r1.spec.params.iter().zip(&r2.spec.params) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-2), "{a} vs {b}");
    }
}

#[test]
fn more_frames_do_not_raise_focal_uncertainty() {
    // The first ten frames of a forty-frame simulation equal the ten-frame
    // simulation with the same seed, so the larger set only adds
    // information.
    let truth = catalog::s04525();
    for seed in 0..20 {
        let (obs10, _) = simulated(&truth, seed, 0.7, 10);
        let (obs40, _) = simulated(&truth, seed, 0.7, 40);
        assert_eq!(obs10.frames[..], obs40.frames[..10]);
        let cfg = config_for(&truth);
        let s10 = calibrate(&obs10, &aprilgrid(), &cfg).unwrap().param_std[0].unwrap();
        let s40 = calibrate(&obs40, &aprilgrid(), &cfg).unwrap().param_std[0].unwrap();
        assert!(s40 <= s10, "seed {seed}: {s40} > {s10}");
    }
}

#[test]
fn covariance_is_recomputable_from_the_report() {
    let truth = catalog::bt2120_eucm();
    let (obs, _) = simulated(&truth, 10, 0.7, 20);
    let r = calibrate(&obs, &aprilgrid(), &untrimmed(&truth)).unwrap();
    let cov = compute_covariance(&r, &obs, &aprilgrid()).unwrap();
    for (a, b) in cov.param_std.iter().zip(&r.param_std) {
        let (a, b) = (a.unwrap(), b.unwrap());
        assert!((a - b).abs() < 1e-3 * b, "{a} vs {b}");
    }
}

fn offset_observations(spec: &CameraSpec, poses: &[FramePose], target: &TargetLayout, d: Pixel) -> ObservationSet {
    let obs = ObservationSet {
        frames: poses
            .iter()
            .map(|fp| wacal::calibrate::Frame {
                id: fp.frame,
                corners: target
                    .points
                    .iter()
                    .filter_map(|p| {
                        let m = spec.project(&fp.pose.apply(&p.position.into())).ok()?;
                        Some(wacal::calibrate::Corner { id: p.id, pixel: m + d })
                    })
                    .collect(),
            })
            .collect(),
    };
    assert!(obs.num_corners() > 0);
    obs
}

#[test]
fn rms_arithmetic() {
    let truth = catalog::s04525();
    let target = aprilgrid();
    let (_, t) = simulated(&truth, 11, 0.0, 3);
    let shifted = offset_observations(&truth, &t.poses, &target, Pixel::new(0.6, 0.8));
    let rms = compute_rms(&truth, &t.poses, &shifted, &target, None).unwrap();
    assert!((rms - 1.0).abs() < 1e-12);
    let exact = offset_observations(&truth, &t.poses, &target, Pixel::zeros());
    assert_eq!(compute_rms(&truth, &t.poses, &exact, &target, None).unwrap(), 0.0);
    let none: Vec<Vec<bool>> = exact.frames.iter().map(|f| vec![false; f.corners.len()]).collect();
    assert!(matches!(
        compute_rms(&truth, &t.poses, &exact, &target, Some(&none)),
        Err(CalibError::EmptyInliers)
    ));
}

fn kb8(params: [f64; 8]) -> CameraSpec {
    CameraSpec::new(ModelKind::KB8, params.to_vec(), 1600, 1200).unwrap()
}

#[test]
fn kb8_initial_focal_within_fifteen_percent() {
    let truth = kb8([411.0, 411.3, 797.5, 602.4, 0.03, 0.0, 0.0, 0.0]);
    let (obs, _) = simulated(&truth, 12, 0.7, 40);
    let init = init_wideangle_intrinsics(&obs, &aprilgrid(), ModelKind::KB8, 1600, 1200, &config_for(&truth)).unwrap();
    let f = init.params[0];
    assert!((f - 411.0).abs() <= 0.15 * 411.0, "initial focal {f}");
    assert_eq!(&init.params[4..], &[0.0; 4]);
    assert_eq!((init.params[2], init.params[3]), (800.0, 600.0));
}

#[test]
fn kb8_initial_focal_matches_equidistant_oracle() {
    // A neutral KB-8 model is equidistant, r = f'·θ. Matching the cubic
    // term of r(ρ) = f·(θ + k1·θ³) with θ = atan ρ gives f' = f/√(1 − 3·k1).
    let truth = catalog::mtv185_kb8();
    let (obs, _) = simulated(&truth, 13, 0.7, 40);
    let init = init_wideangle_intrinsics(&obs, &aprilgrid(), ModelKind::KB8, 1600, 1200, &config_for(&truth)).unwrap();
    let oracle = 411.0 / (1.0f64 - 3.0 * truth.params[4]).sqrt();
    let f = init.params[0];
    assert!(
        (f - oracle).abs() <= 0.05 * oracle,
        "initial focal {f}, oracle {oracle}"
    );
}

#[test]
fn eucm_initial_alpha_is_one_half() {
    let truth = catalog::bt2120_eucm();
    let (obs, _) = simulated(&truth, 14, 0.7, 10);
    let init = init_wideangle_intrinsics(&obs, &aprilgrid(), ModelKind::EUCM, 1600, 1200, &config_for(&truth)).unwrap();
    assert_eq!((init.params[4], init.params[5]), (0.5, 1.0));
}

#[test]
fn empty_observations_are_rejected() {
    let cfg = CalibConfig::new(ModelKind::KB8);
    let empty = ObservationSet::default();
    assert!(init_wideangle_intrinsics(&empty, &aprilgrid(), ModelKind::KB8, 1600, 1200, &cfg).is_err());
    assert!(calibrate(&empty, &aprilgrid(), &cfg).is_err());
}

#[test]
fn unknown_point_ids_are_rejected() {
    let truth = catalog::s04525();
    let (mut obs, _) = simulated(&truth, 15, 0.7, 5);
    obs.frames[2].corners[0].id = 10_000;
    assert!(matches!(
        calibrate(&obs, &aprilgrid(), &config_for(&truth)),
        Err(CalibError::UnknownPoint { id: 10_000, .. })
    ));
}

#[test]
fn short_frames_are_excluded() {
    let truth = catalog::s04525();
    let (mut obs, _) = simulated(&truth, 16, 0.7, 8);
    obs.frames[3].corners.truncate(3);
    let r = calibrate(&obs, &aprilgrid(), &config_for(&truth)).unwrap();
    assert!(r.frames_dropped.contains(&obs.frames[3].id));
    assert!(r.pose(obs.frames[3].id).is_none());
}

#[test]
fn non_convergence_is_reported() {
    let truth = catalog::bt2120_mei();
    let (obs, _) = simulated(&truth, 17, 0.7, 10);
    let cfg = CalibConfig {
        max_lm_iterations: 1,
        ..untrimmed(&truth)
    };
    let r = calibrate(&obs, &aprilgrid(), &cfg).unwrap();
    assert!(!r.converged);
    assert_eq!(r.iterations, 1);
}
