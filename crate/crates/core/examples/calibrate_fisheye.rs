//! Calibrates a 194 degree fisheye with the KB8 model. Part of the board is
//! seen behind the camera plane, which a pinhole-based model cannot
//! represent.
//!
//! cargo run --release --example calibrate_fisheye [seed]

use wacal::calibrate::{calibrate, CalibConfig};
use wacal::catalog;
use wacal::simulate::{simulate, SimConfig};
use wacal::TargetConfig;

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let truth = catalog::mtv185_kb8();
    let target = TargetConfig::default_aprilgrid().build().unwrap();
    let sim = SimConfig {
        seed,
        pose_sampler: catalog::pose_sampler_for(&truth),
        ..SimConfig::default()
    };
    let (obs, gt) = simulate(&truth, &target, &sim).expect("simulation");

    let mut behind = 0;
    for (frame, fp) in obs.frames.iter().zip(&gt.poses) {
        behind += frame
            .corners
            .iter()
            .filter(|c| fp.pose.apply(&target.point(c.id).unwrap()).z <= 0.0)
            .count();
    }
    println!(
        "{} corners, {behind} of them at or behind the camera plane",
        obs.num_corners()
    );

    let mut config = CalibConfig::new(truth.kind);
    config.image_size = Some([truth.width, truth.height]);
    let report = calibrate(&obs, &target, &config).expect("calibration");
    println!("rms {:.3} px, converged {}", report.rms, report.converged);
    for (i, name) in truth.param_names().iter().enumerate() {
        println!(
            "{name:<9} truth {:>11.6}  estimate {:>11.6}",
            truth.params[i], report.spec.params[i]
        );
    }
    if let Some(theta_max) = report.spec.theta_max {
        println!("valid incidence up to {:.1} deg", theta_max.to_degrees());
    }
}
