//! Simulates a 90 degree radial-tangential lens and calibrates it.
//!
//! cargo run --release --example calibrate_pinhole [seed]

use wacal::calibrate::{calibrate, CalibConfig};
use wacal::catalog;
use wacal::simulate::{simulate, SimConfig};
use wacal::TargetConfig;

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let truth = catalog::s04525();
    let target = TargetConfig::default_aprilgrid().build().unwrap();
    let sim = SimConfig {
        seed,
        pose_sampler: catalog::pose_sampler_for(&truth),
        ..SimConfig::default()
    };
    let (obs, _) = simulate(&truth, &target, &sim).expect("simulation");
    println!(
        "{} frames, {} corners, noise {} px",
        obs.frames.len(),
        obs.num_corners(),
        sim.noise_sigma
    );

    let mut config = CalibConfig::new(truth.kind);
    config.image_size = Some([truth.width, truth.height]);
    let report = calibrate(&obs, &target, &config).expect("calibration");

    println!(
        "rms {:.3} px after {} iterations, {} corners trimmed",
        report.rms, report.iterations, report.trimmed
    );
    println!("{:<4} {:>12} {:>12} {:>10}", "", "truth", "estimate", "std");
    for (i, name) in truth.param_names().iter().enumerate() {
        let std = report.param_std[i].map_or("-".to_string(), |s| format!("{s:.2e}"));
        println!(
            "{name:<4} {:12.6} {:12.6} {std:>10}",
            truth.params[i], report.spec.params[i]
        );
    }
}
