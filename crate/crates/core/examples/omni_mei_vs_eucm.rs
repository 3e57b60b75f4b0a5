//! Fits Mei and EUCM to the same omnidirectional sequence. Both reach a
//! similar reprojection error, but Mei's mirror parameter and radial
//! distortion trade off against each other, which shows up as a much larger
//! condition number and large parameter uncertainty.
//!
//! cargo run --release --example omni_mei_vs_eucm [seed]

use wacal::calibrate::{calibrate, CalibConfig};
use wacal::catalog;
use wacal::simulate::{simulate, SimConfig};
use wacal::{ModelKind, TargetConfig};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let truth = catalog::bt2120_mei();
    let target = TargetConfig::default_aprilgrid().build().unwrap();
    let sim = SimConfig {
        seed,
        pose_sampler: catalog::pose_sampler_for(&truth),
        ..SimConfig::default()
    };
    let (obs, _) = simulate(&truth, &target, &sim).expect("simulation");

    for kind in [ModelKind::Mei, ModelKind::EUCM] {
        let mut config = CalibConfig::new(kind);
        config.image_size = Some([truth.width, truth.height]);
        let report = calibrate(&obs, &target, &config).expect("calibration");
        let (fx, fy) = report.spec.equivalent_focal();
        println!(
            "{:<5} rms {:.3} px  focal ({fx:.1}, {fy:.1})  condition {:.2e}",
            kind.name(),
            report.rms,
            report.condition_number.unwrap_or(f64::INFINITY)
        );
        for (i, name) in report.spec.param_names().iter().enumerate().skip(4) {
            let std = report.param_std[i].map_or(f64::NAN, |s| s);
            println!("      {name:<4} {:>10.5} ± {std:.1e}", report.spec.params[i]);
        }
    }
    println!("truth: xi {}  k1 {}", truth.params[4], truth.params[5]);
}
