//! Corrupts a few percent of the corners with gross errors and compares
//! plain least squares, a Huber loss and trimming.
//!
//! cargo run --release --example robust_outliers

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wacal::calibrate::{calibrate, CalibConfig, LossKind, RobustLoss};
use wacal::catalog;
use wacal::simulate::{simulate, SimConfig};
use wacal::{Pixel, TargetConfig};

fn main() {
    let truth = catalog::bm4218();
    let target = TargetConfig::default_aprilgrid().build().unwrap();
    let sim = SimConfig {
        seed: 11,
        frames: 20,
        ..SimConfig::default()
    };
    let (mut obs, _) = simulate(&truth, &target, &sim).expect("simulation");

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut corrupted = 0;
    for frame in &mut obs.frames {
        for c in &mut frame.corners {
            if rng.random::<f64>() < 0.03 {
                c.pixel += Pixel::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));
                corrupted += 1;
            }
        }
    }
    println!("{corrupted} of {} corners moved by up to 40 px", obs.num_corners());

    let runs = [
        ("least squares", RobustLoss::none(), 0),
        (
            "huber",
            RobustLoss {
                kind: LossKind::Huber,
                scale: 1.0,
            },
            0,
        ),
        (
            "huber + trim",
            RobustLoss {
                kind: LossKind::Huber,
                scale: 1.0,
            },
            2,
        ),
    ];
    for (label, loss, trim_rounds) in runs {
        let mut config = CalibConfig::new(truth.kind);
        config.image_size = Some([truth.width, truth.height]);
        config.loss = loss;
        config.trim_rounds = trim_rounds;
        let report = calibrate(&obs, &target, &config).expect("calibration");
        let df = report.spec.params[0] - truth.params[0];
        let dc = report.spec.params[2] - truth.params[2];
        println!(
            "{label:<14} rms {:7.3} px  trimmed {:4}  fx error {df:+7.3}  cx error {dc:+7.3}",
            report.rms, report.trimmed
        );
    }
}
