//! Builds the supported calibration boards and prints their extent.
//!
//! cargo run --example targets

use wacal::{make_target, TargetConfig, TargetKind};

fn main() {
    let boards = [
        (TargetKind::Checkerboard, 8, 11, 0.03, None),
        (TargetKind::AprilGrid, 7, 10, 0.04, Some(0.3)),
        (TargetKind::CircleGridSym, 6, 9, 0.035, None),
        (TargetKind::CircleGridAsym, 6, 9, 0.035, None),
    ];
    for (kind, rows, cols, spacing, ratio) in boards {
        let t = make_target(kind, rows, cols, spacing, ratio).expect("valid board");
        let (lo, hi) = t.bounds();
        println!(
            "{:<17} {rows}x{cols}  {:4} points  {:.3} x {:.3} m  center ({:.3}, {:.3})",
            kind.to_string(),
            t.len(),
            hi.x - lo.x,
            hi.y - lo.y,
            t.center().x,
            t.center().y
        );
    }

    let json = serde_json::to_string_pretty(&TargetConfig::default_aprilgrid()).unwrap();
    println!("\ndefault board as stored on disk:\n{json}");
    match make_target(TargetKind::AprilGrid, 7, 10, 0.04, Some(1.5)) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
}
