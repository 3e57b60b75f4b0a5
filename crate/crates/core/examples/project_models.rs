//! Projects the same set of rays through one camera of every model kind and
//! checks that unprojection recovers them.
//!
//! cargo run --example project_models

use wacal::catalog;
use wacal::{ModelKind, Point3};

fn main() {
    let angles_deg = [0.0, 30.0, 60.0, 85.0, 95.0];
    println!("{:<16} {:>6}  {}", "model", "f_eq", "u at incidence 0/30/60/85/95 deg");
    for kind in ModelKind::ALL {
        let spec = catalog::example_spec(kind);
        let mut cells = Vec::new();
        let mut worst: f64 = 0.0;
        for deg in angles_deg {
            let theta = f64::to_radians(deg);
            let x = Point3::new(theta.sin(), 0.0, theta.cos()) * 2.0;
            let p = spec.project(&x);
            if !p.valid {
                cells.push("   -   ".to_string());
                continue;
            }
            cells.push(format!("{:7.1}", p.pixel.x));
            if let Some(ray) = spec.unproject(&p.pixel) {
                worst = worst.max(ray.angle_to(&x));
            }
        }
        println!(
            "{:<16} {:6.1}  {}   round trip {:.1e} rad",
            kind.name(),
            spec.equivalent_focal().0,
            cells.join(" "),
            worst
        );
    }
}
