//! Compares analytic projection Jacobians with central differences for
//! every model kind.
//!
//! cargo run --example jacobian_check

use nalgebra::{DMatrix, Matrix2x3};
use wacal::catalog;
use wacal::models::project_with_jacobians;
use wacal::{ModelKind, Pixel};

fn main() {
    let pixels = [
        Pixel::new(800.0, 600.0),
        Pixel::new(150.0, 200.0),
        Pixel::new(1500.0, 1100.0),
    ];
    for kind in ModelKind::ALL {
        let spec = catalog::example_spec(kind);
        let (mut worst_x, mut worst_k): (f64, f64) = (0.0, 0.0);
        for m in &pixels {
            let Some(ray) = spec.unproject(m) else { continue };
            let x = ray.dir() * 1.5;
            let Some((_, jx, jk)) = project_with_jacobians(&spec, &x) else {
                continue;
            };

            let h = 1e-6;
            let mut fd = Matrix2x3::zeros();
            for c in 0..3 {
                let (mut a, mut b) = (x, x);
                a[c] += h;
                b[c] -= h;
                fd.set_column(c, &((spec.project(&a).pixel - spec.project(&b).pixel) / (2.0 * h)));
            }
            worst_x = worst_x.max((fd - jx).norm() / jx.norm());

            // Columns scaled by |p| so tiny high-order coefficients compare
            // on the same footing as focal lengths.
            let n = spec.params.len();
            let (mut fd_k, mut an_k) = (DMatrix::zeros(2, n), DMatrix::zeros(2, n));
            for k in 0..n {
                let scale = spec.params[k].abs().max(1e-3);
                let hk = 1e-6 * scale;
                let (mut a, mut b) = (spec.clone(), spec.clone());
                a.params[k] += hk;
                b.params[k] -= hk;
                let d = (a.project(&x).pixel - b.project(&x).pixel) / (2.0 * hk);
                fd_k.set_column(k, &(d * scale));
                an_k.set_column(k, &(jk.column(k) * scale));
            }
            worst_k = worst_k.max((fd_k - &an_k).norm() / an_k.norm());
        }
        println!(
            "{:<16} point block {worst_x:.1e}  parameter block {worst_k:.1e}",
            kind.name()
        );
    }
}
