//! Reference cameras used by the examples, tests and the simulation study.
//!
//! All presets describe a 1600×1200 sensor. Focal lengths follow the nominal
//! values of common lenses on such a sensor; distortion values are plausible
//! choices, not measurements.

use crate::models::{CameraSpec, ModelKind};
use crate::simulate::PoseSampler;

pub const WIDTH: u32 = 1600;
pub const HEIGHT: u32 = 1200;

/// A named lens setup: ground-truth camera plus a pose sampler suited to
/// its field of view.
#[derive(Clone, Debug)]
pub struct LensCase {
    pub name: &'static str,
    pub daov_deg: f64,
    pub spec: CameraSpec,
}

impl LensCase {
    pub fn pose_sampler(&self) -> PoseSampler {
        pose_sampler_for(&self.spec)
    }
}

/// Equivalent focal length (px) below which a 1600×1200 camera is treated
/// as fisheye by [`pose_sampler_for`].
const FISHEYE_FOCAL: f64 = 600.0;

/// Close-range oblique views for fisheye and omnidirectional cameras, the
/// default sampler for the rest.
pub fn pose_sampler_for(spec: &CameraSpec) -> PoseSampler {
    if spec.equivalent_focal().0 < FISHEYE_FOCAL {
        PoseSampler::close_range()
    } else {
        PoseSampler::default()
    }
}

fn spec(kind: ModelKind, params: &[f64]) -> CameraSpec {
    CameraSpec::new(kind, params.to_vec(), WIDTH, HEIGHT).expect("catalog spec is valid")
}

/// One representative camera per model kind.
pub fn example_spec(kind: ModelKind) -> CameraSpec {
    match kind {
        ModelKind::Pinhole => spec(kind, &[1000.0, 1000.0, 800.0, 600.0]),
        ModelKind::RadTan => s04525(),
        ModelKind::RadTanBackward => spec(kind, &[1000.0, 1000.5, 801.0, 599.0, 0.06, 0.004, -2e-4, 1e-4]),
        ModelKind::Division => spec(kind, &[1000.0, 999.6, 799.0, 601.5, -0.08]),
        ModelKind::Rational => CameraSpec::new(
            kind,
            vec![1000.0, 1000.4, 800.5, 599.5, 0.15, 0.02, 0.05],
            WIDTH,
            HEIGHT,
        )
        .map(|s| s.with_rational_order(2, 1))
        .expect("valid"),
        ModelKind::ThinPrism => spec(kind, &[1000.0, 1000.3, 800.8, 599.2, -0.08, 3e-4, -2e-4, 1e-3, -8e-4]),
        ModelKind::KB8 => mtv185_kb8(),
        ModelKind::Scaramuzza => spec(
            kind,
            &[467.0, -7.0e-4, 2.0e-8, -2.2e-10, 800.6, 599.3, 1.001, 4e-4, 4e-4],
        ),
        ModelKind::FOV => spec(kind, &[467.0, 467.2, 800.5, 599.5, 0.92]),
        ModelKind::UCM => spec(kind, &[850.0, 850.4, 799.0, 601.0, 0.8]),
        ModelKind::UCMAlpha => spec(kind, &[472.0, 472.2, 799.0, 601.0, 0.44]),
        ModelKind::DS => spec(kind, &[350.0, 350.2, 800.0, 600.0, -0.2, 0.58]),
        ModelKind::EUCM => bt2120_eucm(),
        ModelKind::Mei => bt2120_mei(),
    }
}

/// 90° DAOV, 4.5 mm lens: radial-tangential, f = 1000 px.
pub fn s04525() -> CameraSpec {
    spec(
        ModelKind::RadTan,
        &[1000.0, 1000.5, 801.3, 598.7, -0.05, 0.01, 2e-4, -1.5e-4],
    )
}

/// 103° DAOV, 4.2 mm lens: radial-tangential, f = 933 px.
pub fn bm4218() -> CameraSpec {
    spec(
        ModelKind::RadTan,
        &[933.0, 932.6, 795.2, 603.1, -0.12, 0.017, 3e-4, -2e-4],
    )
}

/// 194° DAOV, 1.85 mm fisheye: KB-8, f = 411 px.
pub fn mtv185_kb8() -> CameraSpec {
    spec(
        ModelKind::KB8,
        &[411.0, 411.3, 797.5, 602.4, 0.12, 0.01, -0.002, 0.0002],
    )
}

/// 164° DAOV, 2.1 mm fisheye: EUCM, f = 467 px.
pub fn bt2120_eucm() -> CameraSpec {
    spec(ModelKind::EUCM, &[467.0, 467.3, 798.7, 601.2, 0.62, 1.05])
}

/// 164° DAOV, 2.1 mm fisheye: Mei with an equivalent focal length of 467 px.
pub fn bt2120_mei() -> CameraSpec {
    let xi = 1.2;
    spec(
        ModelKind::Mei,
        &[
            467.0 * (1.0 + xi),
            467.4 * (1.0 + xi),
            799.5,
            600.8,
            xi,
            -0.05,
            0.01,
            -0.001,
            2e-4,
            -1e-4,
            1e-4,
        ],
    )
}

pub fn lens_cases() -> Vec<LensCase> {
    vec![
        LensCase {
            name: "S04525",
            daov_deg: 90.0,
            spec: s04525(),
        },
        LensCase {
            name: "BM4218",
            daov_deg: 103.0,
            spec: bm4218(),
        },
        LensCase {
            name: "BT2120",
            daov_deg: 164.0,
            spec: bt2120_eucm(),
        },
        LensCase {
            name: "MTV185",
            daov_deg: 194.0,
            spec: mtv185_kb8(),
        },
    ]
}
