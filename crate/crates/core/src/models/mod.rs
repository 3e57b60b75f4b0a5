//! Parametric central camera models.
//!
//! A [`CameraSpec`] couples a [`ModelKind`] with its parameter vector. The
//! parameter order for each kind is part of the file format:
//!
//! | kind             | parameters                                              |
//! |------------------|---------------------------------------------------------|
//! | `Pinhole`        | `fx fy cx cy`                                           |
//! | `RadTan`         | `fx fy cx cy k1 k2 p1 p2`                               |
//! | `RadTanBackward` | `fx fy cx cy k1 k2 p1 p2` (pixel → ray direction)       |
//! | `Division`       | `fx fy cx cy k1`                                        |
//! | `Rational`       | `fx fy cx cy a1..ap b1..bq` (`p, q ≤ 3`)                |
//! | `ThinPrism`      | `fx fy cx cy k1 p1 p2 s1 s2 [s3 s4]`                    |
//! | `KB8`            | `fx fy cx cy k1 k2 k3 k4`                               |
//! | `Scaramuzza`     | `a0 a2 a3 a4 cx cy c d e`                               |
//! | `FOV`            | `fx fy cx cy ω`                                         |
//! | `UCM`            | `γx γy cx cy ξ`                                         |
//! | `UCMAlpha`       | `fx fy cx cy α`                                         |
//! | `DS`             | `fx fy cx cy ξ α`                                       |
//! | `EUCM`           | `fx fy cx cy α β`                                       |
//! | `Mei`            | `γx γy cx cy ξ k1 k2 k3 p1 p2 s`                        |
//!
//! With 11 entries, `ThinPrism` uses the four-term prism variant
//! `δu = s1 r² + s2 r⁴`, `δv = s3 r² + s4 r⁴`.

mod backward;
mod forward;
pub mod jet;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Dyn, Matrix2x3, OMatrix, U2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pixel, Point3, Ray};
pub use forward::forward_nonconvergence_count;
use forward::Meta;
use jet::{Jet, JET_DIM};

/// 2×P Jacobian with respect to the parameter vector.
pub type ParamJacobian = OMatrix<f64, U2, Dyn>;

/// Slot of the first point coordinate inside a [`Jet`].
const POINT_SLOT: usize = JET_DIM - 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{kind} expects {expected} parameters, got {got}")]
    ParamCount {
        kind: ModelKind,
        expected: String,
        got: usize,
    },
    #[error("invalid parameters for {kind}: {reason}")]
    InvalidParams { kind: ModelKind, reason: String },
    #[error("unknown camera model '{0}'")]
    UnknownKind(String),
    #[error("point {0:?} is not projectable")]
    NotProjectable([f64; 3]),
    #[error("{0}")]
    Conversion(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Pinhole,
    RadTan,
    RadTanBackward,
    Division,
    Rational,
    ThinPrism,
    KB8,
    Scaramuzza,
    FOV,
    UCM,
    UCMAlpha,
    DS,
    EUCM,
    Mei,
}

impl ModelKind {
    pub const ALL: [ModelKind; 14] = [
        ModelKind::Pinhole,
        ModelKind::RadTan,
        ModelKind::RadTanBackward,
        ModelKind::Division,
        ModelKind::Rational,
        ModelKind::ThinPrism,
        ModelKind::KB8,
        ModelKind::Scaramuzza,
        ModelKind::FOV,
        ModelKind::UCM,
        ModelKind::UCMAlpha,
        ModelKind::DS,
        ModelKind::EUCM,
        ModelKind::Mei,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pinhole => "Pinhole",
            ModelKind::RadTan => "RadTan",
            ModelKind::RadTanBackward => "RadTanBackward",
            ModelKind::Division => "Division",
            ModelKind::Rational => "Rational",
            ModelKind::ThinPrism => "ThinPrism",
            ModelKind::KB8 => "KB8",
            ModelKind::Scaramuzza => "Scaramuzza",
            ModelKind::FOV => "FOV",
            ModelKind::UCM => "UCM",
            ModelKind::UCMAlpha => "UCMAlpha",
            ModelKind::DS => "DS",
            ModelKind::EUCM => "EUCM",
            ModelKind::Mei => "Mei",
        }
    }

    /// Whether both projection directions are closed-form.
    pub fn closed_form_pair(self) -> bool {
        matches!(
            self,
            ModelKind::Pinhole
                | ModelKind::FOV
                | ModelKind::DS
                | ModelKind::UCM
                | ModelKind::UCMAlpha
                | ModelKind::EUCM
        )
    }

    /// Whether the pixel → focal/principal-point layout `fx fy cx cy` leads
    /// the parameter vector.
    pub fn has_pinhole_prefix(self) -> bool {
        self != ModelKind::Scaramuzza
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let kind = match key.as_str() {
            "pinhole" => ModelKind::Pinhole,
            "radtan" | "pinholeradtan" | "brown" => ModelKind::RadTan,
            "radtanbackward" | "radtaninv" => ModelKind::RadTanBackward,
            "division" => ModelKind::Division,
            "rational" => ModelKind::Rational,
            "thinprism" => ModelKind::ThinPrism,
            "kb8" | "kb" | "kannalabrandt" => ModelKind::KB8,
            "scaramuzza" | "ocam" => ModelKind::Scaramuzza,
            "fov" => ModelKind::FOV,
            "ucm" => ModelKind::UCM,
            "ucmalpha" => ModelKind::UCMAlpha,
            "ds" | "doublesphere" => ModelKind::DS,
            "eucm" => ModelKind::EUCM,
            "mei" => ModelKind::Mei,
            _ => return Err(ModelError::UnknownKind(s.to_string())),
        };
        Ok(kind)
    }
}

/// Camera model kind, parameters, and image size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRecord", into = "SpecRecord")]
pub struct CameraSpec {
    pub kind: ModelKind,
    pub params: Vec<f64>,
    pub width: u32,
    pub height: u32,
    /// Largest incidence angle accepted by `KB8` (radians, default π).
    pub theta_max: Option<f64>,
    /// Numerator and denominator orders of the `Rational` model.
    pub rational_order: Option<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
struct SpecRecord {
    kind: ModelKind,
    params: Vec<f64>,
    width: u32,
    height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rational_order: Option<[usize; 2]>,
}

impl TryFrom<SpecRecord> for CameraSpec {
    type Error = ModelError;
    fn try_from(r: SpecRecord) -> Result<Self, Self::Error> {
        let spec = CameraSpec {
            kind: r.kind,
            params: r.params,
            width: r.width,
            height: r.height,
            theta_max: r.theta_max,
            rational_order: r.rational_order,
        };
        spec.check_len()?;
        Ok(spec)
    }
}

impl From<CameraSpec> for SpecRecord {
    fn from(s: CameraSpec) -> Self {
        SpecRecord {
            kind: s.kind,
            params: s.params,
            width: s.width,
            height: s.height,
            theta_max: s.theta_max,
            rational_order: s.rational_order,
        }
    }
}

/// Outcome of a forward projection. `pixel` is NaN when `valid` is false.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionResult {
    pub pixel: Pixel,
    pub valid: bool,
}

impl ProjectionResult {
    fn invalid() -> Self {
        Self {
            pixel: Pixel::new(f64::NAN, f64::NAN),
            valid: false,
        }
    }

    pub fn ok(&self) -> Option<Pixel> {
        self.valid.then_some(self.pixel)
    }
}

fn default_rational_order(n: usize) -> [usize; 2] {
    [n.div_ceil(2), n / 2]
}

impl CameraSpec {
    /// Builds and validates a spec.
    pub fn new(kind: ModelKind, params: Vec<f64>, width: u32, height: u32) -> Result<Self, ModelError> {
        let spec = Self::unchecked(kind, params, width, height);
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec without checking parameter ranges (length is still the
    /// caller's responsibility).
    pub fn unchecked(kind: ModelKind, params: Vec<f64>, width: u32, height: u32) -> Self {
        Self {
            kind,
            params,
            width,
            height,
            theta_max: None,
            rational_order: None,
        }
    }

    pub fn with_theta_max(mut self, theta_max: f64) -> Self {
        self.theta_max = Some(theta_max);
        self
    }

    pub fn with_rational_order(mut self, p: usize, q: usize) -> Self {
        self.rational_order = Some([p, q]);
        self
    }

    pub(crate) fn meta(&self) -> Meta {
        let n = self.params.len().saturating_sub(4);
        Meta {
            theta_max: self.theta_max.unwrap_or(PI),
            rational_order: self.rational_order.unwrap_or_else(|| default_rational_order(n)),
        }
    }

    fn check_len(&self) -> Result<(), ModelError> {
        let n = self.params.len();
        let (ok, expected) = match self.kind {
            ModelKind::Pinhole => (n == 4, "4".to_string()),
            ModelKind::RadTan | ModelKind::RadTanBackward | ModelKind::KB8 => (n == 8, "8".into()),
            ModelKind::Division | ModelKind::FOV | ModelKind::UCM | ModelKind::UCMAlpha => (n == 5, "5".into()),
            ModelKind::DS | ModelKind::EUCM => (n == 6, "6".into()),
            ModelKind::ThinPrism => (n == 9 || n == 11, "9 or 11".into()),
            ModelKind::Scaramuzza => (n == 9, "9".into()),
            ModelKind::Mei => (n == 11, "11".into()),
            ModelKind::Rational => match self.rational_order {
                Some([p, q]) => (p <= 3 && q <= 3 && n == 4 + p + q, format!("4+{p}+{q} (p, q ≤ 3)")),
                None => ((4..=10).contains(&n), "4 to 10".into()),
            },
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::ParamCount {
                kind: self.kind,
                expected,
                got: n,
            })
        }
    }

    /// Full validity check: length, finiteness and per-kind ranges.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.check_len()?;
        let invalid = |reason: &str| ModelError::InvalidParams {
            kind: self.kind,
            reason: reason.to_string(),
        };
        let p = &self.params;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite parameter"));
        }
        if let Some(t) = self.theta_max {
            if !(t > 0.0 && t <= PI) {
                return Err(invalid("theta_max must lie in (0, π]"));
            }
        }
        match self.kind {
            ModelKind::Scaramuzza => {
                if p[0] == 0.0 {
                    return Err(invalid("a0 must be non-zero"));
                }
                if (p[6] - p[7] * p[8]).abs() < 1e-12 {
                    return Err(invalid("stretch matrix is singular"));
                }
                return Ok(());
            }
            _ => {
                if !(p[0] > 0.0 && p[1] > 0.0) {
                    return Err(invalid("focal lengths must be positive"));
                }
            }
        }
        match self.kind {
            ModelKind::EUCM => {
                if !(0.0..=1.0).contains(&p[4]) {
                    return Err(invalid("alpha must lie in [0, 1]"));
                }
                if !(p[5] > 0.0) {
                    return Err(invalid("beta must be positive"));
                }
            }
            ModelKind::DS => {
                if !(p[5] > 0.0 && p[5] <= 1.0) {
                    return Err(invalid("alpha must lie in (0, 1]"));
                }
                if !(p[4] > -1.0 && p[4] < 1.0) {
                    return Err(invalid("xi must lie in (-1, 1)"));
                }
            }
            ModelKind::UCMAlpha => {
                if !(0.0..1.0).contains(&p[4]) {
                    return Err(invalid("alpha must lie in [0, 1)"));
                }
            }
            ModelKind::UCM | ModelKind::Mei => {
                if !(p[4] >= 0.0) {
                    return Err(invalid("xi must be non-negative"));
                }
            }
            ModelKind::FOV => {
                if !(p[4] >= 0.0) {
                    return Err(invalid("omega must be non-negative"));
                }
            }
            ModelKind::KB8 => {
                let theta_max = self.meta().theta_max;
                if !kb8_monotone(&p[4..8], theta_max) {
                    return Err(invalid("d(theta) is not strictly increasing on [0, theta_max]"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        match self.kind {
            ModelKind::Pinhole => s(&["fx", "fy", "cx", "cy"]),
            ModelKind::RadTan | ModelKind::RadTanBackward => s(&["fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2"]),
            ModelKind::Division => s(&["fx", "fy", "cx", "cy", "k1"]),
            ModelKind::Rational => {
                let [np, nq] = self.meta().rational_order;
                let mut v = s(&["fx", "fy", "cx", "cy"]);
                v.extend((1..=np).map(|j| format!("a{j}")));
                v.extend((1..=nq).map(|j| format!("b{j}")));
                v
            }
            ModelKind::ThinPrism => {
                if self.params.len() == 11 {
                    s(&["fx", "fy", "cx", "cy", "k1", "p1", "p2", "s1", "s2", "s3", "s4"])
                } else {
                    s(&["fx", "fy", "cx", "cy", "k1", "p1", "p2", "s1", "s2"])
                }
            }
            ModelKind::KB8 => s(&["fx", "fy", "cx", "cy", "k1", "k2", "k3", "k4"]),
            ModelKind::Scaramuzza => s(&["a0", "a2", "a3", "a4", "cx", "cy", "c", "d", "e"]),
            ModelKind::FOV => s(&["fx", "fy", "cx", "cy", "omega"]),
            ModelKind::UCM => s(&["gx", "gy", "cx", "cy", "xi"]),
            ModelKind::UCMAlpha => s(&["fx", "fy", "cx", "cy", "alpha"]),
            ModelKind::DS => s(&["fx", "fy", "cx", "cy", "xi", "alpha"]),
            ModelKind::EUCM => s(&["fx", "fy", "cx", "cy", "alpha", "beta"]),
            ModelKind::Mei => s(&["gx", "gy", "cx", "cy", "xi", "k1", "k2", "k3", "p1", "p2", "s"]),
        }
    }

    /// Principal point `(cx, cy)`.
    pub fn principal_point(&self) -> (f64, f64) {
        match self.kind {
            ModelKind::Scaramuzza => (self.params[4], self.params[5]),
            _ => (self.params[2], self.params[3]),
        }
    }

    /// Indices of `(cx, cy)` in the parameter vector.
    pub fn principal_point_indices(&self) -> (usize, usize) {
        match self.kind {
            ModelKind::Scaramuzza => (4, 5),
            _ => (2, 3),
        }
    }

    /// Perspective-equivalent focal lengths `(fx, fy)`: `γ / (1 + ξ)` for the
    /// unified models, `a0` for Scaramuzza.
    pub fn equivalent_focal(&self) -> (f64, f64) {
        let p = &self.params;
        match self.kind {
            ModelKind::UCM | ModelKind::Mei => (p[0] / (1.0 + p[4]), p[1] / (1.0 + p[4])),
            ModelKind::Scaramuzza => (p[0].abs() * p[6], p[0].abs()),
            _ => (p[0], p[1]),
        }
    }

    pub fn in_image(&self, px: &Pixel) -> bool {
        px[0] >= 0.0 && px[1] >= 0.0 && px[0] <= self.width as f64 - 1.0 && px[1] <= self.height as f64 - 1.0
    }

    pub fn project(&self, x: &Point3) -> ProjectionResult {
        project(self, x)
    }

    pub fn unproject(&self, m: &Pixel) -> Option<Ray> {
        unproject(self, m)
    }
}

/// Dense check that `d(θ)` has a positive derivative on `[0, θ_max]`.
fn kb8_monotone(k: &[f64], theta_max: f64) -> bool {
    const SAMPLES: usize = 2000;
    (0..=SAMPLES).all(|i| {
        let t = theta_max * i as f64 / SAMPLES as f64;
        forward::kb_poly_deriv(k, t) > 0.0
    })
}

/// Validity check for a bare parameter vector, with default metadata.
/// A length mismatch is an error; a range violation returns `Ok(false)`.
pub fn validate_params(kind: ModelKind, params: &[f64]) -> Result<bool, ModelError> {
    let spec = CameraSpec::unchecked(kind, params.to_vec(), 1, 1);
    spec.check_len()?;
    Ok(spec.validate().is_ok())
}

pub fn project(spec: &CameraSpec, x: &Point3) -> ProjectionResult {
    if !x.iter().all(|v| v.is_finite()) {
        return ProjectionResult::invalid();
    }
    match forward::project(spec.kind, &spec.meta(), &spec.params, &[x[0], x[1], x[2]]) {
        Some([u, v]) if u.is_finite() && v.is_finite() => ProjectionResult {
            pixel: Pixel::new(u, v),
            valid: true,
        },
        _ => ProjectionResult::invalid(),
    }
}

pub fn unproject(spec: &CameraSpec, m: &Pixel) -> Option<Ray> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    let dir = backward::unproject(spec.kind, &spec.meta(), &spec.params, m[0], m[1])?;
    Ray::new(dir)
}

/// Pixel with derivatives with respect to the point (2×3) and the
/// parameters (2×P) in one pass.
pub fn project_with_jacobians(spec: &CameraSpec, x: &Point3) -> Option<(Pixel, Matrix2x3<f64>, ParamJacobian)> {
    let np = spec.params.len();
    debug_assert!(np <= POINT_SLOT);
    let params: Vec<Jet> = spec
        .params
        .iter()
        .enumerate()
        .map(|(i, &v)| Jet::variable(v, i))
        .collect();
    let xj = [
        Jet::variable(x[0], POINT_SLOT),
        Jet::variable(x[1], POINT_SLOT + 1),
        Jet::variable(x[2], POINT_SLOT + 2),
    ];
    let [u, v] = forward::project(spec.kind, &spec.meta(), &params, &xj)?;
    let pix = Pixel::new(u.re, v.re);
    if !pix.iter().all(|c| c.is_finite()) {
        return None;
    }
    let jp = Matrix2x3::from_fn(|r, c| {
        if r == 0 {
            u.eps[POINT_SLOT + c]
        } else {
            v.eps[POINT_SLOT + c]
        }
    });
    let jk = ParamJacobian::from_fn(np, |r, c| if r == 0 { u.eps[c] } else { v.eps[c] });
    Some((pix, jp, jk))
}

/// ∂pixel/∂x in the camera frame.
pub fn jacobian_point(spec: &CameraSpec, x: &Point3) -> Result<Matrix2x3<f64>, ModelError> {
    project_with_jacobians(spec, x)
        .map(|(_, j, _)| j)
        .ok_or(ModelError::NotProjectable([x[0], x[1], x[2]]))
}

/// ∂pixel/∂params in the declared layout order.
pub fn jacobian_params(spec: &CameraSpec, x: &Point3) -> Result<ParamJacobian, ModelError> {
    project_with_jacobians(spec, x)
        .map(|(_, _, j)| j)
        .ok_or(ModelError::NotProjectable([x[0], x[1], x[2]]))
}

/// `UCM [γx γy cx cy ξ]` → `UCMAlpha [fx fy cx cy α]`.
pub fn ucm_to_alpha(spec: &CameraSpec) -> Result<CameraSpec, ModelError> {
    if spec.kind != ModelKind::UCM {
        return Err(ModelError::Conversion(format!("expected UCM, got {}", spec.kind)));
    }
    let p = &spec.params;
    let xi = p[4];
    if !(xi >= 0.0) {
        return Err(ModelError::Conversion("xi must be non-negative".into()));
    }
    let s = 1.0 + xi;
    Ok(CameraSpec {
        kind: ModelKind::UCMAlpha,
        params: vec![p[0] / s, p[1] / s, p[2], p[3], xi / s],
        ..spec.clone()
    })
}

/// `UCMAlpha [fx fy cx cy α]` → `UCM [γx γy cx cy ξ]`.
pub fn alpha_to_ucm(spec: &CameraSpec) -> Result<CameraSpec, ModelError> {
    if spec.kind != ModelKind::UCMAlpha {
        return Err(ModelError::Conversion(format!("expected UCMAlpha, got {}", spec.kind)));
    }
    let p = &spec.params;
    let alpha = p[4];
    if alpha == 1.0 {
        return Err(ModelError::Conversion(
            "alpha = 1 has no finite xi (division by zero)".into(),
        ));
    }
    if alpha > 1.0 {
        return Err(ModelError::Conversion("alpha must be below 1".into()));
    }
    let xi = alpha / (1.0 - alpha);
    let s = 1.0 + xi;
    Ok(CameraSpec {
        kind: ModelKind::UCM,
        params: vec![p[0] * s, p[1] * s, p[2], p[3], xi],
        ..spec.clone()
    })
}

#[cfg(test)]
mod tests;
