//! Point layouts of planar calibration targets.
//!
//! All points lie in the target's `z = 0` plane and carry dense ids
//! `0..N`. AprilGrid ids follow `4·(row·cols + col) + corner`, with the
//! corners of each tag ordered bottom-left, bottom-right, top-right,
//! top-left (counter-clockwise when `y` points up).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("target needs at least 2×2 rows/cols, got {rows}×{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("spacing must be positive, got {0}")]
    Spacing(f64),
    #[error("AprilGrid tag ratio must lie in (0, 1), got {0:?}")]
    TagRatio(Option<f64>),
    #[error("unknown target kind '{0}'")]
    UnknownKind(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Checkerboard,
    #[serde(rename = "aprilgrid")]
    AprilGrid,
    CircleGridSym,
    CircleGridAsym,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetKind::Checkerboard => "checkerboard",
            TargetKind::AprilGrid => "aprilgrid",
            TargetKind::CircleGridSym => "circle_grid_sym",
            TargetKind::CircleGridAsym => "circle_grid_asym",
        })
    }
}

impl FromStr for TargetKind {
    type Err = TargetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "checkerboard" | "chessboard" => Ok(TargetKind::Checkerboard),
            "aprilgrid" | "april_grid" => Ok(TargetKind::AprilGrid),
            "circle_grid_sym" | "circlegrid" | "circle_grid" => Ok(TargetKind::CircleGridSym),
            "circle_grid_asym" | "circlegridasym" => Ok(TargetKind::CircleGridAsym),
            _ => Err(TargetError::UnknownKind(s.to_string())),
        }
    }
}

/// Target description as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub kind: TargetKind,
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_ratio: Option<f64>,
}

impl TargetConfig {
    pub fn build(&self) -> Result<TargetLayout, TargetError> {
        make_target(self.kind, self.rows, self.cols, self.spacing_m, self.tag_ratio)
    }

    /// The 7×10 AprilGrid with 4 cm tags used throughout the examples.
    pub fn default_aprilgrid() -> Self {
        Self {
            kind: TargetKind::AprilGrid,
            rows: 7,
            cols: 10,
            spacing_m: 0.04,
            tag_ratio: Some(0.3),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint {
    pub id: usize,
    pub position: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetLayout {
    #[serde(flatten)]
    pub config: TargetConfig,
    pub points: Vec<TargetPoint>,
}

impl TargetLayout {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Position of point `id`; ids are dense so this is an index.
    pub fn point(&self, id: usize) -> Option<Point3> {
        self.points.get(id).map(|p| Point3::from(p.position))
    }

    pub fn positions(&self) -> impl Iterator<Item = Point3> + '_ {
        self.points.iter().map(|p| Point3::from(p.position))
    }

    /// Centroid of all points.
    pub fn center(&self) -> Point3 {
        let n = self.points.len().max(1) as f64;
        self.positions().sum::<Point3>() / n
    }

    /// Axis-aligned extent `(min, max)` in the target plane.
    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for p in self.positions() {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        (lo, hi)
    }
}

pub fn make_target(
    kind: TargetKind,
    rows: usize,
    cols: usize,
    spacing: f64,
    tag_ratio: Option<f64>,
) -> Result<TargetLayout, TargetError> {
    if rows < 2 || cols < 2 {
        return Err(TargetError::TooSmall { rows, cols });
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(TargetError::Spacing(spacing));
    }
    let mut xy: Vec<(f64, f64)> = Vec::new();
    match kind {
        TargetKind::Checkerboard => {
            for r in 0..rows - 1 {
                for c in 0..cols - 1 {
                    xy.push((c as f64 * spacing, r as f64 * spacing));
                }
            }
        }
        TargetKind::AprilGrid => {
            let ratio = match tag_ratio {
                Some(t) if t > 0.0 && t < 1.0 => t,
                other => return Err(TargetError::TagRatio(other)),
            };
            let pitch = spacing * (1.0 + ratio);
            for r in 0..rows {
                for c in 0..cols {
                    let x0 = c as f64 * pitch;
                    let y0 = r as f64 * pitch;
                    xy.push((x0, y0));
                    xy.push((x0 + spacing, y0));
                    xy.push((x0 + spacing, y0 + spacing));
                    xy.push((x0, y0 + spacing));
                }
            }
        }
        TargetKind::CircleGridSym => {
            for r in 0..rows {
                for c in 0..cols {
                    xy.push((c as f64 * spacing, r as f64 * spacing));
                }
            }
        }
        TargetKind::CircleGridAsym => {
            for r in 0..rows {
                let offset = if r % 2 == 1 { spacing / 2.0 } else { 0.0 };
                for c in 0..cols {
                    xy.push((c as f64 * spacing + offset, r as f64 * spacing / 2.0));
                }
            }
        }
    }
    let points = xy
        .into_iter()
        .enumerate()
        .map(|(id, (x, y))| TargetPoint {
            id,
            position: [x, y, 0.0],
        })
        .collect();
    Ok(TargetLayout {
        config: TargetConfig {
            kind,
            rows,
            cols,
            spacing_m: spacing,
            tag_ratio: if kind == TargetKind::AprilGrid { tag_ratio } else { None },
        },
        points,
    })
}
