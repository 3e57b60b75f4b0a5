//! Geometric calibration of wide-angle, fisheye and omnidirectional cameras.
//!
//! * [`models`]: forward/backward projection and Jacobians for fourteen
//!   parametric camera models.
//! * [`targets`]: point layouts of planar calibration boards.
//! * [`calibrate`]: homography-based initialization followed by robust
//!   Levenberg-Marquardt refinement, outlier trimming and covariance.
//! * [`simulate`]: synthetic corner observations with seeded noise.
//! * [`evaluate`]: scoring against ground truth, the focal failure rule and
//!   box-plot statistics across sequences.
//! * [`study`]: seeded simulate, calibrate and score loops over many
//!   sequences.
//! * [`io`] and [`cli`]: file formats and the `wacal` command line.
//! * [`catalog`]: reference cameras and pose samplers.

pub mod calibrate;
pub mod catalog;
pub mod cli;
pub mod evaluate;
pub mod geometry;
pub mod io;
pub mod models;
pub mod simulate;
pub mod study;
pub mod targets;

pub use geometry::{Pixel, Point3, Pose, PoseTangent, Ray};
pub use models::{CameraSpec, ModelError, ModelKind, ProjectionResult};
pub use targets::{make_target, TargetConfig, TargetKind, TargetLayout};
