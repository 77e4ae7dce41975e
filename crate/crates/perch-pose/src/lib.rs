//! Multi-marker perching-target pose estimation.
//!
//! Pipeline: a detection simulator emits noisy marker corners, planar PnP
//! recovers each marker's camera-frame pose, a per-marker constant-velocity
//! Kalman filter smooths and bridges dropouts, and a three-stage merger
//! blends the two marker tracks into a single drone-to-target pose. The
//! blending weights are fitted by least squares / LMS.

pub mod camera;
pub mod detector;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod kf;
pub mod lms;
pub mod pnp;
pub mod scenario;
pub mod target;

pub use error::{Error, Result};
