//! Three-stage merging of the two per-marker filtered poses into the
//! single drone-to-target pose.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose4};

/// Fusion regime, determined by which marker tracks are live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Large marker only.
    S1,
    /// Both markers.
    S2,
    /// Small marker only.
    S3,
    None,
}

impl Stage {
    pub fn label(&self) -> &'static str {
        match self {
            Stage::S1 => "S1",
            Stage::S2 => "S2",
            Stage::S3 => "S3",
            Stage::None => "none",
        }
    }
}

/// Per-axis blending weights of the stage-2 fusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SigmaSet {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub sigma_psi: f64,
}

impl SigmaSet {
    pub fn new(sigma_x: f64, sigma_y: f64, sigma_z: f64, sigma_psi: f64) -> Self {
        Self {
            sigma_x,
            sigma_y,
            sigma_z,
            sigma_psi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_x", self.sigma_x),
            ("sigma_y", self.sigma_y),
            ("sigma_z", self.sigma_z),
            ("sigma_psi", self.sigma_psi),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for SigmaSet {
    /// Fitted values for the stock two-marker target.
    fn default() -> Self {
        Self {
            sigma_x: 0.275,
            sigma_y: 0.306,
            sigma_z: 0.728,
            sigma_psi: 0.469,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedPose {
    pub pose: Pose4,
    pub stage: Stage,
    /// Marker ids that contributed.
    pub sources: Vec<u32>,
}

pub fn select_stage(large_available: bool, small_available: bool) -> Stage {
    match (large_available, small_available) {
        (true, false) => Stage::S1,
        (true, true) => Stage::S2,
        (false, true) => Stage::S3,
        (false, false) => Stage::None,
    }
}

/// Merge the per-marker poses for the given stage. Stage 2 blends each
/// translation axis convexly and takes yaw along the shorter arc:
/// psi = psi2 + sigma_psi * wrap(psi1 - psi2).
pub fn merge(
    stage: Stage,
    p1: Option<&Pose4>,
    p2: Option<&Pose4>,
    s: &SigmaSet,
) -> Result<Option<Pose4>> {
    match stage {
        Stage::None => Ok(None),
        Stage::S1 => p1
            .copied()
            .map(Some)
            .ok_or_else(|| Error::ContractViolation("stage S1 requires the large pose".into())),
        Stage::S3 => p2
            .copied()
            .map(Some)
            .ok_or_else(|| Error::ContractViolation("stage S3 requires the small pose".into())),
        Stage::S2 => {
            let (a, b) = match (p1, p2) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::ContractViolation(
                        "stage S2 requires both poses".into(),
                    ))
                }
            };
            let blend = |sigma: f64, v1: f64, v2: f64| sigma * v1 + (1.0 - sigma) * v2;
            let yaw = wrap_angle(b.yaw + s.sigma_psi * wrap_angle(a.yaw - b.yaw)?)?;
            Ok(Some(Pose4::new(
                blend(s.sigma_x, a.x, b.x),
                blend(s.sigma_y, a.y, b.y),
                blend(s.sigma_z, a.z, b.z),
                yaw,
            )))
        }
    }
}

/// Per-frame fusion: availability means the marker's filter track is live
/// (updated or coasting within its miss budget).
pub fn fuse_frame(
    large: Option<&Pose4>,
    small: Option<&Pose4>,
    large_id: u32,
    small_id: u32,
    s: &SigmaSet,
) -> Result<Option<FusedPose>> {
    let stage = select_stage(large.is_some(), small.is_some());
    let Some(pose) = merge(stage, large, small, s)? else {
        return Ok(None);
    };
    let mut sources = Vec::new();
    if large.is_some() {
        sources.push(large_id);
    }
    if small.is_some() {
        sources.push(small_id);
    }
    Ok(Some(FusedPose {
        pose,
        stage,
        sources,
    }))
}

/// Eq-style 4x8 matrix route for the stage-2 blend, used as the algebraic
/// cross-check for the componentwise implementation (valid when the yaw
/// pair does not wrap).
pub fn merge_s2_matrix(p1: &Pose4, p2: &Pose4, s: &SigmaSet) -> Pose4 {
    use nalgebra::{SMatrix, SVector};
    let mut a = SMatrix::<f64, 4, 8>::zeros();
    let sig = [s.sigma_x, s.sigma_y, s.sigma_z, s.sigma_psi];
    for (row, sv) in sig.iter().enumerate() {
        a[(row, 2 * row)] = *sv;
        a[(row, 2 * row + 1)] = 1.0 - *sv;
    }
    let stacked = SVector::<f64, 8>::from_column_slice(&[
        p1.x, p2.x, p1.y, p2.y, p1.z, p2.z, p1.yaw, p2.yaw,
    ]);
    let out = a * stacked;
    Pose4::new(out[0], out[1], out[2], out[3])
}
