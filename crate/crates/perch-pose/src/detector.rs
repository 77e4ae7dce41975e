//! Detection simulator standing in for the camera + marker detector.
//!
//! Visibility is modeled with two interpretable gates per marker: full
//! corner containment in the image and a minimum mean apparent side in
//! pixels. Detected corners carry additive Gaussian pixel noise, and each
//! marker survives an independent per-frame Bernoulli dropout draw.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::{in_field_of_view, project, Intrinsics, PixelPoint};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::target::{MarkerSpec, PerchingTarget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub marker_id: u32,
    pub corners: [PixelPoint; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub timestamp: f64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Gaussian corner noise, pixels, per coordinate.
    pub corner_noise_sigma: f64,
    /// Probability of losing a visible marker, per marker per frame.
    pub dropout_prob: f64,
    /// Smallest detectable mean apparent side, pixels.
    pub min_side_px: f64,
    /// Per-marker overrides of `min_side_px`, keyed by marker id.
    #[serde(default)]
    pub per_marker_min_side_px: BTreeMap<u32, f64>,
    pub require_full_fov: bool,
    pub rng_seed: u64,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.corner_noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("corner_noise_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidArgument("dropout_prob must be in [0, 1)".into()));
        }
        if self.min_side_px <= 0.0 {
            return Err(Error::InvalidArgument("min_side_px must be > 0".into()));
        }
        Ok(())
    }

    pub fn min_side_for(&self, marker_id: u32) -> f64 {
        self.per_marker_min_side_px
            .get(&marker_id)
            .copied()
            .unwrap_or(self.min_side_px)
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            corner_noise_sigma: 0.0,
            dropout_prob: 0.0,
            min_side_px: 20.0,
            per_marker_min_side_px: BTreeMap::new(),
            require_full_fov: true,
            rng_seed: 0,
        }
    }
}

/// Result of fitting visibility thresholds to target onset distances.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdCalibration {
    pub config: DetectorConfig,
    pub large_min_side_px: f64,
    pub small_min_side_px: f64,
    /// Distance at which the large marker leaves the field of view on a
    /// centered fronto-parallel approach (emergent close-range handover).
    pub large_fov_loss_z: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Per-marker RNG stream derived from (seed, timestamp, marker id), so
/// frame contents do not depend on marker iteration order.
fn marker_rng(seed: u64, t: f64, marker_id: u32) -> ChaCha8Rng {
    let mixed = splitmix64(seed ^ splitmix64(t.to_bits() ^ splitmix64(marker_id as u64)));
    ChaCha8Rng::seed_from_u64(mixed)
}

fn mean_side_px(corners: &[PixelPoint; 4]) -> f64 {
    let mut total = 0.0;
    for i in 0..4 {
        let a = &corners[i];
        let b = &corners[(i + 1) % 4];
        total += ((a.u - b.u).powi(2) + (a.v - b.v).powi(2)).sqrt();
    }
    total / 4.0
}

fn project_marker(
    true_pose: &RigidTransform,
    marker: &MarkerSpec,
    k: &Intrinsics,
) -> Option<[PixelPoint; 4]> {
    let mut out = [PixelPoint::new(0.0, 0.0); 4];
    for (i, p) in marker.corner_points().iter().enumerate() {
        match project(&true_pose.transform_point(p), k) {
            Ok(px) => out[i] = px,
            Err(_) => return None,
        }
    }
    Some(out)
}

/// Simulate one detector frame for the given true camera<-target pose.
pub fn simulate_frame(
    true_pose: &RigidTransform,
    target: &PerchingTarget,
    k: &Intrinsics,
    cfg: &DetectorConfig,
    t: f64,
) -> DetectionFrame {
    let mut detections = Vec::new();
    for marker in [&target.large, &target.small] {
        let Some(exact) = project_marker(true_pose, marker, k) else {
            continue;
        };
        if cfg.require_full_fov && !exact.iter().all(|px| in_field_of_view(px, k)) {
            continue;
        }
        if mean_side_px(&exact) < cfg.min_side_for(marker.id) {
            continue;
        }
        let mut rng = marker_rng(cfg.rng_seed, t, marker.id);
        // dropout draw comes first so the noise stream is stable
        if rng.random::<f64>() < cfg.dropout_prob {
            continue;
        }
        let mut corners = exact;
        if cfg.corner_noise_sigma > 0.0 {
            for px in &mut corners {
                let du: f64 = rng.sample(StandardNormal);
                let dv: f64 = rng.sample(StandardNormal);
                px.u += cfg.corner_noise_sigma * du;
                px.v += cfg.corner_noise_sigma * dv;
            }
        }
        detections.push(Detection {
            marker_id: marker.id,
            corners,
        });
    }
    DetectionFrame {
        timestamp: t,
        detections,
    }
}

/// Mean apparent side (px) of a marker seen fronto-parallel and centered
/// at distance `z`.
pub fn fronto_parallel_side_px(marker: &MarkerSpec, k: &Intrinsics, z: f64) -> f64 {
    let pose = RigidTransform::new(
        nalgebra::Matrix3::identity(),
        Vector3::new(0.0, 0.0, z),
    );
    let corners = project_marker(&pose, marker, k).expect("marker in front of camera");
    mean_side_px(&corners)
}

/// Distance at which a centered fronto-parallel marker first loses a
/// corner outside the image.
fn fov_loss_distance(marker: &MarkerSpec, k: &Intrinsics) -> f64 {
    let h = marker.side / 2.0;
    // corner at (+-h, +-h, z): out of image when the offset exceeds the
    // margin to the nearest border (ignoring distortion)
    let margins = [
        k.fx * h / k.cx,
        k.fx * h / (k.width as f64 - k.cx),
        k.fy * h / k.cy,
        k.fy * h / (k.height as f64 - k.cy),
    ];
    margins.iter().cloned().fold(0.0f64, f64::max)
}

/// Fit per-marker minimum-side thresholds so the large marker's detection
/// onset lands at `z1` and the small marker's at `z2`.
pub fn calibrate_thresholds(
    k: &Intrinsics,
    target: &PerchingTarget,
    z1: f64,
    z2: f64,
) -> Result<ThresholdCalibration> {
    if !(z1 > z2 && z2 > 0.0) {
        return Err(Error::Calibration(format!(
            "need z1 > z2 > 0, got z1 = {z1}, z2 = {z2}"
        )));
    }
    let large_loss = fov_loss_distance(&target.large, k);
    if large_loss >= z1 {
        return Err(Error::Calibration(format!(
            "large marker does not fit the image at z1 = {z1} m; it is fully \
             visible only beyond {large_loss:.3} m"
        )));
    }
    let small_loss = fov_loss_distance(&target.small, k);
    if small_loss >= z2 {
        return Err(Error::Calibration(format!(
            "small marker does not fit the image at z2 = {z2} m; it is fully \
             visible only beyond {small_loss:.3} m"
        )));
    }
    let large_min = fronto_parallel_side_px(&target.large, k, z1);
    let small_min = fronto_parallel_side_px(&target.small, k, z2);
    let mut per_marker = BTreeMap::new();
    per_marker.insert(target.large.id, large_min);
    per_marker.insert(target.small.id, small_min);
    let config = DetectorConfig {
        per_marker_min_side_px: per_marker,
        min_side_px: small_min.min(large_min),
        ..DetectorConfig::default()
    };
    Ok(ThresholdCalibration {
        config,
        large_min_side_px: large_min,
        small_min_side_px: small_min,
        large_fov_loss_z: large_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::default_target;
    use nalgebra::Matrix3;

    fn pose_at(z: f64) -> RigidTransform {
        RigidTransform::new(Matrix3::identity(), Vector3::new(0.0, 0.0, z))
    }

    #[test]
    fn visibility_over_distance_with_defaults() {
        let k = Intrinsics::default();
        let target = default_target();
        let cfg = DetectorConfig::default();

        // far: only the large marker clears the 20 px side gate
        let far = simulate_frame(&pose_at(1.50), &target, &k, &cfg, 0.0);
        assert_eq!(
            far.detections.iter().map(|d| d.marker_id).collect::<Vec<_>>(),
            vec![997]
        );

        // close: both visible
        let mid = simulate_frame(&pose_at(0.20), &target, &k, &cfg, 0.0);
        let ids: Vec<u32> = mid.detections.iter().map(|d| d.marker_id).collect();
        assert_eq!(ids, vec![997, 5]);

        // very close: large marker corners leave the 640x480 frame
        let near = simulate_frame(&pose_at(0.10), &target, &k, &cfg, 0.0);
        assert_eq!(
            near.detections.iter().map(|d| d.marker_id).collect::<Vec<_>>(),
            vec![5]
        );
    }

    #[test]
    fn certain_dropout_gives_empty_frames() {
        let k = Intrinsics::default();
        // validate() caps dropout below 1, but the simulator itself treats
        // p = 1 as certain loss (uniform draws live in [0, 1))
        let cfg = DetectorConfig {
            dropout_prob: 1.0,
            ..DetectorConfig::default()
        };
        for i in 0..50 {
            let f = simulate_frame(&pose_at(0.3), &default_target(), &k, &cfg, i as f64 / 30.0);
            assert!(f.detections.is_empty());
        }
    }

    #[test]
    fn camera_behind_plane_is_empty_not_error() {
        let k = Intrinsics::default();
        let f = simulate_frame(&pose_at(-0.5), &default_target(), &k, &DetectorConfig::default(), 0.0);
        assert!(f.detections.is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let k = Intrinsics::default();
        let cfg = DetectorConfig {
            corner_noise_sigma: 0.8,
            dropout_prob: 0.3,
            rng_seed: 1234,
            ..DetectorConfig::default()
        };
        let a = simulate_frame(&pose_at(0.4), &default_target(), &k, &cfg, 0.7);
        let b = simulate_frame(&pose_at(0.4), &default_target(), &k, &cfg, 0.7);
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_corners_are_exact_projections() {
        let k = Intrinsics::default();
        let target = default_target();
        let pose = pose_at(0.35);
        let f = simulate_frame(&pose, &target, &k, &DetectorConfig::default(), 0.0);
        for det in &f.detections {
            let marker = target.marker_by_id(det.marker_id).unwrap();
            for (px, obj) in det.corners.iter().zip(marker.corner_points()) {
                let exact = project(&pose.transform_point(&obj), &k).unwrap();
                assert!((px.u - exact.u).abs() < 1e-12);
                assert!((px.v - exact.v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn monotonic_visibility_interval() {
        let k = Intrinsics::default();
        let target = default_target();
        let cfg = DetectorConfig::default();
        for marker_id in [997u32, 5] {
            let mut states = Vec::new();
            let mut z = 0.02;
            while z < 2.0 {
                let f = simulate_frame(&pose_at(z), &target, &k, &cfg, 0.0);
                states.push(f.detections.iter().any(|d| d.marker_id == marker_id));
                z += 0.005;
            }
            // visibility must be a single contiguous run of `true`
            let transitions = states.windows(2).filter(|w| w[0] != w[1]).count();
            assert!(transitions <= 2, "marker {marker_id}: {transitions} transitions");
        }
    }

    #[test]
    fn threshold_calibration_matches_closed_form() {
        let k = Intrinsics::default();
        let target = default_target();
        let cal = calibrate_thresholds(&k, &target, 1.15, 0.25).unwrap();
        // fronto-parallel apparent side is (fx + fy)/2 * side / z
        assert!((cal.large_min_side_px - 460.0 * 0.150 / 1.15).abs() < 1e-9);
        assert!((cal.small_min_side_px - 460.0 * 0.025 / 0.25).abs() < 1e-9);
        assert!(cal.large_fov_loss_z > 0.10 && cal.large_fov_loss_z < 0.20);
    }

    #[test]
    fn degenerate_ranges_rejected() {
        let k = Intrinsics::default();
        let target = default_target();
        assert!(matches!(
            calibrate_thresholds(&k, &target, 0.25, 0.25),
            Err(Error::Calibration(_))
        ));
        // z1 inside the large marker's FOV-loss range is unachievable
        assert!(calibrate_thresholds(&k, &target, 0.12, 0.05).is_err());
    }

    #[test]
    fn calibrated_boundary_behaviour() {
        let k = Intrinsics::default();
        let target = default_target();
        let cal = calibrate_thresholds(&k, &target, 1.15, 0.25).unwrap();
        let eps = 1e-4;
        let at = |z: f64| {
            simulate_frame(&pose_at(z), &target, &k, &cal.config, 0.0)
                .detections
                .iter()
                .map(|d| d.marker_id)
                .collect::<Vec<_>>()
        };
        assert!(at(1.15 - eps).contains(&997));
        assert!(!at(1.15 + eps).contains(&997));
        assert!(at(0.25 - eps).contains(&5));
        assert!(!at(0.25 + eps).contains(&5));
    }
}
