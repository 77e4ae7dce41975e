//! Browser bindings for the pose-estimation pipeline demo page.
//!
//! Three entry points back the interactive page in `www/`: a full
//! approach-scenario run, detection-threshold calibration, and blend-weight
//! fitting on synthetic data. Everything crosses the boundary as JSON
//! strings to keep the JS side dependency-free.

use perch_pose::camera::Intrinsics;
use perch_pose::detector::{calibrate_thresholds, DetectorConfig};
use perch_pose::fusion::SigmaSet;
use perch_pose::geometry::Pose4;
use perch_pose::kf::KfConfig;
use perch_pose::lms::{fit_sigma_closed_form, collect_calibration_run, CalibrationSetup};
use perch_pose::scenario::{run_scenario, CalibrationConfig, ScenarioConfig, TrajectorySpec};
use perch_pose::target::default_target;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct FramePoint {
    t: f64,
    truth_z_cm: f64,
    fused_z_cm: f64,
    err_x_cm: Option<f64>,
    err_y_cm: Option<f64>,
    err_z_cm: Option<f64>,
    err_yaw_deg: Option<f64>,
    stage: &'static str,
    coasting: bool,
}

#[derive(Serialize)]
struct ApproachResult {
    frames: Vec<FramePoint>,
    metrics: serde_json::Value,
}

fn err_json(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Simulate a straight approach from `z_start` to `z_end` meters and return
/// the per-frame truth/fused poses plus run metrics as JSON.
#[wasm_bindgen]
pub fn run_approach(
    z_start: f64,
    z_end: f64,
    duration_s: f64,
    noise_px: f64,
    dropout: f64,
    seed: u32,
) -> Result<String, JsValue> {
    let cfg = ScenarioConfig {
        intrinsics: Intrinsics::default(),
        target: default_target(),
        detector: DetectorConfig {
            corner_noise_sigma: noise_px,
            dropout_prob: dropout,
            ..DetectorConfig::default()
        },
        kf: KfConfig::default(),
        sigma: SigmaSet::default(),
        trajectory: TrajectorySpec::LinearApproach {
            start: Pose4::new(0.0, 0.0, z_start, 0.0),
            end: Pose4::new(0.0, 0.0, z_end, 0.0),
        },
        duration: duration_s,
        frame_rate: 30.0,
        seed: seed as u64,
        blackout: None,
        calibration: CalibrationConfig::default(),
    };
    cfg.validate().map_err(err_json)?;
    let (log, metrics) = run_scenario(&cfg).map_err(err_json)?;
    let frames = log
        .iter()
        .map(|f| FramePoint {
            t: f.t,
            truth_z_cm: f.truth.z * 100.0,
            fused_z_cm: f.fused.map(|p| p.z * 100.0).unwrap_or(f64::NAN),
            err_x_cm: f.fused.map(|p| (p.x - f.truth.x) * 100.0),
            err_y_cm: f.fused.map(|p| (p.y - f.truth.y) * 100.0),
            err_z_cm: f.fused.map(|p| (p.z - f.truth.z) * 100.0),
            err_yaw_deg: f.fused.map(|p| (p.yaw - f.truth.yaw).to_degrees()),
            stage: f.stage.label(),
            coasting: f.miss_large.map(|m| m > 0).unwrap_or(false)
                || f.miss_small.map(|m| m > 0).unwrap_or(false),
        })
        .collect();
    let out = ApproachResult {
        frames,
        metrics: serde_json::to_value(&metrics).map_err(err_json)?,
    };
    serde_json::to_string(&out).map_err(err_json)
}

/// Fit per-marker visibility thresholds so detection onsets land at the
/// requested distances; returns the thresholds and the emergent close-range
/// handover distance as JSON.
#[wasm_bindgen]
pub fn fit_thresholds(fx: f64, z1: f64, z2: f64) -> Result<String, JsValue> {
    let k = Intrinsics {
        fx,
        fy: fx,
        ..Intrinsics::default()
    };
    let cal = calibrate_thresholds(&k, &default_target(), z1, z2).map_err(err_json)?;
    serde_json::to_string(&cal).map_err(err_json)
}

/// Collect synthetic stage-2 estimates at the given corner noise and fit
/// the per-axis blending weights; returns the fit result as JSON.
#[wasm_bindgen]
pub fn fit_blend_weights(noise_px: f64, n_points: u32, seed: u32) -> Result<String, JsValue> {
    let setup = CalibrationSetup {
        intrinsics: Intrinsics::default(),
        target: default_target(),
        detector: DetectorConfig {
            corner_noise_sigma: noise_px,
            dropout_prob: 0.0,
            ..DetectorConfig::default()
        },
        kf: KfConfig::default(),
        frame_rate: 30.0,
        z_range: (0.16, 0.24),
        lateral_range: 0.01,
        yaw_range: 0.3,
        seed: seed as u64,
        use_raw: false,
    };
    let run = collect_calibration_run(&setup, n_points as usize, 60).map_err(err_json)?;
    let result = fit_sigma_closed_form(&run.samples).map_err(err_json)?;
    serde_json::to_string(&result).map_err(err_json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn approach_json_parses() {
        let json = run_approach(1.3, 0.05, 5.0, 0.3, 0.02, 42).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["frames"].as_array().unwrap().len(), 150);
        assert!(v["metrics"]["frames_total"].as_u64().unwrap() == 150);
    }

    #[test]
    fn thresholds_json_parses() {
        let json = fit_thresholds(460.0, 1.15, 0.25).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let z3 = v["large_fov_loss_z"].as_f64().unwrap();
        assert!(z3 > 0.10 && z3 < 0.20);
    }

    #[test]
    fn blend_fit_json_parses() {
        let json = fit_blend_weights(0.4, 4, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["sigma"]["sigma_x"].is_number());
    }
}
