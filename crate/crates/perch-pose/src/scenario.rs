//! Scenario configuration, trajectory generation, end-to-end pipeline
//! execution and metrics.
//!
//! Config poses are meters/radians; the frames.csv and metrics outputs
//! report centimeters and degrees.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::detector::{simulate_frame, DetectorConfig};
use crate::error::{Error, Result};
use crate::fusion::{fuse_frame, SigmaSet, Stage};
use crate::geometry::{wrap_angle, Pose4, RigidTransform};
use crate::kf::{kf_step, KfConfig, KfState, StepOutcome};
use crate::pnp::solve_marker_pose;
use crate::target::PerchingTarget;

fn default_frame_rate() -> f64 {
    30.0
}

fn default_duration() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Constant pose for the whole run.
    Hold { pose: Pose4 },
    /// Linear interpolation of position, yaw along the shorter arc.
    LinearApproach { start: Pose4, end: Pose4 },
    /// Dwell at each waypoint in order; total duration is the dwell sum.
    WaypointSequence { waypoints: Vec<Waypoint> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub pose: Pose4,
    /// Dwell time at this waypoint, seconds.
    pub dwell: f64,
}

/// Forced detector blackout (all markers lost) over a frame window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blackout {
    pub start_frame: usize,
    pub num_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub intrinsics: Intrinsics,
    #[serde(default)]
    pub target: PerchingTarget,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub kf: KfConfig,
    #[serde(default)]
    pub sigma: SigmaSet,
    pub trajectory: TrajectorySpec,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub blackout: Option<Blackout>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

/// Knobs for the `calibrate` subcommand's synthetic data collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub n_points: usize,
    pub samples_per_point: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub lateral_range: f64,
    pub yaw_range: f64,
    /// Fit on raw PnP poses instead of filtered tracks.
    pub use_raw: bool,
    /// LMS step size and epochs (the closed form needs neither).
    pub mu: f64,
    pub epochs: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_points: 10,
            samples_per_point: 100,
            z_min: 0.16,
            z_max: 0.24,
            lateral_range: 0.01,
            yaw_range: 0.3,
            use_raw: false,
            mu: 0.5,
            epochs: 300,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, e: Error| Error::Config {
            path: path.into(),
            message: e.to_string(),
        };
        self.intrinsics
            .validate()
            .map_err(|e| field("intrinsics", e))?;
        self.target.validate().map_err(|e| field("target", e))?;
        self.detector.validate().map_err(|e| field("detector", e))?;
        self.kf.validate().map_err(|e| field("kf", e))?;
        self.sigma.validate().map_err(|e| field("sigma", e))?;
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config {
                path: "frame_rate".into(),
                message: "must be > 0".into(),
            });
        }
        if !(self.duration > 0.0) {
            return Err(Error::Config {
                path: "duration".into(),
                message: "must be > 0".into(),
            });
        }
        match &self.trajectory {
            TrajectorySpec::Hold { pose } => {
                if pose.z <= 0.0 {
                    return Err(Error::Config {
                        path: "trajectory.pose.z".into(),
                        message: "target must be in front of the camera".into(),
                    });
                }
            }
            TrajectorySpec::LinearApproach { start, end } => {
                if start.z <= 0.0 || end.z <= 0.0 {
                    return Err(Error::Config {
                        path: "trajectory".into(),
                        message: "target must stay in front of the camera".into(),
                    });
                }
                if end.z >= start.z {
                    return Err(Error::Config {
                        path: "trajectory".into(),
                        message: "linear_approach must decrease z".into(),
                    });
                }
            }
            TrajectorySpec::WaypointSequence { waypoints } => {
                if waypoints.is_empty() {
                    return Err(Error::Config {
                        path: "trajectory.waypoints".into(),
                        message: "at least one waypoint required".into(),
                    });
                }
                for (i, w) in waypoints.iter().enumerate() {
                    if w.pose.z <= 0.0 {
                        return Err(Error::Config {
                            path: format!("trajectory.waypoints[{i}].pose.z"),
                            message: "target must be in front of the camera".into(),
                        });
                    }
                    if !(w.dwell > 0.0) {
                        return Err(Error::Config {
                            path: format!("trajectory.waypoints[{i}].dwell"),
                            message: "dwell must be > 0".into(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn pose_to_transform(p: &Pose4) -> RigidTransform {
    RigidTransform::from_yaw_translation(p.yaw, Vector3::new(p.x, p.y, p.z))
}

/// Evenly timestamped camera<-target transforms for the given spec.
pub fn generate_trajectory(
    spec: &TrajectorySpec,
    frame_rate: f64,
    duration: f64,
) -> Result<Vec<(f64, RigidTransform)>> {
    if !(frame_rate > 0.0) {
        return Err(Error::Config {
            path: "frame_rate".into(),
            message: "must be > 0".into(),
        });
    }
    let dt = 1.0 / frame_rate;
    match spec {
        TrajectorySpec::Hold { pose } => {
            let n = (duration * frame_rate).round() as usize;
            let tf = pose_to_transform(pose);
            Ok((0..n).map(|i| (i as f64 * dt, tf)).collect())
        }
        TrajectorySpec::LinearApproach { start, end } => {
            let n = (duration * frame_rate).round() as usize;
            let dyaw = wrap_angle(end.yaw - start.yaw)?;
            Ok((0..n)
                .map(|i| {
                    let t = i as f64 * dt;
                    let s = if n > 1 { t / duration } else { 0.0 };
                    let p = Pose4::new(
                        start.x + s * (end.x - start.x),
                        start.y + s * (end.y - start.y),
                        start.z + s * (end.z - start.z),
                        wrap_angle(start.yaw + s * dyaw).unwrap(),
                    );
                    (t, pose_to_transform(&p))
                })
                .collect())
        }
        TrajectorySpec::WaypointSequence { waypoints } => {
            let mut frames = Vec::new();
            let mut t = 0.0;
            for w in waypoints {
                let n = (w.dwell * frame_rate).round() as usize;
                let tf = pose_to_transform(&w.pose);
                for _ in 0..n {
                    frames.push((t, tf));
                    t += dt;
                }
            }
            Ok(frames)
        }
    }
}

/// One row of the frame log. Poses in meters/radians internally.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub t: f64,
    pub truth: Pose4,
    pub raw_large: Option<Pose4>,
    pub raw_small: Option<Pose4>,
    pub filt_large: Option<Pose4>,
    pub filt_small: Option<Pose4>,
    pub miss_large: Option<u32>,
    pub miss_small: Option<u32>,
    pub stage: Stage,
    pub fused: Option<Pose4>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    /// Peak-to-peak fused-minus-truth error, centimeters (x, y, z).
    pub peak_to_peak_cm: [f64; 3],
    /// Peak-to-peak yaw error, degrees.
    pub peak_to_peak_yaw_deg: f64,
    /// RMSE, centimeters (x, y, z).
    pub rmse_cm: [f64; 3],
    pub rmse_yaw_deg: f64,
    /// Fraction of frames spent in each regime (S1, S2, S3, none).
    pub stage_occupancy: [f64; 4],
    /// Frames where a live track was coasting while fused output existed.
    pub dropout_bridge_frames: usize,
    pub track_lost_count: usize,
    pub frames_total: usize,
    pub frames_with_output: usize,
}

/// Metrics over the frames that produced fused output.
pub fn compute_metrics(log: &[FrameRecord]) -> Result<RunMetrics> {
    if log.is_empty() {
        return Err(Error::EmptyInput("frame log is empty".into()));
    }
    let mut errs: Vec<[f64; 4]> = Vec::new();
    let mut occupancy = [0usize; 4];
    let mut bridge = 0usize;
    for rec in log {
        let slot = match rec.stage {
            Stage::S1 => 0,
            Stage::S2 => 1,
            Stage::S3 => 2,
            Stage::None => 3,
        };
        occupancy[slot] += 1;
        if let Some(f) = &rec.fused {
            errs.push([
                f.x - rec.truth.x,
                f.y - rec.truth.y,
                f.z - rec.truth.z,
                wrap_angle(f.yaw - rec.truth.yaw)?,
            ]);
            let coasting = rec.miss_large.map_or(false, |m| m > 0)
                || rec.miss_small.map_or(false, |m| m > 0);
            if coasting {
                bridge += 1;
            }
        }
    }
    let n = errs.len();
    let mut p2p = [0.0f64; 4];
    let mut rmse = [0.0f64; 4];
    if n > 0 {
        for axis in 0..4 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut sq = 0.0;
            for e in &errs {
                lo = lo.min(e[axis]);
                hi = hi.max(e[axis]);
                sq += e[axis] * e[axis];
            }
            p2p[axis] = hi - lo;
            rmse[axis] = (sq / n as f64).sqrt();
        }
    }
    let total = log.len() as f64;
    Ok(RunMetrics {
        peak_to_peak_cm: [p2p[0] * 100.0, p2p[1] * 100.0, p2p[2] * 100.0],
        peak_to_peak_yaw_deg: p2p[3].to_degrees(),
        rmse_cm: [rmse[0] * 100.0, rmse[1] * 100.0, rmse[2] * 100.0],
        rmse_yaw_deg: rmse[3].to_degrees(),
        stage_occupancy: occupancy.map(|c| c as f64 / total),
        dropout_bridge_frames: bridge,
        track_lost_count: 0, // filled by run_scenario
        frames_total: log.len(),
        frames_with_output: n,
    })
}

/// Execute the full per-frame pipeline: simulate detections, solve marker
/// poses, filter per marker, fuse. Deterministic for a fixed config.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(Vec<FrameRecord>, RunMetrics)> {
    cfg.validate()?;
    let trajectory = generate_trajectory(&cfg.trajectory, cfg.frame_rate, cfg.duration)?;
    let mut detector = cfg.detector.clone();
    detector.rng_seed = detector.rng_seed ^ cfg.seed;

    let mut log = Vec::with_capacity(trajectory.len());
    let mut large_track: Option<KfState> = None;
    let mut small_track: Option<KfState> = None;
    let mut lost_events = 0usize;

    for (idx, (t, truth_tf)) in trajectory.iter().enumerate() {
        let blacked_out = cfg
            .blackout
            .map_or(false, |b| idx >= b.start_frame && idx < b.start_frame + b.num_frames);
        let frame = if blacked_out {
            crate::detector::DetectionFrame {
                timestamp: *t,
                detections: Vec::new(),
            }
        } else {
            simulate_frame(truth_tf, &cfg.target, &cfg.intrinsics, &detector, *t)
        };

        let mut raw_large = None;
        let mut raw_small = None;
        for det in &frame.detections {
            let est = solve_marker_pose(det, &cfg.target, &cfg.intrinsics)?;
            if det.marker_id == cfg.target.large.id {
                raw_large = Some(est.pose4);
            } else {
                raw_small = Some(est.pose4);
            }
        }

        for (track, meas) in [
            (&mut large_track, raw_large.as_ref()),
            (&mut small_track, raw_small.as_ref()),
        ] {
            *track = match kf_step(track.as_ref(), meas, *t, &cfg.kf)? {
                StepOutcome::Tracking(s) => Some(s),
                StepOutcome::TrackLost => {
                    lost_events += 1;
                    None
                }
                StepOutcome::Uninitialized => None,
            };
        }

        let filt_large = large_track.as_ref().map(|s| s.pose());
        let filt_small = small_track.as_ref().map(|s| s.pose());
        let fused = fuse_frame(
            filt_large.as_ref(),
            filt_small.as_ref(),
            cfg.target.large.id,
            cfg.target.small.id,
            &cfg.sigma,
        )?;
        let (stage, fused_pose) = match fused {
            Some(f) => (f.stage, Some(f.pose)),
            None => (Stage::None, None),
        };
        let truth_pose = Pose4::new(
            truth_tf.translation.x,
            truth_tf.translation.y,
            truth_tf.translation.z,
            crate::geometry::yaw_from_rotation(&truth_tf.rotation)?,
        );
        log.push(FrameRecord {
            t: *t,
            truth: truth_pose,
            raw_large,
            raw_small,
            filt_large,
            filt_small,
            miss_large: large_track.as_ref().map(|s| s.miss_count),
            miss_small: small_track.as_ref().map(|s| s.miss_count),
            stage,
            fused: fused_pose,
        });
    }

    let mut metrics = compute_metrics(&log)?;
    metrics.track_lost_count = lost_events;
    Ok((log, metrics))
}

const CSV_HEADER: &str = "t,truth_x_cm,truth_y_cm,truth_z_cm,truth_psi_deg,\
m1_raw_x_cm,m1_raw_y_cm,m1_raw_z_cm,m1_raw_psi_deg,\
m2_raw_x_cm,m2_raw_y_cm,m2_raw_z_cm,m2_raw_psi_deg,\
m1_filt_x_cm,m1_filt_y_cm,m1_filt_z_cm,m1_filt_psi_deg,\
m2_filt_x_cm,m2_filt_y_cm,m2_filt_z_cm,m2_filt_psi_deg,\
m1_miss,m2_miss,stage,\
fused_x_cm,fused_y_cm,fused_z_cm,fused_psi_deg";

fn pose_cells(p: Option<&Pose4>) -> String {
    match p {
        // 9 decimals in cm/deg so metrics recomputed from the CSV agree
        // with metrics.json to 1e-9
        Some(p) => format!(
            "{:.9},{:.9},{:.9},{:.9}",
            p.x * 100.0,
            p.y * 100.0,
            p.z * 100.0,
            p.yaw.to_degrees()
        ),
        None => ",,,".to_string(),
    }
}

/// Render the frame log as CSV (centimeters / degrees).
pub fn frames_to_csv(log: &[FrameRecord]) -> String {
    let mut out = String::with_capacity(log.len() * 160 + CSV_HEADER.len());
    out.push_str(CSV_HEADER);
    out.push('\n');
    for rec in log {
        out.push_str(&format!(
            "{:.6},{},{},{},{},{},{},{},{},{}\n",
            rec.t,
            pose_cells(Some(&rec.truth)),
            pose_cells(rec.raw_large.as_ref()),
            pose_cells(rec.raw_small.as_ref()),
            pose_cells(rec.filt_large.as_ref()),
            pose_cells(rec.filt_small.as_ref()),
            rec.miss_large.map_or(String::new(), |m| m.to_string()),
            rec.miss_small.map_or(String::new(), |m| m.to_string()),
            rec.stage.label(),
            pose_cells(rec.fused.as_ref()),
        ));
    }
    out
}
