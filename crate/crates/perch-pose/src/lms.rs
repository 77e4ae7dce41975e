//! Fitting of the fusion blending coefficients from paired ground-truth /
//! per-marker estimates. Two routes: the closed-form least-squares
//! minimizer of the squared-error cost, and the textbook stochastic LMS
//! iteration that converges to it.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::Intrinsics;
use crate::detector::{simulate_frame, DetectorConfig};
use crate::error::{Error, Result};
use crate::fusion::SigmaSet;
use crate::geometry::{wrap_angle, Pose4, RigidTransform};
use crate::kf::{kf_step, KfConfig, KfState, StepOutcome};
use crate::pnp::solve_marker_pose;
use crate::target::PerchingTarget;

/// One calibration observation: ground truth plus both marker estimates,
/// taken under stage-2 conditions.
#[derive(Debug, Clone, Copy)]
pub struct CalibSample {
    pub gt: Pose4,
    pub p1: Pose4,
    pub p2: Pose4,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibResult {
    pub sigma: SigmaSet,
    /// Unclamped per-axis estimates, kept for diagnostics.
    pub sigma_unclamped: [f64; 4],
    /// Residual RMS per axis (x, y, z in meters; yaw in radians).
    pub per_axis_residual_rms: [f64; 4],
    pub n_samples: usize,
    /// Axes where the two markers never disagreed; their sigma defaults
    /// to 0.5.
    pub indeterminate_axes: [bool; 4],
}

/// Per-axis regressor x = p1 - p2 and response y = gt - p2; yaw uses
/// wrapped differences.
fn axis_pairs(samples: &[CalibSample], axis: usize) -> Vec<(f64, f64)> {
    samples
        .iter()
        .map(|s| {
            let pick = |p: &Pose4| [p.x, p.y, p.z, p.yaw][axis];
            if axis == 3 {
                (
                    wrap_angle(pick(&s.p1) - pick(&s.p2)).unwrap_or(0.0),
                    wrap_angle(pick(&s.gt) - pick(&s.p2)).unwrap_or(0.0),
                )
            } else {
                (pick(&s.p1) - pick(&s.p2), pick(&s.gt) - pick(&s.p2))
            }
        })
        .collect()
}

fn build_result(samples: &[CalibSample], raw: [f64; 4], indeterminate: [bool; 4]) -> CalibResult {
    let clamped = raw.map(|v| v.clamp(0.0, 1.0));
    let mut rms = [0.0f64; 4];
    for axis in 0..4 {
        let pairs = axis_pairs(samples, axis);
        let sse: f64 = pairs
            .iter()
            .map(|(x, y)| (y - clamped[axis] * x).powi(2))
            .sum();
        rms[axis] = (sse / pairs.len() as f64).sqrt();
    }
    CalibResult {
        sigma: SigmaSet::new(clamped[0], clamped[1], clamped[2], clamped[3]),
        sigma_unclamped: raw,
        per_axis_residual_rms: rms,
        n_samples: samples.len(),
        indeterminate_axes: indeterminate,
    }
}

const DEGENERATE_POWER: f64 = 1e-12;

/// Exact per-axis least-squares minimizer of sum((gt - p2) - sigma*(p1 - p2))^2.
pub fn fit_sigma_closed_form(samples: &[CalibSample]) -> Result<CalibResult> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 calibration samples".into(),
        ));
    }
    let mut raw = [0.5f64; 4];
    let mut indeterminate = [false; 4];
    for axis in 0..4 {
        let pairs = axis_pairs(samples, axis);
        let sxx: f64 = pairs.iter().map(|(x, _)| x * x).sum();
        let sxy: f64 = pairs.iter().map(|(x, y)| x * y).sum();
        if sxx <= DEGENERATE_POWER {
            indeterminate[axis] = true;
        } else {
            raw[axis] = sxy / sxx;
        }
    }
    Ok(build_result(samples, raw, indeterminate))
}

/// Stochastic LMS iteration sigma <- sigma + mu * e * x, shuffled per
/// epoch. Diverging cost over 3 consecutive epochs aborts with a
/// step-size error.
pub fn fit_sigma_lms(
    samples: &[CalibSample],
    mu: f64,
    epochs: usize,
    seed: u64,
) -> Result<CalibResult> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 calibration samples".into(),
        ));
    }
    if mu < 0.0 {
        return Err(Error::InvalidArgument("mu must be >= 0".into()));
    }
    let mut raw = [0.5f64; 4];
    let mut indeterminate = [false; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for axis in 0..4 {
        let pairs = axis_pairs(samples, axis);
        let sxx: f64 = pairs.iter().map(|(x, _)| x * x).sum();
        if sxx <= DEGENERATE_POWER {
            indeterminate[axis] = true;
            continue;
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut sigma = 0.5f64;
        let mut prev_cost = f64::INFINITY;
        let mut rising = 0u32;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let (x, y) = pairs[i];
                let e = y - sigma * x;
                sigma += mu * e * x;
            }
            if !sigma.is_finite() {
                return Err(Error::StepSize(format!(
                    "sigma diverged to {sigma} on axis {axis}; reduce mu"
                )));
            }
            let cost: f64 =
                pairs.iter().map(|(x, y)| (y - sigma * x).powi(2)).sum::<f64>() / pairs.len() as f64;
            if cost > prev_cost {
                rising += 1;
                if rising >= 3 {
                    return Err(Error::StepSize(format!(
                        "cost increased 3 consecutive epochs on axis {axis}; reduce mu"
                    )));
                }
            } else {
                rising = 0;
            }
            prev_cost = cost;
        }
        raw[axis] = sigma;
    }
    Ok(build_result(samples, raw, indeterminate))
}

/// Geometry + pipeline inputs for a synthetic calibration run.
#[derive(Debug, Clone)]
pub struct CalibrationSetup {
    pub intrinsics: Intrinsics,
    pub target: PerchingTarget,
    pub detector: DetectorConfig,
    pub kf: KfConfig,
    pub frame_rate: f64,
    /// Distance band sampled for the hold points; should keep both
    /// markers detectable (stage 2).
    pub z_range: (f64, f64),
    pub lateral_range: f64,
    pub yaw_range: f64,
    pub seed: u64,
    /// Collect raw PnP poses instead of filtered ones.
    pub use_raw: bool,
}

#[derive(Debug)]
pub struct CalibrationRun {
    pub samples: Vec<CalibSample>,
    /// Hold points that never reached stage 2 and were skipped.
    pub skipped_points: usize,
}

/// Hold the camera at `n_points` random stage-2 poses and collect
/// (ground truth, large estimate, small estimate) triples.
pub fn collect_calibration_run(
    setup: &CalibrationSetup,
    n_points: usize,
    samples_per_point: usize,
) -> Result<CalibrationRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    let dt = 1.0 / setup.frame_rate;
    for point in 0..n_points {
        let z = if setup.z_range.1 > setup.z_range.0 {
            rng.random_range(setup.z_range.0..setup.z_range.1)
        } else {
            setup.z_range.0
        };
        let lat = setup.lateral_range;
        let (x, y) = if lat > 0.0 {
            (rng.random_range(-lat..lat), rng.random_range(-lat..lat))
        } else {
            (0.0, 0.0)
        };
        let yaw = if setup.yaw_range > 0.0 {
            rng.random_range(-setup.yaw_range..setup.yaw_range)
        } else {
            0.0
        };
        let truth = RigidTransform::from_yaw_translation(yaw, Vector3::new(x, y, z));
        let gt = Pose4::new(x, y, z, yaw);

        let mut det_cfg = setup.detector.clone();
        det_cfg.rng_seed = setup.seed ^ (point as u64).wrapping_mul(0x9e3779b97f4a7c15);
        let mut large_track: Option<KfState> = None;
        let mut small_track: Option<KfState> = None;
        let mut got_any = false;
        for frame in 0..samples_per_point {
            let t = frame as f64 * dt;
            let det_frame = simulate_frame(&truth, &setup.target, &setup.intrinsics, &det_cfg, t);
            let mut raw_large = None;
            let mut raw_small = None;
            for det in &det_frame.detections {
                let est = solve_marker_pose(det, &setup.target, &setup.intrinsics)?;
                if det.marker_id == setup.target.large.id {
                    raw_large = Some(est.pose4);
                } else {
                    raw_small = Some(est.pose4);
                }
            }
            for (track, meas) in [
                (&mut large_track, raw_large.as_ref()),
                (&mut small_track, raw_small.as_ref()),
            ] {
                *track = match kf_step(track.as_ref(), meas, t, &setup.kf)? {
                    StepOutcome::Tracking(s) => Some(s),
                    StepOutcome::TrackLost => None,
                    StepOutcome::Uninitialized => None,
                };
            }
            let (p1, p2) = if setup.use_raw {
                (raw_large, raw_small)
            } else {
                (
                    large_track.as_ref().map(|s| s.pose()),
                    small_track.as_ref().map(|s| s.pose()),
                )
            };
            if let (Some(p1), Some(p2)) = (p1, p2) {
                samples.push(CalibSample { gt, p1, p2 });
                got_any = true;
            }
        }
        if !got_any {
            skipped += 1;
        }
    }
    Ok(CalibrationRun {
        samples,
        skipped_points: skipped,
    })
}
