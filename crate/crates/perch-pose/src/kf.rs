//! Per-marker 8-state constant-velocity Kalman filter over
//! (yaw, yaw_rate, x, vx, y, vy, z, vz), with exponential velocity decay
//! while coasting through missed detections.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose4};

pub const STATE_DIM: usize = 8;
pub const MEAS_DIM: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type MeasVector = SVector<f64, MEAS_DIM>;

/// Position-entry indices in the state vector; velocities follow each.
pub const POS_IDX: [usize; 4] = [0, 2, 4, 6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KfConfig {
    /// Measurement uncertainty factor: R = k1 * I4.
    pub k1: f64,
    /// Process noise factor: Q = k2 * I8.
    pub k2: f64,
    /// Velocity diminishing factor applied per coasted frame.
    pub alpha: f64,
    /// Consecutive misses tolerated before the track is lost.
    pub n_max: u32,
    pub init_pos_var: f64,
    pub init_vel_var: f64,
}

impl KfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 <= 0.0 {
            return Err(Error::InvalidArgument("k1 must be > 0".into()));
        }
        if self.k2 < 0.0 {
            return Err(Error::InvalidArgument("k2 must be >= 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument("alpha must be in (0, 1]".into()));
        }
        if self.n_max < 1 {
            return Err(Error::InvalidArgument("n_max must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for KfConfig {
    fn default() -> Self {
        Self {
            k1: 1e-4,
            k2: 1e-5,
            alpha: 0.85,
            n_max: 8,
            init_pos_var: 1e-2,
            init_vel_var: 1e-1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfState {
    pub x: StateVector,
    pub p: StateMatrix,
    pub miss_count: u32,
    pub last_time: f64,
}

impl KfState {
    /// Filtered 4-DOF pose read off the position entries.
    pub fn pose(&self) -> Pose4 {
        Pose4::new(self.x[2], self.x[4], self.x[6], self.x[0])
    }
}

/// Outcome of advancing a filter without a measurement.
#[derive(Debug, Clone, PartialEq)]
pub enum CoastOutcome {
    Coasting(KfState),
    TrackLost,
}

/// Outcome of one dispatch step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Tracking(KfState),
    TrackLost,
    Uninitialized,
}

fn meas_from_pose(z: &Pose4) -> MeasVector {
    MeasVector::new(z.yaw, z.x, z.y, z.z)
}

fn transition(dt: f64) -> StateMatrix {
    let mut f = StateMatrix::identity();
    for &i in &POS_IDX {
        f[(i, i + 1)] = dt;
    }
    f
}

fn measurement_matrix() -> SMatrix<f64, MEAS_DIM, STATE_DIM> {
    let mut h = SMatrix::<f64, MEAS_DIM, STATE_DIM>::zeros();
    for (row, &i) in POS_IDX.iter().enumerate() {
        h[(row, i)] = 1.0;
    }
    h
}

fn symmetrize(p: &mut StateMatrix) {
    *p = (*p + p.transpose()) * 0.5;
}

/// Initialize a track from a first measurement: positions from the
/// measurement, velocities zero, diagonal covariance.
pub fn kf_init(z: &Pose4, cfg: &KfConfig, t: f64) -> Result<KfState> {
    if !z.is_finite() {
        return Err(Error::InvalidArgument("non-finite measurement".into()));
    }
    let mut x = StateVector::zeros();
    let m = meas_from_pose(z);
    for (row, &i) in POS_IDX.iter().enumerate() {
        x[i] = m[row];
    }
    x[0] = wrap_angle(x[0])?;
    let mut p = StateMatrix::zeros();
    for &i in &POS_IDX {
        p[(i, i)] = cfg.init_pos_var;
        p[(i + 1, i + 1)] = cfg.init_vel_var;
    }
    Ok(KfState {
        x,
        p,
        miss_count: 0,
        last_time: t,
    })
}

/// Constant-velocity prediction: x <- F x, P <- F P F^T + Q.
pub fn kf_predict(s: &KfState, dt: f64, cfg: &KfConfig) -> Result<KfState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let f = transition(dt);
    let mut x = f * s.x;
    x[0] = wrap_angle(x[0])?;
    let mut p = f * s.p * f.transpose() + StateMatrix::identity() * cfg.k2;
    symmetrize(&mut p);
    Ok(KfState {
        x,
        p,
        miss_count: s.miss_count,
        last_time: s.last_time + dt,
    })
}

/// Measurement update with R = k1 * I4, Joseph-form covariance, and the
/// yaw innovation wrapped before the gain is applied.
pub fn kf_update(s: &KfState, z: &Pose4, cfg: &KfConfig) -> Result<KfState> {
    if !z.is_finite() {
        return Err(Error::InvalidArgument("non-finite measurement".into()));
    }
    let h = measurement_matrix();
    let r = SMatrix::<f64, MEAS_DIM, MEAS_DIM>::identity() * cfg.k1;
    let mut innovation = meas_from_pose(z) - h * s.x;
    innovation[0] = wrap_angle(innovation[0])?;
    let s_mat = h * s.p * h.transpose() + r;
    let s_inv = s_mat
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
    let gain = s.p * h.transpose() * s_inv;
    let mut x = s.x + gain * innovation;
    x[0] = wrap_angle(x[0])?;
    let i_kh = StateMatrix::identity() - gain * h;
    let mut p = i_kh * s.p * i_kh.transpose() + gain * r * gain.transpose();
    symmetrize(&mut p);
    Ok(KfState {
        x,
        p,
        miss_count: 0,
        last_time: s.last_time,
    })
}

/// Missed-detection step: predict with the pre-decay velocity, then damp
/// every velocity entry by `alpha`. Returns `TrackLost` once the miss
/// count would exceed `n_max`.
pub fn kf_coast(s: &KfState, dt: f64, cfg: &KfConfig) -> Result<CoastOutcome> {
    if s.miss_count >= cfg.n_max {
        return Ok(CoastOutcome::TrackLost);
    }
    let mut next = kf_predict(s, dt, cfg)?;
    for &i in &POS_IDX {
        next.x[i + 1] *= cfg.alpha;
    }
    next.miss_count = s.miss_count + 1;
    Ok(CoastOutcome::Coasting(next))
}

/// One pipeline step: init on the first measurement, predict + update when
/// a measurement is present, coast when it is absent.
pub fn kf_step(
    s: Option<&KfState>,
    z: Option<&Pose4>,
    t: f64,
    cfg: &KfConfig,
) -> Result<StepOutcome> {
    match (s, z) {
        (None, None) => Ok(StepOutcome::Uninitialized),
        (None, Some(z)) => Ok(StepOutcome::Tracking(kf_init(z, cfg, t)?)),
        (Some(s), Some(z)) => {
            let dt = t - s.last_time;
            if !(dt > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "timestamps must increase (last {}, now {t})",
                    s.last_time
                )));
            }
            let pred = kf_predict(s, dt, cfg)?;
            Ok(StepOutcome::Tracking(kf_update(&pred, z, cfg)?))
        }
        (Some(s), None) => {
            let dt = t - s.last_time;
            if !(dt > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "timestamps must increase (last {}, now {t})",
                    s.last_time
                )));
            }
            match kf_coast(s, dt, cfg)? {
                CoastOutcome::Coasting(next) => Ok(StepOutcome::Tracking(next)),
                CoastOutcome::TrackLost => Ok(StepOutcome::TrackLost),
            }
        }
    }
}

/// Smallest eigenvalue of the covariance (symmetric part).
pub fn min_covariance_eigenvalue(p: &StateMatrix) -> f64 {
    let sym = (p + p.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
