//! Pinhole camera with optional two-term radial distortion.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. `dist` holds the radial coefficients (k1, k2);
/// zero means an undistorted lens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub dist: [f64; 2],
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        if !(0.0..=self.width as f64).contains(&self.cx)
            || !(0.0..=self.height as f64).contains(&self.cy)
        {
            return Err(Error::InvalidArgument(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }
}

impl Default for Intrinsics {
    /// 640x480 FPV-style geometry used by the stock scenarios.
    fn default() -> Self {
        Self {
            fx: 460.0,
            fy: 460.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            dist: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

fn distort(x: f64, y: f64, k: &Intrinsics) -> (f64, f64) {
    let r2 = x * x + y * y;
    let d = 1.0 + k.dist[0] * r2 + k.dist[1] * r2 * r2;
    (x * d, y * d)
}

/// Project a camera-frame point to pixel coordinates.
pub fn project(p: &Vector3<f64>, k: &Intrinsics) -> Result<PixelPoint> {
    if p.z <= 1e-6 {
        return Err(Error::BehindCamera { z: p.z });
    }
    let (xd, yd) = distort(p.x / p.z, p.y / p.z, k);
    Ok(PixelPoint::new(k.fx * xd + k.cx, k.fy * yd + k.cy))
}

/// Invert intrinsics and radial distortion; returns normalized image
/// coordinates (x/z, y/z). Distortion is undone by fixed-point iteration.
pub fn unproject_normalized(px: &PixelPoint, k: &Intrinsics) -> Result<Vector2<f64>> {
    if !px.is_finite() {
        return Err(Error::InvalidArgument("non-finite pixel".into()));
    }
    let xd = (px.u - k.cx) / k.fx;
    let yd = (px.v - k.cy) / k.fy;
    if k.dist == [0.0, 0.0] {
        return Ok(Vector2::new(xd, yd));
    }
    let (mut x, mut y) = (xd, yd);
    const MAX_ITERS: usize = 20;
    for _ in 0..MAX_ITERS {
        let r2 = x * x + y * y;
        let d = 1.0 + k.dist[0] * r2 + k.dist[1] * r2 * r2;
        let (nx, ny) = (xd / d, yd / d);
        let step = ((nx - x).powi(2) + (ny - y).powi(2)).sqrt();
        x = nx;
        y = ny;
        if step < 1e-10 {
            return Ok(Vector2::new(x, y));
        }
    }
    Err(Error::DistortionInversion {
        iterations: MAX_ITERS,
    })
}

/// Half-open containment check: [0, width) x [0, height).
pub fn in_field_of_view(px: &PixelPoint, k: &Intrinsics) -> bool {
    px.u >= 0.0 && px.u < k.width as f64 && px.v >= 0.0 && px.v < k.height as f64
}
