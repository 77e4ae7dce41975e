//! Geometry of the two-marker perching target.
//!
//! Target frame: x right, y up, z out of the marker plane toward the
//! camera. Corners are ordered top-left, top-right, bottom-right,
//! bottom-left, the same winding for both markers.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dictionary {
    Dict4x4_100,
    DictArucoOriginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub id: u32,
    pub dictionary: Dictionary,
    /// Side length in meters.
    pub side: f64,
}

impl MarkerSpec {
    /// Corner positions in the target frame, centered on the origin.
    pub fn corner_points(&self) -> [Vector3<f64>; 4] {
        let h = self.side / 2.0;
        [
            Vector3::new(-h, h, 0.0),
            Vector3::new(h, h, 0.0),
            Vector3::new(h, -h, 0.0),
            Vector3::new(-h, -h, 0.0),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerchingTarget {
    pub large: MarkerSpec,
    pub small: MarkerSpec,
}

impl PerchingTarget {
    pub fn validate(&self) -> Result<()> {
        if self.large.side <= self.small.side {
            return Err(Error::InvalidArgument(
                "large marker must be larger than the small one".into(),
            ));
        }
        if self.large.id == self.small.id {
            return Err(Error::InvalidArgument("marker ids must differ".into()));
        }
        if self.large.side <= 0.0 || self.small.side <= 0.0 {
            return Err(Error::InvalidArgument("marker sides must be positive".into()));
        }
        Ok(())
    }

    pub fn marker_by_id(&self, id: u32) -> Result<&MarkerSpec> {
        if self.large.id == id {
            Ok(&self.large)
        } else if self.small.id == id {
            Ok(&self.small)
        } else {
            Err(Error::MarkerNotFound(id))
        }
    }
}

impl Default for PerchingTarget {
    fn default() -> Self {
        default_target()
    }
}

/// The stock target: 150 mm marker id 997 with a 25 mm marker id 5 at its
/// center, sharing origin and axes.
pub fn default_target() -> PerchingTarget {
    PerchingTarget {
        large: MarkerSpec {
            id: 997,
            dictionary: Dictionary::Dict4x4_100,
            side: 0.150,
        },
        small: MarkerSpec {
            id: 5,
            dictionary: Dictionary::DictArucoOriginal,
            side: 0.025,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn default_target_geometry() {
        let t = default_target();
        assert_eq!(t.large.id, 997);
        assert_eq!(t.small.id, 5);
        assert_eq!(t.large.side, 0.150);
        assert_eq!(t.small.side, 0.025);

        let c = t.large.corner_points();
        assert_eq!(c[0], Vector3::new(-0.075, 0.075, 0.0));
        assert_eq!(c[1], Vector3::new(0.075, 0.075, 0.0));
        assert_eq!(c[2], Vector3::new(0.075, -0.075, 0.0));
        assert_eq!(c[3], Vector3::new(-0.075, -0.075, 0.0));

        let s = t.small.corner_points();
        assert_eq!(s[0], Vector3::new(-0.0125, 0.0125, 0.0));
        assert_eq!(s[2], Vector3::new(0.0125, -0.0125, 0.0));

        for corners in [c, s] {
            let centroid: Vector3<f64> = corners.iter().sum::<Vector3<f64>>() / 4.0;
            assert_eq!(centroid, Vector3::zeros());
            for p in &corners {
                assert_eq!(p.z, 0.0);
            }
        }
    }

    #[test]
    fn lookup_by_id() {
        let t = default_target();
        assert_eq!(t.marker_by_id(997).unwrap().side, 0.150);
        assert_eq!(t.marker_by_id(5).unwrap().side, 0.025);
        assert!(matches!(t.marker_by_id(42), Err(Error::MarkerNotFound(42))));
    }

    #[test]
    fn consistent_winding() {
        // both markers share the corner winding: corner k of the small marker
        // is a pure scaling of corner k of the large one
        let t = default_target();
        let ratio = t.small.side / t.large.side;
        for (a, b) in t.large.corner_points().iter().zip(t.small.corner_points()) {
            assert!((a * ratio - b).amax() < 1e-15);
        }
    }
}
