//! Planar 4-point pose recovery: homography DLT, decomposition into a
//! rigid transform, and Gauss-Newton refinement on reprojection error.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector2, Vector3};

use crate::camera::{project, unproject_normalized, Intrinsics, PixelPoint};
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::geometry::{nearest_rotation, yaw_from_rotation, Pose4, RigidTransform};
use crate::target::PerchingTarget;

/// Pose of one marker in the camera frame, recovered from its corners.
#[derive(Debug, Clone)]
pub struct MarkerPoseEstimate {
    pub marker_id: u32,
    pub transform: RigidTransform,
    pub pose4: Pose4,
    /// RMSE of the refined pose, pixels.
    pub reprojection_rmse: f64,
    /// RMSE of the unrefined DLT pose, pixels (kept for logging).
    pub raw_reprojection_rmse: f64,
}

/// Similarity normalization: center points and scale mean distance to
/// sqrt(2), returned as a 3x3 homogeneous transform.
fn normalizing_transform(pts: &[Vector2<f64>; 4]) -> Result<Matrix3<f64>> {
    let centroid = pts.iter().sum::<Vector2<f64>>() / 4.0;
    let mean_dist = pts.iter().map(|p| (p - centroid).norm()).sum::<f64>() / 4.0;
    if mean_dist < 1e-12 {
        return Err(Error::DegenerateConfiguration(
            "all correspondences coincide".into(),
        ));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(
        s,
        0.0,
        -s * centroid.x,
        0.0,
        s,
        -s * centroid.y,
        0.0,
        0.0,
        1.0,
    ))
}

/// Direct linear transform for the homography mapping planar object
/// points (meters) to normalized image points, exact for noiseless data.
pub fn homography_dlt(
    img: &[Vector2<f64>; 4],
    obj: &[Vector2<f64>; 4],
) -> Result<Matrix3<f64>> {
    let t_img = normalizing_transform(img)?;
    let t_obj = normalizing_transform(obj)?;
    let norm = |t: &Matrix3<f64>, p: &Vector2<f64>| -> Vector2<f64> {
        let q = t * Vector3::new(p.x, p.y, 1.0);
        Vector2::new(q.x / q.z, q.y / q.z)
    };

    // one extra zero row so the SVD yields the full 9x9 right singular basis
    // (the thin SVD of an 8x9 matrix omits the nullspace vector)
    let mut a = DMatrix::<f64>::zeros(9, 9);
    for i in 0..4 {
        let o = norm(&t_obj, &obj[i]);
        let m = norm(&t_img, &img[i]);
        let r = 2 * i;
        a[(r, 0)] = -o.x;
        a[(r, 1)] = -o.y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = m.x * o.x;
        a[(r, 7)] = m.x * o.y;
        a[(r, 8)] = m.x;
        a[(r + 1, 3)] = -o.x;
        a[(r + 1, 4)] = -o.y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = m.y * o.x;
        a[(r + 1, 7)] = m.y * o.y;
        a[(r + 1, 8)] = m.y;
    }

    let svd = a.svd(false, true);
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let sv = &svd.singular_values;
    // Duplicate points collapse an extra singular value (sv[8] is the
    // padded zero, so a healthy system has sv[7] well above zero).
    if sv[7] < 1e-9 * sv[0].max(1e-300) {
        return Err(Error::DegenerateConfiguration(
            "duplicate correspondences".into(),
        ));
    }
    let h_row = vt.row(8);
    let hn = Matrix3::new(
        h_row[0], h_row[1], h_row[2], h_row[3], h_row[4], h_row[5], h_row[6], h_row[7], h_row[8],
    );
    // Three collinear points leave the system at full rank but make the
    // nullspace vector a rank-1 outer product m*l^T; a genuine homography
    // must be invertible.
    if hn.determinant().abs() < 1e-9 {
        return Err(Error::DegenerateConfiguration(
            "collinear correspondences".into(),
        ));
    }

    // undo the normalizations
    let t_img_inv = t_img.try_inverse().expect("similarity invertible");
    let mut h = t_img_inv * hn * t_obj;

    // unit Frobenius norm, sign so the object centroid has positive depth
    h /= h.norm();
    let w = h * Vector3::new(0.0, 0.0, 1.0);
    if w.z < 0.0 {
        h = -h;
    }
    Ok(h)
}

/// Decompose a calibrated planar homography into rotation + translation.
pub fn pose_from_homography(h: &Matrix3<f64>) -> Result<RigidTransform> {
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let (n1, n2) = (h1.norm(), h2.norm());
    if n1 < 1e-12 || n2 < 1e-12 {
        return Err(Error::DegenerateConfiguration(
            "homography has a vanishing rotation column".into(),
        ));
    }
    let lambda = 2.0 / (n1 + n2);
    let mut r1 = h1 * lambda;
    let mut r2 = h2 * lambda;
    let mut t = h3 * lambda;
    if t.z < 0.0 {
        r1 = -r1;
        r2 = -r2;
        t = -t;
    }
    let r3 = r1.cross(&r2);
    let raw = Matrix3::from_columns(&[r1, r2, r3]);
    Ok(RigidTransform::new(nearest_rotation(&raw), t))
}

fn reprojection_residuals(
    pose: &RigidTransform,
    img_px: &[PixelPoint; 4],
    obj: &[Vector3<f64>; 4],
    k: &Intrinsics,
) -> Option<SVector<f64, 8>> {
    let mut r = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let px = project(&pose.transform_point(&obj[i]), k).ok()?;
        r[2 * i] = px.u - img_px[i].u;
        r[2 * i + 1] = px.v - img_px[i].v;
    }
    Some(r)
}

/// Root-mean-square reprojection error in pixels; infinite if any point
/// projects behind the camera.
pub fn reprojection_rmse(
    pose: &RigidTransform,
    img_px: &[PixelPoint; 4],
    obj: &[Vector3<f64>; 4],
    k: &Intrinsics,
) -> f64 {
    match reprojection_residuals(pose, img_px, obj, k) {
        Some(r) => (r.norm_squared() / 4.0).sqrt(),
        None => f64::INFINITY,
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    if theta < 1e-12 {
        return Matrix3::identity() + skew(w);
    }
    let a = w / theta;
    let k = skew(&a);
    Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos())
}

/// Jacobian of projection (with radial distortion) w.r.t. the camera-frame
/// point.
pub(crate) fn projection_jacobian(pc: &Vector3<f64>, k: &Intrinsics) -> SMatrix<f64, 2, 3> {
    let (xx, yy, zz) = (pc.x, pc.y, pc.z);
    let x = xx / zz;
    let y = yy / zz;
    let r2 = x * x + y * y;
    let d = 1.0 + k.dist[0] * r2 + k.dist[1] * r2 * r2;
    let dd = k.dist[0] + 2.0 * k.dist[1] * r2; // d(dist)/d(r2)
    let j00 = d + 2.0 * x * x * dd;
    let j01 = 2.0 * x * y * dd;
    let j11 = d + 2.0 * y * y * dd;
    // chain through x = X/Z, y = Y/Z
    let mut out = SMatrix::<f64, 2, 3>::zeros();
    out[(0, 0)] = k.fx * j00 / zz;
    out[(0, 1)] = k.fx * j01 / zz;
    out[(0, 2)] = k.fx * (j00 * (-xx / (zz * zz)) + j01 * (-yy / (zz * zz)));
    out[(1, 0)] = k.fy * j01 / zz;
    out[(1, 1)] = k.fy * j11 / zz;
    out[(1, 2)] = k.fy * (j01 * (-xx / (zz * zz)) + j11 * (-yy / (zz * zz)));
    out
}

/// Refined pose plus whether Gauss-Newton converged.
#[derive(Debug, Clone)]
pub struct RefinedPose {
    pub pose: RigidTransform,
    pub converged: bool,
}

/// Gauss-Newton minimization of the summed squared reprojection error,
/// starting from `init`. Rotation increments live on the tangent space
/// (left-multiplied Rodrigues update). Cost never increases.
pub fn refine_pose(
    init: &RigidTransform,
    img_px: &[PixelPoint; 4],
    obj: &[Vector3<f64>; 4],
    k: &Intrinsics,
) -> RefinedPose {
    let mut pose = *init;
    let mut cost = match reprojection_residuals(&pose, img_px, obj, k) {
        Some(r) => r.norm_squared(),
        None => {
            return RefinedPose {
                pose,
                converged: false,
            }
        }
    };

    for _ in 0..50 {
        let mut jac = SMatrix::<f64, 8, 6>::zeros();
        let mut res = SVector::<f64, 8>::zeros();
        for i in 0..4 {
            let pc = pose.transform_point(&obj[i]);
            let px = match project(&pc, k) {
                Ok(px) => px,
                Err(_) => {
                    return RefinedPose {
                        pose,
                        converged: false,
                    }
                }
            };
            res[2 * i] = px.u - img_px[i].u;
            res[2 * i + 1] = px.v - img_px[i].v;
            let jp = projection_jacobian(&pc, k);
            let rp = pose.rotation * obj[i];
            let j_rot = jp * (-skew(&rp));
            let j_t = jp;
            for c in 0..3 {
                for r in 0..2 {
                    jac[(2 * i + r, c)] = j_rot[(r, c)];
                    jac[(2 * i + r, c + 3)] = j_t[(r, c)];
                }
            }
        }

        let jtj = jac.transpose() * jac;
        let jtr = jac.transpose() * res;
        let Some(chol) = jtj.cholesky() else {
            return RefinedPose {
                pose,
                converged: false,
            };
        };
        let full_step = -(chol.solve(&jtr));
        if full_step.norm() < 1e-10 {
            return RefinedPose {
                pose,
                converged: true,
            };
        }

        // backtracking so the cost is non-increasing
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let step = full_step * scale;
            let w = Vector3::new(step[0], step[1], step[2]);
            let dt = Vector3::new(step[3], step[4], step[5]);
            let candidate = RigidTransform::new(
                nearest_rotation(&(rodrigues(&w) * pose.rotation)),
                pose.translation + dt,
            );
            if let Some(r) = reprojection_residuals(&candidate, img_px, obj, k) {
                let c = r.norm_squared();
                if c <= cost {
                    pose = candidate;
                    cost = c;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            // local minimum for this parameterization
            return RefinedPose {
                pose,
                converged: true,
            };
        }
        if full_step.norm() * scale < 1e-10 {
            return RefinedPose {
                pose,
                converged: true,
            };
        }
    }
    RefinedPose {
        pose,
        converged: false,
    }
}

/// Mirror candidate of a planar pose: the marker normal reflected to the
/// other side of the line of sight. Returns None when the pose is viewed
/// straight down the normal (candidates coincide).
fn mirror_candidate(pose: &RigidTransform) -> Option<RigidTransform> {
    let t = pose.translation;
    if t.norm() < 1e-12 {
        return None;
    }
    let v = t / t.norm();
    let n = pose.rotation.column(2).into_owned();
    let axis = v.cross(&n);
    let s = axis.norm();
    if s < 1e-6 {
        return None;
    }
    let theta = s.atan2(v.dot(&n));
    let r_flip = rodrigues(&(axis / s * (-2.0 * theta)));
    Some(RigidTransform::new(
        nearest_rotation(&(r_flip * pose.rotation)),
        t,
    ))
}

/// Full per-marker pipeline: unproject corners, DLT, decomposition,
/// ambiguity handling, Gauss-Newton refinement.
pub fn solve_marker_pose(
    det: &Detection,
    target: &PerchingTarget,
    k: &Intrinsics,
) -> Result<MarkerPoseEstimate> {
    let marker = target.marker_by_id(det.marker_id)?;
    let obj3 = marker.corner_points();
    let obj2 = [
        Vector2::new(obj3[0].x, obj3[0].y),
        Vector2::new(obj3[1].x, obj3[1].y),
        Vector2::new(obj3[2].x, obj3[2].y),
        Vector2::new(obj3[3].x, obj3[3].y),
    ];
    let mut img = [Vector2::zeros(); 4];
    for i in 0..4 {
        img[i] = unproject_normalized(&det.corners[i], k)?;
    }

    let h = homography_dlt(&img, &obj2)?;
    let seed = pose_from_homography(&h)?;
    let raw_rmse = reprojection_rmse(&seed, &det.corners, &obj3, k);

    // planar two-fold ambiguity: refine both candidates when their initial
    // costs are within 10% of each other, keep the lower refined cost
    let mut best = refine_pose(&seed, &det.corners, &obj3, k).pose;
    let mut best_rmse = reprojection_rmse(&best, &det.corners, &obj3, k);
    if let Some(mirror) = mirror_candidate(&seed) {
        let mirror_rmse = reprojection_rmse(&mirror, &det.corners, &obj3, k);
        let lo = raw_rmse.min(mirror_rmse);
        let hi = raw_rmse.max(mirror_rmse);
        if lo.is_finite() && (hi - lo) < 0.1 * hi.max(1e-12) {
            let alt = refine_pose(&mirror, &det.corners, &obj3, k).pose;
            let alt_rmse = reprojection_rmse(&alt, &det.corners, &obj3, k);
            if alt_rmse < best_rmse && alt.translation.z > 0.0 {
                best = alt;
                best_rmse = alt_rmse;
            }
        }
    }

    if best.translation.z <= 0.0 {
        return Err(Error::DegenerateConfiguration(
            "recovered pose has non-positive depth".into(),
        ));
    }
    let yaw = yaw_from_rotation(&best.rotation)?;
    Ok(MarkerPoseEstimate {
        marker_id: det.marker_id,
        transform: best,
        pose4: Pose4::new(
            best.translation.x,
            best.translation.y,
            best.translation.z,
            yaw,
        ),
        reprojection_rmse: best_rmse,
        raw_reprojection_rmse: raw_rmse,
    })
}
