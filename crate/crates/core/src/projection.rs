//! Scaled orthographic pose `x -> s R x + t`.
//!
//! Depth is kept and scaled like `x` and `y`, so a pose is a similarity
//! transform of 3-space. Euler angles follow an intrinsic yaw-pitch-roll
//! order, `R = Ry(yaw) * Rx(pitch) * Rz(roll)`, with `y` vertical, `x`
//! lateral and `z` frontal.

use nalgebra::{Matrix3, Matrix3x4, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Mesh, MeshError};

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("rotation is not orthonormal with positive determinant (deviation {0:e})")]
    InvalidRotation(f64),
    #[error("need at least 3 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("point sets differ in size: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate correspondence set (cross-covariance rank < 2)")]
    Degenerate,
    #[error("gimbal lock: pitch {pitch_degrees} deg leaves yaw undetermined")]
    GimbalLock { pitch_degrees: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type PoseResult<T> = Result<T, PoseError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseDoc", into = "PoseDoc")]
pub struct Pose {
    scale: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> PoseResult<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(PoseError::InvalidScale(scale));
        }
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(dev <= 1e-9) || !(rotation.determinant() > 0.0) {
            return Err(PoseError::InvalidRotation(dev));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn from_rotation(
        scale: f64,
        rotation: Rotation3<f64>,
        translation: Vector3<f64>,
    ) -> PoseResult<Self> {
        Self::new(scale, rotation.into_inner(), translation)
    }

    /// Pose from Euler angles in degrees.
    pub fn from_euler_degrees(
        scale: f64,
        yaw: f64,
        pitch: f64,
        roll: f64,
        translation: Vector3<f64>,
    ) -> PoseResult<Self> {
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw.to_radians())
            * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch.to_radians())
            * Rotation3::from_axis_angle(&Vector3::z_axis(), roll.to_radians());
        Self::from_rotation(scale, r, translation)
    }

    /// Nearest `[sR | t]` to an arbitrary 3x4 affine matrix: the rotation is
    /// the orthogonal polar factor of the left block and the scale the mean of
    /// its (sign-corrected) singular values.
    pub fn from_affine(m: &Matrix3x4<f64>) -> PoseResult<Self> {
        let a: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let svd = a.svd(true, true);
        let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        let mut signs = Vector3::new(1.0, 1.0, 1.0);
        if (u * vt).determinant() < 0.0 {
            signs[2] = -1.0;
        }
        let rotation = u * Matrix3::from_diagonal(&signs) * vt;
        let scale = svd.singular_values.component_mul(&signs).sum() / 3.0;
        Self::new(scale, rotation, m.column(3).into_owned())
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// The 3x4 matrix `[sR | t]`.
    pub fn as_matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.rotation * self.scale));
        m.set_column(3, &self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let inv_s = 1.0 / self.scale;
        Self {
            scale: inv_s,
            rotation: rt,
            translation: -(rt * self.translation) * inv_s,
        }
    }

    /// `self` after `other`: `x -> self(other(x))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords * self.scale + self.translation)
    }

    pub fn apply_all(&self, points: &[Point3<f64>]) -> Vec<Point3<f64>> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    /// Maps a camera-frame point back to the world frame.
    pub fn unapply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.transpose() * (p.coords - self.translation) / self.scale)
    }

    /// Rotation angle (radians) between this pose's rotation and another's.
    pub fn rotation_angle_to(&self, other: &Self) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        // atan2 of the skew and symmetric parts stays accurate near zero, where acos does not
        let skew = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        );
        (skew.norm() / 2.0).atan2((rel.trace() - 1.0) / 2.0)
    }
}

pub fn apply_pose(mesh: &Mesh, pose: &Pose) -> Mesh {
    mesh.with_vertices(pose.apply_all(mesh.vertices()))
        .expect("vertex count preserved")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Euler angles in degrees. Fails within 1e-6 degrees of +/-90 pitch.
pub fn euler_degrees(pose: &Pose) -> PoseResult<EulerAngles> {
    let r = &pose.rotation;
    let pitch = (-r[(1, 2)]).clamp(-1.0, 1.0).asin().to_degrees();
    if (pitch.abs() - 90.0).abs() <= 1e-6 {
        return Err(PoseError::GimbalLock {
            pitch_degrees: pitch,
        });
    }
    Ok(EulerAngles {
        yaw: r[(0, 2)].atan2(r[(2, 2)]).to_degrees(),
        pitch,
        roll: r[(1, 0)].atan2(r[(1, 1)]).to_degrees(),
    })
}

pub fn yaw_degrees(pose: &Pose) -> PoseResult<f64> {
    euler_degrees(pose).map(|e| e.yaw)
}

/// Least-squares similarity `dst ~ s R src + t`.
pub fn estimate_pose(src: &[Point3<f64>], dst: &[Point3<f64>]) -> PoseResult<Pose> {
    estimate_pose_weighted(src, dst, &vec![1.0; src.len()])
}

/// Minimizes `sum_k w_k |s R src_k + t - dst_k|^2` in closed form from the
/// SVD of the weighted cross-covariance, guarding against reflections.
pub fn estimate_pose_weighted(
    src: &[Point3<f64>],
    dst: &[Point3<f64>],
    weights: &[f64],
) -> PoseResult<Pose> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(PoseError::LengthMismatch(src.len(), dst.len()));
    }
    let active = weights.iter().filter(|&&w| w > 0.0).count();
    if active < 3 {
        return Err(PoseError::TooFewPoints(active));
    }
    let total: f64 = weights.iter().sum();
    let centroid = |pts: &[Point3<f64>]| {
        pts.iter()
            .zip(weights)
            .fold(Vector3::zeros(), |acc, (p, &w)| acc + p.coords * w)
            / total
    };
    let mu_src = centroid(src);
    let mu_dst = centroid(dst);

    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for ((a, b), &w) in src.iter().zip(dst).zip(weights) {
        let da = a.coords - mu_src;
        let db = b.coords - mu_dst;
        cov += db * da.transpose() * w;
        var_src += da.norm_squared() * w;
    }
    cov /= total;
    var_src /= total;

    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    if !(sv[order[1]] > 1e-12 * sv[order[0]]) || var_src <= 0.0 {
        return Err(PoseError::Degenerate);
    }
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * vt.determinant() < 0.0 {
        // flip the axis of the smallest singular value
        signs[order[2]] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * vt;
    let scale = sv.component_mul(&signs).sum() / var_src;
    let translation = mu_dst - rotation * mu_src * scale;
    Pose::new(scale, rotation, translation)
}

#[derive(Serialize, Deserialize)]
struct PoseDoc {
    scale: f64,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<Pose> for PoseDoc {
    fn from(p: Pose) -> Self {
        let r = p.rotation;
        Self {
            scale: p.scale,
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<PoseDoc> for Pose {
    type Error = PoseError;

    fn try_from(d: PoseDoc) -> PoseResult<Self> {
        let r = Matrix3::from_fn(|i, j| d.rotation[i][j]);
        Pose::new(d.scale, r, Vector3::from(d.translation))
    }
}
