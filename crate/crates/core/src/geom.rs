//! 3D math shared by every other module: axis-angle rotations, rigid
//! transforms and the orthogonal Procrustes rotation solve.
//!
//! Rotations are stored as plain 3x3 matrices. All arithmetic is `f64`.

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const SMALL_ANGLE: f64 = 1e-8;
const ROTATION_TOLERANCE: f64 = 1e-6;

/// Axis-angle rotation vector: direction is the axis, length the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AxisAngle(pub Vec3);

impl AxisAngle {
    pub const ZERO: AxisAngle = AxisAngle(Vector3::new(0.0, 0.0, 0.0));

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vec3::new(x, y, z))
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        AxisAngle(axis.normalize() * angle)
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_matrix(&self) -> Mat3 {
        rodrigues_exp(self)
    }

    /// Representative of the same rotation with angle in `[0, pi]`.
    pub fn canonical(&self) -> Self {
        let angle = self.angle();
        if angle <= std::f64::consts::PI {
            return *self;
        }
        rodrigues_log(&rodrigues_exp(self)).unwrap_or(*self)
    }
}

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Rodrigues formula: rotation matrix `exp([v]x)`.
pub fn rodrigues_exp(v: &AxisAngle) -> Mat3 {
    let theta = v.angle();
    let k = skew(&v.0);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        return Mat3::identity() + k + k2 * 0.5;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Mat3::identity() + k * a + k2 * b
}

/// Measures how far `r` is from SO(3): max-abs entry of `r^T r - I`, and `det(r)`.
pub fn rotation_defect(r: &Mat3) -> (f64, f64) {
    let orth = (r.transpose() * r - Mat3::identity()).abs().max();
    (orth, r.determinant())
}

pub fn check_rotation(r: &Mat3, tolerance: f64) -> Result<()> {
    let (orthogonality, det) = rotation_defect(r);
    if !(orthogonality <= tolerance && (det - 1.0).abs() <= tolerance) {
        return Err(Error::InvalidRotation { orthogonality, det });
    }
    Ok(())
}

/// Inverse of [`rodrigues_exp`]. The returned angle lies in `[0, pi]`; at
/// exactly `pi` the axis sign is chosen so its first nonzero component is positive.
pub fn rodrigues_log(r: &Mat3) -> Result<AxisAngle> {
    check_rotation(r, ROTATION_TOLERANCE)?;
    let w = vee(r);
    let sin_theta = w.norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        // log(R) ~ vee(R - R^T)/2 to first order
        return Ok(AxisAngle(w));
    }
    if theta < std::f64::consts::PI - 1e-3 {
        return Ok(AxisAngle(w * (theta / sin_theta)));
    }

    // Near pi the skew part vanishes; recover the axis from the symmetric part
    // S = cos(t) I + (1 - cos(t)) n n^T.
    let s = (r + r.transpose()) * 0.5;
    let nn = (s - Mat3::identity() * cos_theta) / (1.0 - cos_theta);
    let diag = nn.diagonal();
    let col = diag.imax();
    let mut axis: Vec3 = nn.column(col).into_owned();
    axis /= axis.norm();
    if w.norm() > 1e-12 {
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().find(|c| c.abs() > 1e-12) {
        if *first < 0.0 {
            axis = -axis;
        }
    }
    Ok(AxisAngle(axis * theta))
}

/// Rotation `R` minimizing `sum |dst_i - R src_i|^2` (Kabsch with det correction).
pub fn procrustes_rotation(src: &[Vec3], dst: &[Vec3]) -> Result<Mat3> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            expected: src.len(),
            actual: dst.len(),
            context: "procrustes point lists",
        });
    }
    if src.len() < 2 {
        return Err(Error::Degenerate(format!(
            "procrustes needs at least 2 point pairs, got {}",
            src.len()
        )));
    }
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += s * d.transpose();
    }
    let svd = h.svd(true, true);
    let mut sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    if !(sigma[0] > 0.0) || sigma[1] <= 1e-12 * sigma[0] {
        return Err(Error::Degenerate(
            "procrustes correlation matrix has rank < 2".into(),
        ));
    }
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    // flip the direction belonging to the smallest singular value
    let smallest = svd.singular_values.imin();
    let mut correction = Mat3::identity();
    correction[(smallest, smallest)] = d;
    Ok(v * correction * u.transpose())
}

/// Sum of squared residuals `sum |dst_i - R src_i|^2`.
pub fn procrustes_objective(r: &Mat3, src: &[Vec3], dst: &[Vec3]) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(s, d)| (d - r * s).norm_squared())
        .sum()
}

/// Uniformly distributed random rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let q = Vector4::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Rigid transform `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        RigidTransform::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform::new(Mat3::identity(), t)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -(rt * self.translation))
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Maps a point into this transform's local frame (`inverse * p`).
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

pub fn transform_point(g: &RigidTransform, p: &Vec3) -> Vec3 {
    g.transform_point(p)
}

pub fn invert(g: &RigidTransform) -> RigidTransform {
    g.inverse()
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}
