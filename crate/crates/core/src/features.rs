//! Kinematic feature encodings for SDF decoders, pinhole projection and
//! bilinear sampling of image-aligned feature grids.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{RigidTransform, Vec3};
use crate::kinematics::{JointSet, JOINT_COUNT, POSE_JOINT_COUNT};

pub const HAND_FEATURE_DIM: usize = 3 + 3 * POSE_JOINT_COUNT;
pub const OBJECT_FEATURE_DIM: usize = 3 + 3 + 3 * JOINT_COUNT + 3;
pub const VISUAL_FEATURE_DIM: usize = 256;

/// `[x, e_1, ..., e_16]`: the query point followed by the point expressed in
/// each pose joint's local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HandKinematicFeature(pub [f64; HAND_FEATURE_DIM]);

/// `[x, x - center, x - joint_1, ..., x - joint_21, x in wrist frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectKinematicFeature(pub [f64; OBJECT_FEATURE_DIM]);

fn put(out: &mut [f64], block: usize, v: &Vec3) {
    out[3 * block..3 * block + 3].copy_from_slice(v.as_slice());
}

impl HandKinematicFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn raw_point(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    /// Local coordinates in pose joint `i` (0-based, wrist = 0).
    pub fn joint_local(&self, i: usize) -> Vec3 {
        let o = 3 * (i + 1);
        Vec3::new(self.0[o], self.0[o + 1], self.0[o + 2])
    }
}

impl ObjectKinematicFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn center_offset(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn joint_offset(&self, i: usize) -> Vec3 {
        let o = 6 + 3 * i;
        Vec3::new(self.0[o], self.0[o + 1], self.0[o + 2])
    }

    pub fn wrist_local(&self) -> Vec3 {
        let o = OBJECT_FEATURE_DIM - 3;
        Vec3::new(self.0[o], self.0[o + 1], self.0[o + 2])
    }
}

pub fn hand_kinematic_feature(x: &Vec3, globals: &[RigidTransform]) -> HandKinematicFeature {
    assert_eq!(globals.len(), POSE_JOINT_COUNT, "expected one transform per pose joint");
    let mut out = [0.0; HAND_FEATURE_DIM];
    put(&mut out, 0, x);
    for (i, g) in globals.iter().enumerate() {
        put(&mut out, i + 1, &g.to_local(x));
    }
    HandKinematicFeature(out)
}

pub fn object_kinematic_feature(
    x: &Vec3,
    obj_center: &Vec3,
    joints: &JointSet,
    wrist_global: &RigidTransform,
) -> ObjectKinematicFeature {
    assert_eq!(joints.0.len(), JOINT_COUNT, "expected 21 joints");
    let mut out = [0.0; OBJECT_FEATURE_DIM];
    put(&mut out, 0, x);
    put(&mut out, 1, &(x - obj_center));
    for (i, j) in joints.0.iter().enumerate() {
        put(&mut out, 2 + i, &(x - j));
    }
    put(&mut out, 2 + JOINT_COUNT, &wrist_global.to_local(x));
    ObjectKinematicFeature(out)
}

/// Feature variants for the hand decoder: no pose prior, wrist frame only,
/// or all 16 joint frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    K1,
    K2,
    K3,
    Ko1,
    Ko2,
    Ko3,
}

impl FeatureMode {
    pub fn dim(self) -> usize {
        match self {
            FeatureMode::K1 | FeatureMode::Ko1 => 3,
            FeatureMode::K2 | FeatureMode::Ko2 => 6,
            FeatureMode::K3 => HAND_FEATURE_DIM,
            FeatureMode::Ko3 => OBJECT_FEATURE_DIM,
        }
    }

    pub fn is_object(self) -> bool {
        matches!(self, FeatureMode::Ko1 | FeatureMode::Ko2 | FeatureMode::Ko3)
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::K1 => "k1",
            FeatureMode::K2 => "k2",
            FeatureMode::K3 => "k3",
            FeatureMode::Ko1 => "ko1",
            FeatureMode::Ko2 => "ko2",
            FeatureMode::Ko3 => "ko3",
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "k1" => FeatureMode::K1,
            "k2" => FeatureMode::K2,
            "k3" => FeatureMode::K3,
            "ko1" => FeatureMode::Ko1,
            "ko2" => FeatureMode::Ko2,
            "ko3" => FeatureMode::Ko3,
            other => return Err(Error::InvalidArgument(format!("unknown feature mode '{other}'"))),
        })
    }
}

/// Supplies the kinematic feature vector for a query point.
pub trait FeatureProvider: Sync {
    fn dim(&self) -> usize;
    fn write_features(&self, x: &Vec3, out: &mut [f64]);

    fn features(&self, x: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.write_features(x, &mut out);
        out
    }
}

/// Pose information a shape is conditioned on, in the same frame as the
/// query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicConditioning {
    pub mode: FeatureMode,
    pub joints: Vec<[f64; 3]>,
    pub globals: Vec<RigidTransform>,
    pub obj_center: [f64; 3],
}

impl KinematicConditioning {
    pub fn new(mode: FeatureMode, joints: &JointSet, globals: &[RigidTransform], obj_center: Vec3) -> Self {
        KinematicConditioning {
            mode,
            joints: joints.0.iter().map(|p| [p.x, p.y, p.z]).collect(),
            globals: globals.to_vec(),
            obj_center: [obj_center.x, obj_center.y, obj_center.z],
        }
    }

    /// Conditioning for [`FeatureMode::K1`]/[`FeatureMode::Ko1`], which read no pose.
    pub fn raw(mode: FeatureMode) -> Self {
        KinematicConditioning {
            mode,
            joints: vec![[0.0; 3]; JOINT_COUNT],
            globals: vec![RigidTransform::identity(); POSE_JOINT_COUNT],
            obj_center: [0.0; 3],
        }
    }

    pub fn joint_set(&self) -> JointSet {
        JointSet(self.joints.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.len() != JOINT_COUNT {
            return Err(Error::DimensionMismatch {
                expected: JOINT_COUNT,
                actual: self.joints.len(),
                context: "conditioning joints",
            });
        }
        if self.globals.len() != POSE_JOINT_COUNT {
            return Err(Error::DimensionMismatch {
                expected: POSE_JOINT_COUNT,
                actual: self.globals.len(),
                context: "conditioning transforms",
            });
        }
        Ok(())
    }
}

impl FeatureProvider for KinematicConditioning {
    fn dim(&self) -> usize {
        self.mode.dim()
    }

    fn write_features(&self, x: &Vec3, out: &mut [f64]) {
        put(out, 0, x);
        match self.mode {
            FeatureMode::K1 | FeatureMode::Ko1 => {}
            FeatureMode::K2 => put(out, 1, &self.globals[0].to_local(x)),
            FeatureMode::K3 => {
                for (i, g) in self.globals.iter().enumerate() {
                    put(out, i + 1, &g.to_local(x));
                }
            }
            FeatureMode::Ko2 | FeatureMode::Ko3 => {
                let c = self.obj_center;
                put(out, 1, &(x - Vec3::new(c[0], c[1], c[2])));
                if self.mode == FeatureMode::Ko3 {
                    for (i, j) in self.joints.iter().enumerate() {
                        put(out, 2 + i, &(x - Vec3::new(j[0], j[1], j[2])));
                    }
                    put(out, 2 + JOINT_COUNT, &self.globals[0].to_local(x));
                }
            }
        }
    }
}

/// Pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidArgument(
                "camera focal lengths and image size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cam: Camera =
            serde_json::from_str(text).map_err(|e| Error::parse("camera JSON", e.to_string()))?;
        cam.validate()?;
        Ok(cam)
    }
}

pub fn project_point(cam: &Camera, x: &Vec3) -> Result<(f64, f64)> {
    if x.z <= 1e-9 {
        return Err(Error::BehindCamera(x.z));
    }
    Ok((cam.fx * x.x / x.z + cam.cx, cam.fy * x.y / x.z + cam.cy))
}

/// `height x width x channels` feature map aligned with the camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// row-major: (h, w, channel)
    pub values: Vec<f32>,
}

const GRID_MAGIC: &[u8; 4] = b"GSDG";
const GRID_VERSION: u32 = 1;

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidArgument("feature grid must be at least 2x2".into()));
        }
        if values.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                expected: height * width * channels,
                actual: values.len(),
                context: "feature grid values",
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature grid has non-finite values".into()));
        }
        Ok(FeatureGrid {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let o = (row * self.width + col) * self.channels;
        &self.values[o..o + self.channels]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        for v in [GRID_VERSION, self.height as u32, self.width as u32, self.channels as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let ctx = "feature grid";
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::parse(ctx, "bad magic"));
        }
        let mut word = [0u8; 4];
        let mut next = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = next(&mut r)?;
        if version != GRID_VERSION {
            return Err(Error::parse(ctx, format!("unsupported version {version}")));
        }
        let (h, w, d) = (next(&mut r)? as usize, next(&mut r)? as usize, next(&mut r)? as usize);
        let mut bytes = vec![0u8; h * w * d * 4];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        FeatureGrid::new(h, w, d, values)
    }
}

/// Bilinear lookup at pixel `(u, v)`. Cell centers sit at
/// `(i + 0.5) * image_size / grid_size`; queries outside the span of cell
/// centers clamp to the border.
pub fn sample_bilinear(grid: &FeatureGrid, u: f64, v: f64, cam: &Camera) -> Vec<f64> {
    let gx = (u * grid.width as f64 / cam.width - 0.5).clamp(0.0, (grid.width - 1) as f64);
    let gy = (v * grid.height as f64 / cam.height - 0.5).clamp(0.0, (grid.height - 1) as f64);
    let c0 = (gx.floor() as usize).min(grid.width - 2);
    let r0 = (gy.floor() as usize).min(grid.height - 2);
    let tx = gx - c0 as f64;
    let ty = gy - r0 as f64;
    let (v00, v01) = (grid.cell(r0, c0), grid.cell(r0, c0 + 1));
    let (v10, v11) = (grid.cell(r0 + 1, c0), grid.cell(r0 + 1, c0 + 1));
    (0..grid.channels)
        .map(|k| {
            (1.0 - ty) * ((1.0 - tx) * v00[k] as f64 + tx * v01[k] as f64)
                + ty * ((1.0 - tx) * v10[k] as f64 + tx * v11[k] as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{random_rotation, rodrigues_log, AxisAngle};
    use crate::kinematics::{forward_kinematics, HandPose, HandSkeleton};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
    }

    #[test]
    fn hand_feature_at_rest_is_offset_by_template() {
        let s = HandSkeleton::default_hand();
        let posed = forward_kinematics(&s, &HandPose::rest(&s));
        let x = Vec3::new(0.05, 0.1, -0.02);
        let f = hand_kinematic_feature(&x, &posed.globals);
        assert_eq!(f.as_slice().len(), 51);
        assert_eq!(f.raw_point(), x);
        for (i, &j) in s.pose_joints.iter().enumerate() {
            assert!((f.joint_local(i) - (x - s.template[j])).norm() < 1e-15);
        }
    }

    #[test]
    fn hand_feature_vanishes_at_joint_origin() {
        let s = HandSkeleton::default_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pose = HandPose::rest(&s);
        pose.theta[0] = rodrigues_log(&random_rotation(&mut rng)).unwrap();
        pose.theta[5] = AxisAngle::new(0.6, 0.0, 0.1);
        let posed = forward_kinematics(&s, &pose);
        let i = 5;
        let x = posed.joints.0[s.pose_joints[i]];
        let f = hand_kinematic_feature(&x, &posed.globals);
        assert!(f.joint_local(i).norm() < 1e-12);
    }

    #[test]
    fn object_feature_layout() {
        let s = HandSkeleton::default_hand();
        let posed = forward_kinematics(&s, &HandPose::rest(&s));
        let c = Vec3::new(0.0, 0.1, -0.05);
        let f = object_kinematic_feature(&c, &c, &posed.joints, &RigidTransform::identity());
        assert_eq!(f.as_slice().len(), 72);
        assert_eq!(f.center_offset(), Vec3::zeros());
        assert_eq!(f.wrist_local(), c);
        assert_eq!(f.joint_offset(8), c - s.template[8]);
    }

    #[test]
    fn object_feature_translation_invariance() {
        let s = HandSkeleton::default_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let posed = forward_kinematics(&s, &HandPose::rest(&s));
        for _ in 0..100 {
            let x = random_vec(&mut rng);
            let c = random_vec(&mut rng);
            let m = RigidTransform::new(random_rotation(&mut rng), random_vec(&mut rng));
            let base = object_kinematic_feature(&x, &c, &posed.joints, &posed.globals[0]);
            let moved = object_kinematic_feature(
                &m.transform_point(&x),
                &m.transform_point(&c),
                &posed.joints.transformed(&m),
                &m.compose(&posed.globals[0]),
            );
            assert!((base.wrist_local() - moved.wrist_local()).norm() < 1e-9);
            // offsets rotate with the motion
            let rt = m.rotation.transpose();
            assert!((base.center_offset() - rt * moved.center_offset()).norm() < 1e-9);
            for j in 0..21 {
                assert!((base.joint_offset(j) - rt * moved.joint_offset(j)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn conditioning_matches_full_features() {
        let s = HandSkeleton::default_hand();
        let mut pose = HandPose::rest(&s);
        pose.theta[0] = AxisAngle::new(0.2, 0.5, -0.3);
        pose.theta[2] = AxisAngle::new(0.7, 0.0, 0.0);
        let posed = forward_kinematics(&s, &pose);
        let c = Vec3::new(0.01, 0.08, -0.04);
        let x = Vec3::new(0.03, 0.02, 0.01);
        let k3 = KinematicConditioning::new(FeatureMode::K3, &posed.joints, &posed.globals, c);
        assert_eq!(k3.features(&x), hand_kinematic_feature(&x, &posed.globals).0.to_vec());
        let ko3 = KinematicConditioning { mode: FeatureMode::Ko3, ..k3.clone() };
        let full = object_kinematic_feature(&x, &c, &posed.joints, &posed.globals[0]);
        assert_eq!(ko3.features(&x), full.0.to_vec());
        let k2 = KinematicConditioning { mode: FeatureMode::K2, ..k3.clone() };
        assert_eq!(k2.features(&x), full.0[..3].iter().chain(&full.0[69..]).copied().collect::<Vec<_>>());
        let ko2 = KinematicConditioning { mode: FeatureMode::Ko2, ..k3 };
        assert_eq!(ko2.features(&x), full.0[..6].to_vec());
        assert_eq!(KinematicConditioning::raw(FeatureMode::K1).features(&x), vec![x.x, x.y, x.z]);
    }

    #[test]
    fn feature_mode_parse() {
        for m in ["k1", "k2", "k3", "ko1", "ko2", "ko3"] {
            assert_eq!(m.parse::<FeatureMode>().unwrap().name(), m);
        }
        assert!("k4".parse::<FeatureMode>().is_err());
        assert_eq!(FeatureMode::K3.dim(), 51);
        assert_eq!(FeatureMode::Ko3.dim(), 72);
    }

    fn cam() -> Camera {
        Camera::new(256.0, 256.0, 128.0, 128.0, 256.0, 256.0).unwrap()
    }

    #[test]
    fn projection() {
        let c = cam();
        assert_eq!(project_point(&c, &Vec3::new(0.0, 0.0, 3.0)).unwrap(), (128.0, 128.0));
        assert_eq!(project_point(&c, &Vec3::new(0.5, 0.0, 1.0)).unwrap(), (256.0, 128.0));
        let x = Vec3::new(0.2, -0.3, 1.5);
        let (u1, v1) = project_point(&c, &x).unwrap();
        let (u2, v2) = project_point(&c, &(x.component_mul(&Vec3::new(1.0, 1.0, 2.0)))).unwrap();
        assert!(((u2 - 128.0) * 2.0 - (u1 - 128.0)).abs() < 1e-12);
        assert!(((v2 - 128.0) * 2.0 - (v1 - 128.0)).abs() < 1e-12);
        assert!(matches!(
            project_point(&c, &Vec3::new(0.0, 0.0, 0.0)),
            Err(Error::BehindCamera(_))
        ));
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, 1.0, 1.0).is_err());
    }

    fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> FeatureGrid {
        let values = (0..h * w * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        FeatureGrid::new(h, w, d, values).unwrap()
    }

    #[test]
    fn bilinear_at_centers_and_midpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_grid(&mut rng, 16, 16, 4);
        let c = cam();
        // 16-pixel cells; center of (row 3, col 5) is at pixel (88, 56)
        let v = sample_bilinear(&g, 88.0, 56.0, &c);
        let expected: Vec<f64> = g.cell(3, 5).iter().map(|x| *x as f64).collect();
        assert_eq!(v, expected);
        let mid = sample_bilinear(&g, 96.0, 56.0, &c);
        for k in 0..4 {
            let avg = (g.cell(3, 5)[k] as f64 + g.cell(3, 6)[k] as f64) / 2.0;
            assert!((mid[k] - avg).abs() < 1e-12);
        }
        // far outside clamps to the corner cell
        let corner = sample_bilinear(&g, -1000.0, 1e6, &c);
        let expected: Vec<f64> = g.cell(15, 0).iter().map(|x| *x as f64).collect();
        assert_eq!(corner, expected);
    }

    #[test]
    fn bilinear_matches_four_weight_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_grid(&mut rng, 16, 12, 3);
        let c = Camera::new(300.0, 300.0, 100.0, 80.0, 240.0, 160.0).unwrap();
        for _ in 0..500 {
            let u = rng.random_range(10.0..230.0);
            let v = rng.random_range(5.0..155.0);
            let got = sample_bilinear(&g, u, v, &c);
            let gx = u / 240.0 * 12.0 - 0.5;
            let gy = v / 160.0 * 16.0 - 0.5;
            let (x0, y0) = (gx.floor().max(0.0), gy.floor().max(0.0));
            let (x0, y0) = (x0.min(10.0), y0.min(14.0));
            let (fx, fy) = ((gx - x0).clamp(0.0, 1.0), (gy - y0).clamp(0.0, 1.0));
            let (x0, y0) = (x0 as usize, y0 as usize);
            for k in 0..3 {
                let w00 = (1.0 - fx) * (1.0 - fy);
                let w01 = fx * (1.0 - fy);
                let w10 = (1.0 - fx) * fy;
                let w11 = fx * fy;
                let expected = w00 * g.cell(y0, x0)[k] as f64
                    + w01 * g.cell(y0, x0 + 1)[k] as f64
                    + w10 * g.cell(y0 + 1, x0)[k] as f64
                    + w11 * g.cell(y0 + 1, x0 + 1)[k] as f64;
                assert!((got[k] - expected).abs() < 1e-9);
                let lo = [g.cell(y0, x0)[k], g.cell(y0, x0 + 1)[k], g.cell(y0 + 1, x0)[k], g.cell(y0 + 1, x0 + 1)[k]];
                let min = lo.iter().copied().fold(f32::INFINITY, f32::min) as f64;
                let max = lo.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                assert!(got[k] >= min - 1e-12 && got[k] <= max + 1e-12);
            }
        }
    }

    #[test]
    fn grid_file_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_grid(&mut rng, 3, 4, 2);
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GSDG");
        assert_eq!(buf.len(), 4 + 16 + 3 * 4 * 2 * 4);
        assert_eq!(FeatureGrid::read_from(&buf[..]).unwrap(), g);
        buf[0] = b'X';
        assert!(FeatureGrid::read_from(&buf[..]).is_err());
    }
}
