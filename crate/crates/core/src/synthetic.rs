//! Synthetic hand-object scenes: a capsule-skeleton hand holding a
//! parametric object, with analytic signed distances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMode, KinematicConditioning};
use crate::geom::{random_rotation, rodrigues_log, AxisAngle, Mat3, RigidTransform, Vec3};
use crate::kinematics::{forward_kinematics, HandPose, HandSkeleton, JointSet, PosedHand};
use crate::mesh::{Aabb, TriMesh};
use crate::reconstruct::{evaluate_grid, marching_cubes};
use crate::sdf::dataset::{sample_positions, NormalizationTransform, SdfSample};

/// Segment `a`-`b` swept by a ball of radius `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 { ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        (p - (self.a + ab * t)).norm() - self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapsuleHand {
    pub capsules: Vec<Capsule>,
}

const FINGER_RADII: [f64; 5] = [0.0095, 0.0085, 0.0088, 0.0082, 0.0072];
const PALM_RADIUS: f64 = 0.013;

impl CapsuleHand {
    /// Capsules along every finger bone plus a web of palm links.
    pub fn from_joints(joints: &JointSet) -> Self {
        let j = &joints.0;
        let mut capsules = Vec::new();
        for finger in 0..5 {
            let base = 1 + finger * 4;
            for k in 0..3 {
                capsules.push(Capsule { a: j[base + k], b: j[base + k + 1], radius: FINGER_RADII[finger] });
            }
        }
        for mcp in [1, 5, 9, 13, 17] {
            capsules.push(Capsule { a: j[0], b: j[mcp], radius: PALM_RADIUS });
        }
        for pair in [[5, 9], [9, 13], [13, 17], [1, 5]] {
            capsules.push(Capsule { a: j[pair[0]], b: j[pair[1]], radius: PALM_RADIUS * 0.9 });
        }
        // mid-palm fill between the wrist fan and the knuckle line
        for (a, b) in [(5, 17), (9, 17), (5, 13)] {
            let pa = j[0] * 0.45 + j[a] * 0.55;
            let pb = j[0] * 0.45 + j[b] * 0.55;
            capsules.push(Capsule { a: pa, b: pb, radius: PALM_RADIUS });
        }
        CapsuleHand { capsules }
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.capsules.iter().map(|c| c.sdf(p)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Sphere,
    Box,
    Cylinder,
}

impl std::str::FromStr for ObjectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ObjectKind::Sphere),
            "box" => Ok(ObjectKind::Box),
            "cylinder" => Ok(ObjectKind::Cylinder),
            other => Err(Error::InvalidArgument(format!("unknown object kind '{other}'"))),
        }
    }
}

/// A sphere (radius `size.x`), box (half extents `size`) or cylinder
/// (radius `size.x`, half length `size.y`, axis along local x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricObject {
    pub kind: ObjectKind,
    pub center: Vec3,
    pub rotation: Mat3,
    pub size: Vec3,
}

impl ParametricObject {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        let q = self.rotation.transpose() * (p - self.center);
        match self.kind {
            ObjectKind::Sphere => q.norm() - self.size.x,
            ObjectKind::Box => {
                let d = q.abs() - self.size;
                d.sup(&Vec3::zeros()).norm() + d.max().min(0.0)
            }
            ObjectKind::Cylinder => {
                let radial = (q.y * q.y + q.z * q.z).sqrt() - self.size.x;
                let axial = q.x.abs() - self.size.y;
                let outside = Vec3::new(radial.max(0.0), axial.max(0.0), 0.0).norm();
                outside + radial.max(axial).min(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Upper bound on the wrist rotation angle (radians).
    pub max_wrist_angle: f64,
    /// Upper bound on per-joint finger flexion (radians).
    pub max_flexion: f64,
    /// Object kinds drawn uniformly per scene.
    pub object_kinds: Vec<ObjectKind>,
    /// Side of the world-space cube mapped onto the normalized unit cube.
    pub scene_extent: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            max_wrist_angle: 0.6,
            max_flexion: 1.1,
            object_kinds: vec![ObjectKind::Sphere, ObjectKind::Box, ObjectKind::Cylinder],
            scene_extent: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub pose: HandPose,
    pub posed: PosedHand,
    pub hand: CapsuleHand,
    pub object: ParametricObject,
    /// World to normalized coordinates.
    pub normalization: NormalizationTransform,
}

fn flexion_pose(skel: &HandSkeleton, wrist: AxisAngle, flex: &[f64; 5], spread: &[f64; 5]) -> HandPose {
    let mut theta = vec![AxisAngle::ZERO; skel.pose_joints.len()];
    theta[0] = wrist;
    let thumb_axis = Vec3::new(-0.6, 0.45, 0.65).normalize();
    for finger in 0..5 {
        let base = 1 + finger * 4;
        for k in 0..3 {
            let Some(pi) = skel.pose_index(base + k) else { continue };
            let bend = flex[finger] * [0.8, 1.0, 0.7][k];
            theta[pi] = if finger == 0 {
                AxisAngle::from_axis_angle(&thumb_axis, 0.7 * bend)
            } else if k == 0 {
                // knuckle: curl toward the palm plus sideways spread
                let r = crate::geom::rodrigues_exp(&AxisAngle::new(-bend, 0.0, 0.0))
                    * crate::geom::rodrigues_exp(&AxisAngle::new(0.0, 0.0, spread[finger]));
                rodrigues_log(&r).unwrap_or(AxisAngle::new(-bend, 0.0, 0.0))
            } else {
                AxisAngle::new(-bend, 0.0, 0.0)
            };
        }
    }
    HandPose::from_theta(skel, theta)
}

/// Palm centroid of a posed hand: wrist and the four finger knuckles.
pub fn palm_center(joints: &JointSet) -> Vec3 {
    [0, 5, 9, 13, 17].iter().map(|&k| joints.0[k]).sum::<Vec3>() / 5.0
}

/// Draws a hand pose and an object resting against the palm. The object's
/// size follows the grip closure and its placement follows the wrist.
pub fn random_scene<R: Rng + ?Sized>(skel: &HandSkeleton, cfg: &SceneConfig, rng: &mut R) -> Result<SyntheticScene> {
    if cfg.object_kinds.is_empty() {
        return Err(Error::Empty("scene object kinds"));
    }
    if !(cfg.scene_extent > 0.0) {
        return Err(Error::InvalidArgument("scene extent must be positive".into()));
    }
    let axis = random_rotation(rng) * Vec3::x();
    let wrist = AxisAngle::from_axis_angle(&axis, rng.random_range(0.0..=cfg.max_wrist_angle));
    let closure: f64 = rng.random_range(0.0..=1.0);
    let mut flex = [0.0; 5];
    let mut spread = [0.0; 5];
    for f in 0..5 {
        flex[f] = (closure * cfg.max_flexion + rng.random_range(-0.15..0.15)).clamp(0.0, cfg.max_flexion);
        spread[f] = rng.random_range(-0.08..0.08);
    }
    let pose = flexion_pose(skel, wrist, &flex, &spread);
    let posed = forward_kinematics(skel, &pose);
    let hand = CapsuleHand::from_joints(&posed.joints);
    let kind = cfg.object_kinds[rng.random_range(0..cfg.object_kinds.len())];
    let r = 0.042 - 0.016 * closure + rng.random_range(-0.003..0.003);
    let rot = wrist.to_matrix();
    let size = match kind {
        ObjectKind::Sphere => Vec3::new(r, 0.0, 0.0),
        ObjectKind::Box => Vec3::new(0.036, 0.85 * r, 0.85 * r),
        ObjectKind::Cylinder => Vec3::new(r, 0.045, 0.0),
    };
    let palm = palm_center(&posed.joints);
    // against the palm side (-z in the wrist frame), slightly toward the fingers
    let center = palm + rot * Vec3::new(0.0, 0.03, -(r + PALM_RADIUS + 0.004));
    let object = ParametricObject { kind, center, rotation: rot, size };
    let normalization = NormalizationTransform::new(palm + rot * Vec3::new(0.0, 0.02, -0.02), 1.0 / cfg.scene_extent)?;
    Ok(SyntheticScene { pose, posed, hand, object, normalization })
}

pub fn random_scenes(skel: &HandSkeleton, cfg: &SceneConfig, count: usize, seed: u64) -> Result<Vec<SyntheticScene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_scene(skel, cfg, &mut rng)).collect()
}

impl SyntheticScene {
    /// Hand signed distance in normalized units at normalized point `p`.
    pub fn hand_sdf(&self, p: &Vec3) -> f64 {
        self.hand.sdf(&self.normalization.invert(p)) * self.normalization.scale
    }

    pub fn object_sdf(&self, p: &Vec3) -> f64 {
        self.object.sdf(&self.normalization.invert(p)) * self.normalization.scale
    }

    pub fn normalized_joints(&self) -> JointSet {
        JointSet(self.posed.joints.0.iter().map(|p| self.normalization.apply(p)).collect())
    }

    pub fn normalized_globals(&self) -> Vec<RigidTransform> {
        self.posed.globals.iter().map(|g| self.normalization.apply_rigid(g)).collect()
    }

    pub fn normalized_object_center(&self) -> Vec3 {
        self.normalization.apply(&self.object.center)
    }

    /// Feature encoding of this scene's pose in normalized coordinates.
    pub fn conditioning(&self, mode: FeatureMode) -> KinematicConditioning {
        KinematicConditioning::new(
            mode,
            &self.normalized_joints(),
            &self.normalized_globals(),
            self.normalized_object_center(),
        )
    }

    /// Marching-cubes meshes of the hand and object over the normalized cube.
    pub fn normalized_meshes(&self, resolution: usize) -> Result<(TriMesh, TriMesh)> {
        let cube = Aabb { min: Vec3::repeat(-0.5), max: Vec3::repeat(0.5) };
        let hand = marching_cubes(&evaluate_grid(|p| self.hand_sdf(p), cube, resolution)?, 0.0).mesh;
        let obj = marching_cubes(&evaluate_grid(|p| self.object_sdf(p), cube, resolution)?, 0.0).mesh;
        Ok((hand, obj))
    }

    /// Training samples near the given normalized surfaces, with exact SDFs.
    pub fn samples(&self, meshes: (&TriMesh, &TriMesh), count: usize, near_fraction: f64, seed: u64) -> Result<Vec<SdfSample>> {
        let positions = sample_positions([meshes.0, meshes.1], count, near_fraction, seed)?;
        Ok(positions
            .iter()
            .map(|p| SdfSample { position: *p, sdf_hand: self.hand_sdf(p), sdf_obj: self.object_sdf(p) })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::inverse_kinematics;

    #[test]
    fn primitive_sdfs() {
        let c = Capsule { a: Vec3::zeros(), b: Vec3::x(), radius: 0.1 };
        assert!((c.sdf(&Vec3::new(0.5, 0.3, 0.0)) - 0.2).abs() < 1e-12);
        assert!((c.sdf(&Vec3::new(-0.2, 0.0, 0.0)) - 0.1).abs() < 1e-12);
        let rot = random_rotation(&mut ChaCha8Rng::seed_from_u64(1));
        let sphere = ParametricObject { kind: ObjectKind::Sphere, center: Vec3::x(), rotation: rot, size: Vec3::new(0.5, 0.0, 0.0) };
        assert!((sphere.sdf(&Vec3::zeros()) - 0.5).abs() < 1e-12);
        let bx = ParametricObject { kind: ObjectKind::Box, center: Vec3::zeros(), rotation: Mat3::identity(), size: Vec3::new(1.0, 2.0, 3.0) };
        assert!((bx.sdf(&Vec3::new(2.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
        assert!((bx.sdf(&Vec3::new(0.5, 0.0, 0.0)) + 0.5).abs() < 1e-12);
        assert!((bx.sdf(&Vec3::new(2.0, 3.0, 0.0)) - 2f64.sqrt()).abs() < 1e-12);
        let cyl = ParametricObject { kind: ObjectKind::Cylinder, center: Vec3::zeros(), rotation: Mat3::identity(), size: Vec3::new(1.0, 2.0, 0.0) };
        assert!((cyl.sdf(&Vec3::new(0.0, 3.0, 0.0)) - 2.0).abs() < 1e-12);
        assert!((cyl.sdf(&Vec3::new(3.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
        assert!((cyl.sdf(&Vec3::new(1.9, 0.0, 0.5)) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn scenes_fit_the_unit_cube() {
        let skel = HandSkeleton::default_hand();
        let scenes = random_scenes(&skel, &SceneConfig::default(), 12, 3).unwrap();
        for s in &scenes {
            for j in &s.normalized_joints().0 {
                assert!(j.iter().all(|c| c.abs() < 0.45), "{j:?}");
            }
            let c = s.normalized_object_center();
            assert!(c.iter().all(|v| v.abs() < 0.35));
            // pose is recoverable from its joints
            let ik = inverse_kinematics(&skel, &s.posed.joints).unwrap();
            let again = forward_kinematics(&skel, &ik.pose);
            for (a, b) in again.joints.0.iter().zip(&s.posed.joints.0) {
                assert!((a - b).norm() < 1e-9);
            }
        }
        let again = random_scenes(&skel, &SceneConfig::default(), 12, 3).unwrap();
        assert_eq!(again[5].pose, scenes[5].pose);
    }

    #[test]
    fn scene_meshes_are_closed_and_match_the_field() {
        let skel = HandSkeleton::default_hand();
        let s = &random_scenes(&skel, &SceneConfig::default(), 1, 9).unwrap()[0];
        let (hand, obj) = s.normalized_meshes(48).unwrap();
        assert!(hand.is_watertight() && obj.is_watertight());
        assert!(hand.signed_volume() > 0.0 && obj.signed_volume() > 0.0);
        let samples = s.samples((&hand, &obj), 2000, 0.9, 1).unwrap();
        let inside = samples.iter().filter(|x| x.sdf_hand < 0.0).count();
        assert!(inside > 200, "{inside} hand-interior samples");
        assert!(samples.iter().filter(|x| x.sdf_obj < 0.0).count() > 200);
    }
}
