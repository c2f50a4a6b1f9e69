//! Articulated hand skeleton: forward kinematics, analytic inverse
//! kinematics and the soft-argmax readout of volumetric joint heatmaps.
//!
//! Joint order: wrist = 0, then thumb, index, middle, ring and pinky, each
//! listed proximal to tip. Tips sit at indices 4, 8, 12, 16 and 20 and carry
//! no rotation of their own.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{procrustes_rotation, rodrigues_exp, AxisAngle, Mat3, RigidTransform, Vec3};

pub const JOINT_COUNT: usize = 21;
pub const POSE_JOINT_COUNT: usize = 16;
pub const FINGER_TIPS: [usize; 5] = [4, 8, 12, 16, 20];

/// Bones shorter than this are treated as zero-length during IK.
const MIN_BONE_LENGTH: f64 = 1e-12;

/// Kinematic tree with template joint positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandSkeleton {
    pub parents: Vec<i32>,
    pub template: Vec<Vec3>,
    pub pose_joints: Vec<usize>,
    pub wrist_solve_set: [usize; 3],
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    parents: Vec<i32>,
    template: Vec<[f64; 3]>,
    pose_joints: Vec<usize>,
    wrist_solve_set: [usize; 3],
}

impl Default for HandSkeleton {
    fn default() -> Self {
        Self::default_hand()
    }
}

impl HandSkeleton {
    /// Synthetic right-hand template in meters. The wrist sits at the origin,
    /// fingers point along +y and the palm faces -z.
    pub fn default_hand() -> Self {
        let template = [
            [0.0, 0.0, 0.0],
            // thumb
            [0.024, 0.026, -0.008],
            [0.044, 0.046, -0.014],
            [0.058, 0.066, -0.018],
            [0.068, 0.088, -0.020],
            // index
            [0.024, 0.088, 0.004],
            [0.027, 0.128, 0.002],
            [0.029, 0.153, 0.0],
            [0.030, 0.174, -0.002],
            // middle
            [0.004, 0.094, 0.006],
            [0.004, 0.138, 0.004],
            [0.004, 0.166, 0.002],
            [0.004, 0.189, 0.0],
            // ring
            [-0.015, 0.089, 0.004],
            [-0.017, 0.129, 0.002],
            [-0.019, 0.154, 0.0],
            [-0.020, 0.175, -0.002],
            // pinky
            [-0.032, 0.079, 0.0],
            [-0.037, 0.108, -0.001],
            [-0.040, 0.127, -0.002],
            [-0.042, 0.145, -0.003],
        ];
        let mut parents = vec![-1i32; JOINT_COUNT];
        for finger in 0..5 {
            let base = 1 + finger * 4;
            parents[base] = 0;
            for k in 1..4 {
                parents[base + k] = (base + k - 1) as i32;
            }
        }
        let pose_joints = (0..JOINT_COUNT)
            .filter(|j| !FINGER_TIPS.contains(j))
            .collect();
        HandSkeleton {
            parents,
            template: template.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect(),
            pose_joints,
            wrist_solve_set: [5, 9, 13],
        }
        .validated()
        .expect("built-in skeleton is valid")
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("skeleton: {m}")));
        if self.parents.len() != JOINT_COUNT || self.template.len() != JOINT_COUNT {
            return bad(format!("expected {JOINT_COUNT} joints"));
        }
        if self.parents[0] != -1 {
            return bad("joint 0 must be the root".into());
        }
        for (j, &p) in self.parents.iter().enumerate().skip(1) {
            // parents must precede children, which also rules out cycles
            if p < 0 || p as usize >= j {
                return bad(format!("joint {j} has invalid parent {p}"));
            }
        }
        if self.pose_joints.len() != POSE_JOINT_COUNT || self.pose_joints[0] != 0 {
            return bad(format!("expected {POSE_JOINT_COUNT} pose joints starting with the wrist"));
        }
        if self.pose_joints.windows(2).any(|w| w[0] >= w[1]) {
            return bad("pose joints must be strictly increasing".into());
        }
        for j in 0..JOINT_COUNT {
            let has_child = self.parents.contains(&(j as i32));
            let is_pose = self.pose_joints.contains(&j);
            if has_child != is_pose {
                return bad(format!("joint {j}: pose joints must be exactly the non-leaf joints"));
            }
        }
        for &j in &self.pose_joints[1..] {
            let children = self.parents.iter().filter(|&&p| p == j as i32).count();
            if children != 1 {
                return bad(format!("articulated joint {j} must have exactly one child"));
            }
        }
        for (j, &p) in self.parents.iter().enumerate().skip(1) {
            let len = (self.template[j] - self.template[p as usize]).norm();
            if !(len > 0.0) || !len.is_finite() {
                return bad(format!("bone ending at joint {j} has non-positive length"));
            }
        }
        if self.wrist_solve_set.iter().any(|&j| j == 0 || j >= JOINT_COUNT) {
            return bad("wrist solve set must name non-root joints".into());
        }
        Ok(())
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        let p = self.parents[joint];
        (p >= 0).then_some(p as usize)
    }

    /// Index into `pose_joints` for a joint, if it is articulated.
    pub fn pose_index(&self, joint: usize) -> Option<usize> {
        self.pose_joints.iter().position(|&j| j == joint)
    }

    pub fn child_of(&self, joint: usize) -> Option<usize> {
        self.parents.iter().position(|&p| p == joint as i32)
    }

    pub fn template_bone(&self, joint: usize) -> Vec3 {
        match self.parent(joint) {
            Some(p) => self.template[joint] - self.template[p],
            None => self.template[joint],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: SkeletonFile =
            serde_json::from_str(text).map_err(|e| Error::parse("skeleton JSON", e.to_string()))?;
        HandSkeleton {
            parents: f.parents,
            template: f.template.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect(),
            pose_joints: f.pose_joints,
            wrist_solve_set: f.wrist_solve_set,
        }
        .validated()
    }

    pub fn to_json(&self) -> String {
        let f = SkeletonFile {
            parents: self.parents.clone(),
            template: self.template.iter().map(|p| [p.x, p.y, p.z]).collect(),
            pose_joints: self.pose_joints.clone(),
            wrist_solve_set: self.wrist_solve_set,
        };
        serde_json::to_string_pretty(&f).expect("skeleton serializes")
    }
}

/// Per-pose-joint relative rotations and offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    pub theta: Vec<AxisAngle>,
    pub phi: Vec<Vec3>,
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    theta: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi: Option<Vec<[f64; 3]>>,
}

impl HandPose {
    /// All-zero rotations with template offsets.
    pub fn rest(skel: &HandSkeleton) -> Self {
        HandPose {
            theta: vec![AxisAngle::ZERO; POSE_JOINT_COUNT],
            phi: skel.pose_joints.iter().map(|&j| skel.template_bone(j)).collect(),
        }
    }

    pub fn from_theta(skel: &HandSkeleton, theta: Vec<AxisAngle>) -> Self {
        HandPose {
            theta,
            ..HandPose::rest(skel)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (len, ctx) in [(self.theta.len(), "pose theta"), (self.phi.len(), "pose phi")] {
            if len != POSE_JOINT_COUNT {
                return Err(Error::DimensionMismatch {
                    expected: POSE_JOINT_COUNT,
                    actual: len,
                    context: ctx,
                });
            }
        }
        let finite = self.theta.iter().all(|t| t.0.iter().all(|c| c.is_finite()))
            && self.phi.iter().all(|p| p.iter().all(|c| c.is_finite()));
        if !finite {
            return Err(Error::InvalidArgument("pose contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str, skel: &HandSkeleton) -> Result<Self> {
        let f: PoseFile =
            serde_json::from_str(text).map_err(|e| Error::parse("pose JSON", e.to_string()))?;
        let theta = f.theta.iter().map(|t| AxisAngle::new(t[0], t[1], t[2])).collect();
        let mut pose = HandPose::from_theta(skel, theta);
        if let Some(phi) = f.phi {
            pose.phi = phi.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
        }
        pose.validate()?;
        Ok(pose)
    }

    pub fn to_json(&self) -> String {
        let f = PoseFile {
            theta: self.theta.iter().map(|t| [t.0.x, t.0.y, t.0.z]).collect(),
            phi: Some(self.phi.iter().map(|p| [p.x, p.y, p.z]).collect()),
        };
        serde_json::to_string_pretty(&f).expect("pose serializes")
    }
}

/// 21 joint positions.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet(pub Vec<Vec3>);

impl JointSet {
    pub fn wrist(&self) -> Vec3 {
        self.0[0]
    }

    pub fn transformed(&self, g: &RigidTransform) -> JointSet {
        JointSet(self.0.iter().map(|p| g.transform_point(p)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.len() != JOINT_COUNT {
            return Err(Error::DimensionMismatch {
                expected: JOINT_COUNT,
                actual: self.0.len(),
                context: "joint set",
            });
        }
        if self.0.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("joint set contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Output of [`forward_kinematics`].
#[derive(Debug, Clone)]
pub struct PosedHand {
    pub joints: JointSet,
    /// Global transform of each pose joint, in `pose_joints` order.
    pub globals: Vec<RigidTransform>,
}

/// Poses the skeleton. Each joint is placed by its parent's accumulated
/// rotation; each articulated joint's rotation is `R_parent * exp(theta)`.
pub fn forward_kinematics(skel: &HandSkeleton, pose: &HandPose) -> PosedHand {
    let mut positions = vec![Vec3::zeros(); JOINT_COUNT];
    let mut rotations = vec![Mat3::identity(); JOINT_COUNT];
    for j in 0..JOINT_COUNT {
        let pose_idx = skel.pose_index(j);
        let offset = pose_idx.map_or_else(|| skel.template_bone(j), |i| pose.phi[i]);
        let (parent_rot, parent_pos) = match skel.parent(j) {
            Some(p) => (rotations[p], positions[p]),
            None => (Mat3::identity(), Vec3::zeros()),
        };
        positions[j] = parent_rot * offset + parent_pos;
        rotations[j] = match pose_idx {
            Some(i) => parent_rot * rodrigues_exp(&pose.theta[i]),
            None => parent_rot,
        };
    }
    let globals = skel
        .pose_joints
        .iter()
        .map(|&j| RigidTransform::new(rotations[j], positions[j]))
        .collect();
    PosedHand {
        joints: JointSet(positions),
        globals,
    }
}

/// Output of [`inverse_kinematics`].
#[derive(Debug, Clone)]
pub struct IkSolution {
    pub pose: HandPose,
    /// Set for pose joints whose observed bone had zero length.
    pub degenerate: Vec<bool>,
}

/// Minimal rotation taking direction `from` onto direction `to`; `None` if
/// either vector has zero length.
pub fn minimal_rotation(from: &Vec3, to: &Vec3) -> Option<AxisAngle> {
    let (nf, nt) = (from.norm(), to.norm());
    if nf < MIN_BONE_LENGTH || nt < MIN_BONE_LENGTH {
        return None;
    }
    let a = from / nf;
    let b = to / nt;
    let cross = a.cross(&b);
    let sin = cross.norm();
    let cos = a.dot(&b).clamp(-1.0, 1.0);
    let angle = sin.atan2(cos);
    if sin < 1e-15 {
        if cos > 0.0 {
            return Some(AxisAngle::ZERO);
        }
        // antiparallel: any perpendicular axis works; take the one furthest from `a`
        let helper = match a.iamin() {
            0 => Vec3::x(),
            1 => Vec3::y(),
            _ => Vec3::z(),
        };
        let axis = a.cross(&helper).normalize();
        return Some(AxisAngle(axis * std::f64::consts::PI));
    }
    Some(AxisAngle(cross / sin * angle))
}

/// Recovers per-joint rotations from observed joint positions, using
/// template bone lengths. The wrist rotation comes from a Procrustes solve
/// over `wrist_solve_set` (positions relative to the wrist); every other
/// joint takes the twist-free rotation aligning its template bone with the
/// observed bone expressed in the parent frame.
pub fn inverse_kinematics(skel: &HandSkeleton, observed: &JointSet) -> Result<IkSolution> {
    observed.validate()?;
    let wrist = observed.wrist();
    let src: Vec<Vec3> = skel
        .wrist_solve_set
        .iter()
        .map(|&j| skel.template[j] - skel.template[0])
        .collect();
    let dst: Vec<Vec3> = skel
        .wrist_solve_set
        .iter()
        .map(|&j| observed.0[j] - wrist)
        .collect();
    let wrist_rot = procrustes_rotation(&src, &dst).map_err(|_| {
        Error::Degenerate("wrist solve joints are collinear with the wrist".into())
    })?;

    let mut theta = vec![AxisAngle::ZERO; POSE_JOINT_COUNT];
    let mut degenerate = vec![false; POSE_JOINT_COUNT];
    let mut rotations = vec![Mat3::identity(); JOINT_COUNT];
    theta[0] = crate::geom::rodrigues_log(&wrist_rot)?;
    rotations[0] = rodrigues_exp(&theta[0]);

    for (i, &j) in skel.pose_joints.iter().enumerate().skip(1) {
        let parent = skel.parent(j).expect("articulated joints have parents");
        let child = skel.child_of(j).expect("articulated joints have a child");
        let parent_rot = rotations[parent];
        let template_dir = skel.template[child] - skel.template[j];
        let observed_dir = parent_rot.transpose() * (observed.0[child] - observed.0[j]);
        theta[i] = match minimal_rotation(&template_dir, &observed_dir) {
            Some(t) => t,
            None => {
                degenerate[i] = true;
                AxisAngle::ZERO
            }
        };
        rotations[j] = parent_rot * rodrigues_exp(&theta[i]);
    }
    // tips inherit nothing; rotations for them are never read

    let mut pose = HandPose::from_theta(skel, theta);
    pose.phi[0] = wrist;
    Ok(IkSolution { pose, degenerate })
}

/// Dense `D^3` grid of joint scores over an axis-aligned box.
#[derive(Debug, Clone)]
pub struct VolumetricHeatmap {
    pub resolution: usize,
    /// x-major: index = (ix * D + iy) * D + iz
    pub values: Vec<f64>,
    pub extent_min: Vec3,
    pub extent_max: Vec3,
}

impl VolumetricHeatmap {
    pub const DEFAULT_RESOLUTION: usize = 64;

    pub fn new(resolution: usize, values: Vec<f64>, extent_min: Vec3, extent_max: Vec3) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument("heatmap resolution must be >= 2".into()));
        }
        let expected = resolution.pow(3);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
                context: "heatmap values",
            });
        }
        Ok(VolumetricHeatmap {
            resolution,
            values,
            extent_min,
            extent_max,
        })
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.resolution + iy) * self.resolution + iz
    }

    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let d = self.resolution as f64;
        let span = self.extent_max - self.extent_min;
        self.extent_min
            + Vec3::new(
                (ix as f64 + 0.5) / d * span.x,
                (iy as f64 + 0.5) / d * span.y,
                (iz as f64 + 0.5) / d * span.z,
            )
    }
}

/// Softmax-weighted mean of cell centers.
pub fn soft_argmax(h: &VolumetricHeatmap, temperature: f64) -> Result<Vec3> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    if h.values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidArgument("heatmap contains NaN or +inf".into()));
    }
    let max = h.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("heatmap has no finite value".into()));
    }
    let d = h.resolution;
    let mut weight_sum = 0.0;
    let mut acc = Vec3::zeros();
    for ix in 0..d {
        for iy in 0..d {
            for iz in 0..d {
                let w = ((h.values[h.index(ix, iy, iz)] - max) / temperature).exp();
                if w > 0.0 {
                    weight_sum += w;
                    acc += h.cell_center(ix, iy, iz) * w;
                }
            }
        }
    }
    Ok(acc / weight_sum)
}
