#![allow(dead_code)]

use std::path::{Path, PathBuf};

use kinsdf::kinematics::{HandSkeleton, JointSet};
use kinsdf::reconstruct::denormalize_mesh;
use kinsdf::synthetic::{random_scenes, SceneConfig, SyntheticScene};

pub struct SceneFiles {
    pub hand: PathBuf,
    pub object: PathBuf,
    pub joints: PathBuf,
    pub scene: SyntheticScene,
}

pub fn joints_json(j: &JointSet) -> String {
    let rows: Vec<[f64; 3]> = j.0.iter().map(|p| [p.x, p.y, p.z]).collect();
    serde_json::json!({ "joints": rows }).to_string()
}

/// Writes a synthetic grasp (world units) as OBJ meshes plus its joints.
pub fn write_scene(dir: &Path, seed: u64, resolution: usize) -> SceneFiles {
    let skel = HandSkeleton::default_hand();
    let scene = random_scenes(&skel, &SceneConfig::default(), 1, seed).unwrap().remove(0);
    let (h, o) = scene.normalized_meshes(resolution).unwrap();
    let hand = dir.join("hand.obj");
    let object = dir.join("object.obj");
    let joints = dir.join("joints.json");
    let mut buf = Vec::new();
    denormalize_mesh(&h, &scene.normalization).write_obj(&mut buf, &[]).unwrap();
    std::fs::write(&hand, &buf).unwrap();
    buf.clear();
    denormalize_mesh(&o, &scene.normalization).write_obj(&mut buf, &[]).unwrap();
    std::fs::write(&object, &buf).unwrap();
    std::fs::write(&joints, joints_json(&scene.posed.joints)).unwrap();
    SceneFiles { hand, object, joints, scene }
}

/// Runs the CLI in-process; panics with the arguments on a nonzero exit.
pub fn kinsdf(args: &[&str]) {
    let mut full = vec!["kinsdf"];
    full.extend_from_slice(args);
    let code = kinsdf::cli::run(full);
    assert_eq!(code, 0, "kinsdf {args:?} exited with {code}");
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
