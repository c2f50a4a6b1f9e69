//! Python module `kinsdf`: kinematics, kinematic features, mesh signed
//! distances, marching cubes and reconstruction metrics.
//!
//! Points cross the boundary as lists of `(x, y, z)` tuples.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use kinsdf::features::{hand_kinematic_feature, object_kinematic_feature};
use kinsdf::geom::{AxisAngle, Vec3};
use kinsdf::kinematics::{forward_kinematics as fk, inverse_kinematics as ik, HandPose, HandSkeleton, JointSet};
use kinsdf::mesh::{Aabb, TriMesh};
use kinsdf::metrics;
use kinsdf::reconstruct::{self, ScalarGrid};
use kinsdf::sdf::MeshSdf;

type P3 = (f64, f64, f64);

fn to_py(e: kinsdf::Error) -> PyErr {
    match e.exit_code() {
        2 if matches!(e, kinsdf::Error::Io(_)) => PyOSError::new_err(e.to_string()),
        2 | 3 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn v(p: &P3) -> Vec3 {
    Vec3::new(p.0, p.1, p.2)
}

fn t(p: &Vec3) -> P3 {
    (p.x, p.y, p.z)
}

fn vs(ps: &[P3]) -> Vec<Vec3> {
    ps.iter().map(v).collect()
}

fn joint_set(ps: &[P3]) -> PyResult<JointSet> {
    let j = JointSet(vs(ps));
    j.validate().map_err(to_py)?;
    Ok(j)
}

/// Triangle mesh.
#[pyclass(module = "kinsdf")]
pub struct Mesh {
    inner: TriMesh,
}

#[pymethods]
impl Mesh {
    #[new]
    fn new(vertices: Vec<P3>, triangles: Vec<(u32, u32, u32)>) -> PyResult<Self> {
        let tris = triangles.iter().map(|&(a, b, c)| [a, b, c]).collect();
        Ok(Mesh { inner: TriMesh::new(vs(&vertices), tris).map_err(to_py)? })
    }

    #[staticmethod]
    fn icosphere(radius: f64, level: u32) -> Self {
        Mesh { inner: TriMesh::icosphere(radius, level) }
    }

    #[staticmethod]
    fn cuboid(lo: P3, hi: P3) -> Self {
        Mesh { inner: TriMesh::cuboid(v(&lo), v(&hi)) }
    }

    #[staticmethod]
    fn load_obj(path: &str) -> PyResult<Self> {
        Ok(Mesh { inner: TriMesh::load_obj(std::path::Path::new(path)).map_err(to_py)? })
    }

    fn save_obj(&self, path: &str) -> PyResult<()> {
        let mut buf = Vec::new();
        self.inner.write_obj(&mut buf, &[]).map_err(to_py)?;
        std::fs::write(path, buf).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))
    }

    #[getter]
    fn vertices(&self) -> Vec<P3> {
        self.inner.vertices.iter().map(t).collect()
    }

    #[getter]
    fn triangles(&self) -> Vec<(u32, u32, u32)> {
        self.inner.triangles.iter().map(|f| (f[0], f[1], f[2])).collect()
    }

    fn surface_area(&self) -> f64 {
        self.inner.surface_area()
    }

    fn signed_volume(&self) -> f64 {
        self.inner.signed_volume()
    }

    fn is_watertight(&self) -> bool {
        self.inner.is_watertight()
    }

    fn euler_characteristic(&self) -> i64 {
        self.inner.euler_characteristic()
    }

    /// Signed distances (negative inside) at `points`.
    fn signed_distance(&self, points: Vec<P3>) -> Vec<f64> {
        let sdf = MeshSdf::new(&self.inner);
        points.iter().map(|p| sdf.signed_distance(&v(p))).collect()
    }

    fn sample_surface(&self, n: usize, seed: u64) -> PyResult<Vec<P3>> {
        Ok(metrics::sample_surface(&self.inner, n, seed).map_err(to_py)?.iter().map(t).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.triangles.len()
    }

    fn __repr__(&self) -> String {
        format!("Mesh(vertices={}, triangles={})", self.inner.vertices.len(), self.inner.triangles.len())
    }
}

fn skeleton(json: Option<&str>) -> PyResult<HandSkeleton> {
    match json {
        Some(s) => HandSkeleton::from_json(s).map_err(to_py),
        None => Ok(HandSkeleton::default_hand()),
    }
}

/// 21 joint positions for 16 axis-angle rotations (and optional offsets).
#[pyfunction]
#[pyo3(signature = (theta, phi=None, skeleton_json=None))]
fn forward_kinematics(theta: Vec<P3>, phi: Option<Vec<P3>>, skeleton_json: Option<&str>) -> PyResult<Vec<P3>> {
    let skel = skeleton(skeleton_json)?;
    let mut pose = HandPose::from_theta(&skel, theta.iter().map(|p| AxisAngle(v(p))).collect());
    if let Some(phi) = phi {
        pose.phi = vs(&phi);
    }
    pose.validate().map_err(to_py)?;
    Ok(fk(&skel, &pose).joints.0.iter().map(t).collect())
}

/// `(theta, phi, degenerate)` recovered from 21 joint positions.
#[pyfunction]
#[pyo3(signature = (joints, skeleton_json=None))]
fn inverse_kinematics(joints: Vec<P3>, skeleton_json: Option<&str>) -> PyResult<(Vec<P3>, Vec<P3>, Vec<bool>)> {
    let skel = skeleton(skeleton_json)?;
    let sol = ik(&skel, &joint_set(&joints)?).map_err(to_py)?;
    Ok((sol.pose.theta.iter().map(|a| t(&a.0)).collect(), sol.pose.phi.iter().map(t).collect(), sol.degenerate))
}

/// 51-dimensional hand feature of `x` for a hand posed at `joints`.
#[pyfunction]
fn hand_features(x: P3, joints: Vec<P3>) -> PyResult<Vec<f64>> {
    let skel = HandSkeleton::default_hand();
    let sol = ik(&skel, &joint_set(&joints)?).map_err(to_py)?;
    let posed = fk(&skel, &sol.pose);
    Ok(hand_kinematic_feature(&v(&x), &posed.globals).0.to_vec())
}

/// 72-dimensional object feature of `x`.
#[pyfunction]
fn object_features(x: P3, object_center: P3, joints: Vec<P3>) -> PyResult<Vec<f64>> {
    let skel = HandSkeleton::default_hand();
    let js = joint_set(&joints)?;
    let sol = ik(&skel, &js).map_err(to_py)?;
    let wrist = fk(&skel, &sol.pose).globals[0];
    Ok(object_kinematic_feature(&v(&x), &v(&object_center), &js, &wrist).0.to_vec())
}

/// Isosurface of an `n^3` lattice (x-major values) spanning `[lo, hi]`.
#[pyfunction]
#[pyo3(signature = (values, resolution, lo, hi, iso=0.0))]
fn marching_cubes(values: Vec<f64>, resolution: usize, lo: P3, hi: P3, iso: f64) -> PyResult<Mesh> {
    let grid = ScalarGrid::new(resolution, Aabb { min: v(&lo), max: v(&hi) }, values).map_err(to_py)?;
    Ok(Mesh { inner: reconstruct::marching_cubes(&grid, iso).mesh })
}

#[pyfunction]
fn chamfer_distance(a: Vec<P3>, b: Vec<P3>) -> PyResult<f64> {
    metrics::chamfer_distance(&vs(&a), &vs(&b)).map_err(to_py)
}

#[pyfunction]
fn f_score(pred: Vec<P3>, gt: Vec<P3>, threshold: f64) -> PyResult<f64> {
    metrics::f_score(&vs(&pred), &vs(&gt), threshold).map_err(to_py)
}

/// `(scale, translation, residual)` aligning `pred` onto `gt`.
#[pyfunction]
#[pyo3(signature = (pred, gt, iters=10))]
fn align_scale_translation(pred: Vec<P3>, gt: Vec<P3>, iters: usize) -> PyResult<(f64, P3, f64)> {
    let a = metrics::align_scale_translation(&vs(&pred), &vs(&gt), iters).map_err(to_py)?;
    Ok((a.scale, t(&a.translation), a.residual))
}

/// Wrist-relative mean joint error, in input units.
#[pyfunction]
fn joint_error(pred: Vec<P3>, gt: Vec<P3>) -> PyResult<f64> {
    Ok(metrics::joint_errors(&joint_set(&pred)?, &joint_set(&gt)?))
}

#[pymodule]
#[pyo3(name = "kinsdf")]
fn kinsdf_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Mesh>()?;
    m.add_function(wrap_pyfunction!(forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(hand_features, m)?)?;
    m.add_function(wrap_pyfunction!(object_features, m)?)?;
    m.add_function(wrap_pyfunction!(marching_cubes, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_distance, m)?)?;
    m.add_function(wrap_pyfunction!(f_score, m)?)?;
    m.add_function(wrap_pyfunction!(align_scale_translation, m)?)?;
    m.add_function(wrap_pyfunction!(joint_error, m)?)?;
    Ok(())
}
