//! Indexed triangle meshes, OBJ I/O and a few primitive builders.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let b = Aabb {
            min: self.min.sup(&other.min),
            max: self.max.inf(&other.max),
        };
        (b.min.x <= b.max.x && b.min.y <= b.max.y && b.min.z <= b.max.z).then_some(b)
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&(p - self.max)).sup(&Vec3::zeros());
        d.norm_squared()
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidArgument(format!(
                "triangle {t:?} references a vertex out of range (have {n})"
            )));
        }
        Ok(TriMesh {
            vertices,
            triangles,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a)).norm() * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    /// Drops zero-area triangles; returns how many were removed.
    pub fn remove_degenerate_triangles(&mut self) -> usize {
        let before = self.triangles.len();
        let diag = self.bounds().extent().norm();
        let tol = 1e-14 * diag * diag;
        let verts = &self.vertices;
        self.triangles.retain(|t| {
            let (a, b, c) = (verts[t[0] as usize], verts[t[1] as usize], verts[t[2] as usize]);
            t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && (b - a).cross(&(c - a)).norm() > tol
        });
        before - self.triangles.len()
    }

    /// Every undirected edge is shared by exactly two triangles, traversed
    /// once in each direction.
    pub fn is_watertight(&self) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        let mut used = std::collections::HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
                used.insert(a);
            }
        }
        used.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// Signed enclosed volume (positive for outward-facing windings).
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn flipped(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
        }
    }

    /// Concatenates meshes into one vertex/index buffer.
    pub fn merged(meshes: &[&TriMesh]) -> TriMesh {
        let mut out = TriMesh::default();
        for m in meshes {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&m.vertices);
            out.triangles
                .extend(m.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
        out
    }

    /// Parses `v` and `f` records; polygons are fan-triangulated and
    /// degenerate triangles dropped.
    pub fn read_obj<R: BufRead>(reader: R, source_name: &str) -> Result<TriMesh> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let err = |m: &str| Error::parse(source_name, format!("line {}: {m}", lineno + 1));
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err("bad vertex coordinate"))?;
                    if coords.len() != 3 {
                        return Err(err("vertex needs three coordinates"));
                    }
                    vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for token in parts {
                        let first = token.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| err("bad face index"))?;
                        let resolved = if i > 0 {
                            i - 1
                        } else if i < 0 {
                            vertices.len() as i64 + i
                        } else {
                            return Err(err("face index 0 is invalid"));
                        };
                        if resolved < 0 || resolved >= vertices.len() as i64 {
                            return Err(err("face index out of range"));
                        }
                        idx.push(resolved as u32);
                    }
                    if idx.len() < 3 {
                        return Err(err("face needs at least three vertices"));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        let mut mesh = TriMesh::new(vertices, triangles)?;
        mesh.remove_degenerate_triangles();
        Ok(mesh)
    }

    pub fn load_obj(path: &std::path::Path) -> Result<TriMesh> {
        let f = std::fs::File::open(path)?;
        TriMesh::read_obj(std::io::BufReader::new(f), &path.display().to_string())
    }

    /// Writes `v`/`f` records (1-based). `header` lines are emitted as comments.
    pub fn write_obj<W: Write>(&self, mut w: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(w, "# {line}")?;
        }
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }

    /// Geodesic sphere from a subdivided icosahedron (`10 * 4^level + 2` vertices).
    pub fn icosphere(radius: f64, level: u32) -> TriMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Vec3> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        for _ in 0..level {
            let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
            let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
                *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                    verts.len() as u32 - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        TriMesh {
            vertices: vertices.into_iter().map(|v| v * radius).collect(),
            triangles: faces,
        }
    }

    /// Axis-aligned box with outward-facing triangles.
    pub fn cuboid(min: Vec3, max: Vec3) -> TriMesh {
        let vertices = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { min.x } else { max.x },
                    if i & 2 == 0 { min.y } else { max.y },
                    if i & 4 == 0 { min.z } else { max.z },
                )
            })
            .collect();
        let triangles = vec![
            [0, 2, 1], [1, 2, 3], // z = min
            [4, 5, 6], [5, 7, 6], // z = max
            [0, 1, 4], [1, 5, 4], // y = min
            [2, 6, 3], [3, 6, 7], // y = max
            [0, 4, 2], [2, 4, 6], // x = min
            [1, 3, 5], [3, 7, 5], // x = max
        ];
        TriMesh {
            vertices,
            triangles,
        }
    }
}

/// Area-weighted uniform sampler over a mesh surface.
#[derive(Debug, Clone)]
pub struct AreaSampler<'a> {
    mesh: &'a TriMesh,
    cdf: Vec<f64>,
}

impl<'a> AreaSampler<'a> {
    pub fn new(mesh: &'a TriMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::Empty("mesh has no triangles to sample"));
        }
        let mut acc = 0.0;
        let cdf = (0..mesh.triangles.len())
            .map(|i| {
                acc += mesh.triangle_area(i);
                acc
            })
            .collect::<Vec<_>>();
        if !(acc > 0.0) {
            return Err(Error::Degenerate("mesh has zero surface area".into()));
        }
        Ok(AreaSampler { mesh, cdf })
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let total = *self.cdf.last().expect("non-empty cdf");
        let r = rng.random::<f64>() * total;
        let i = self.cdf.partition_point(|&c| c <= r).min(self.cdf.len() - 1);
        let [a, b, c] = self.mesh.triangle(i);
        let s = rng.random::<f64>().sqrt();
        let t = rng.random::<f64>();
        a * (1.0 - s) + b * (s * (1.0 - t)) + c * (s * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_topology() {
        let s = TriMesh::icosphere(1.0, 4);
        assert_eq!(s.vertices.len(), 2562);
        assert_eq!(s.triangles.len(), 5120);
        assert!(s.is_watertight());
        assert_eq!(s.euler_characteristic(), 2);
        assert!(s.signed_volume() > 4.0);
    }

    #[test]
    fn cuboid_is_closed_and_outward() {
        let c = TriMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0));
        assert!(c.is_watertight());
        assert!((c.signed_volume() - 6.0).abs() < 1e-12);
        assert!((c.flipped().signed_volume() + 6.0).abs() < 1e-12);
        assert!((c.surface_area() - 22.0).abs() < 1e-12);
    }

    #[test]
    fn obj_roundtrip_with_quads() {
        let text = "# comment\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\nf 1/1/1 2//2 -1\n";
        let m = TriMesh::read_obj(text.as_bytes(), "inline").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3], [0, 1, 3]]);
        let mut buf = Vec::new();
        m.write_obj(&mut buf, &["seed 1".into()]).unwrap();
        let back = TriMesh::read_obj(&buf[..], "buf").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn obj_errors_and_degenerate_filtering() {
        assert!(TriMesh::read_obj("v 0 0\n".as_bytes(), "x").is_err());
        assert!(TriMesh::read_obj("v 0 0 0\nf 1 2 3\n".as_bytes(), "x").is_err());
        let m = TriMesh::read_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n".as_bytes(), "x").unwrap();
        assert!(m.is_empty());
        assert!(TriMesh::new(vec![Vec3::zeros()], vec![[0, 0, 1]]).is_err());
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        let mut c = TriMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        c.triangles.pop();
        assert!(!c.is_watertight());
    }

    #[test]
    fn aabb_ops() {
        let a = Aabb { min: Vec3::zeros(), max: Vec3::repeat(1.0) };
        let b = Aabb { min: Vec3::repeat(0.5), max: Vec3::repeat(2.0) };
        let i = a.intersection(&b).unwrap();
        assert_eq!(i.min, Vec3::repeat(0.5));
        assert_eq!(i.max, Vec3::repeat(1.0));
        assert!(a.intersection(&Aabb { min: Vec3::repeat(3.0), max: Vec3::repeat(4.0) }).is_none());
        assert_eq!(a.distance_squared(&Vec3::new(2.0, 0.5, 0.5)), 1.0);
        assert_eq!(a.distance_squared(&Vec3::repeat(0.5)), 0.0);
    }
}
