//! Dense SDF sampling and marching-cubes extraction.

pub mod tables;

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{Aabb, TriMesh};
use crate::sdf::dataset::NormalizationTransform;
use tables::{CORNERS, EDGES, EDGE_TABLE, TRIANGLE_TABLE};

pub const DEFAULT_RESOLUTION: usize = 64;

/// Scalar samples on the corner-aligned lattice of `bounds`, `n` points per
/// axis. Values are stored x-major: `values[(ix * n + iy) * n + iz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub resolution: usize,
    pub bounds: Aabb,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(resolution: usize, bounds: Aabb, values: Vec<f64>) -> Result<Self> {
        check_lattice(resolution, &bounds)?;
        if values.len() != resolution.pow(3) {
            return Err(Error::DimensionMismatch {
                expected: resolution.pow(3),
                actual: values.len(),
                context: "grid values",
            });
        }
        let g = ScalarGrid { resolution, bounds, values };
        g.check_finite()?;
        Ok(g)
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.resolution + iy) * self.resolution + iz
    }

    pub fn value(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.index(ix, iy, iz)]
    }

    pub fn spacing(&self) -> Vec3 {
        self.bounds.extent() / (self.resolution - 1) as f64
    }

    pub fn point(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        lattice_point(&self.bounds, self.resolution, ix, iy, iz)
    }

    fn check_finite(&self) -> Result<()> {
        if let Some((k, v)) = self.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let n = self.resolution;
            let (ix, iy, iz) = (k / (n * n), (k / n) % n, k % n);
            let p = self.point(ix, iy, iz);
            return Err(Error::NonFinite {
                value: *v,
                context: format!(
                    "field at lattice point ({ix}, {iy}, {iz}) = ({:.6}, {:.6}, {:.6})",
                    p.x, p.y, p.z
                ),
            });
        }
        Ok(())
    }
}

fn check_lattice(n: usize, bounds: &Aabb) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("grid resolution {n} must be >= 2")));
    }
    if bounds.is_empty() || bounds.extent().iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Degenerate("grid bounds must have positive extent".into()));
    }
    Ok(())
}

fn lattice_point(bounds: &Aabb, n: usize, ix: usize, iy: usize, iz: usize) -> Vec3 {
    let t = |i: usize, lo: f64, hi: f64| {
        // exact at both ends
        if i + 1 == n {
            hi
        } else {
            lo + (hi - lo) * (i as f64 / (n - 1) as f64)
        }
    };
    Vec3::new(
        t(ix, bounds.min.x, bounds.max.x),
        t(iy, bounds.min.y, bounds.max.y),
        t(iz, bounds.min.z, bounds.max.z),
    )
}

/// Samples `f` at every lattice point.
pub fn evaluate_grid<F>(f: F, bounds: Aabb, n: usize) -> Result<ScalarGrid>
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    check_lattice(n, &bounds)?;
    let values = (0..n * n * n)
        .into_par_iter()
        .map(|k| f(&lattice_point(&bounds, n, k / (n * n), (k / n) % n, k % n)))
        .collect();
    ScalarGrid::new(n, bounds, values)
}

/// Like [`evaluate_grid`] but hands `f` one x-slab of `n * n` points at a time.
pub fn evaluate_grid_batched<F>(f: F, bounds: Aabb, n: usize) -> Result<ScalarGrid>
where
    F: Fn(&[Vec3]) -> Result<Vec<f64>>,
{
    check_lattice(n, &bounds)?;
    let mut values = Vec::with_capacity(n * n * n);
    let mut slab = Vec::with_capacity(n * n);
    for ix in 0..n {
        slab.clear();
        for iy in 0..n {
            for iz in 0..n {
                slab.push(lattice_point(&bounds, n, ix, iy, iz));
            }
        }
        let out = f(&slab)?;
        if out.len() != slab.len() {
            return Err(Error::DimensionMismatch {
                expected: slab.len(),
                actual: out.len(),
                context: "batched field values",
            });
        }
        values.extend(out);
    }
    ScalarGrid::new(n, bounds, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsoMesh {
    pub mesh: TriMesh,
    pub iso: f64,
    pub resolution: usize,
    pub model_id: Option<String>,
}

/// Extracts the `iso` level set. Triangles are wound so their normals point
/// toward increasing field values. Corners exactly at `iso` count as above it.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> IsoMesh {
    let n = grid.resolution;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut edge_vertex: HashMap<usize, u32> = HashMap::new();
    for ix in 0..n - 1 {
        for iy in 0..n - 1 {
            for iz in 0..n - 1 {
                let base = [ix, iy, iz];
                let corner = |k: usize| [base[0] + CORNERS[k][0], base[1] + CORNERS[k][1], base[2] + CORNERS[k][2]];
                let mut values = [0.0; 8];
                let mut case = 0usize;
                for (k, v) in values.iter_mut().enumerate() {
                    let c = corner(k);
                    *v = grid.value(c[0], c[1], c[2]);
                    if *v < iso {
                        case |= 1 << k;
                    }
                }
                let mask = EDGE_TABLE[case];
                if mask == 0 {
                    continue;
                }
                let mut ids = [u32::MAX; 12];
                for (e, id) in ids.iter_mut().enumerate() {
                    if mask & (1 << e) == 0 {
                        continue;
                    }
                    let [a, b] = EDGES[e];
                    let (ca, cb) = (corner(a), corner(b));
                    let axis = (0..3).find(|&d| ca[d] != cb[d]).expect("edge spans one axis");
                    let lo = if ca[axis] < cb[axis] { ca } else { cb };
                    let key = ((lo[0] * n + lo[1]) * n + lo[2]) * 3 + axis;
                    *id = *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (values[a], values[b]);
                        let (pa, pb) = (grid.point(ca[0], ca[1], ca[2]), grid.point(cb[0], cb[1], cb[2]));
                        let denom = vb - va;
                        let t = if denom.abs() < 1e-300 { 0.5 } else { ((iso - va) / denom).clamp(0.0, 1.0) };
                        let mut p = pa + (pb - pa) * t;
                        // keep the off-axis coordinates exactly on the lattice
                        for d in 0..3 {
                            if d != axis {
                                p[d] = pa[d];
                            }
                        }
                        vertices.push(p);
                        (vertices.len() - 1) as u32
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    // table order winds toward the low side; reverse it
                    triangles.push([ids[tri[0] as usize], ids[tri[2] as usize], ids[tri[1] as usize]]);
                }
            }
        }
    }
    let mut mesh = TriMesh { vertices, triangles };
    mesh.remove_degenerate_triangles();
    IsoMesh {
        mesh,
        iso,
        resolution: n,
        model_id: None,
    }
}

/// Maps normalized-space vertices back to world units.
pub fn denormalize_mesh(m: &TriMesh, t: &NormalizationTransform) -> TriMesh {
    m.map_vertices(|v| t.invert(v))
}
