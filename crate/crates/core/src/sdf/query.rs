//! Point-to-mesh distance and inside/outside classification, with a
//! bounding-volume hierarchy for the production path.

use crate::geom::Vec3;
use crate::mesh::{Aabb, TriMesh};

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

pub fn point_triangle_distance_squared(p: &Vec3, tri: &[Vec3; 3]) -> f64 {
    (p - closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2])).norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RayHit {
    Miss,
    Hit,
    /// Grazes an edge or vertex, or runs inside the triangle plane.
    Degenerate,
}

const BARY_EPS: f64 = 1e-10;

/// Moller-Trumbore test of the ray `origin + t * dir`, `t > 0`.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> RayHit {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    let tvec = origin - tri[0];
    if det.abs() <= 1e-14 * e1.norm() * e2.norm() {
        let n = e1.cross(&e2);
        let plane_dist = n.dot(&tvec).abs() / n.norm();
        return if plane_dist < 1e-12 * (1.0 + tvec.norm()) {
            RayHit::Degenerate
        } else {
            RayHit::Miss
        };
    }
    let inv = 1.0 / det;
    let u = tvec.dot(&pvec) * inv;
    if !(-BARY_EPS..=1.0 + BARY_EPS).contains(&u) {
        return RayHit::Miss;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < -BARY_EPS || u + v > 1.0 + BARY_EPS {
        return RayHit::Miss;
    }
    let t = e2.dot(&qvec) * inv;
    if t <= 0.0 {
        return RayHit::Miss;
    }
    if u < BARY_EPS || v < BARY_EPS || u + v > 1.0 - BARY_EPS {
        return RayHit::Degenerate;
    }
    RayHit::Hit
}

/// Near-axis ray directions used for the parity vote. Components are all
/// nonzero so no ray runs parallel to an axis-aligned face.
fn vote_directions() -> [Vec3; 3] {
    [
        Vec3::new(1.0, 0.012_345, 0.037_1).normalize(),
        Vec3::new(0.021_7, 1.0, -0.009_3).normalize(),
        Vec3::new(-0.015_1, 0.031_3, 1.0).normalize(),
    ]
}

const PERTURBATION: [f64; 3] = [0.013_1, -0.027_7, 0.019_3];
const MAX_PERTURBATIONS: usize = 8;

/// Parity of crossings along one ray, retrying with deterministic
/// perturbations while any crossing is degenerate.
fn ray_parity(base: &Vec3, mut crossings: impl FnMut(&Vec3) -> (usize, bool)) -> bool {
    let bump = Vec3::new(PERTURBATION[0], PERTURBATION[1], PERTURBATION[2]);
    let mut last = 0;
    for attempt in 0..=MAX_PERTURBATIONS {
        let dir = (base + bump * attempt as f64).normalize();
        let (hits, degenerate) = crossings(&dir);
        last = hits;
        if !degenerate {
            break;
        }
    }
    last % 2 == 1
}

fn vote(mut crossings: impl FnMut(&Vec3) -> (usize, bool)) -> bool {
    vote_directions()
        .iter()
        .filter(|d| ray_parity(d, &mut crossings))
        .count()
        >= 2
}

/// Reference distance: scans every triangle.
pub fn unsigned_distance_brute(mesh: &TriMesh, p: &Vec3) -> f64 {
    (0..mesh.triangles.len())
        .map(|i| point_triangle_distance_squared(p, &mesh.triangle(i)))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Reference inside test: 3-ray parity vote over every triangle.
pub fn is_inside_brute(mesh: &TriMesh, p: &Vec3) -> bool {
    vote(|dir| {
        let mut hits = 0;
        let mut degenerate = false;
        for i in 0..mesh.triangles.len() {
            match ray_triangle(p, dir, &mesh.triangle(i)) {
                RayHit::Hit => hits += 1,
                RayHit::Degenerate => degenerate = true,
                RayHit::Miss => {}
            }
        }
        (hits, degenerate)
    })
}

/// Brute-force signed distance: negative inside.
pub fn signed_distance(mesh: &TriMesh, p: &Vec3) -> f64 {
    let d = unsigned_distance_brute(mesh, p);
    if is_inside_brute(mesh, p) {
        -d
    } else {
        d
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// leaves: `start..start + count` into `order`; inner nodes: children at `left`, `left + 1`
    left: u32,
    start: u32,
    count: u32,
}

const LEAF_SIZE: usize = 4;

/// Median-split bounding-volume hierarchy over triangles.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    triangles: Vec<[Vec3; 3]>,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Bvh {
        let triangles: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|i| mesh.triangle(i)).collect();
        let centroids: Vec<Vec3> = triangles.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: Vec::new(),
            triangles,
        };
        if !order.is_empty() {
            bvh.nodes.push(Node {
                bounds: Aabb::empty(),
                left: 0,
                start: 0,
                count: 0,
            });
            bvh.split(0, &mut order, 0, &centroids);
        }
        bvh.order = order;
        bvh
    }

    fn tri_bounds(&self, idx: &[u32]) -> Aabb {
        let mut b = Aabb::empty();
        for &i in idx {
            for v in &self.triangles[i as usize] {
                b.grow(v);
            }
        }
        b
    }

    fn split(&mut self, node: usize, order: &mut [u32], offset: usize, centroids: &[Vec3]) {
        let bounds = self.tri_bounds(order);
        self.nodes[node].bounds = bounds;
        if order.len() <= LEAF_SIZE {
            self.nodes[node].start = offset as u32;
            self.nodes[node].count = order.len() as u32;
            return;
        }
        let cb = Aabb::from_points(order.iter().map(|&i| &centroids[i as usize]));
        let axis = cb.extent().imax();
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let left = self.nodes.len();
        for _ in 0..2 {
            self.nodes.push(Node {
                bounds: Aabb::empty(),
                left: 0,
                start: 0,
                count: 0,
            });
        }
        self.nodes[node].left = left as u32;
        let (lo, hi) = order.split_at_mut(mid);
        self.split(left, lo, offset, centroids);
        self.split(left + 1, hi, offset + mid, centroids);
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        if self.nodes.is_empty() {
            return best;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds.distance_squared(p) >= best {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &t in &self.order[s..s + node.count as usize] {
                    best = best.min(point_triangle_distance_squared(p, &self.triangles[t as usize]));
                }
                continue;
            }
            let (l, r) = (node.left as usize, node.left as usize + 1);
            let dl = self.nodes[l].bounds.distance_squared(p);
            let dr = self.nodes[r].bounds.distance_squared(p);
            // push the farther child first so the nearer one is expanded next
            if dl < dr {
                stack.extend([r, l]);
            } else {
                stack.extend([l, r]);
            }
        }
        best
    }

    fn ray_hits_box(b: &Aabb, origin: &Vec3, inv_dir: &Vec3) -> bool {
        let pad = 1e-9 * (1.0 + b.extent().norm());
        let mut tmin: f64 = 0.0;
        let mut tmax = f64::INFINITY;
        for k in 0..3 {
            let t1 = (b.min[k] - pad - origin[k]) * inv_dir[k];
            let t2 = (b.max[k] + pad - origin[k]) * inv_dir[k];
            tmin = tmin.max(t1.min(t2));
            tmax = tmax.min(t1.max(t2));
        }
        tmin <= tmax
    }

    /// Counts ray crossings; the flag reports any degenerate crossing.
    pub fn ray_crossings(&self, origin: &Vec3, dir: &Vec3) -> (usize, bool) {
        let mut hits = 0;
        let mut degenerate = false;
        if self.nodes.is_empty() {
            return (0, false);
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !Self::ray_hits_box(&node.bounds, origin, &inv) {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &t in &self.order[s..s + node.count as usize] {
                    match ray_triangle(origin, dir, &self.triangles[t as usize]) {
                        RayHit::Hit => hits += 1,
                        RayHit::Degenerate => degenerate = true,
                        RayHit::Miss => {}
                    }
                }
            } else {
                stack.extend([node.left as usize, node.left as usize + 1]);
            }
        }
        (hits, degenerate)
    }
}

/// A mesh prepared for repeated signed-distance queries.
#[derive(Debug, Clone)]
pub struct MeshSdf {
    bvh: Bvh,
    watertight: bool,
}

impl MeshSdf {
    pub fn new(mesh: &TriMesh) -> Self {
        MeshSdf {
            bvh: Bvh::build(mesh),
            watertight: mesh.is_watertight(),
        }
    }

    /// Whether the sign of [`MeshSdf::signed_distance`] can be trusted.
    pub fn sign_reliable(&self) -> bool {
        self.watertight
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.bvh.distance_squared(p).sqrt()
    }

    pub fn is_inside(&self, p: &Vec3) -> bool {
        vote(|dir| self.bvh.ray_crossings(p, dir))
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let d = self.distance(p);
        if self.is_inside(p) {
            -d
        } else {
            d
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Reference distance: in-plane projection when it falls inside the
    /// triangle, otherwise the nearest of the three edges.
    fn oracle_distance(p: &Vec3, t: &[Vec3; 3]) -> f64 {
        let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
        let nn = n.norm_squared();
        let q = p - n * (n.dot(&(p - t[0])) / nn);
        let inside = (0..3).all(|k| {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            (b - a).cross(&(q - a)).dot(&n) >= 0.0
        });
        if inside {
            return (p - q).norm();
        }
        (0..3)
            .map(|k| {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let s = ((p - a).dot(&(b - a)) / (b - a).norm_squared()).clamp(0.0, 1.0);
                (p - (a + (b - a) * s)).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Generalized winding number via solid angles.
    fn winding_number(mesh: &TriMesh, p: &Vec3) -> f64 {
        let mut total = 0.0;
        for i in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.triangle(i);
            let (a, b, c) = (a - p, b - p, c - p);
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    fn rand_point(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    #[test]
    fn closest_point_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let t = [rand_point(&mut rng, 1.0), rand_point(&mut rng, 1.0), rand_point(&mut rng, 1.0)];
            let p = rand_point(&mut rng, 2.0);
            let d = point_triangle_distance_squared(&p, &t).sqrt();
            assert!((d - oracle_distance(&p, &t)).abs() < 1e-9);
        }
    }

    #[test]
    fn sphere_signs_and_magnitudes() {
        let s = TriMesh::icosphere(1.0, 4);
        assert!((signed_distance(&s, &Vec3::zeros()) + 1.0).abs() < 2e-3);
        assert!((signed_distance(&s, &Vec3::new(2.0, 0.0, 0.0)) - 1.0).abs() < 2e-3);
        let q = MeshSdf::new(&s);
        assert!(q.sign_reliable());
        assert!((q.signed_distance(&Vec3::zeros()) + 1.0).abs() < 2e-3);
    }

    #[test]
    fn bvh_agrees_with_brute_force() {
        let s = TriMesh::icosphere(0.7, 3);
        let q = MeshSdf::new(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let p = rand_point(&mut rng, 1.5);
            assert!((q.signed_distance(&p) - signed_distance(&s, &p)).abs() < 1e-9);
        }
    }

    #[test]
    fn parity_agrees_with_winding_number() {
        let mesh = TriMesh::merged(&[
            &TriMesh::cuboid(Vec3::new(-0.5, -0.5, -0.5), Vec3::new(0.5, 0.5, 0.5)),
            &TriMesh::icosphere(0.3, 2).map_vertices(|v| v + Vec3::new(1.2, 0.0, 0.0)),
        ]);
        let q = MeshSdf::new(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3000 {
            let p = rand_point(&mut rng, 1.6);
            let w = winding_number(&mesh, &p);
            if (w - 0.5).abs() > 0.4 {
                assert_eq!(q.is_inside(&p), w > 0.5, "p = {p:?}, w = {w}");
            }
        }
    }

    #[test]
    fn grid_aligned_queries_on_cube_are_consistent() {
        // rays through cube edges/vertices exercise the perturbation path
        let c = TriMesh::cuboid(Vec3::repeat(-1.0), Vec3::repeat(1.0));
        let q = MeshSdf::new(&c);
        for &p in &[Vec3::zeros(), Vec3::new(0.0, 0.5, 0.5), Vec3::new(0.5, 0.0, 0.0)] {
            assert!(q.is_inside(&p));
        }
        for &p in &[Vec3::new(0.0, 1.5, 0.0), Vec3::new(-2.0, -1.0, -1.0), Vec3::new(1.0001, 1.0, 1.0)] {
            assert!(!q.is_inside(&p));
        }
        let p = Vec3::new(0.25, 0.0, 0.0);
        assert!((q.signed_distance(&p) + 0.75).abs() < 1e-12);
    }

    #[test]
    fn scaling_equivariance() {
        let s = TriMesh::icosphere(1.0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let k = rng.random_range(0.1..10.0);
            let p = rand_point(&mut rng, 1.5);
            let scaled = s.map_vertices(|v| v * k);
            let a = signed_distance(&scaled, &(p * k));
            let b = k * signed_distance(&s, &p);
            assert!((a - b).abs() < 1e-9 * k.max(1.0));
        }
    }

    #[test]
    fn open_mesh_flags_unreliable_sign() {
        let mut c = TriMesh::cuboid(Vec3::repeat(-1.0), Vec3::repeat(1.0));
        c.triangles.truncate(10);
        let q = MeshSdf::new(&c);
        assert!(!q.sign_reliable());
        assert!((q.distance(&Vec3::new(0.0, 0.0, 3.0)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mesh_distance_is_infinite() {
        let q = MeshSdf::new(&TriMesh::default());
        assert_eq!(q.distance(&Vec3::zeros()), f64::INFINITY);
        assert!(!q.is_inside(&Vec3::zeros()));
    }
}
