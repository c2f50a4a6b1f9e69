//! Ground-truth SDF sample generation for hand/object mesh pairs.

use std::io::{Read, Write};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{RigidTransform, Vec3};
use crate::mesh::{Aabb, AreaSampler, TriMesh};
use crate::sdf::query::MeshSdf;

/// `p' = (p - offset) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub offset: Vec3,
    pub scale: f64,
}

impl Default for NormalizationTransform {
    fn default() -> Self {
        NormalizationTransform {
            offset: Vec3::zeros(),
            scale: 1.0,
        }
    }
}

impl NormalizationTransform {
    pub fn new(offset: Vec3, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("normalization scale {scale} must be positive")));
        }
        Ok(NormalizationTransform { offset, scale })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.offset) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + self.offset
    }

    /// Expresses a world-space rigid transform in normalized coordinates.
    pub fn apply_rigid(&self, g: &RigidTransform) -> RigidTransform {
        RigidTransform::new(g.rotation, self.apply(&g.translation))
    }

    pub fn apply_mesh(&self, m: &TriMesh) -> TriMesh {
        m.map_vertices(|v| self.apply(v))
    }
}

/// Fits the joint bounding box of `meshes` into the origin-centered unit cube.
pub fn normalize_to_unit_cube(meshes: &[&TriMesh]) -> Result<(NormalizationTransform, Vec<TriMesh>)> {
    let bounds = meshes
        .iter()
        .fold(Aabb::empty(), |acc, m| acc.merge(&m.bounds()));
    if bounds.is_empty() {
        return Err(Error::Empty("no vertices to normalize"));
    }
    let extent = bounds.extent().max();
    if !(extent > 0.0) {
        return Err(Error::Degenerate("meshes have zero bounding-box extent".into()));
    }
    let t = NormalizationTransform::new(bounds.center(), 1.0 / extent)?;
    Ok((t, meshes.iter().map(|m| t.apply_mesh(m)).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfSample {
    pub position: Vec3,
    pub sdf_hand: f64,
    pub sdf_obj: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdfTarget {
    Hand,
    Object,
}

impl SdfTarget {
    pub fn value(self, s: &SdfSample) -> f64 {
        match self {
            SdfTarget::Hand => s.sdf_hand,
            SdfTarget::Object => s.sdf_obj,
        }
    }
}

impl std::str::FromStr for SdfTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hand" => Ok(SdfTarget::Hand),
            "object" | "obj" => Ok(SdfTarget::Object),
            other => Err(Error::InvalidArgument(format!("unknown target '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleMetadata {
    #[serde(default)]
    pub hand_path: Option<String>,
    #[serde(default)]
    pub object_path: Option<String>,
    pub seed: u64,
    pub offset: [f64; 3],
    pub scale: f64,
    pub near_fraction: f64,
    pub hand_sign_reliable: bool,
    pub object_sign_reliable: bool,
    #[serde(default)]
    pub config_hash: Option<String>,
}

impl SampleMetadata {
    pub fn normalization(&self) -> NormalizationTransform {
        NormalizationTransform {
            offset: Vec3::new(self.offset[0], self.offset[1], self.offset[2]),
            scale: self.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<SdfSample>,
    pub metadata: SampleMetadata,
}

const SET_MAGIC: &[u8; 4] = b"GSDF";
const SET_VERSION: u32 = 1;

impl SampleSet {
    /// Binary layout: magic, version, count, `count x 5` f32 records, then a
    /// length-prefixed JSON metadata block. All integers little-endian u32.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SET_MAGIC)?;
        w.write_all(&SET_VERSION.to_le_bytes())?;
        w.write_all(&(self.samples.len() as u32).to_le_bytes())?;
        for s in &self.samples {
            for v in [s.position.x, s.position.y, s.position.z, s.sdf_hand, s.sdf_obj] {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        let meta = serde_json::to_vec(&self.metadata)?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let ctx = "sample set";
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        if &word != SET_MAGIC {
            return Err(Error::parse(ctx, "bad magic"));
        }
        let u32_le = |r: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = u32_le(&mut r)?;
        if version != SET_VERSION {
            return Err(Error::parse(ctx, format!("unsupported version {version}")));
        }
        let count = u32_le(&mut r)? as usize;
        let mut bytes = vec![0u8; count * 20];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::parse(ctx, "truncated sample records"))?;
        let floats: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let samples = floats
            .chunks_exact(5)
            .map(|f| SdfSample {
                position: Vec3::new(f[0], f[1], f[2]),
                sdf_hand: f[3],
                sdf_obj: f[4],
            })
            .collect();
        let len = u32_le(&mut r)? as usize;
        let mut meta = vec![0u8; len];
        r.read_exact(&mut meta)
            .map_err(|_| Error::parse(ctx, "truncated metadata"))?;
        let metadata = serde_json::from_slice(&meta).map_err(|e| Error::parse(ctx, e.to_string()))?;
        Ok(SampleSet { samples, metadata })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Noise scales for near-surface samples, alternated sample by sample.
pub const NEAR_SURFACE_SIGMAS: [f64; 2] = [0.005, 0.05];
pub const DEFAULT_NEAR_FRACTION: f64 = 0.95;
pub const DEFAULT_SAMPLE_COUNT: usize = 40_000;

fn inside_unit_cube(p: &Vec3) -> bool {
    p.iter().all(|c| c.abs() <= 0.5)
}

/// Query positions in normalized space: a `near_fraction` share jittered off
/// the two surfaces (split evenly), the rest uniform in the unit cube.
pub fn sample_positions(
    surfaces: [&TriMesh; 2],
    count: usize,
    near_fraction: f64,
    seed: u64,
) -> Result<Vec<Vec3>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&near_fraction) {
        return Err(Error::InvalidArgument(format!(
            "near_fraction {near_fraction} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let near = ((count as f64) * near_fraction).round() as usize;
    let per_mesh = [near.div_ceil(2), near / 2];
    let mut out = Vec::with_capacity(count);
    for (mesh, n) in surfaces.iter().zip(per_mesh) {
        if n == 0 {
            continue;
        }
        let sampler = AreaSampler::new(mesh)?;
        for i in 0..n {
            let sigma = NEAR_SURFACE_SIGMAS[i % 2];
            let base = sampler.sample(&mut rng);
            let mut p = base;
            for _ in 0..16 {
                let noise = Vec3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                p = base + noise * sigma;
                if inside_unit_cube(&p) {
                    break;
                }
            }
            out.push(p.map(|c| c.clamp(-0.5, 0.5)));
        }
    }
    while out.len() < count {
        out.push(Vec3::new(
            rng.random_range(-0.5..=0.5),
            rng.random_range(-0.5..=0.5),
            rng.random_range(-0.5..=0.5),
        ));
    }
    Ok(out)
}

/// Normalizes the pair into the unit cube, samples `count` positions and
/// stores the signed distance to each mesh. Deterministic in `seed`
/// regardless of the rayon thread count.
pub fn generate_dataset(
    hand: &TriMesh,
    obj: &TriMesh,
    count: usize,
    seed: u64,
    near_fraction: f64,
) -> Result<SampleSet> {
    if hand.is_empty() || obj.is_empty() {
        return Err(Error::Empty("hand and object meshes must have triangles"));
    }
    let (norm, meshes) = normalize_to_unit_cube(&[hand, obj])?;
    let positions = sample_positions([&meshes[0], &meshes[1]], count, near_fraction, seed)?;
    let hand_sdf = MeshSdf::new(&meshes[0]);
    let obj_sdf = MeshSdf::new(&meshes[1]);
    let samples = positions
        .par_iter()
        .map(|p| SdfSample {
            position: *p,
            sdf_hand: hand_sdf.signed_distance(p),
            sdf_obj: obj_sdf.signed_distance(p),
        })
        .collect();
    Ok(SampleSet {
        samples,
        metadata: SampleMetadata {
            seed,
            offset: [norm.offset.x, norm.offset.y, norm.offset.z],
            scale: norm.scale,
            near_fraction,
            hand_sign_reliable: hand_sdf.sign_reliable(),
            object_sign_reliable: obj_sdf.sign_reliable(),
            ..Default::default()
        },
    })
}

/// `n_per_side` negative and `n_per_side` non-negative samples for `which`,
/// drawn uniformly without replacement.
pub fn balanced_batch(samples: &[SdfSample], n_per_side: usize, which: SdfTarget, seed: u64) -> Result<Vec<SdfSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    balanced_batch_with(samples, n_per_side, which, &mut rng)
}

pub fn balanced_batch_with<R: Rng + ?Sized>(
    samples: &[SdfSample],
    n_per_side: usize,
    which: SdfTarget,
    rng: &mut R,
) -> Result<Vec<SdfSample>> {
    let (inside, outside): (Vec<&SdfSample>, Vec<&SdfSample>) =
        samples.iter().partition(|s| which.value(s) < 0.0);
    for (pool, sign) in [(&inside, "negative"), (&outside, "positive")] {
        if pool.len() < n_per_side {
            return Err(Error::Shortage {
                sign,
                needed: n_per_side,
                available: pool.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(2 * n_per_side);
    for pool in [&inside, &outside] {
        let picked = sample_indices(rng, pool.len(), n_per_side);
        out.extend(picked.iter().map(|i| *pool[i]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::query::signed_distance;

    fn two_spheres() -> (TriMesh, TriMesh) {
        let a = TriMesh::icosphere(0.5, 2).map_vertices(|v| v + Vec3::new(-1.0, 0.0, 0.0));
        let b = TriMesh::icosphere(0.5, 2).map_vertices(|v| v + Vec3::new(1.0, 0.0, 0.0));
        (a, b)
    }

    #[test]
    fn normalization_of_centered_unit_cube_is_identity() {
        let c = TriMesh::cuboid(Vec3::repeat(-0.5), Vec3::repeat(0.5));
        let (t, out) = normalize_to_unit_cube(&[&c]).unwrap();
        assert_eq!(t.offset, Vec3::zeros());
        assert_eq!(t.scale, 1.0);
        assert_eq!(out[0], c);
    }

    #[test]
    fn normalization_of_two_spheres() {
        let (a, b) = two_spheres();
        let (t, out) = normalize_to_unit_cube(&[&a, &b]).unwrap();
        let joint = a.bounds().merge(&b.bounds());
        assert!((t.scale - 1.0 / joint.extent().max()).abs() < 1e-12);
        assert!(t.scale > 1.0 / 3.0 - 1e-12);
        let merged = TriMesh::merged(&[&out[0], &out[1]]);
        let bb = merged.bounds();
        assert!((bb.extent().max() - 1.0).abs() < 1e-12);
        assert!(bb.center().norm() < 1e-12);
        for (orig, norm) in a.vertices.iter().zip(&out[0].vertices) {
            assert!((t.invert(norm) - orig).norm() < 1e-9);
        }
    }

    #[test]
    fn normalization_errors() {
        let point = TriMesh { vertices: vec![Vec3::zeros()], triangles: vec![] };
        assert!(matches!(normalize_to_unit_cube(&[&point]), Err(Error::Degenerate(_))));
        assert!(normalize_to_unit_cube(&[&TriMesh::default()]).is_err());
    }

    #[test]
    fn dataset_counts_and_consistency() {
        let (a, b) = two_spheres();
        let set = generate_dataset(&a, &b, 2000, 7, 0.9).unwrap();
        assert_eq!(set.len(), 2000);
        assert!(set.metadata.hand_sign_reliable && set.metadata.object_sign_reliable);
        let (_, meshes) = normalize_to_unit_cube(&[&a, &b]).unwrap();
        for s in set.samples.iter().step_by(37) {
            assert!((s.sdf_hand - signed_distance(&meshes[0], &s.position)).abs() < 1e-9);
            assert!((s.sdf_obj - signed_distance(&meshes[1], &s.position)).abs() < 1e-9);
            assert!(inside_unit_cube(&s.position));
            assert!(s.sdf_hand.abs() <= 3f64.sqrt());
        }
        let near_hand = set.samples.iter().filter(|s| s.sdf_hand.abs() < 0.1).count();
        assert!(near_hand > 700);
    }

    #[test]
    fn uniform_samples_center_on_cube() {
        let (a, b) = two_spheres();
        let set = generate_dataset(&a, &b, 40_000, 3, 0.0).unwrap();
        assert_eq!(set.len(), 40_000);
        let mean = set.samples.iter().map(|s| s.position).sum::<Vec3>() / 40_000.0;
        assert!(mean.norm() < 0.02);
    }

    #[test]
    fn dataset_is_deterministic_and_file_roundtrips() {
        let (a, b) = two_spheres();
        let s1 = generate_dataset(&a, &b, 500, 11, 0.95).unwrap();
        let s2 = generate_dataset(&a, &b, 500, 11, 0.95).unwrap();
        let (mut b1, mut b2) = (Vec::new(), Vec::new());
        s1.write_to(&mut b1).unwrap();
        s2.write_to(&mut b2).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(&b1[..4], b"GSDF");
        assert_eq!(u32::from_le_bytes([b1[8], b1[9], b1[10], b1[11]]), 500);
        let back = SampleSet::read_from(&b1[..]).unwrap();
        assert_eq!(back.metadata, s1.metadata);
        for (x, y) in back.samples.iter().zip(&s1.samples) {
            assert_eq!(x.sdf_hand, y.sdf_hand as f32 as f64);
        }
        assert!(SampleSet::read_from(&b1[..30]).is_err());
    }

    #[test]
    fn generation_rejects_bad_arguments() {
        let (a, b) = two_spheres();
        assert!(generate_dataset(&a, &b, 0, 1, 0.5).is_err());
        assert!(generate_dataset(&a, &b, 10, 1, 1.5).is_err());
        assert!(generate_dataset(&TriMesh::default(), &b, 10, 1, 0.5).is_err());
    }

    fn signed_samples(n_neg: usize, n_pos: usize) -> Vec<SdfSample> {
        (0..n_neg + n_pos)
            .map(|i| SdfSample {
                position: Vec3::new(i as f64, 0.0, 0.0),
                sdf_hand: if i < n_neg { -1.0 } else { 1.0 },
                sdf_obj: 0.5,
            })
            .collect()
    }

    #[test]
    fn balanced_batches() {
        let samples = signed_samples(700, 900);
        let batch = balanced_batch(&samples, 500, SdfTarget::Hand, 1).unwrap();
        assert_eq!(batch.len(), 1000);
        assert_eq!(batch.iter().filter(|s| s.sdf_hand < 0.0).count(), 500);
        let mut xs: Vec<i64> = batch.iter().map(|s| s.position.x as i64).collect();
        xs.sort();
        xs.dedup();
        assert_eq!(xs.len(), 1000, "sampling is without replacement");
        assert_eq!(batch, balanced_batch(&samples, 500, SdfTarget::Hand, 1).unwrap());
        assert!(balanced_batch(&samples, 0, SdfTarget::Hand, 1).unwrap().is_empty());
        match balanced_batch(&samples, 1, SdfTarget::Object, 1) {
            Err(Error::Shortage { sign, .. }) => assert_eq!(sign, "negative"),
            other => panic!("expected shortage, got {other:?}"),
        }
        match balanced_batch(&samples, 800, SdfTarget::Hand, 1) {
            Err(Error::Shortage { sign, needed: 800, available: 700 }) => assert_eq!(sign, "negative"),
            other => panic!("expected shortage, got {other:?}"),
        }
    }
}
