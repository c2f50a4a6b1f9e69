//! Reconstruction and interaction metrics.

pub mod kdtree;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kinematics::JointSet;
use crate::mesh::{AreaSampler, TriMesh};
use crate::sdf::query::MeshSdf;
pub use kdtree::{nearest_brute, KdTree};

pub const DEFAULT_SURFACE_SAMPLES: usize = 30_000;
pub const DEFAULT_ALIGN_ITERS: usize = 10;
pub const DEFAULT_VOXEL_CM: f64 = 0.5;

/// Area-weighted uniform points on `mesh`.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(Error::InvalidArgument("surface sample count must be >= 1".into()));
    }
    let sampler = AreaSampler::new(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sampler.sample(&mut rng)).collect())
}

fn non_empty(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("point set"));
    }
    Ok(())
}

/// Squared distance from each of `from` to its nearest point in `to`.
pub fn nearest_squared(from: &[Vec3], to: &KdTree) -> Vec<f64> {
    from.par_iter()
        .map(|p| to.nearest(p).map_or(f64::INFINITY, |(_, d)| d))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean squared nearest-neighbour distance from `a` to `b` plus from `b` to `a`.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    non_empty(a, b)?;
    let (ta, tb) = (KdTree::build(a), KdTree::build(b));
    Ok(mean(&nearest_squared(a, &tb)) + mean(&nearest_squared(b, &ta)))
}

pub fn chamfer_distance_brute(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    non_empty(a, b)?;
    let one = |x: &[Vec3], y: &[Vec3]| mean(&x.iter().map(|p| nearest_brute(y, p).map_or(0.0, |n| n.1)).collect::<Vec<_>>());
    Ok(one(a, b) + one(b, a))
}

/// Harmonic mean of the fraction of `pred` within `threshold` of `gt` and
/// the fraction of `gt` within `threshold` of `pred`.
pub fn f_score(pred: &[Vec3], gt: &[Vec3], threshold: f64) -> Result<f64> {
    non_empty(pred, gt)?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("F-score threshold {threshold} must be positive")));
    }
    let (tp, tg) = (KdTree::build(pred), KdTree::build(gt));
    Ok(f_score_with(pred, gt, &tp, &tg, threshold))
}

fn f_score_with(pred: &[Vec3], gt: &[Vec3], tp: &KdTree, tg: &KdTree, threshold: f64) -> f64 {
    let t2 = threshold * threshold;
    let within = |d: Vec<f64>| d.iter().filter(|v| **v < t2).count() as f64 / d.len() as f64;
    let precision = within(nearest_squared(pred, tg));
    let recall = within(nearest_squared(gt, tp));
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub scale: f64,
    pub translation: Vec3,
    /// Chamfer distance after alignment.
    pub residual: f64,
}

impl AlignmentResult {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.translation
    }

    pub fn apply_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    pub fn apply_mesh(&self, m: &TriMesh) -> TriMesh {
        m.map_vertices(|v| self.apply(v))
    }
}

fn centroid(p: &[Vec3]) -> Vec3 {
    p.iter().sum::<Vec3>() / p.len() as f64
}

fn rms_radius(p: &[Vec3], c: &Vec3) -> f64 {
    (p.iter().map(|x| (x - c).norm_squared()).sum::<f64>() / p.len() as f64).sqrt()
}

/// Scale and translation (no rotation) taking `pred` onto `gt`, by
/// alternating nearest-neighbour matching and the closed-form similarity
/// fit. An iteration is kept only if it lowers the Chamfer distance.
pub fn align_scale_translation(pred: &[Vec3], gt: &[Vec3], iters: usize) -> Result<AlignmentResult> {
    non_empty(pred, gt)?;
    let (cp, cg) = (centroid(pred), centroid(gt));
    if pred.len() == 1 || gt.len() == 1 {
        let translation = cg - cp;
        let residual = chamfer_distance(&shifted(pred, 1.0, &translation), gt)?;
        return Ok(AlignmentResult { scale: 1.0, translation, residual });
    }
    let tg = KdTree::build(gt);
    let chamfer_of = |s: f64, t: &Vec3| -> (f64, Vec<Vec3>) {
        let moved = shifted(pred, s, t);
        let tm = KdTree::build(&moved);
        let c = mean(&nearest_squared(&moved, &tg)) + mean(&nearest_squared(gt, &tm));
        (c, moved)
    };
    let identity = chamfer_of(1.0, &Vec3::zeros());
    let mut best = AlignmentResult { scale: 1.0, translation: Vec3::zeros(), residual: identity.0 };
    let mut moved = identity.1;
    let (rp, rg) = (rms_radius(pred, &cp), rms_radius(gt, &cg));
    if rp > 0.0 && rg > 0.0 {
        let s = rg / rp;
        let t = cg - cp * s;
        let (c, m) = chamfer_of(s, &t);
        if c < best.residual {
            best = AlignmentResult { scale: s, translation: t, residual: c };
            moved = m;
        }
    }
    for _ in 0..iters {
        let targets: Vec<Vec3> = moved
            .par_iter()
            .map(|p| gt[tg.nearest(p).map_or(0, |n| n.0)])
            .collect();
        let (pm, qm) = (cp, centroid(&targets));
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, q) in pred.iter().zip(&targets) {
            num += (p - pm).dot(&(q - qm));
            den += (p - pm).norm_squared();
        }
        if !(den > 0.0) || !(num > 0.0) {
            break;
        }
        let s = num / den;
        let t = qm - pm * s;
        let (c, m) = chamfer_of(s, &t);
        if c < best.residual {
            best = AlignmentResult { scale: s, translation: t, residual: c };
            moved = m;
        } else {
            break;
        }
    }
    Ok(best)
}

fn shifted(p: &[Vec3], s: f64, t: &Vec3) -> Vec<Vec3> {
    p.iter().map(|x| x * s + t).collect()
}

/// Mean wrist-relative joint position error.
pub fn joint_errors(pred: &JointSet, gt: &JointSet) -> f64 {
    let (pw, gw) = (pred.wrist(), gt.wrist());
    let n = pred.0.len().min(gt.0.len());
    pred.0.iter().zip(&gt.0).map(|(p, g)| ((p - pw) - (g - gw)).norm()).sum::<f64>() / n as f64
}

pub fn center_error(pred: &Vec3, gt: &Vec3) -> f64 {
    (pred - gt).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionMetrics {
    pub contact: bool,
    pub penetration_depth: f64,
    pub intersection_volume: f64,
    /// False when the object mesh is open and inside tests are heuristic.
    pub sign_reliable: bool,
}

/// Penetration of hand vertices into the object and the voxelized volume
/// inside both meshes, in mesh units (and cubed mesh units).
pub fn interaction_metrics(hand: &TriMesh, obj: &TriMesh, voxel: f64) -> Result<InteractionMetrics> {
    if !(voxel > 0.0) {
        return Err(Error::InvalidArgument(format!("voxel size {voxel} must be positive")));
    }
    if hand.is_empty() || obj.is_empty() {
        return Err(Error::Empty("interaction meshes"));
    }
    let obj_sdf = MeshSdf::new(obj);
    let hand_sdf = MeshSdf::new(hand);
    let p_d = hand
        .vertices
        .par_iter()
        .map(|v| (-obj_sdf.signed_distance(v)).max(0.0))
        .reduce(|| 0.0, f64::max);
    let mut i_v = 0.0;
    if let Some(bb) = hand.bounds().intersection(&obj.bounds()) {
        let e = bb.extent();
        let counts = [0, 1, 2].map(|d| ((e[d] / voxel).ceil() as usize).max(1));
        let total = counts[0] * counts[1] * counts[2];
        let inside = (0..total)
            .into_par_iter()
            .filter(|&k| {
                let (i, j, l) = (k / (counts[1] * counts[2]), (k / counts[2]) % counts[1], k % counts[2]);
                let c = bb.min + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, l as f64 + 0.5) * voxel;
                obj_sdf.is_inside(&c) && hand_sdf.is_inside(&c)
            })
            .count();
        i_v = inside as f64 * voxel.powi(3);
    }
    Ok(InteractionMetrics {
        contact: p_d > 0.0,
        penetration_depth: p_d,
        intersection_volume: i_v,
        sign_reliable: obj_sdf.sign_reliable() && hand_sdf.sign_reliable(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Aggregation::Median),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::InvalidArgument(format!("unknown aggregation '{other}'"))),
        }
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn aggregate(values: &[f64], mode: Aggregation) -> Option<f64> {
    match mode {
        Aggregation::Median => median(values),
        Aggregation::Mean if values.is_empty() => None,
        Aggregation::Mean => Some(mean(values)),
    }
}

/// Metrics of one evaluated sample, in centimetres. Absent entries were not
/// computed for this sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub cd_h: Option<f64>,
    pub cd_o: Option<f64>,
    pub fs_h_1: Option<f64>,
    pub fs_h_5: Option<f64>,
    pub fs_o_5: Option<f64>,
    pub fs_o_10: Option<f64>,
    pub e_h: Option<f64>,
    pub e_o: Option<f64>,
    pub contact: Option<bool>,
    pub p_d: Option<f64>,
    pub i_v: Option<f64>,
}

const METRIC_NAMES: [&str; 11] = [
    "cd_h", "cd_o", "fs_h_1", "fs_h_5", "fs_o_5", "fs_o_10", "e_h", "e_o", "c_r", "p_d", "i_v",
];

impl SampleMetrics {
    fn get(&self, name: &str) -> Option<f64> {
        match name {
            "cd_h" => self.cd_h,
            "cd_o" => self.cd_o,
            "fs_h_1" => self.fs_h_1,
            "fs_h_5" => self.fs_h_5,
            "fs_o_5" => self.fs_o_5,
            "fs_o_10" => self.fs_o_10,
            "e_h" => self.e_h,
            "e_o" => self.e_o,
            "c_r" => self.contact.map(|c| if c { 1.0 } else { 0.0 }),
            "p_d" => self.p_d,
            "i_v" => self.i_v,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub aggregation: Aggregation,
    pub metrics: BTreeMap<String, f64>,
    pub samples: Vec<SampleMetrics>,
}

impl MetricReport {
    /// Aggregates every metric present in at least one sample. The contact
    /// ratio is always a mean.
    pub fn from_samples(samples: Vec<SampleMetrics>, aggregation: Aggregation) -> Self {
        let mut metrics = BTreeMap::new();
        for name in METRIC_NAMES {
            let vals: Vec<f64> = samples.iter().filter_map(|s| s.get(name)).collect();
            let mode = if name == "c_r" { Aggregation::Mean } else { aggregation };
            if let Some(v) = aggregate(&vals, mode) {
                metrics.insert(name.to_string(), v);
            }
        }
        MetricReport { aggregation, metrics, samples }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id"];
        header.extend(METRIC_NAMES);
        out.write_record(&header).map_err(csv_error)?;
        for s in &self.samples {
            let mut row = vec![s.id.clone()];
            row.extend(METRIC_NAMES.iter().map(|n| s.get(n).map(|v| v.to_string()).unwrap_or_default()));
            out.write_record(&row).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Settings for [`evaluate_reconstruction`]. Meshes are in world units and
/// `cm_per_unit` converts them to centimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub surface_samples: usize,
    pub align_iters: usize,
    pub cm_per_unit: f64,
    pub seed: u64,
    pub voxel_cm: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            surface_samples: DEFAULT_SURFACE_SAMPLES,
            align_iters: DEFAULT_ALIGN_ITERS,
            cm_per_unit: 100.0,
            seed: 0,
            voxel_cm: DEFAULT_VOXEL_CM,
        }
    }
}

/// Hand (and optionally object) reconstruction metrics for one sample. The
/// hand's scale and translation alignment is reused for the object. An empty
/// reconstruction scores an infinite Chamfer distance and zero F-scores.
/// Prediction and ground truth are sampled with the same seed, so identical
/// meshes score exactly zero.
pub fn evaluate_reconstruction(
    id: &str,
    pred_hand: &TriMesh,
    gt_hand: &TriMesh,
    objects: Option<(&TriMesh, &TriMesh)>,
    cfg: &EvalConfig,
) -> Result<SampleMetrics> {
    let mut out = SampleMetrics { id: id.to_string(), ..Default::default() };
    let n = cfg.surface_samples;
    let cm = cfg.cm_per_unit;
    let gt_h = sample_surface(gt_hand, n, cfg.seed)?;
    let align = if pred_hand.is_empty() {
        out.cd_h = Some(f64::INFINITY);
        out.fs_h_1 = Some(0.0);
        out.fs_h_5 = Some(0.0);
        None
    } else {
        let pred_h = sample_surface(pred_hand, n, cfg.seed)?;
        let a = align_scale_translation(&pred_h, &gt_h, cfg.align_iters)?;
        let moved = a.apply_all(&pred_h);
        let (tp, tg) = (KdTree::build(&moved), KdTree::build(&gt_h));
        out.cd_h = Some(a.residual * cm * cm);
        out.fs_h_1 = Some(f_score_with(&moved, &gt_h, &tp, &tg, 0.1 / cm));
        out.fs_h_5 = Some(f_score_with(&moved, &gt_h, &tp, &tg, 0.5 / cm));
        Some(a)
    };
    if let Some((pred_obj, gt_obj)) = objects {
        if pred_obj.is_empty() {
            out.cd_o = Some(f64::INFINITY);
            out.fs_o_5 = Some(0.0);
            out.fs_o_10 = Some(0.0);
        } else {
            let a = align.unwrap_or(AlignmentResult { scale: 1.0, translation: Vec3::zeros(), residual: 0.0 });
            let gt_o = sample_surface(gt_obj, n, cfg.seed.wrapping_add(1))?;
            let pred_o = a.apply_all(&sample_surface(pred_obj, n, cfg.seed.wrapping_add(1))?);
            let (tp, tg) = (KdTree::build(&pred_o), KdTree::build(&gt_o));
            out.cd_o = Some((mean(&nearest_squared(&pred_o, &tg)) + mean(&nearest_squared(&gt_o, &tp))) * cm * cm);
            out.fs_o_5 = Some(f_score_with(&pred_o, &gt_o, &tp, &tg, 0.5 / cm));
            out.fs_o_10 = Some(f_score_with(&pred_o, &gt_o, &tp, &tg, 1.0 / cm));
            if let Some(a) = align {
                if !pred_hand.is_empty() {
                    let im = interaction_metrics(&a.apply_mesh(pred_hand), &a.apply_mesh(pred_obj), cfg.voxel_cm / cm)?;
                    out.contact = Some(im.contact);
                    out.p_d = Some(im.penetration_depth * cm);
                    out.i_v = Some(im.intersection_volume * cm.powi(3));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::query::signed_distance;
    use proptest::prelude::*;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect()
    }

    #[test]
    fn surface_samples() {
        let s = TriMesh::icosphere(1.0, 4);
        let pts = sample_surface(&s, 30_000, 1).unwrap();
        assert_eq!(pts.len(), 30_000);
        assert!(centroid(&pts).norm() < 0.02);
        assert_eq!(pts, sample_surface(&s, 30_000, 1).unwrap());
        let tri = TriMesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            triangles: vec![[0, 1, 2]],
        };
        for p in sample_surface(&tri, 1000, 2).unwrap() {
            assert!(p.x >= -1e-12 && p.y >= -1e-12 && p.x + p.y <= 1.0 + 1e-12 && p.z == 0.0);
        }
        assert!(sample_surface(&TriMesh::default(), 10, 1).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(500, 1);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_distance(&[Vec3::zeros()], &[Vec3::x()]).unwrap(), 2.0);
        let b = cloud(400, 2);
        let fast = chamfer_distance(&a, &b).unwrap();
        assert!((fast - chamfer_distance_brute(&a, &b).unwrap()).abs() < 1e-9);
        assert!((fast - chamfer_distance(&b, &a).unwrap()).abs() < 1e-15);
        let mut perm = a.clone();
        perm.reverse();
        assert!((chamfer_distance(&perm, &b).unwrap() - fast).abs() < 1e-12);
        assert!(chamfer_distance(&[], &b).is_err());
    }

    #[test]
    fn f_score_examples() {
        let a = cloud(300, 3);
        assert_eq!(f_score(&a, &a, 1e-3).unwrap(), 1.0);
        let far: Vec<Vec3> = a.iter().map(|p| p + Vec3::repeat(10.0)).collect();
        assert_eq!(f_score(&far, &a, 0.5).unwrap(), 0.0);
        // half of pred sits on gt, the other half far away; gt fully covered
        let gt = vec![Vec3::zeros(), Vec3::x()];
        let pred = vec![Vec3::zeros(), Vec3::x(), Vec3::repeat(50.0), Vec3::repeat(60.0)];
        assert!((f_score(&pred, &gt, 0.01).unwrap() - 2.0 / 3.0).abs() < 1e-9);
        assert!(f_score(&pred, &gt, 0.0).is_err());
    }

    #[test]
    fn alignment_recovers_similarity() {
        let gt = cloud(800, 4);
        let a = align_scale_translation(&gt, &gt, 10).unwrap();
        assert_eq!((a.scale, a.translation, a.residual), (1.0, Vec3::zeros(), 0.0));
        let (s0, t0) = (1.7, Vec3::new(0.3, -0.2, 0.5));
        let pred: Vec<Vec3> = gt.iter().map(|q| (q - t0) / s0).collect();
        let a = align_scale_translation(&pred, &gt, 10).unwrap();
        assert!((a.scale - s0).abs() < 1e-6);
        assert!((a.translation - t0).norm() < 1e-6);
        assert!(a.residual < 1e-10);
        let single = align_scale_translation(&[Vec3::x()], &gt, 10).unwrap();
        assert_eq!(single.scale, 1.0);
        assert!((single.translation - (centroid(&gt) - Vec3::x())).norm() < 1e-12);
    }

    #[test]
    fn joint_and_center_errors() {
        let gt = JointSet(cloud(21, 5));
        assert_eq!(joint_errors(&gt, &gt), 0.0);
        let moved = JointSet(gt.0.iter().map(|p| p + Vec3::new(4.0, -1.0, 2.0)).collect());
        assert!(joint_errors(&moved, &gt) < 1e-12);
        let mut one = gt.clone();
        one.0[9].y += 2.1;
        assert!((joint_errors(&one, &gt) - 0.1).abs() < 1e-12);
        assert_eq!(center_error(&Vec3::new(3.0, 4.0, 0.0), &Vec3::zeros()), 5.0);
    }

    #[test]
    fn interaction_disjoint_overlap_and_inside() {
        let a = TriMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        let far = TriMesh::cuboid(Vec3::new(2.0, 0.0, 0.0), Vec3::new(3.0, 1.0, 1.0));
        let m = interaction_metrics(&a, &far, 0.1).unwrap();
        assert!(!m.contact && m.penetration_depth == 0.0 && m.intersection_volume == 0.0);

        let slab = TriMesh::cuboid(Vec3::new(0.5, 0.0, 0.0), Vec3::new(1.5, 1.0, 1.0));
        let m = interaction_metrics(&a, &slab, 0.1).unwrap();
        assert!((m.intersection_volume - 0.5).abs() < 0.05, "{}", m.intersection_volume);

        let inner = TriMesh::icosphere(0.2, 2).map_vertices(|v| v + Vec3::repeat(0.5));
        let m = interaction_metrics(&inner, &a, 0.1).unwrap();
        let deepest = inner.vertices.iter().map(|v| -signed_distance(&a, v)).fold(0.0, f64::max);
        assert!(m.contact);
        assert!((m.penetration_depth - deepest).abs() < 1e-12 && deepest > 0.25);
        assert!(interaction_metrics(&a, &slab, 0.0).is_err());
    }

    #[test]
    fn median_is_outlier_robust() {
        assert_eq!(median(&[2.0, 2.0, 2.0, 2.0, 1e9]), Some(2.0));
        assert_eq!(median(&[1.0, 3.0]), Some(2.0));
        assert_eq!(median(&[]), None);
        assert_eq!(aggregate(&[1.0, 2.0, 6.0], Aggregation::Mean), Some(3.0));
    }

    #[test]
    fn identical_meshes_report_perfect_scores() {
        let hand = TriMesh::icosphere(0.05, 3);
        let obj = TriMesh::cuboid(Vec3::new(0.06, -0.02, -0.02), Vec3::new(0.1, 0.02, 0.02));
        let cfg = EvalConfig { surface_samples: 3000, ..Default::default() };
        let s = evaluate_reconstruction("a", &hand, &hand, Some((&obj, &obj)), &cfg).unwrap();
        assert_eq!((s.cd_h, s.cd_o), (Some(0.0), Some(0.0)));
        for f in [s.fs_h_1, s.fs_h_5, s.fs_o_5, s.fs_o_10] {
            assert_eq!(f, Some(1.0));
        }
        assert_eq!(s.contact, Some(false));
        let report = MetricReport::from_samples(vec![s], Aggregation::Median);
        assert!(report.metrics.contains_key("fs_o_10"));
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("id,cd_h,cd_o"));
        assert_eq!(text.lines().count(), 2);
        let empty = evaluate_reconstruction("b", &TriMesh::default(), &hand, None, &cfg).unwrap();
        assert_eq!(empty.cd_h, Some(f64::INFINITY));
        assert_eq!(empty.fs_h_1, Some(0.0));
    }

    proptest! {
        #[test]
        fn f_score_monotone_in_threshold(seed in 0u64..500, t in 0.01f64..0.3) {
            let (a, b) = (cloud(60, seed), cloud(50, seed + 1));
            let lo = f_score(&a, &b, t).unwrap();
            let hi = f_score(&a, &b, t * 1.5).unwrap();
            prop_assert!(hi >= lo);
            prop_assert!((f_score(&b, &a, t).unwrap() - lo).abs() < 1e-12);
        }

        #[test]
        fn alignment_never_worsens(seed in 0u64..200, s in 0.5f64..2.0) {
            let gt = cloud(120, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let pred: Vec<Vec3> = gt
                .iter()
                .map(|q| q * s + Vec3::new(rng.random_range(-0.05..0.05), 0.1, rng.random_range(-0.05..0.05)))
                .collect();
            let before = chamfer_distance(&pred, &gt).unwrap();
            let a = align_scale_translation(&pred, &gt, 10).unwrap();
            prop_assert!(a.residual <= before);
            prop_assert!((a.residual - chamfer_distance(&a.apply_all(&pred), &gt).unwrap()).abs() < 1e-12);
        }
    }
}
