use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kinematics::JointSet;

/// How the ordinal loss combines its virtual views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewReduction {
    #[default]
    Sum,
    Mean,
}

pub const DEFAULT_VIEW_COUNT: usize = 20;

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// `1` when the predicted depth order of joints `i` and `j` along `n`
/// disagrees with the ground truth.
pub fn ordinal_indicator(pred: &JointSet, gt: &JointSet, i: usize, j: usize, n: &Vec3) -> bool {
    sign((pred.0[i] - pred.0[j]).dot(n)) != sign((gt.0[i] - gt.0[j]).dot(n))
}

/// `(l_hp, l_ord)`: mean squared joint error and the depth-order penalty
/// accumulated over `views`.
pub fn hand_pose_losses(pred: &JointSet, gt: &JointSet, views: &[Vec3], reduction: ViewReduction) -> (f64, f64) {
    let n = pred.0.len().min(gt.0.len());
    let l_hp = if n == 0 {
        0.0
    } else {
        pred.0.iter().zip(&gt.0).map(|(p, g)| (p - g).norm_squared()).sum::<f64>() / n as f64
    };
    let mut l_ord = 0.0;
    for v in views {
        for j in 1..n {
            for i in 0..j {
                if ordinal_indicator(pred, gt, i, j, v) {
                    l_ord += (pred.0[i] - pred.0[j]).dot(v).abs();
                }
            }
        }
    }
    if reduction == ViewReduction::Mean && !views.is_empty() {
        l_ord /= views.len() as f64;
    }
    (l_hp, l_ord)
}

/// Uniformly distributed unit view directions.
pub fn sample_views<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = Vec3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            out.push(v / n);
        }
    }
    out
}

pub fn object_center_loss(pred: &Vec3, gt: &Vec3) -> f64 {
    (pred - gt).norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_op: f64,
    pub w_hsdf: f64,
    pub w_osdf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_op: 1.0,
            w_hsdf: 0.5,
            w_osdf: 0.5,
        }
    }
}

impl LossWeights {
    pub fn combine(&self, l_op: f64, l_hsdf: f64, l_osdf: f64) -> f64 {
        self.w_op * l_op + self.w_hsdf * l_hsdf + self.w_osdf * l_osdf
    }
}

pub fn mean_absolute_error(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            actual: pred.len(),
            context: "SDF predictions",
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("SDF loss batch"));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// `(l_hsdf, l_osdf, l_shape)`.
pub fn sdf_losses(
    pred_h: &[f64],
    gt_h: &[f64],
    pred_o: &[f64],
    gt_o: &[f64],
    l_op: f64,
    weights: &LossWeights,
) -> Result<(f64, f64, f64)> {
    let l_h = mean_absolute_error(pred_h, gt_h)?;
    let l_o = mean_absolute_error(pred_o, gt_o)?;
    Ok((l_h, l_o, weights.combine(l_op, l_h, l_o)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::JOINT_COUNT;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn joints(seed: u64) -> JointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        JointSet(
            (0..JOINT_COUNT)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let gt = joints(1);
        let views = sample_views(20, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(hand_pose_losses(&gt, &gt, &views, ViewReduction::Sum), (0.0, 0.0));
    }

    #[test]
    fn single_joint_offset() {
        let gt = joints(3);
        let mut pred = gt.clone();
        pred.0[7].x += 0.3;
        let (l_hp, _) = hand_pose_losses(&pred, &gt, &[], ViewReduction::Sum);
        assert!((l_hp - 0.09 / 21.0).abs() < 1e-12);
    }

    #[test]
    fn swapped_depth_order_contributes_separation() {
        let mut gt = JointSet(vec![Vec3::zeros(); JOINT_COUNT]);
        for (k, p) in gt.0.iter_mut().enumerate() {
            *p = Vec3::new(k as f64, 0.0, 0.0);
        }
        gt.0[1].z = 1.0;
        let mut pred = gt.clone();
        pred.0[0].z = 0.25;
        pred.0[1].z = -0.25;
        let n = Vec3::z();
        let (_, l_ord) = hand_pose_losses(&pred, &gt, &[n], ViewReduction::Sum);
        // (0,1) flips by 0.5; every (0,k) and (1,k) with k > 1 disagrees by 0.25
        let expected = 0.5 + 2.0 * 19.0 * 0.25;
        assert!((l_ord - expected).abs() < 1e-12);

        let mut two = JointSet(vec![Vec3::zeros(); JOINT_COUNT]);
        two.0[1] = Vec3::new(0.0, 0.0, 1.0);
        let mut swapped = two.clone();
        swapped.0[0] = Vec3::new(0.0, 0.0, 1.0);
        swapped.0[1] = Vec3::zeros();
        for k in 2..JOINT_COUNT {
            two.0[k] = Vec3::new(0.0, 0.0, 5.0 + k as f64);
            swapped.0[k] = two.0[k];
        }
        let (_, l) = hand_pose_losses(&swapped, &two, &[n], ViewReduction::Sum);
        assert!((l - 1.0).abs() < 1e-12);
        let (_, l2) = hand_pose_losses(&swapped, &two, &[n, n], ViewReduction::Mean);
        assert!((l2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn center_loss() {
        assert_eq!(object_center_loss(&Vec3::zeros(), &Vec3::zeros()), 0.0);
        assert_eq!(object_center_loss(&Vec3::new(3.0, 4.0, 0.0), &Vec3::zeros()), 25.0);
        let (a, b) = (Vec3::new(0.1, -2.0, 3.0), Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(object_center_loss(&a, &b), object_center_loss(&b, &a));
    }

    #[test]
    fn shape_loss_arithmetic() {
        let w = LossWeights::default();
        assert_eq!((w.w_op, w.w_hsdf, w.w_osdf), (1.0, 0.5, 0.5));
        assert!((w.combine(0.1, 0.2, 0.4) - 0.4).abs() < 1e-12);
        let (h, o, s) = sdf_losses(&[0.1], &[0.1], &[0.2], &[0.2], 0.0, &w).unwrap();
        assert_eq!((h, o, s), (0.0, 0.0, 0.0));
        let (h, o, s) = sdf_losses(&[0.2, 0.0], &[0.0, 0.2], &[1.0, 0.0], &[0.6, 0.4], 0.1, &w).unwrap();
        assert!((h - 0.2).abs() < 1e-12 && (o - 0.4).abs() < 1e-12 && (s - 0.4).abs() < 1e-12);
        assert!(sdf_losses(&[], &[], &[], &[], 0.0, &w).is_err());
        assert!(sdf_losses(&[1.0], &[], &[1.0], &[1.0], 0.0, &w).is_err());
    }

    #[test]
    fn sampled_views_are_unit() {
        let v = sample_views(200, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(v.len(), 200);
        assert!(v.iter().all(|n| (n.norm() - 1.0).abs() < 1e-12));
        let mean = v.iter().sum::<Vec3>() / 200.0;
        assert!(mean.norm() < 0.2);
    }

    proptest! {
        #[test]
        fn losses_non_negative(seed_a in 0u64..1000, seed_b in 0u64..1000, wp in 0.0f64..2.0) {
            let (a, b) = (joints(seed_a), joints(seed_b));
            let views = sample_views(5, &mut ChaCha8Rng::seed_from_u64(seed_a ^ seed_b));
            let (hp, ord) = hand_pose_losses(&a, &b, &views, ViewReduction::Sum);
            prop_assert!(hp >= 0.0 && ord >= 0.0);
            let w = LossWeights { w_op: wp, ..Default::default() };
            let pred: Vec<f64> = a.0.iter().map(|p| p.x).collect();
            let gt: Vec<f64> = b.0.iter().map(|p| p.x).collect();
            let (h, o, s) = sdf_losses(&pred, &gt, &gt, &pred, 0.3, &w).unwrap();
            prop_assert!(h >= 0.0 && o >= 0.0);
            prop_assert!((s - (wp * 0.3 + 0.5 * h + 0.5 * o)).abs() < 1e-12);
        }

        #[test]
        fn ordinal_zero_when_orders_agree(seed in 0u64..1000, scale in 0.1f64..3.0, shift in -1.0f64..1.0) {
            // a positive scaling plus translation keeps every pairwise order on every view
            let gt = joints(seed);
            let pred = JointSet(gt.0.iter().map(|p| p * scale + Vec3::repeat(shift)).collect());
            let views = sample_views(8, &mut ChaCha8Rng::seed_from_u64(seed));
            let (_, ord) = hand_pose_losses(&pred, &gt, &views, ViewReduction::Sum);
            prop_assert_eq!(ord, 0.0);
        }
    }
}
