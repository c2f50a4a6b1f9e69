use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::LossWeights;
use super::mlp::MlpParams;
use crate::error::{Error, Result};
use crate::features::FeatureProvider;
use crate::geom::Vec3;
use crate::sdf::dataset::{balanced_batch_with, SdfSample, SdfTarget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Points per optimizer step.
    pub batch_size: usize,
    /// Negative and positive samples drawn from each shape per epoch.
    pub samples_per_side: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub target: SdfTarget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            decay_every: 600,
            decay_factor: 0.5,
            batch_size: 256,
            samples_per_side: 500,
            epochs: 1600,
            seed: 0,
            weights: LossWeights::default(),
            target: SdfTarget::Hand,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.decay_factor > 0.0) || self.decay_factor > 1.0 {
            return Err(Error::InvalidArgument(format!("decay factor {} outside (0, 1]", self.decay_factor)));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.samples_per_side == 0 {
            return Err(Error::InvalidArgument(
                "decay interval, batch size and samples per side must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }

    fn loss_weight(&self) -> f64 {
        match self.target {
            SdfTarget::Hand => self.weights.w_hsdf,
            SdfTarget::Object => self.weights.w_osdf,
        }
    }
}

/// One training shape: its samples, the feature encoding of its pose, and
/// its visual code (may be empty).
pub struct TrainingShape<'a> {
    pub samples: &'a [SdfSample],
    pub features: &'a dyn FeatureProvider,
    pub visual: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Unweighted mean absolute SDF error over the epoch's samples.
    pub mean_l1: f64,
    pub weighted_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub trace: Vec<EpochStats>,
    pub steps: usize,
}

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(parameter_count: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; parameter_count],
            v: vec![0.0; parameter_count],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        params.for_each_param_mut(|k, p| {
            let g = grad[k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            *p -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        });
    }
}

/// Input rows `[visual; features(x)]` for `points`.
pub fn input_rows(features: &dyn FeatureProvider, visual: &[f64], points: &[Vec3]) -> Array2<f64> {
    let width = visual.len() + features.dim();
    let mut flat = vec![0.0; points.len() * width];
    if width > 0 {
        flat.par_chunks_mut(width).zip(points.par_iter()).for_each(|(row, p)| {
            row[..visual.len()].copy_from_slice(visual);
            features.write_features(p, &mut row[visual.len()..]);
        });
    }
    Array2::from_shape_vec((points.len(), width), flat).expect("row-major shape")
}

fn l1_slope(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

const PREDICT_CHUNK: usize = 4096;

/// Decoder outputs at `points`, evaluated in fixed-size chunks.
pub fn predict(params: &MlpParams, features: &dyn FeatureProvider, visual: &[f64], points: &[Vec3]) -> Result<Vec<f64>> {
    let width = visual.len() + features.dim();
    if width != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            actual: width,
            context: "decoder input (visual + kinematic)",
        });
    }
    let chunks: Vec<Result<Vec<f64>>> = points
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| {
            let x = input_rows(features, visual, chunk);
            Ok(params.forward_batch(x.view())?.to_vec())
        })
        .collect();
    let mut out = Vec::with_capacity(points.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Adam on balanced per-shape draws. Each epoch pools one balanced draw per
/// shape, shuffles it and takes one step per minibatch.
pub fn train(params: MlpParams, shapes: &[TrainingShape<'_>], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.validate()?;
    for s in shapes {
        let width = s.visual.len() + s.features.dim();
        if width != params.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: params.input_dim(),
                actual: width,
                context: "training shape features",
            });
        }
    }
    let mut params = params;
    let mut trace = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, trace, steps: 0 });
    }
    if shapes.is_empty() {
        return Err(Error::Empty("training shapes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(params.parameter_count());
    let weight = cfg.loss_weight();
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for s in shapes {
            let batch = balanced_batch_with(s.samples, cfg.samples_per_side, cfg.target, &mut rng)?;
            let points: Vec<Vec3> = batch.iter().map(|b| b.position).collect();
            rows.push(input_rows(s.features, s.visual, &points));
            targets.extend(batch.iter().map(|b| cfg.target.value(b)));
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let all = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal row widths");
        let mut order: Vec<usize> = (0..targets.len()).collect();
        order.shuffle(&mut rng);
        let mut abs_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = all.select(ndarray::Axis(0), chunk);
            let cache = params.forward_cached(x.view())?;
            let m = chunk.len() as f64;
            let mut upstream = Vec::with_capacity(chunk.len());
            let mut batch_abs = 0.0;
            for (pred, &idx) in cache.output().iter().zip(chunk) {
                let r = pred - targets[idx];
                batch_abs += r.abs();
                upstream.push(weight * l1_slope(r) / m);
            }
            let loss = weight * batch_abs / m;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            abs_sum += batch_abs;
            let (grad, _) = params.backward_batch(&cache, &upstream)?;
            adam.step(&mut params, &grad.to_flat(), lr);
            steps += 1;
        }
        let mean_l1 = abs_sum / targets.len() as f64;
        trace.push(EpochStats {
            epoch,
            learning_rate: lr,
            mean_l1,
            weighted_loss: weight * mean_l1,
        });
    }
    params.validate().map_err(|_| Error::Diverged {
        epoch: cfg.epochs,
        loss: f64::NAN,
    })?;
    Ok(TrainOutcome { params, trace, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::mlp::decoder_widths;
    use crate::features::{FeatureMode, KinematicConditioning};
    use rand::Rng;

    fn sphere_samples(n: usize, seed: u64) -> Vec<SdfSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p = Vec3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                );
                let d = p.norm() - 0.3;
                SdfSample { position: p, sdf_hand: d, sdf_obj: d }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let p = MlpParams::init(&decoder_widths(3, 8), 1).unwrap();
        let samples = sphere_samples(100, 1);
        let raw = KinematicConditioning::raw(FeatureMode::K1);
        let shapes = [TrainingShape { samples: &samples, features: &raw, visual: &[] }];
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let out = train(p.clone(), &shapes, &cfg).unwrap();
        assert_eq!(out.params, p);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 1e-4);
        assert_eq!(cfg.learning_rate_at(599), 1e-4);
        assert_eq!(cfg.learning_rate_at(600), 5e-5);
        assert_eq!(cfg.learning_rate_at(1500), 2.5e-5);
        assert!(TrainConfig { learning_rate: -1.0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn fits_analytic_sphere() {
        let samples = sphere_samples(8000, 2);
        let raw = KinematicConditioning::raw(FeatureMode::K1);
        let shapes = [TrainingShape { samples: &samples, features: &raw, visual: &[] }];
        let cfg = TrainConfig {
            learning_rate: 2e-3,
            decay_every: 25,
            batch_size: 100,
            samples_per_side: 400,
            epochs: 250,
            seed: 3,
            ..Default::default()
        };
        let p = MlpParams::init(&decoder_widths(3, 32), 4).unwrap();
        let out = train(p, &shapes, &cfg).unwrap();
        assert_eq!(out.steps, 2000);
        let test = sphere_samples(2000, 99);
        let pts: Vec<Vec3> = test.iter().map(|s| s.position).collect();
        let pred = predict(&out.params, &raw, &[], &pts).unwrap();
        let l1 = pred.iter().zip(&test).map(|(p, s)| (p - s.sdf_hand).abs()).sum::<f64>() / 2000.0;
        assert!(l1 < 0.01, "held-out L1 {l1}");
        assert!(out.trace.last().unwrap().mean_l1 < out.trace[0].mean_l1);
    }

    #[test]
    fn training_is_deterministic() {
        let samples = sphere_samples(1000, 5);
        let raw = KinematicConditioning::raw(FeatureMode::K1);
        let shapes = [TrainingShape { samples: &samples, features: &raw, visual: &[] }];
        let cfg = TrainConfig { epochs: 5, samples_per_side: 100, learning_rate: 1e-3, ..Default::default() };
        let run = || train(MlpParams::init(&decoder_widths(3, 16), 6).unwrap(), &shapes, &cfg).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn shortage_and_divergence_are_errors() {
        let raw = KinematicConditioning::raw(FeatureMode::K1);
        let samples = sphere_samples(50, 1);
        let shapes = [TrainingShape { samples: &samples, features: &raw, visual: &[] }];
        let cfg = TrainConfig { epochs: 1, samples_per_side: 500, ..Default::default() };
        let p = MlpParams::init(&decoder_widths(3, 8), 1).unwrap();
        assert!(matches!(train(p.clone(), &shapes, &cfg), Err(Error::Shortage { .. })));

        let mut bad = sphere_samples(200, 1);
        for s in bad.iter_mut().filter(|s| s.sdf_hand >= 0.0) {
            s.sdf_hand = f64::INFINITY;
        }
        let shapes = [TrainingShape { samples: &bad, features: &raw, visual: &[] }];
        let cfg = TrainConfig { epochs: 3, samples_per_side: 20, ..Default::default() };
        assert!(matches!(train(p, &shapes, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn visual_code_widens_input() {
        let raw = KinematicConditioning::raw(FeatureMode::K1);
        let p = MlpParams::init(&decoder_widths(5, 8), 1).unwrap();
        let pts = [Vec3::new(0.1, 0.2, 0.3)];
        assert!(predict(&p, &raw, &[0.0; 2], &pts).is_ok());
        assert!(predict(&p, &raw, &[], &pts).is_err());
    }
}
