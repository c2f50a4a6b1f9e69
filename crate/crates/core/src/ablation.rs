//! Feature-mode comparison on the synthetic benchmark: one decoder per
//! mode, trained and evaluated on the same scenes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{decoder_widths, predict, train, MlpParams, TrainConfig, TrainingShape};
use crate::error::{Error, Result};
use crate::features::{FeatureMode, KinematicConditioning};
use crate::geom::Vec3;
use crate::kinematics::HandSkeleton;
use crate::mesh::{Aabb, TriMesh};
use crate::metrics::{aggregate, chamfer_distance, f_score, sample_surface, Aggregation};
use crate::reconstruct::{denormalize_mesh, evaluate_grid_batched, marching_cubes};
use crate::sdf::dataset::{SdfSample, SdfTarget, DEFAULT_NEAR_FRACTION};
use crate::synthetic::{random_scenes, SceneConfig, SyntheticScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub modes: Vec<FeatureMode>,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub samples_per_scene: usize,
    pub near_fraction: f64,
    pub hidden_width: usize,
    pub train: TrainConfig,
    /// Marching-cubes resolution for reconstructions.
    pub resolution: usize,
    /// Resolution of the ground-truth meshes.
    pub gt_resolution: usize,
    pub eval_samples: usize,
    pub seed: u64,
    pub scene: SceneConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            modes: vec![FeatureMode::K1, FeatureMode::K3, FeatureMode::Ko1, FeatureMode::Ko3],
            train_scenes: 64,
            test_scenes: 16,
            samples_per_scene: 4000,
            near_fraction: DEFAULT_NEAR_FRACTION,
            hidden_width: 64,
            train: TrainConfig {
                learning_rate: 1e-3,
                decay_every: 60,
                epochs: 150,
                batch_size: 256,
                samples_per_side: 96,
                ..TrainConfig::default()
            },
            resolution: 40,
            gt_resolution: 64,
            eval_samples: 5000,
            seed: 0,
            scene: SceneConfig::default(),
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidArgument("ablation needs at least one mode".into()));
        }
        if self.train_scenes == 0 || self.test_scenes == 0 {
            return Err(Error::InvalidArgument("train and test scene counts must be >= 1".into()));
        }
        if self.resolution < 2 || self.gt_resolution < 2 || self.eval_samples == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidArgument("resolutions, hidden width and eval samples must be positive".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: FeatureMode,
    pub target: SdfTarget,
    /// Median Chamfer distance over test scenes (cm^2).
    pub cd_median: Option<f64>,
    pub cd_mean: Option<f64>,
    /// F-scores at the target's two thresholds (1/5 mm hand, 5/10 mm object).
    pub fs_low: Option<f64>,
    pub fs_high: Option<f64>,
    pub final_train_l1: Option<f64>,
    pub per_scene_cd: Vec<f64>,
    /// Set when training diverged; the row carries no metrics then.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, mode: FeatureMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_markdown(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut s = String::from("| mode | target | CD median (cm^2) | CD mean (cm^2) | F@low | F@high | train L1 |\n");
        s.push_str("|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {:?} | {} | {} | {} | {} | {} |\n",
                r.mode,
                r.target,
                fmt(r.cd_median),
                fmt(r.cd_mean),
                fmt(r.fs_low),
                fmt(r.fs_high),
                fmt(r.final_train_l1)
            ));
        }
        s
    }
}

struct PreparedScene {
    scene: SyntheticScene,
    samples: Vec<SdfSample>,
    /// Ground-truth meshes in world units.
    gt_hand: TriMesh,
    gt_obj: TriMesh,
}

fn prepare(scenes: Vec<SyntheticScene>, cfg: &AblationConfig, seed: u64) -> Result<Vec<PreparedScene>> {
    scenes
        .into_par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let (hand, obj) = scene.normalized_meshes(cfg.gt_resolution)?;
            let samples = scene.samples((&hand, &obj), cfg.samples_per_scene, cfg.near_fraction, seed + i as u64)?;
            let gt_hand = denormalize_mesh(&hand, &scene.normalization);
            let gt_obj = denormalize_mesh(&obj, &scene.normalization);
            Ok(PreparedScene { scene, samples, gt_hand, gt_obj })
        })
        .collect()
}

/// Runs every configured mode. A mode whose training diverges gets a row
/// with its error and no metrics; the other modes still run.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let skel = HandSkeleton::default_hand();
    let train_scenes = random_scenes(&skel, &cfg.scene, cfg.train_scenes, cfg.seed)?;
    let test_scenes = random_scenes(&skel, &cfg.scene, cfg.test_scenes, cfg.seed.wrapping_add(1_000_003))?;
    let train_set = prepare(train_scenes, cfg, cfg.seed.wrapping_mul(7919))?;
    let test_set = prepare(test_scenes, cfg, cfg.seed.wrapping_mul(7919).wrapping_add(1 << 32))?;
    let mut rows = Vec::with_capacity(cfg.modes.len());
    for &mode in &cfg.modes {
        rows.push(run_mode(mode, cfg, &train_set, &test_set)?);
    }
    Ok(AblationReport { seed: cfg.seed, rows })
}

fn run_mode(mode: FeatureMode, cfg: &AblationConfig, train_set: &[PreparedScene], test_set: &[PreparedScene]) -> Result<AblationRow> {
    let target = if mode.is_object() { SdfTarget::Object } else { SdfTarget::Hand };
    let mut row = AblationRow {
        mode,
        target,
        cd_median: None,
        cd_mean: None,
        fs_low: None,
        fs_high: None,
        final_train_l1: None,
        per_scene_cd: Vec::new(),
        error: None,
    };
    let conds: Vec<KinematicConditioning> = train_set.iter().map(|s| s.scene.conditioning(mode)).collect();
    let shapes: Vec<TrainingShape<'_>> = train_set
        .iter()
        .zip(&conds)
        .map(|(s, c)| TrainingShape { samples: &s.samples, features: c, visual: &[] })
        .collect();
    let tcfg = TrainConfig { target, seed: cfg.seed, ..cfg.train.clone() };
    let init = MlpParams::init(&decoder_widths(mode.dim(), cfg.hidden_width), cfg.seed ^ 0x5eed)?;
    let outcome = match train(init, &shapes, &tcfg) {
        Ok(o) => o,
        Err(e @ Error::Diverged { .. }) => {
            row.error = Some(e.to_string());
            return Ok(row);
        }
        Err(e) => return Err(e),
    };
    row.final_train_l1 = outcome.trace.last().map(|t| t.mean_l1);
    let thresholds = match target {
        SdfTarget::Hand => (0.1, 0.5),
        SdfTarget::Object => (0.5, 1.0),
    };
    let cube = Aabb { min: Vec3::repeat(-0.5), max: Vec3::repeat(0.5) };
    let mut cds = Vec::new();
    let mut fl = Vec::new();
    let mut fh = Vec::new();
    for (i, s) in test_set.iter().enumerate() {
        let cond = s.scene.conditioning(mode);
        let grid = evaluate_grid_batched(|pts| predict(&outcome.params, &cond, &[], pts), cube, cfg.resolution)?;
        let recon = denormalize_mesh(&marching_cubes(&grid, 0.0).mesh, &s.scene.normalization);
        let gt = match target {
            SdfTarget::Hand => &s.gt_hand,
            SdfTarget::Object => &s.gt_obj,
        };
        let seed = cfg.seed.wrapping_add(i as u64);
        let gt_pts = sample_surface(gt, cfg.eval_samples, seed)?;
        if recon.is_empty() || recon.surface_area() <= 0.0 {
            cds.push(f64::INFINITY);
            fl.push(0.0);
            fh.push(0.0);
            continue;
        }
        // poses are given, so reconstructions are compared in place
        let pred_pts = sample_surface(&recon, cfg.eval_samples, seed)?;
        cds.push(chamfer_distance(&pred_pts, &gt_pts)? * 1e4);
        fl.push(f_score(&pred_pts, &gt_pts, thresholds.0 / 100.0)?);
        fh.push(f_score(&pred_pts, &gt_pts, thresholds.1 / 100.0)?);
    }
    row.cd_median = aggregate(&cds, Aggregation::Median);
    row.cd_mean = aggregate(&cds, Aggregation::Mean);
    row.fs_low = aggregate(&fl, Aggregation::Median);
    row.fs_high = aggregate(&fh, Aggregation::Median);
    row.per_scene_cd = cds;
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AblationConfig {
        AblationConfig {
            modes: vec![FeatureMode::K1],
            train_scenes: 3,
            test_scenes: 2,
            samples_per_scene: 800,
            hidden_width: 16,
            train: TrainConfig { epochs: 3, samples_per_side: 50, learning_rate: 1e-3, ..TrainConfig::default() },
            resolution: 16,
            gt_resolution: 24,
            eval_samples: 300,
            ..AblationConfig::default()
        }
    }

    #[test]
    fn single_mode_single_row_and_deterministic() {
        let a = run_ablation(&tiny()).unwrap();
        assert_eq!(a.rows.len(), 1);
        assert_eq!(a.rows[0].per_scene_cd.len(), 2);
        assert!(a.to_markdown().contains("| k1 |"));
        assert_eq!(a, run_ablation(&tiny()).unwrap());
    }

    #[test]
    fn divergence_marks_row_only() {
        let mut cfg = tiny();
        cfg.modes = vec![FeatureMode::K1, FeatureMode::Ko1];
        cfg.train.learning_rate = 1e300;
        let r = run_ablation(&cfg).unwrap();
        assert_eq!(r.rows.len(), 2);
        for row in &r.rows {
            assert!(row.error.as_deref().unwrap_or("").contains("diverged"), "{row:?}");
            assert!(row.cd_median.is_none());
        }
    }
}
