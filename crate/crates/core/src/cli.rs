//! `kinsdf` command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::ablation::{run_ablation, AblationConfig};
use crate::decoder::{decoder_widths, predict, train, DecoderModel, MlpParams, ModelHeader, TrainConfig, TrainingShape};
use crate::error::{Error, Result};
use crate::features::{FeatureMode, FeatureProvider, KinematicConditioning};
use crate::geom::{RigidTransform, Vec3};
use crate::kinematics::{forward_kinematics, inverse_kinematics, HandPose, HandSkeleton, JointSet};
use crate::mesh::{Aabb, TriMesh};
use crate::metrics::{center_error, evaluate_reconstruction, joint_errors, Aggregation, EvalConfig, MetricReport};
use crate::reconstruct::{denormalize_mesh, evaluate_grid_batched, marching_cubes, DEFAULT_RESOLUTION};
use crate::sdf::dataset::{generate_dataset, NormalizationTransform, SampleSet, SdfTarget, DEFAULT_NEAR_FRACTION, DEFAULT_SAMPLE_COUNT};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "kinsdf", version, about = "Kinematic-feature SDF toolkit for hand-object reconstruction")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "GSDF_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for data-parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// TOML file whose values override command-line flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample signed distances for a hand/object mesh pair.
    Gensdf(GensdfArgs),
    /// Pose the skeleton.
    Fk(FkArgs),
    /// Recover a pose from 21 joint positions.
    Ik(IkArgs),
    /// Dump kinematic features for query points as CSV.
    Features(FeaturesArgs),
    /// Train a decoder on a sample set.
    Fit(FitArgs),
    /// Extract a mesh from a trained decoder.
    Extract(ExtractArgs),
    /// Score reconstructions against ground truth.
    Eval(EvalArgs),
    /// Compare feature modes on the synthetic benchmark.
    Ablate(AblateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gensdf(_) => "gensdf",
            Command::Fk(_) => "fk",
            Command::Ik(_) => "ik",
            Command::Features(_) => "features",
            Command::Fit(_) => "fit",
            Command::Extract(_) => "extract",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
        }
    }
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct GensdfArgs {
    #[arg(long)]
    pub hand: PathBuf,
    #[arg(long)]
    pub object: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_COUNT)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_NEAR_FRACTION)]
    pub near_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct FkArgs {
    /// Pose JSON with `theta` (16 axis-angle triples) and optional `phi`.
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct IkArgs {
    /// Joints JSON with a `joints` array of 21 positions.
    #[arg(long)]
    pub joints: PathBuf,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct FeaturesArgs {
    /// CSV of query points (x,y,z per row).
    #[arg(long, conflicts_with = "samples")]
    pub points: Option<PathBuf>,
    /// Sample set whose positions are used as query points.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long, default_value = "k3")]
    pub mode: String,
    /// Joints JSON in the same frame as the points.
    #[arg(long)]
    pub joints: Option<PathBuf>,
    /// Object center `x,y,z` in the same frame as the points.
    #[arg(long)]
    pub object_center: Option<String>,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct FitArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long, default_value = "hand")]
    pub target: String,
    #[arg(long, default_value = "k1")]
    pub mode: String,
    /// Joints JSON in the world frame of the sampled meshes.
    #[arg(long)]
    pub joints: Option<PathBuf>,
    /// Object center `x,y,z` in world units.
    #[arg(long)]
    pub object_center: Option<String>,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    /// Length of the (all-zero) visual code prepended to the features.
    #[arg(long, default_value_t = 0)]
    pub visual_dim: usize,
    #[arg(long, default_value_t = 1600)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 600)]
    pub decay_every: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 500)]
    pub samples_per_side: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    pub res: usize,
    /// Keep vertices in the normalized cube instead of world units.
    #[arg(long)]
    pub normalized: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred_hand: PathBuf,
    #[arg(long)]
    pub gt_hand: PathBuf,
    #[arg(long, requires = "gt_object")]
    pub pred_object: Option<PathBuf>,
    #[arg(long, requires = "pred_object")]
    pub gt_object: Option<PathBuf>,
    #[arg(long, requires = "gt_joints")]
    pub pred_joints: Option<PathBuf>,
    #[arg(long, requires = "pred_joints")]
    pub gt_joints: Option<PathBuf>,
    #[arg(long, requires = "gt_center")]
    pub pred_center: Option<String>,
    #[arg(long, requires = "pred_center")]
    pub gt_center: Option<String>,
    /// Centimetres per mesh unit (100 for meshes in metres).
    #[arg(long, default_value_t = 100.0)]
    pub cm_per_unit: f64,
    #[arg(long, default_value_t = 30_000)]
    pub surface_samples: usize,
    #[arg(long, default_value_t = 10)]
    pub align_iters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub voxel_cm: f64,
    #[arg(long, default_value = "median")]
    pub aggregation: String,
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-sample CSV export.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct AblateArgs {
    #[arg(long, value_delimiter = ',', default_value = "k1,k3,ko1,ko3")]
    pub modes: Vec<String>,
    #[arg(long, default_value_t = 64)]
    pub train_scenes: usize,
    #[arg(long, default_value_t = 16)]
    pub test_scenes: usize,
    #[arg(long, default_value_t = 4000)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 40)]
    pub res: usize,
    #[arg(long, default_value_t = 64)]
    pub gt_res: usize,
    #[arg(long, default_value_t = 5000)]
    pub eval_samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status. Errors go to stderr as JSON.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse_with_config(&args) {
        Ok(c) => c,
        Err(ParseFailure::Clap(e)) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            report_error("usage", &e.to_string(), 2);
            return 2;
        }
        Err(ParseFailure::Lib(e)) => {
            report_error(e.kind(), &e.to_string(), e.exit_code());
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            report_error("threads", &e.to_string(), 2);
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            report_error(e.kind(), &e.to_string(), e.exit_code());
            e.exit_code()
        }
    }
}

fn report_error(kind: &str, message: &str, code: i32) {
    let v = json!({ "error": { "kind": kind, "message": message.trim(), "exit_code": code } });
    eprintln!("{v}");
}

enum ParseFailure {
    Clap(clap::Error),
    Lib(Error),
}

/// Config values are appended after the command line so that they win.
fn parse_with_config(args: &[OsString]) -> std::result::Result<Cli, ParseFailure> {
    let first = Cli::try_parse_from(args).map_err(ParseFailure::Clap)?;
    let Some(path) = &first.config else { return Ok(first) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| ParseFailure::Lib(Error::InvalidArgument(format!("config {}: {e}", path.display()))))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ParseFailure::Lib(Error::parse(path.display().to_string(), e.to_string())))?;
    let mut extended = args.to_vec();
    let sub = first.command.name();
    for (key, value) in &table {
        match value {
            toml::Value::Table(t) if key == sub => {
                for (k, v) in t {
                    push_flag(&mut extended, k, v).map_err(ParseFailure::Lib)?;
                }
            }
            toml::Value::Table(_) => {}
            v => push_flag(&mut extended, key, v).map_err(ParseFailure::Lib)?,
        }
    }
    Cli::try_parse_from(&extended).map_err(ParseFailure::Clap)
}

fn push_flag(args: &mut Vec<OsString>, key: &str, value: &toml::Value) -> Result<()> {
    let flag = format!("--{}", key.replace('_', "-"));
    let text = match value {
        toml::Value::Boolean(true) => {
            args.push(flag.into());
            return Ok(());
        }
        toml::Value::Boolean(false) => return Ok(()),
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Array(items) => items
            .iter()
            .map(|v| match v {
                toml::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect::<Vec<_>>()
            .join(","),
        other => return Err(Error::InvalidArgument(format!("config key '{key}' has unsupported value {other}"))),
    };
    args.push(flag.into());
    args.push(text.into());
    Ok(())
}

/// Hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct RunContext<'a> {
    cli: &'a Cli,
    inputs: Vec<(PathBuf, String)>,
}

impl<'a> RunContext<'a> {
    fn new(cli: &'a Cli) -> Self {
        RunContext { cli, inputs: Vec::new() }
    }

    fn require(&self, path: &Path, field: &str) -> Result<()> {
        if !path.is_file() {
            return Err(Error::InvalidArgument(format!("--{field}: no such file {}", path.display())));
        }
        Ok(())
    }

    /// Reads an input and records its digest.
    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        self.inputs.push((path.to_path_buf(), sha256_hex(&bytes)));
        Ok(bytes)
    }

    fn read_text(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.read(path)?).map_err(|_| Error::parse(path.display().to_string(), "not UTF-8"))
    }

    fn out_path(&self, p: &Path) -> PathBuf {
        match &self.cli.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Digest of the command, its non-path parameters and its input
    /// contents. Thread count and output locations are excluded.
    fn config_hash<P: Serialize>(&self, params: &P) -> Result<String> {
        let mut v = serde_json::to_value(params)?;
        strip_paths(&mut v);
        let digests: Vec<&str> = self.inputs.iter().map(|(_, d)| d.as_str()).collect();
        let canonical = json!({
            "command": self.cli.command.name(),
            "seed": self.cli.seed,
            "params": v,
            "inputs": digests,
            "version": VERSION,
        });
        Ok(sha256_hex(canonical.to_string().as_bytes()))
    }

    /// Writes `bytes` to `<out>.partial`, renames it into place and writes
    /// the run manifest next to it.
    fn commit(&self, out: &Path, bytes: &[u8], config_hash: &str) -> Result<PathBuf> {
        let out = self.out_path(out);
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        write_atomic(&out, bytes)?;
        let manifest = json!({
            "command": self.cli.command.name(),
            "version": VERSION,
            "seed": self.cli.seed,
            "config_hash": config_hash,
            "inputs": self.inputs.iter().map(|(p, d)| json!({ "path": p.display().to_string(), "sha256": d })).collect::<Vec<_>>(),
            "outputs": [ { "path": out.display().to_string(), "sha256": sha256_hex(bytes) } ],
        });
        let mut mpath = out.clone().into_os_string();
        mpath.push(".manifest.json");
        write_atomic(Path::new(&mpath), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(out)
    }
}

fn strip_paths(v: &mut Value) {
    if let Value::Object(map) = v {
        map.retain(|k, _| {
            !matches!(
                k.as_str(),
                "out" | "csv" | "hand" | "object" | "pose" | "joints" | "skeleton" | "points" | "samples" | "model"
                    | "pred_hand" | "gt_hand" | "pred_object" | "gt_object" | "pred_joints" | "gt_joints"
            )
        });
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    std::fs::write(&partial, bytes)?;
    std::fs::rename(&partial, path)?;
    Ok(())
}

fn parse_vec3(text: &str, field: &str) -> Result<Vec3> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("--{field}: expected x,y,z, got '{text}'")))?;
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!("--{field}: expected 3 components, got {}", parts.len())));
    }
    Ok(Vec3::new(parts[0], parts[1], parts[2]))
}

fn joints_from_json(text: &str, source: &Path) -> Result<JointSet> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::parse(source.display().to_string(), e.to_string()))?;
    let arr = v
        .get("joints")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(source.display().to_string(), "missing 'joints' array"))?;
    let mut joints = Vec::with_capacity(arr.len());
    for (i, j) in arr.iter().enumerate() {
        let c: Option<Vec<f64>> = j.as_array().map(|a| a.iter().filter_map(Value::as_f64).collect());
        match c {
            Some(c) if c.len() == 3 => joints.push(Vec3::new(c[0], c[1], c[2])),
            _ => return Err(Error::parse(source.display().to_string(), format!("joints[{i}] is not an [x, y, z] triple"))),
        }
    }
    let set = JointSet(joints);
    set.validate()?;
    Ok(set)
}

fn joints_to_value(j: &JointSet) -> Value {
    json!(j.0.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>())
}

fn load_skeleton(ctx: &mut RunContext<'_>, path: &Option<PathBuf>) -> Result<HandSkeleton> {
    match path {
        Some(p) => HandSkeleton::from_json(&ctx.read_text(p)?),
        None => Ok(HandSkeleton::default_hand()),
    }
}

/// Pose conditioning from observed joints: rotations come from IK, each
/// transform is anchored at its observed joint.
fn conditioning_from_joints(skel: &HandSkeleton, mode: FeatureMode, joints: &JointSet, center: Vec3) -> Result<KinematicConditioning> {
    let ik = inverse_kinematics(skel, joints)?;
    let posed = forward_kinematics(skel, &ik.pose);
    let globals: Vec<RigidTransform> = posed
        .globals
        .iter()
        .zip(&skel.pose_joints)
        .map(|(g, &j)| RigidTransform::new(g.rotation, joints.0[j]))
        .collect();
    Ok(KinematicConditioning::new(mode, joints, &globals, center))
}

fn dispatch(cli: &Cli) -> Result<String> {
    let mut ctx = RunContext::new(cli);
    match &cli.command {
        Command::Gensdf(a) => cmd_gensdf(&mut ctx, a),
        Command::Fk(a) => cmd_fk(&mut ctx, a),
        Command::Ik(a) => cmd_ik(&mut ctx, a),
        Command::Features(a) => cmd_features(&mut ctx, a),
        Command::Fit(a) => cmd_fit(&mut ctx, a),
        Command::Extract(a) => cmd_extract(&mut ctx, a),
        Command::Eval(a) => cmd_eval(&mut ctx, a),
        Command::Ablate(a) => cmd_ablate(&mut ctx, a),
    }
}

fn summary(out: &Path, extra: Value) -> String {
    let mut v = json!({ "artifact": out.display().to_string() });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    v.to_string()
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_gensdf(ctx: &mut RunContext<'_>, a: &GensdfArgs) -> Result<String> {
    ctx.require(&a.hand, "hand")?;
    ctx.require(&a.object, "object")?;
    let hand = TriMesh::read_obj(&ctx.read(&a.hand)?[..], &a.hand.display().to_string())?;
    let obj = TriMesh::read_obj(&ctx.read(&a.object)?[..], &a.object.display().to_string())?;
    let hash = ctx.config_hash(a)?;
    let mut set = generate_dataset(&hand, &obj, a.count, ctx.cli.seed, a.near_fraction)?;
    set.metadata.hand_path = Some(file_name(&a.hand));
    set.metadata.object_path = Some(file_name(&a.object));
    set.metadata.config_hash = Some(hash.clone());
    let mut bytes = Vec::new();
    set.write_to(&mut bytes)?;
    let out = ctx.commit(&a.out, &bytes, &hash)?;
    Ok(summary(&out, json!({ "count": set.len(), "hand_sign_reliable": set.metadata.hand_sign_reliable, "object_sign_reliable": set.metadata.object_sign_reliable })))
}

fn cmd_fk(ctx: &mut RunContext<'_>, a: &FkArgs) -> Result<String> {
    ctx.require(&a.pose, "pose")?;
    let skel = load_skeleton(ctx, &a.skeleton)?;
    let pose = HandPose::from_json(&ctx.read_text(&a.pose)?, &skel)?;
    let hash = ctx.config_hash(a)?;
    let posed = forward_kinematics(&skel, &pose);
    let doc = json!({ "joints": joints_to_value(&posed.joints), "seed": ctx.cli.seed, "config_hash": hash });
    let out = ctx.commit(&a.out, serde_json::to_string_pretty(&doc)?.as_bytes(), &hash)?;
    Ok(summary(&out, json!({})))
}

fn cmd_ik(ctx: &mut RunContext<'_>, a: &IkArgs) -> Result<String> {
    ctx.require(&a.joints, "joints")?;
    let skel = load_skeleton(ctx, &a.skeleton)?;
    let joints = joints_from_json(&ctx.read_text(&a.joints)?, &a.joints)?;
    let hash = ctx.config_hash(a)?;
    let ik = inverse_kinematics(&skel, &joints)?;
    let mut doc: Value = serde_json::from_str(&ik.pose.to_json())?;
    if let Value::Object(m) = &mut doc {
        m.insert("degenerate".into(), json!(ik.degenerate));
        m.insert("seed".into(), json!(ctx.cli.seed));
        m.insert("config_hash".into(), json!(hash));
    }
    let out = ctx.commit(&a.out, serde_json::to_string_pretty(&doc)?.as_bytes(), &hash)?;
    let degenerate = ik.degenerate.iter().filter(|d| **d).count();
    Ok(summary(&out, json!({ "degenerate_joints": degenerate })))
}

fn read_points_csv(text: &str, source: &Path) -> Result<Vec<Vec3>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(source.display().to_string(), e.to_string()))?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().take(3).map(str::parse::<f64>).collect();
        match vals {
            Ok(v) if v.len() == 3 => out.push(Vec3::new(v[0], v[1], v[2])),
            // a non-numeric first row is a header
            Err(_) if line == 0 => continue,
            _ => return Err(Error::parse(source.display().to_string(), format!("row {}: expected x,y,z", line + 1))),
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("query points"));
    }
    Ok(out)
}

fn cmd_features(ctx: &mut RunContext<'_>, a: &FeaturesArgs) -> Result<String> {
    let mode: FeatureMode = a.mode.parse()?;
    let points = match (&a.points, &a.samples) {
        (Some(p), None) => {
            ctx.require(p, "points")?;
            read_points_csv(&ctx.read_text(p)?, p)?
        }
        (None, Some(s)) => {
            ctx.require(s, "samples")?;
            SampleSet::read_from(&ctx.read(s)?[..])?.samples.iter().map(|s| s.position).collect()
        }
        _ => return Err(Error::InvalidArgument("give exactly one of --points or --samples".into())),
    };
    let center = a.object_center.as_deref().map(|c| parse_vec3(c, "object-center")).transpose()?;
    let cond = match mode {
        FeatureMode::K1 | FeatureMode::Ko1 => KinematicConditioning::raw(mode),
        _ => {
            let path = a.joints.as_ref().ok_or_else(|| Error::InvalidArgument(format!("--joints is required for mode {mode}")))?;
            ctx.require(path, "joints")?;
            let skel = load_skeleton(ctx, &a.skeleton)?;
            let joints = joints_from_json(&ctx.read_text(path)?, path)?;
            let c = match (mode, center) {
                (FeatureMode::Ko2 | FeatureMode::Ko3, None) => {
                    return Err(Error::InvalidArgument(format!("--object-center is required for mode {mode}")))
                }
                (_, c) => c.unwrap_or_else(Vec3::zeros),
            };
            conditioning_from_joints(&skel, mode, &joints, c)?
        }
    };
    let hash = ctx.config_hash(a)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["x".to_string(), "y".into(), "z".into()];
    header.extend((0..cond.dim()).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut buf = vec![0.0; cond.dim()];
    for p in &points {
        cond.write_features(p, &mut buf);
        let mut row = vec![p.x.to_string(), p.y.to_string(), p.z.to_string()];
        row.extend(buf.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let out = ctx.commit(&a.out, &bytes, &hash)?;
    Ok(summary(&out, json!({ "rows": points.len(), "dim": cond.dim() })))
}

fn cmd_fit(ctx: &mut RunContext<'_>, a: &FitArgs) -> Result<String> {
    let mode: FeatureMode = a.mode.parse()?;
    let target: SdfTarget = a.target.parse()?;
    ctx.require(&a.samples, "samples")?;
    if let Some(j) = &a.joints {
        ctx.require(j, "joints")?;
    }
    let set = SampleSet::read_from(&ctx.read(&a.samples)?[..])?;
    let norm = set.metadata.normalization();
    let center = a.object_center.as_deref().map(|c| parse_vec3(c, "object-center")).transpose()?;
    let cond = match mode {
        FeatureMode::K1 | FeatureMode::Ko1 => KinematicConditioning::raw(mode),
        _ => {
            let path = a.joints.as_ref().ok_or_else(|| Error::InvalidArgument(format!("--joints is required for mode {mode}")))?;
            let skel = load_skeleton(ctx, &a.skeleton)?;
            let world = joints_from_json(&ctx.read_text(path)?, path)?;
            let c = match (mode, center) {
                (FeatureMode::Ko2 | FeatureMode::Ko3, None) => {
                    return Err(Error::InvalidArgument(format!("--object-center is required for mode {mode}")))
                }
                (_, c) => c.unwrap_or(norm.offset),
            };
            normalized_conditioning(&skel, mode, &world, c, &norm)?
        }
    };
    let hash = ctx.config_hash(a)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        decay_every: a.decay_every,
        batch_size: a.batch_size,
        samples_per_side: a.samples_per_side,
        epochs: a.epochs,
        seed: ctx.cli.seed,
        target,
        ..TrainConfig::default()
    };
    let widths = decoder_widths(a.visual_dim + mode.dim(), a.hidden);
    let init = MlpParams::init(&widths, ctx.cli.seed)?;
    let visual = vec![0.0; a.visual_dim];
    let shapes = [TrainingShape { samples: &set.samples, features: &cond, visual: &visual }];
    let outcome = train(init, &shapes, &cfg)?;
    let mut header = ModelHeader::new(widths, mode, target, a.visual_dim, ctx.cli.seed);
    header.normalization = Some(norm);
    header.conditioning = Some(cond);
    let final_l1 = outcome.trace.last().map(|t| t.mean_l1);
    header.metadata.insert("config_hash".into(), json!(hash));
    header.metadata.insert("epochs".into(), json!(a.epochs));
    header.metadata.insert("steps".into(), json!(outcome.steps));
    header.metadata.insert("final_l1".into(), json!(final_l1));
    header.metadata.insert("learning_rate".into(), json!(a.lr));
    header.metadata.insert("sample_count".into(), json!(set.len()));
    let model = DecoderModel { header, params: outcome.params };
    let mut bytes = Vec::new();
    model.write_to(&mut bytes)?;
    let out = ctx.commit(&a.out, &bytes, &hash)?;
    Ok(summary(&out, json!({ "steps": outcome.steps, "final_l1": final_l1 })))
}

fn normalized_conditioning(
    skel: &HandSkeleton,
    mode: FeatureMode,
    world: &JointSet,
    center: Vec3,
    norm: &NormalizationTransform,
) -> Result<KinematicConditioning> {
    let c = conditioning_from_joints(skel, mode, world, center)?;
    let joints = JointSet(world.0.iter().map(|p| norm.apply(p)).collect());
    let globals: Vec<RigidTransform> = c.globals.iter().map(|g| norm.apply_rigid(g)).collect();
    Ok(KinematicConditioning::new(mode, &joints, &globals, norm.apply(&center)))
}

fn cmd_extract(ctx: &mut RunContext<'_>, a: &ExtractArgs) -> Result<String> {
    ctx.require(&a.model, "model")?;
    let model = DecoderModel::read_from(&ctx.read(&a.model)?[..])?;
    let hash = ctx.config_hash(a)?;
    let h = &model.header;
    let cond = h.conditioning.clone().unwrap_or_else(|| KinematicConditioning::raw(h.mode));
    cond.validate()?;
    let visual = vec![0.0; h.visual_dim];
    let cube = Aabb { min: Vec3::repeat(-0.5), max: Vec3::repeat(0.5) };
    let grid = evaluate_grid_batched(|pts| predict(&model.params, &cond, &visual, pts), cube, a.res)?;
    let mut mesh = marching_cubes(&grid, 0.0).mesh;
    if !a.normalized {
        if let Some(n) = &h.normalization {
            mesh = denormalize_mesh(&mesh, n);
        }
    }
    let header = vec![
        "kinsdf extract".to_string(),
        format!("seed {}", ctx.cli.seed),
        format!("config_hash {hash}"),
        format!("model_seed {} mode {} target {:?} resolution {}", h.seed, h.mode, h.target, a.res),
    ];
    let mut bytes = Vec::new();
    mesh.write_obj(&mut bytes, &header)?;
    let out = ctx.commit(&a.out, &bytes, &hash)?;
    Ok(summary(&out, json!({ "vertices": mesh.vertices.len(), "triangles": mesh.triangles.len() })))
}

fn load_mesh(ctx: &mut RunContext<'_>, p: &Path) -> Result<TriMesh> {
    let bytes = ctx.read(p)?;
    TriMesh::read_obj(&bytes[..], &p.display().to_string())
}

fn cmd_eval(ctx: &mut RunContext<'_>, a: &EvalArgs) -> Result<String> {
    for (p, f) in [(Some(&a.pred_hand), "pred-hand"), (Some(&a.gt_hand), "gt-hand"), (a.pred_object.as_ref(), "pred-object"), (a.gt_object.as_ref(), "gt-object"), (a.pred_joints.as_ref(), "pred-joints"), (a.gt_joints.as_ref(), "gt-joints")] {
        if let Some(p) = p {
            ctx.require(p, f)?;
        }
    }
    let aggregation: Aggregation = a.aggregation.parse()?;
    if !(a.cm_per_unit > 0.0) {
        return Err(Error::InvalidArgument("--cm-per-unit must be positive".into()));
    }
    let pred_hand = load_mesh(ctx, &a.pred_hand)?;
    let gt_hand = load_mesh(ctx, &a.gt_hand)?;
    let objects = match (&a.pred_object, &a.gt_object) {
        (Some(p), Some(g)) => Some((load_mesh(ctx, p)?, load_mesh(ctx, g)?)),
        _ => None,
    };
    let joints = match (&a.pred_joints, &a.gt_joints) {
        (Some(p), Some(g)) => {
            let pj = joints_from_json(&ctx.read_text(p)?, p)?;
            let gj = joints_from_json(&ctx.read_text(g)?, g)?;
            Some((pj, gj))
        }
        _ => None,
    };
    let centers = match (&a.pred_center, &a.gt_center) {
        (Some(p), Some(g)) => Some((parse_vec3(p, "pred-center")?, parse_vec3(g, "gt-center")?)),
        _ => None,
    };
    let hash = ctx.config_hash(a)?;
    let cfg = EvalConfig {
        surface_samples: a.surface_samples,
        align_iters: a.align_iters,
        cm_per_unit: a.cm_per_unit,
        seed: ctx.cli.seed,
        voxel_cm: a.voxel_cm,
    };
    let id = a.id.clone().unwrap_or_else(|| file_name(&a.pred_hand));
    let mut sample = evaluate_reconstruction(&id, &pred_hand, &gt_hand, objects.as_ref().map(|(p, g)| (p, g)), &cfg)?;
    if let Some((pj, gj)) = &joints {
        sample.e_h = Some(joint_errors(pj, gj) * a.cm_per_unit);
    }
    if let Some((pc, gc)) = &centers {
        sample.e_o = Some(center_error(pc, gc) * a.cm_per_unit);
    }
    let report = MetricReport::from_samples(vec![sample], aggregation);
    let mut doc = serde_json::to_value(&report)?;
    if let Value::Object(m) = &mut doc {
        m.insert("seed".into(), json!(ctx.cli.seed));
        m.insert("config_hash".into(), json!(hash));
    }
    let out = ctx.commit(&a.out, serde_json::to_string_pretty(&doc)?.as_bytes(), &hash)?;
    if let Some(csv_path) = &a.csv {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        ctx.commit(csv_path, &buf, &hash)?;
    }
    Ok(summary(&out, json!({ "metrics": report.metrics })))
}

fn cmd_ablate(ctx: &mut RunContext<'_>, a: &AblateArgs) -> Result<String> {
    let modes = a.modes.iter().map(|m| m.parse()).collect::<Result<Vec<FeatureMode>>>()?;
    let defaults = AblationConfig::default();
    let cfg = AblationConfig {
        modes,
        train_scenes: a.train_scenes,
        test_scenes: a.test_scenes,
        samples_per_scene: a.count,
        hidden_width: a.hidden,
        train: TrainConfig { epochs: a.epochs, learning_rate: a.lr, ..defaults.train.clone() },
        resolution: a.res,
        gt_resolution: a.gt_res,
        eval_samples: a.eval_samples,
        seed: ctx.cli.seed,
        ..defaults
    };
    cfg.validate()?;
    let hash = ctx.config_hash(a)?;
    let report = run_ablation(&cfg)?;
    let mut doc = serde_json::to_value(&report)?;
    if let Value::Object(m) = &mut doc {
        m.insert("config_hash".into(), json!(hash));
        m.insert("config".into(), serde_json::to_value(&cfg)?);
    }
    let out = ctx.commit(&a.out, serde_json::to_string_pretty(&doc)?.as_bytes(), &hash)?;
    eprint!("{}", report.to_markdown());
    Ok(summary(&out, json!({ "rows": report.rows.len() })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_anywhere() {
        let cli = Cli::try_parse_from(["kinsdf", "fk", "--pose", "p.json", "--out", "j.json", "--seed", "7", "--threads", "2"]).unwrap();
        assert_eq!((cli.seed, cli.threads), (7, 2));
        assert_eq!(cli.command.name(), "fk");
    }

    #[test]
    fn config_file_overrides_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "seed = 11\n[ablate]\nmodes = [\"k1\", \"k3\"]\nepochs = 3\n[fit]\nepochs = 99\n").unwrap();
        let args: Vec<OsString> = ["kinsdf", "ablate", "--epochs", "50", "--out", "r.json", "--seed", "2", "--config"]
            .iter()
            .map(OsString::from)
            .chain([cfg.into_os_string()])
            .collect();
        let cli = match parse_with_config(&args) {
            Ok(c) => c,
            Err(_) => panic!("config parse failed"),
        };
        assert_eq!(cli.seed, 11);
        match cli.command {
            Command::Ablate(a) => {
                assert_eq!(a.epochs, 3);
                assert_eq!(a.modes, vec!["k1", "k3"]);
            }
            _ => panic!("wrong command"),
        }
    }

    #[test]
    fn vec3_parsing() {
        assert_eq!(parse_vec3("1, 2,3", "c").unwrap(), Vec3::new(1.0, 2.0, 3.0));
        assert!(parse_vec3("1,2", "c").is_err());
        assert!(parse_vec3("a,b,c", "c").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["kinsdf", "fk", "--pose", "/nonexistent/p.json", "--out", "x.json"]), 2);
        assert_eq!(run(["kinsdf", "bogus"]), 2);
        assert_eq!(run(["kinsdf", "--help"]), 0);
    }
}
