//! Subcommands and their exit-code contract.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use assoc3d::affinity::AffinityMatrix;
use assoc3d::evaluation::{
    correspondence_confidence, match_and_score, pooled_correspondence_ap, relative_pose_stats, DetectionAp,
    DetectionRecord, DetectionThresholds,
};
use assoc3d::geometry::{EdgeParams, SceneObject, DEFAULT_RESOLUTION};
use assoc3d::pose_space::{kmeans_translations, spherical_kmeans_rotations, PoseHypothesis, DEFAULT_MAX_ITER};
use assoc3d::rng::stream_seed;
use assoc3d::stitcher::{solve, Correspondence, SolveOptions, StitchWeights};
use assoc3d::synthetic::{generate_pair, GroundTruthScene, NoiseModel, PoseBins, SceneParams};

use crate::format::{BinSetFile, FormatError, ObjectRecord, PoseSample, ScenePairFile, StitchInput, FORMAT_VERSION};
use crate::report::{CorrespondenceSection, DetectionSection, EvaluationReport, PoseSection, StitchReport, ThresholdsRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

const EXIT_CODES: &str = "Exit codes:\n  0  success\n  1  invalid input: usage, unreadable or malformed files, violated invariants\n  2  the computation or writing its output failed";

/// Failure of a command, mapped to its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Failed(_) => EXIT_FAILED,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "assoc3d", version, about = "Two-view 3D scene stitching: stitch, evaluate, generate synthetic data, cluster pose bins", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Jointly pick the relative camera pose and object correspondence of a scene pair, then merge the views
    Stitch(StitchArgs),
    /// Score stitch reports against ground truth (detection AP, correspondence AP, pose error)
    Evaluate(EvaluateArgs),
    /// Write synthetic scene pairs with ground truth
    Generate(GenerateArgs),
    /// Cluster a relative-pose corpus into rotation and translation bins
    Cluster(ClusterArgs),
}

#[derive(Args, Debug)]
pub struct StitchArgs {
    /// Scene-pair JSON file
    pub input: PathBuf,
    #[arg(long, env = "SEED", default_value_t = 0)]
    pub seed: u64,
    /// Correspondence samples per pose hypothesis
    #[arg(long, default_value_t = 128)]
    pub k_samples: usize,
    /// Most likely rotation bins to try
    #[arg(long, default_value_t = 3)]
    pub k_rot: usize,
    /// Most likely translation bins to try
    #[arg(long, default_value_t = 10)]
    pub k_trans: usize,
    /// Weight of the similarity term
    #[arg(long, default_value_t = 5.0)]
    pub lambda_s: f64,
    /// Weight of the unmatched-object term
    #[arg(long, default_value_t = 1.0)]
    pub lambda_u: f64,
    /// Weight of the rotation-prior term
    #[arg(long, default_value_t = 5.0)]
    pub lambda_p_rot: f64,
    /// Weight of the translation-prior term
    #[arg(long, default_value_t = 1.0)]
    pub lambda_p_trans: f64,
    /// Pairs need an affinity strictly above this to be matched
    #[arg(long, default_value_t = 0.5)]
    pub affinity_threshold: f64,
    /// Edge points kept per object
    #[arg(long, default_value_t = 1000)]
    pub max_edge_points: usize,
    /// Report path (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Text,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Stitch report, or a directory of reports named like the scene files
    pub predictions: PathBuf,
    /// Scene-pair file with a ground-truth block, or a directory of them
    pub ground_truth: PathBuf,
    /// Translation error threshold (m)
    #[arg(long, default_value_t = 1.0)]
    pub trans_max: f64,
    /// Scale error threshold (mean |log₂ ratio|)
    #[arg(long, default_value_t = 0.2)]
    pub scale_max: f64,
    /// Rotation error threshold (degrees)
    #[arg(long, default_value_t = 30.0)]
    pub rot_max_deg: f64,
    /// Minimum shape F-score
    #[arg(long, default_value_t = 0.25)]
    pub fscore_min: f64,
    /// F-score distance threshold (unit-cube units)
    #[arg(long, default_value_t = 0.05)]
    pub fscore_tau: f64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Number of scene pairs
    #[arg(long, default_value_t = 10)]
    pub scenes: usize,
    /// Maximum objects per room
    #[arg(long, default_value_t = 10)]
    pub objects: usize,
    /// Minimum objects per room
    #[arg(long, default_value_t = 1)]
    pub min_objects: usize,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    pub resolution: usize,
    /// Probability that an object copies an earlier object's shape
    #[arg(long, default_value_t = 0.0)]
    pub duplicate_prob: f64,
    /// Per-axis translation noise (m)
    #[arg(long, default_value_t = 0.1)]
    pub noise_trans: f64,
    /// Per-axis rotation noise (degrees)
    #[arg(long, default_value_t = 5.0)]
    pub noise_rot_deg: f64,
    /// Per-axis log₂ scale noise
    #[arg(long, default_value_t = 0.1)]
    pub noise_scale: f64,
    /// RMS embedding perturbation angle (radians)
    #[arg(long, default_value_t = 0.3)]
    pub noise_embedding: f64,
    /// Probability that the true pose bin is ranked first
    #[arg(long, default_value_t = 0.4)]
    pub pose_accuracy: f64,
    /// Bin-set file from `cluster`; bins are clustered from generated poses when omitted
    #[arg(long)]
    pub bins: Option<PathBuf>,
    /// Poses generated to build bins when --bins is absent
    #[arg(long, default_value_t = 2000)]
    pub bins_corpus: usize,
    #[arg(long, env = "SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// JSON array of {"rotation_wxyz": [w,x,y,z], "translation": [x,y,z]}
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub k_rot: usize,
    #[arg(long, default_value_t = 60)]
    pub k_trans: usize,
    #[arg(long, env = "SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Stitch(a) => cmd_stitch(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Cluster(a) => cmd_cluster(a),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Failed(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.write_all(b"\n"))
                .map_err(|e| CliError::Failed(format!("stdout: {e}")))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports always serialize")
}

fn in_file(path: &Path, e: FormatError) -> CliError {
    CliError::Invalid(format!("{}: {e}", path.display()))
}

pub fn load_scene(path: &Path) -> Result<(ScenePairFile, StitchInput), CliError> {
    let file = ScenePairFile::parse(&read(path)?).map_err(|e| in_file(path, e))?;
    let input = file.validate().map_err(|e| in_file(path, e))?;
    Ok((file, input))
}

pub fn stitch_input(input: &StitchInput, weights: &StitchWeights, opts: &SolveOptions) -> Result<StitchReport, CliError> {
    let start = Instant::now();
    let result = solve(&input.view1, &input.view2, &input.affinity, &input.camera, weights, opts)
        .map_err(|e| CliError::Failed(format!("stitching failed: {e}")))?;
    Ok(StitchReport::from_result(&result, start.elapsed().as_secs_f64() * 1e3))
}

pub fn cmd_stitch(a: &StitchArgs) -> Result<(), CliError> {
    let (_, input) = load_scene(&a.input)?;
    let weights = StitchWeights {
        lambda_s: a.lambda_s,
        lambda_u: a.lambda_u,
        lambda_p_rot: a.lambda_p_rot,
        lambda_p_trans: a.lambda_p_trans,
        k_samples: a.k_samples,
        affinity_threshold: a.affinity_threshold,
    };
    weights.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    if a.k_rot == 0 || a.k_trans == 0 || a.max_edge_points == 0 {
        return Err(CliError::Invalid("--k-rot, --k-trans and --max-edge-points must be at least 1".into()));
    }
    let opts = SolveOptions {
        k_rot: a.k_rot,
        k_trans: a.k_trans,
        seed: a.seed,
        edge: EdgeParams {
            max_points: a.max_edge_points,
            ..EdgeParams::default()
        },
    };
    let report = stitch_input(&input, &weights, &opts)?;
    write_output(a.out.as_deref(), &to_json(&report))
}

/// What `evaluate` compares against the ground truth for one scene pair.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub objects: Vec<SceneObject>,
    pub correspondence: Correspondence,
    pub pose: PoseHypothesis,
}

impl Prediction {
    pub fn from_report(report: &StitchReport, n: usize, m: usize) -> Result<Self, FormatError> {
        let mut cache = Default::default();
        let objects = report
            .merged
            .iter()
            .enumerate()
            .map(|(k, o)| o.to_object(&format!("merged[{k}]"), &mut cache))
            .collect::<Result<Vec<_>, _>>()?;
        let correspondence = Correspondence::new(report.correspondence.iter().map(|p| (p[0], p[1])).collect(), n, m)
            .map_err(|e| FormatError::new("correspondence", e))?;
        Ok(Self {
            objects,
            correspondence,
            pose: report.pose.to_hypothesis()?,
        })
    }

    /// The ground truth itself, as a perfect prediction.
    pub fn oracle(gt: &GroundTruthScene) -> Self {
        let (q, t) = gt.relative_pose();
        Self {
            objects: gt.union_in_view1(),
            correspondence: gt.gt_correspondence.clone(),
            pose: PoseHypothesis::exact(q, t),
        }
    }
}

/// Per-scene evaluation inputs, before pooling.
struct SceneEval {
    records: Vec<DetectionRecord>,
    num_gt: usize,
    affinity: AffinityMatrix,
    gamma: AffinityMatrix,
    gt_pairs: Correspondence,
    pose: (PoseHypothesis, (assoc3d::UnitQuaternion, assoc3d::Vec3)),
}

fn load_prediction(path: &Path, n: usize, m: usize) -> Result<Prediction, CliError> {
    let text = read(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: malformed JSON: {e}", path.display())))?;
    if value.get("merged").is_some() {
        let report: StitchReport = serde_json::from_value(value)
            .map_err(|e| CliError::Invalid(format!("{}: malformed stitch report: {e}", path.display())))?;
        Prediction::from_report(&report, n, m).map_err(|e| in_file(path, e))
    } else {
        let (_, input) = load_scene(path)?;
        let gt = input
            .ground_truth
            .ok_or_else(|| CliError::Invalid(format!("{}: neither a stitch report nor a scene file with ground truth", path.display())))?;
        Ok(Prediction::oracle(&gt))
    }
}

fn evaluate_scene(pred_path: &Path, gt_path: &Path, th: &DetectionThresholds) -> Result<SceneEval, CliError> {
    let (_, input) = load_scene(gt_path)?;
    let gt = input
        .ground_truth
        .as_ref()
        .ok_or_else(|| CliError::Invalid(format!("{}: ground_truth: block is required for evaluation", gt_path.display())))?;
    let gt_objects = gt.union_in_view1();
    if gt_objects.is_empty() {
        return Err(CliError::Invalid(format!("{}: ground_truth: no visible objects", gt_path.display())));
    }
    let pred = load_prediction(pred_path, input.view1.len(), input.view2.len())?;
    let records = match_and_score(&pred.objects, &gt_objects, th, &EdgeParams::default())
        .map_err(|e| CliError::Invalid(format!("{}: {e}", pred_path.display())))?;
    let gamma = correspondence_confidence(&input.affinity, &pred.correspondence).map_err(|e| CliError::Invalid(e.to_string()))?;
    let truth = gt.relative_pose();
    Ok(SceneEval {
        records,
        num_gt: gt_objects.len(),
        affinity: input.affinity.clone(),
        gamma,
        gt_pairs: gt.gt_correspondence.clone(),
        pose: (pred.pose, truth),
    })
}

fn scene_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Invalid(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != MANIFEST))
        .collect();
    files.sort();
    Ok(files)
}

/// Pairs of (prediction, ground truth) paths, in ground-truth file order.
fn evaluation_pairs(pred: &Path, gt: &Path) -> Result<Vec<(PathBuf, PathBuf)>, CliError> {
    match (pred.is_dir(), gt.is_dir()) {
        (false, false) => Ok(vec![(pred.to_path_buf(), gt.to_path_buf())]),
        (true, true) => {
            let files = scene_files(gt)?;
            if files.is_empty() {
                return Err(CliError::Invalid(format!("{}: no scene files", gt.display())));
            }
            files
                .into_iter()
                .map(|g| {
                    let p = pred.join(g.file_name().expect("listed files have names"));
                    if p.is_file() {
                        Ok((p, g))
                    } else {
                        Err(CliError::Invalid(format!("{}: missing prediction for {}", p.display(), g.display())))
                    }
                })
                .collect()
        }
        _ => Err(CliError::Invalid("predictions and ground truth must both be files or both be directories".into())),
    }
}

pub fn evaluate_paths(pred: &Path, gt: &Path, th: &DetectionThresholds) -> Result<EvaluationReport, CliError> {
    th.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    let pairs = evaluation_pairs(pred, gt)?;
    let scenes = pairs
        .par_iter()
        .map(|(p, g)| evaluate_scene(p, g, th))
        .collect::<Result<Vec<_>, _>>()?;

    let records: Vec<DetectionRecord> = scenes.iter().flat_map(|s| s.records.iter().cloned()).collect();
    let num_gt: usize = scenes.iter().map(|s| s.num_gt).sum();
    let ap = DetectionAp::from_records(&records, num_gt).map_err(|e| CliError::Invalid(e.to_string()))?;

    let positives: usize = scenes.iter().map(|s| s.gt_pairs.len()).sum();
    let correspondence = if positives == 0 {
        None
    } else {
        let pooled = |gamma: bool| {
            pooled_correspondence_ap(scenes.iter().map(|s| (if gamma { &s.gamma } else { &s.affinity }, &s.gt_pairs)))
                .expect("positives present and shapes checked")
        };
        Some(CorrespondenceSection {
            pairs: scenes.iter().map(|s| s.affinity.n() * s.affinity.m()).sum(),
            positives,
            ap_gamma: pooled(true),
            ap_affinity: pooled(false),
        })
    };
    let (preds, truths): (Vec<_>, Vec<_>) = scenes.iter().map(|s| s.pose).unzip();
    let pose = relative_pose_stats(&preds, &truths).ok().map(|p| PoseSection::from(&p));

    Ok(EvaluationReport {
        scenes: scenes.len(),
        thresholds: ThresholdsRecord::from(th),
        detection: DetectionSection {
            predictions: records.len(),
            ground_truth: num_gt,
            ap: (&ap).into(),
        },
        correspondence,
        pose,
    })
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let th = DetectionThresholds {
        trans_max: a.trans_max,
        scale_max: a.scale_max,
        rot_max: a.rot_max_deg.to_radians(),
        fscore_min: a.fscore_min,
        fscore_tau: a.fscore_tau,
    };
    let report = evaluate_paths(&a.predictions, &a.ground_truth, &th)?;
    let text = match a.format {
        OutputFormat::Json => to_json(&report),
        OutputFormat::Text => report.to_text(),
    };
    write_output(a.out.as_deref(), text.trim_end())
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub scenes: Vec<ManifestEntry>,
    pub min_objects: usize,
    pub max_objects: usize,
    pub resolution: usize,
    pub duplicate_prob: f64,
    pub noise_trans: f64,
    pub noise_rot_deg: f64,
    pub noise_scale: f64,
    pub noise_embedding: f64,
    pub pose_accuracy: f64,
}

/// Stream of the base seed that builds bins when no bin file is given.
const BINS_STREAM: u64 = u64::MAX;

pub fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    if a.scenes == 0 {
        return Err(CliError::Invalid("--scenes must be at least 1".into()));
    }
    let params = SceneParams {
        duplicate_shape_prob: a.duplicate_prob,
        resolution: a.resolution,
        ..SceneParams::default().with_objects(a.min_objects, a.objects)
    };
    params.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    let noise = NoiseModel {
        trans_sigma: a.noise_trans,
        rot_sigma: a.noise_rot_deg.to_radians(),
        scale_sigma: a.noise_scale,
        embedding_noise: a.noise_embedding,
        pose_top1_accuracy: a.pose_accuracy,
    };
    noise.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    let bins = match &a.bins {
        Some(path) => {
            let file: BinSetFile = serde_json::from_str(&read(path)?)
                .map_err(|e| CliError::Invalid(format!("{}: malformed bin-set file: {e}", path.display())))?;
            let (rotations, translations) = file.to_bins().map_err(|e| in_file(path, e))?;
            PoseBins { rotations, translations }
        }
        None => PoseBins::generate(&params, a.bins_corpus, stream_seed(a.seed, BINS_STREAM))
            .map_err(|e| CliError::Failed(format!("building pose bins: {e}")))?,
    };
    let entries: Vec<ManifestEntry> = (0..a.scenes)
        .map(|i| ManifestEntry {
            file: format!("scene_{i:04}.json"),
            seed: stream_seed(a.seed, i as u64),
        })
        .collect();
    let files = entries
        .par_iter()
        .map(|e| {
            let (scene, obs) = generate_pair(&params, &noise, &bins, e.seed).map_err(|err| CliError::Failed(format!("{}: {err}", e.file)))?;
            Ok(ScenePairFile::from_observations(&obs, Some(&scene)).to_json())
        })
        .collect::<Result<Vec<String>, CliError>>()?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Failed(format!("{}: {e}", a.out.display())))?;
    for (e, text) in entries.iter().zip(&files) {
        write_output(Some(&a.out.join(&e.file)), text)?;
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        seed: a.seed,
        scenes: entries,
        min_objects: a.min_objects,
        max_objects: a.objects,
        resolution: a.resolution,
        duplicate_prob: a.duplicate_prob,
        noise_trans: a.noise_trans,
        noise_rot_deg: a.noise_rot_deg,
        noise_scale: a.noise_scale,
        noise_embedding: a.noise_embedding,
        pose_accuracy: a.pose_accuracy,
    };
    write_output(Some(&a.out.join(MANIFEST)), &to_json(&manifest))
}

pub fn cmd_cluster(a: &ClusterArgs) -> Result<(), CliError> {
    let samples: Vec<PoseSample> = serde_json::from_str(&read(&a.poses)?)
        .map_err(|e| CliError::Invalid(format!("{}: malformed pose corpus: {e}", a.poses.display())))?;
    let poses = samples
        .iter()
        .enumerate()
        .map(|(k, s)| s.to_pose(&format!("[{k}]")))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| in_file(&a.poses, e))?;
    let rots: Vec<_> = poses.iter().map(|p| p.0).collect();
    let trans: Vec<_> = poses.iter().map(|p| p.1).collect();
    let invalid = |what: &str, e: assoc3d::pose_space::PoseSpaceError| CliError::Invalid(format!("{what}: {e}"));
    let r = spherical_kmeans_rotations(&rots, a.k_rot, stream_seed(a.seed, 0), a.max_iter).map_err(|e| invalid("--k-rot", e))?;
    let t = kmeans_translations(&trans, a.k_trans, stream_seed(a.seed, 1), a.max_iter).map_err(|e| invalid("--k-trans", e))?;
    write_output(a.out.as_deref(), &to_json(&BinSetFile::from_bins(&r.bins, &t.bins)))
}

/// Stitch report for a scene file whose objects reproduce its ground truth,
/// as `ObjectRecord`s; handy for tests and fixtures.
pub fn oracle_report(gt: &GroundTruthScene) -> StitchReport {
    let p = Prediction::oracle(gt);
    StitchReport {
        version: FORMAT_VERSION,
        seed: 0,
        wall_clock_ms: 0.0,
        pose: crate::report::PoseRecord::from_hypothesis(&p.pose),
        hypothesis_index: 0,
        sample_index: 0,
        candidates_evaluated: 0,
        correspondence: p.correspondence.pairs().iter().map(|&(i, j)| [i, j]).collect(),
        objective: 0.0,
        terms: crate::report::TermsRecord::raw(&Default::default()),
        contributions: crate::report::TermsRecord::raw(&Default::default()),
        weights: (&StitchWeights::default()).into(),
        merged: p.objects.iter().map(ObjectRecord::from_object).collect(),
    }
}
