//! End-to-end tests of the `assoc3d` binary.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use assoc3d::synthetic::{generate_scene, SceneParams};
use assoc3d::UnitQuaternion;
use assoc3d_cli::commands::oracle_report;
use assoc3d_cli::format::{BinSetFile, ScenePairFile};
use assoc3d_cli::report::{EvaluationReport, StitchReport};
use tempfile::TempDir;

fn assoc3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_assoc3d"))
        .args(args)
        .env_remove("SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates `n` scenes into `dir` and returns the path of the first.
fn generate(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["generate", "--scenes", "1", "--seed", "3", "--bins-corpus", "500", "--out", s(dir)];
    args.extend_from_slice(extra);
    let out = assoc3d(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    dir.join("scene_0000.json")
}

const ZERO_NOISE: &[&str] = &[
    "--noise-trans",
    "0",
    "--noise-rot-deg",
    "0",
    "--noise-scale",
    "0",
    "--noise-embedding",
    "0",
    "--pose-accuracy",
    "1",
];

#[test]
fn stitch_recovers_ground_truth_on_clean_pair() {
    let dir = TempDir::new().unwrap();
    let scene = generate(dir.path(), ZERO_NOISE);
    let report_path = dir.path().join("report.json");
    let out = assoc3d(&["stitch", s(&scene), "--out", s(&report_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let report: StitchReport = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let file = ScenePairFile::parse(&fs::read_to_string(&scene).unwrap()).unwrap();
    let gt = file.ground_truth.unwrap();
    assert_eq!(report.correspondence, gt.correspondence);
    assert!((report.contributions.sum() - report.objective).abs() < 1e-9);
    let n = file.views[0].len() + file.views[1].len() - gt.correspondence.len();
    assert_eq!(report.merged.len(), n);
}

#[test]
fn stitch_seed_from_environment_matches_flag() {
    let dir = TempDir::new().unwrap();
    let scene = generate(dir.path(), &[]);
    let flag = assoc3d(&["stitch", s(&scene), "--seed", "17"]);
    let env = Command::new(env!("CARGO_BIN_EXE_assoc3d"))
        .args(["stitch", s(&scene)])
        .env("SEED", "17")
        .output()
        .unwrap();
    let parse = |o: &Output| serde_json::from_slice::<StitchReport>(&o.stdout).unwrap();
    let (a, b) = (parse(&flag), parse(&env));
    assert_eq!(a.seed, 17);
    assert_eq!((a.correspondence, a.objective), (b.correspondence, b.objective));
}

#[test]
fn missing_affinity_and_embedding_names_the_field() {
    let dir = TempDir::new().unwrap();
    let scene = generate(dir.path(), &[]);
    let mut file = ScenePairFile::parse(&fs::read_to_string(&scene).unwrap()).unwrap();
    file.affinity = None;
    file.views[1][0].embedding = None;
    let broken = dir.path().join("broken.json");
    fs::write(&broken, file.to_json()).unwrap();

    let out = assoc3d(&["stitch", s(&broken)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("views[1][0].embedding"), "{}", stderr(&out));
}

#[test]
fn affinity_is_derived_from_embeddings_when_absent() {
    let dir = TempDir::new().unwrap();
    let scene = generate(dir.path(), &[]);
    let mut file = ScenePairFile::parse(&fs::read_to_string(&scene).unwrap()).unwrap();
    file.affinity = None;
    let derived = dir.path().join("derived.json");
    fs::write(&derived, file.to_json()).unwrap();
    let a = assoc3d(&["stitch", s(&scene)]);
    let b = assoc3d(&["stitch", s(&derived)]);
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    let parse = |o: &Output| serde_json::from_slice::<StitchReport>(&o.stdout).unwrap();
    // The generator writes exactly the affinity its embeddings imply.
    assert_eq!(parse(&a).correspondence, parse(&b).correspondence);
}

#[test]
fn single_sample_on_single_object_pair() {
    let dir = TempDir::new().unwrap();
    let scene = generate(dir.path(), &["--objects", "1"]);
    let file = ScenePairFile::parse(&fs::read_to_string(&scene).unwrap()).unwrap();
    assert_eq!((file.views[0].len(), file.views[1].len()), (1, 1));
    let out = assoc3d(&["stitch", s(&scene), "--k-samples", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn unusable_inputs_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(assoc3d(&["stitch", s(&missing)]).status.code(), Some(1));
    let garbage = dir.path().join("garbage.json");
    fs::write(&garbage, "{ not json").unwrap();
    assert_eq!(assoc3d(&["stitch", s(&garbage)]).status.code(), Some(1));
    assert_eq!(assoc3d(&["stitch"]).status.code(), Some(1));
    assert_eq!(assoc3d(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(assoc3d(&["--help"]).status.code(), Some(0));
    let scene = generate(dir.path(), &[]);
    let bad_k = assoc3d(&["stitch", s(&scene), "--k-samples", "0"]);
    assert_eq!(bad_k.status.code(), Some(1), "{}", stderr(&bad_k));
}

#[test]
fn evaluating_ground_truth_against_itself_is_perfect() {
    let dir = TempDir::new().unwrap();
    let scene = generate(dir.path(), &[]);
    let out = assoc3d(&["evaluate", s(&scene), s(&scene)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: EvaluationReport = serde_json::from_slice(&out.stdout).unwrap();
    let ap = report.detection.ap;
    assert_eq!([ap.all, ap.translation, ap.scale, ap.rotation, ap.shape], [1.0; 5]);
    assert_eq!(report.correspondence.unwrap().ap_gamma, 1.0);
    let pose = report.pose.unwrap();
    assert!(pose.translation_m.median < 1e-12);
    assert_eq!(pose.translation_m.within, 1.0);
}

/// Three predictions against two ground-truth objects: a hit at 0.9, a miss
/// at 0.8, a hit at 0.7.
#[test]
fn three_predictions_two_ground_truth_fixture() {
    let dir = TempDir::new().unwrap();
    let params = SceneParams::default().with_objects(2, 2);
    let scene = (0..)
        .map(|seed| generate_scene(&params, seed).unwrap())
        .find(|s| s.union_in_view1().len() == 2)
        .unwrap();

    let mut report = oracle_report(&scene);
    let mut miss = report.merged[0].clone();
    miss.id = "miss".into();
    miss.translation[0] += 50.0;
    miss.score = 0.8;
    report.merged[0].score = 0.9;
    report.merged[1].score = 0.7;
    report.merged.insert(1, miss);
    let pred = dir.path().join("pred.json");
    fs::write(&pred, serde_json::to_string(&report).unwrap()).unwrap();

    // Any observations will do; only the ground-truth block is scored.
    let bins = assoc3d::synthetic::PoseBins::generate(&params, 300, 0).unwrap();
    let obs = assoc3d::synthetic::corrupt_to_observations(&scene, &Default::default(), &bins, 0).unwrap();
    let gt = dir.path().join("gt.json");
    fs::write(&gt, ScenePairFile::from_observations(&obs, Some(&scene)).to_json()).unwrap();

    let out = assoc3d(&["evaluate", s(&pred), s(&gt)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r: EvaluationReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r.detection.predictions, 3);
    assert_eq!(r.detection.ground_truth, 2);
    assert!((r.detection.ap.all - 5.0 / 6.0).abs() < 1e-12, "{}", r.detection.ap.all);
}

#[test]
fn text_and_json_reports_carry_the_same_numbers() {
    let dir = TempDir::new().unwrap();
    let scenes = dir.path().join("scenes");
    let out = assoc3d(&["generate", "--scenes", "3", "--seed", "8", "--bins-corpus", "500", "--out", s(&scenes)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let preds = dir.path().join("preds");
    fs::create_dir(&preds).unwrap();
    for i in 0..3 {
        let name = format!("scene_{i:04}.json");
        let o = assoc3d(&["stitch", s(&scenes.join(&name)), "--out", s(&preds.join(&name))]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }

    let json = assoc3d(&["evaluate", s(&preds), s(&scenes), "--format", "json"]);
    let text = assoc3d(&["evaluate", s(&preds), s(&scenes), "--format", "text"]);
    assert_eq!(json.status.code(), Some(0), "{}", stderr(&json));
    assert_eq!(text.status.code(), Some(0), "{}", stderr(&text));

    let report: EvaluationReport = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(report.scenes, 3);
    let lines: HashMap<String, String> = String::from_utf8(text.stdout)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(char::is_whitespace).map(|(k, v)| (k.to_string(), v.trim().to_string())))
        .collect();
    let num = |k: &str| lines[k].parse::<f64>().unwrap_or_else(|_| panic!("{k}: {}", lines[k]));
    assert_eq!(num("detection.ap.all"), report.detection.ap.all);
    assert_eq!(num("detection.ap.rotation"), report.detection.ap.rotation);
    let c = report.correspondence.unwrap();
    assert_eq!(num("correspondence.ap_gamma"), c.ap_gamma);
    assert_eq!(num("correspondence.ap_affinity"), c.ap_affinity);
    let p = report.pose.unwrap();
    assert_eq!(num("pose.translation_m.median"), p.translation_m.median);
    assert_eq!(num("pose.rotation_deg.within"), p.rotation_deg.within);
}

#[test]
fn generate_writes_scenes_and_manifest_reproducibly() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, seed: &str| {
        let out_dir = dir.path().join(name);
        let o = assoc3d(&["generate", "--scenes", "5", "--seed", seed, "--bins-corpus", "500", "--out", s(&out_dir)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        out_dir
    };
    let a = run("a", "11");
    let b = run("b", "11");
    let c = run("c", "12");
    let mut names: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let mut expected: Vec<String> = (0..5).map(|i| format!("scene_{i:04}.json")).collect();
    expected.push("manifest.json".into());
    expected.sort();
    assert_eq!(names, expected);
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n}");
    }
    assert_ne!(fs::read(a.join("scene_0000.json")).unwrap(), fs::read(c.join("scene_0000.json")).unwrap());
    for i in 0..5 {
        let file = ScenePairFile::parse(&fs::read_to_string(a.join(format!("scene_{i:04}.json"))).unwrap()).unwrap();
        assert!(file.validate().is_ok());
        assert!(file.ground_truth.is_some());
    }
}

#[test]
fn generate_respects_object_cap() {
    let dir = TempDir::new().unwrap();
    let out = assoc3d(&["generate", "--scenes", "4", "--objects", "10", "--seed", "2", "--bins-corpus", "500", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for i in 0..4 {
        let file = ScenePairFile::parse(&fs::read_to_string(dir.path().join(format!("scene_{i:04}.json"))).unwrap()).unwrap();
        assert!(file.views.iter().all(|v| !v.is_empty() && v.len() <= 10));
    }
    let bad = assoc3d(&["generate", "--scenes", "1", "--objects", "0", "--out", s(dir.path())]);
    assert_eq!(bad.status.code(), Some(1));
}

fn pose_corpus(n: usize) -> (Vec<UnitQuaternion>, String) {
    let rots: Vec<UnitQuaternion> = (0..n).map(|k| UnitQuaternion::rot_z(k as f64 * 0.2).mul(&UnitQuaternion::rot_x(0.05 * k as f64))).collect();
    let samples: Vec<serde_json::Value> = rots
        .iter()
        .enumerate()
        .map(|(k, q)| serde_json::json!({ "rotation_wxyz": q.to_wxyz(), "translation": [k as f64, 0.5 * k as f64, 0.0] }))
        .collect();
    (rots, serde_json::to_string(&samples).unwrap())
}

#[test]
fn cluster_with_one_bin_per_pose_returns_the_poses() {
    let dir = TempDir::new().unwrap();
    let (rots, text) = pose_corpus(30);
    let poses = dir.path().join("poses.json");
    fs::write(&poses, text).unwrap();
    let out = assoc3d(&["cluster", "--poses", s(&poses), "--k-rot", "30", "--k-trans", "30"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let bins: BinSetFile = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(bins.rotation_bins.len(), 30);
    for q in &bins.rotation_bins {
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        let q = UnitQuaternion::from_wxyz(*q).unwrap();
        assert!(rots.iter().any(|r| r.dot(&q).abs() > 1.0 - 1e-12));
    }
    for t in &bins.translation_bins {
        assert!((t[1] - 0.5 * t[0]).abs() < 1e-12 && (t[0] - t[0].round()).abs() < 1e-12);
    }

    let too_many = assoc3d(&["cluster", "--poses", s(&poses), "--k-rot", "31", "--k-trans", "5"]);
    assert_eq!(too_many.status.code(), Some(1));
    assert!(stderr(&too_many).contains("--k-rot"), "{}", stderr(&too_many));
}
