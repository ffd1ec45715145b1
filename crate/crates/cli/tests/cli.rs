use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use roadda::data::io::load_mask;
use roadda::data::DomainTag;
use roadda::model::{Checkpoint, Generator, GeneratorConfig, StageKind};
use serde_json::{json, Value};

fn roadda(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadda"))
        .arg("--root")
        .arg(root)
        .args(args)
        .env("ROADDA_DETERMINISTIC", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn domain(seed: u64, n: usize, road: [f64; 3], bg: [f64; 3], prefix: &str) -> Value {
    json!({
        "seed": seed, "num_images": n, "image_size": 32,
        "road_width_range": [4.0, 7.0], "road_count_range": [1, 2], "curvature": 0.3,
        "road_intensity": {"mean": road, "std": [0.03, 0.03, 0.03]},
        "background": {"color": {"mean": bg, "std": [0.03, 0.03, 0.03]}, "noise_amplitude": 0.05, "blur_radius": 1, "speckle": 0.02},
        "occlusion_rate": 0.1, "id_prefix": prefix
    })
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// 6 source, 8 target-train and 2 target-val images of 32 x 32 under `root/data`.
fn tiny_data(root: &Path) {
    let spec = json!({
        "source": domain(1, 6, [0.8, 0.75, 0.7], [0.3, 0.4, 0.25], "s"),
        "target": domain(2, 10, [0.55, 0.5, 0.6], [0.4, 0.36, 0.3], "t"),
        "val_fraction": 0.2
    });
    write_json(&root.join("spec.json"), &spec);
    stdout_json(&roadda(root, &["synth", "spec.json", "data"]));
}

fn tiny_config(lambda: f64, output_dir: &str) -> Value {
    json!({
        "data": {},
        "model": {
            "generator": {"backbone": {"preset": "tiny", "stage_channels": [4, 8, 8, 8, 16]}, "aspp": {"out_channels": 8}},
            "discriminator": {"channel_widths": [8, 8, 8, 8, 1]}
        },
        "optim": {"generator": {"lr": 0.01}},
        "stage1": {"max_iterations": 4},
        "stage2": {"lambda": lambda, "max_rounds": 2, "saturation_epsilon": -100.0, "iterations_per_round": 3},
        "seed": 3,
        "output_dir": output_dir
    })
}

fn files_in(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

#[test]
fn synth_bundled_shift_counts_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let spec = workspace_file("configs/desk-shift.json");
    let spec = spec.to_str().unwrap();
    let t = Instant::now();
    let a = stdout_json(&roadda(dir.path(), &["synth", spec, "a"]));
    assert!(t.elapsed().as_secs() < 60);
    assert_eq!(a["source_train"]["images"], 64);
    assert_eq!(a["target_train"]["images"], 64);
    assert_eq!(a["target_val"]["images"], 16);
    stdout_json(&roadda(dir.path(), &["synth", spec, "b"]));
    for name in ["source_train.json", "target_train.json", "target_val.json"] {
        let (x, y) = (dir.path().join("a").join(name), dir.path().join("b").join(name));
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{name}");
    }
    let target: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/target_train.json")).unwrap()).unwrap();
    assert!(target["entries"].as_array().unwrap().iter().all(|e| e["mask"].is_null()));
}

#[test]
fn synth_rejects_bad_specs_and_unwritable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec: Value =
        serde_json::from_slice(&std::fs::read(workspace_file("configs/desk-shift.json")).unwrap()).unwrap();
    spec["target"]["occlusion_rate"] = json!(1.5);
    write_json(&dir.path().join("bad.json"), &spec);
    let out = roadda(dir.path(), &["synth", "bad.json", "out"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("occlusion_rate"));

    spec["target"]["occlusion_rate"] = json!(0.1);
    spec["target"]["colour"] = json!(1);
    write_json(&dir.path().join("unknown.json"), &spec);
    assert_eq!(code(&roadda(dir.path(), &["synth", "unknown.json", "out"])), 2);

    std::fs::write(dir.path().join("blocker"), "file").unwrap();
    let good = workspace_file("configs/desk-shift.json");
    assert_eq!(code(&roadda(dir.path(), &["synth", good.to_str().unwrap(), "blocker/out"])), 2);
}

#[test]
fn dry_run_round_trips_and_touches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = workspace_file("configs/desk.json");
    let first = roadda(dir.path(), &["train", cfg.to_str().unwrap(), "--dry-run"]);
    assert_eq!(code(&first), 0);
    std::fs::write(dir.path().join("resolved.json"), &first.stdout).unwrap();
    let second = roadda(dir.path(), &["train", "resolved.json", "--dry-run"]);
    assert_eq!(code(&second), 0);
    assert_eq!(first.stdout, second.stdout);
    let resolved: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(resolved["deterministic"], true);
    assert_eq!(resolved["stage2"]["lambda"], 0.7);
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1, "only the copied config exists");
}

#[test]
fn train_usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join("cfg.json"), &tiny_config(0.7, "run"));
    assert_eq!(code(&roadda(dir.path(), &["train", "cfg.json", "--stage", "selftrain"])), 2);
    assert_eq!(code(&roadda(dir.path(), &["train", "cfg.json", "--stage", "inter", "--from", "x"])), 2);
    assert_eq!(code(&roadda(dir.path(), &["train", "cfg.json", "--stage", "sideways"])), 2);
    assert_eq!(code(&roadda(dir.path(), &["train", "missing.json"])), 2);

    let mut bad = tiny_config(0.7, "run");
    bad["stage2"]["lamda"] = json!(0.5);
    write_json(&dir.path().join("typo.json"), &bad);
    let out = roadda(dir.path(), &["train", "typo.json", "--dry-run"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));

    let bad = tiny_config(1.0, "run");
    write_json(&dir.path().join("lambda.json"), &bad);
    assert_eq!(code(&roadda(dir.path(), &["train", "lambda.json", "--dry-run"])), 2);
    assert!(!dir.path().join("run").exists());
}

#[test]
fn labeled_target_manifest_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    tiny_data(dir.path());
    let mut cfg = tiny_config(0.7, "run");
    cfg["data"]["target_manifest"] = json!("data/target_train_gt.json");
    write_json(&dir.path().join("cfg.json"), &cfg);
    let out = roadda(dir.path(), &["train", "cfg.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("leakage"));
}

#[test]
fn diverging_training_exits_3_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    tiny_data(dir.path());
    let mut cfg = tiny_config(0.7, "run");
    cfg["optim"]["generator"]["lr"] = json!(1e30);
    cfg["stage1"]["max_iterations"] = json!(20);
    write_json(&dir.path().join("cfg.json"), &cfg);
    let out = roadda(dir.path(), &["train", "cfg.json", "--stage", "inter"]);
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let diag: Value = serde_json::from_slice(&std::fs::read(dir.path().join("run/diagnostics.json")).unwrap()).unwrap();
    assert!(diag["iteration"].as_u64().unwrap() < 20);
}

#[test]
fn eval_of_random_checkpoint_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    tiny_data(dir.path());
    let cfg: GeneratorConfig = serde_json::from_value(tiny_config(0.7, "run")["model"]["generator"].clone()).unwrap();
    let g = Generator::new(cfg.clone()).unwrap();
    Checkpoint::new(cfg, g.init_params(11), StageKind::Inter, 0, 0).save(&dir.path().join("ckpt")).unwrap();
    let report = stdout_json(&roadda(dir.path(), &["eval", "ckpt", "data/target_val.json", "--out", "e.json"]));
    for k in ["iou", "com", "cor", "f1"] {
        let v = report[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{k} = {v}");
    }
    assert_eq!(code(&roadda(dir.path(), &["eval", "ckpt", "data/target_train.json"])), 2);
    assert_eq!(code(&roadda(dir.path(), &["eval", "nowhere", "data/target_val.json"])), 2);
}

#[test]
fn train_eval_predict_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    tiny_data(root);
    write_json(&root.join("cfg.json"), &tiny_config(0.7, "run"));
    let summary = stdout_json(&roadda(root, &["train", "cfg.json"]));
    assert!(summary["final_eval"]["iou"].as_f64().unwrap() >= 0.0);
    let run = root.join("run");
    for p in [
        "config.resolved.json",
        "stage1/ckpt/params.bin",
        "stage1/losses.csv",
        "stage2/round_1/ckpt/meta.json",
        "stage2/round_1/split.json",
        "stage2/round_1/losses.csv",
        "stage2/run_log.jsonl",
        "stage2/best/ckpt/params.bin",
        "final_eval.json",
    ] {
        assert!(run.join(p).exists(), "{p}");
    }
    let split: Value = serde_json::from_slice(&std::fs::read(run.join("stage2/round_1/split.json")).unwrap()).unwrap();
    assert_eq!(split["easy"].as_array().unwrap().len(), 5);
    assert_eq!(split["hard"].as_array().unwrap().len(), 3);
    let log = std::fs::read_to_string(run.join("stage2/run_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let ckpt = "run/stage2/best/ckpt";
    let first = roadda(root, &["eval", ckpt, "data/target_val.json", "--out", "eval/a.json"]);
    let report = stdout_json(&first);
    for k in ["iou", "com", "cor", "f1"] {
        assert!((0.0..=1.0).contains(&report[k].as_f64().unwrap()));
    }
    let second = roadda(root, &["eval", ckpt, "data/target_val.json", "--out", "eval/b.json"]);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(std::fs::read(root.join("eval/a.json")).unwrap(), std::fs::read(root.join("eval/b.json")).unwrap());

    let val: Value = serde_json::from_slice(&std::fs::read(root.join("data/target_val.json")).unwrap()).unwrap();
    let image = format!("data/{}", val["entries"][0]["image"].as_str().unwrap());
    let pred =
        stdout_json(&roadda(root, &["predict", ckpt, &image, "pred/mask.png", "--manifest", "data/target_val.json"]));
    assert_eq!((pred["height"].as_u64(), pred["width"].as_u64()), (Some(32), Some(32)));
    let mask = load_mask(&root.join("pred/mask.png"), DomainTag::Target).expect("mask holds only 0 and 255");
    assert_eq!((mask.height(), mask.width()), (32, 32));
    assert_eq!(png_header(&root.join("pred/mask_prob.png")), (32, 32, 16, 0));

    let tile = roadda::data::io::load_rgb(&root.join(&image)).unwrap();
    roadda::data::io::save_rgb(&tile.crop(0, 0, 30, 30), &root.join("odd.png")).unwrap();
    assert_eq!(code(&roadda(root, &["predict", ckpt, "odd.png", "pred/odd.png"])), 2);
    stdout_json(&roadda(root, &["predict", ckpt, "odd.png", "pred/odd.png", "--pad"]));
    let odd = load_mask(&root.join("pred/odd.png"), DomainTag::Target).unwrap();
    assert_eq!((odd.height(), odd.width()), (30, 30));

    let files = stdout_json(&roadda(root, &["report", "run"]));
    assert_eq!(files["plots"].as_array().unwrap().len(), 3);
    assert_eq!(files_in(&run, "svg").len(), 3);
    assert!(run.join("summary.md").is_file());

    std::fs::create_dir(root.join("empty")).unwrap();
    assert_eq!(code(&roadda(root, &["report", "empty"])), 2);
}

/// Width, height, bit depth and colour type from a PNG header.
fn png_header(path: &Path) -> (usize, usize, u8, u8) {
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
    let w = u32::from_be_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let h = u32::from_be_bytes(bytes[20..24].try_into().unwrap()) as usize;
    (w, h, bytes[24], bytes[25])
}

#[test]
fn stages_run_separately_and_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    tiny_data(root);
    for name in ["a", "b"] {
        write_json(&root.join(format!("{name}.json")), &tiny_config(0.7, name));
        let s = stdout_json(&roadda(root, &["train", &format!("{name}.json"), "--stage", "inter"]));
        assert!(s["best_round"].is_null());
        assert!(!root.join(name).join("stage2").exists());
    }
    let params = |p: &str| std::fs::read(root.join(p)).unwrap();
    assert_eq!(params("a/stage1/ckpt/params.bin"), params("b/stage1/ckpt/params.bin"));

    write_json(&root.join("c.json"), &tiny_config(0.7, "c"));
    let s = stdout_json(&roadda(root, &["train", "c.json", "--stage", "selftrain", "--from", "a/stage1/ckpt"]));
    assert_eq!(s["rounds"], 2);
    assert!(root.join("c/stage2/round_2/ckpt/params.bin").is_file());
    assert!(!root.join("c/stage1").exists());

    let mut other = tiny_config(0.7, "d");
    other["model"]["generator"]["aspp"]["out_channels"] = json!(4);
    write_json(&root.join("d.json"), &other);
    assert_eq!(code(&roadda(root, &["train", "d.json", "--stage", "selftrain", "--from", "a/stage1/ckpt"])), 2);
}

#[test]
fn lambda_sweep_report_is_sorted() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    tiny_data(root);
    for (name, lambda) in [("r1", 0.9), ("r2", 0.6), ("r3", 0.8), ("r4", 0.7)] {
        let mut cfg = tiny_config(lambda, &format!("sweep/{name}"));
        cfg["stage2"]["max_rounds"] = json!(1);
        write_json(&root.join(format!("{name}.json")), &cfg);
        stdout_json(&roadda(root, &["train", &format!("{name}.json")]));
    }
    stdout_json(&roadda(root, &["report", "sweep", "--out", "sweep_report"]));
    let md = std::fs::read_to_string(root.join("sweep_report/summary.md")).unwrap();
    let lambdas: Vec<f64> = md
        .lines()
        .filter(|l| l.starts_with("| 0."))
        .map(|l| l.split('|').nth(1).unwrap().trim().parse().unwrap())
        .collect();
    assert_eq!(lambdas, [0.6, 0.7, 0.8, 0.9]);
}
