use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn docs(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laserchange")).args(args).output().expect("spawn laserchange")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(out: &Path, seed: u64, scene: &Path) {
    let seed = seed.to_string();
    let trajectory = docs("trajectory_small.json");
    ok(&["simulate", "--scene", s(scene), "--trajectory", s(&trajectory), "--seed", &seed, "--out", s(out)]);
}

fn hashes(root: &Path) -> BTreeMap<String, String> {
    let mut found = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                found.insert(rel, format!("{digest:x}"));
            }
        }
    }
    found
}

fn census(h: &BTreeMap<String, String>) -> Vec<&str> {
    h.keys().map(String::as_str).collect()
}

#[test]
fn simulate_writes_the_dataset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, 2024, &docs("scene_small.json"));
    let h = hashes(&data);
    for f in ["scene.json", "corridor.json", "poses_teach.txt", "poses_repeat.txt"] {
        assert!(h.contains_key(f), "missing {f}");
    }
    for i in 0..3 {
        assert!(h.contains_key(&format!("live/scan_{i:04}.ply")));
        assert!(h.contains_key(&format!("gt/mask_{i:04}.png")));
    }
    assert!(!h.contains_key("live/scan_0003.ply"));
    let teach = h.keys().filter(|k| k.starts_with("teach/")).count();
    let poses = std::fs::read_to_string(data.join("poses_teach.txt")).unwrap();
    assert_eq!(teach, poses.lines().filter(|l| !l.trim().is_empty()).count());
}

#[test]
fn simulation_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let scene = docs("scene_small.json");
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    simulate(&a, 7, &scene);
    simulate(&b, 7, &scene);
    simulate(&c, 8, &scene);
    let (ha, hb, hc) = (hashes(&a), hashes(&b), hashes(&c));
    assert_eq!(ha, hb);
    assert_eq!(census(&ha), census(&hc));
    assert_ne!(ha["live/scan_0000.ply"], hc["live/scan_0000.ply"]);
    assert_ne!(ha["teach/scan_0000.ply"], hc["teach/scan_0000.ply"]);
}

#[test]
fn detect_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, 2024, &docs("scene_small.json"));
    let (x, y) = (dir.path().join("x"), dir.path().join("y"));
    ok(&["detect", s(&data), "--out", s(&x)]);
    ok(&["detect", s(&data), "--out", s(&y)]);
    assert!(x.join("timing.json").is_file());
    assert!(x.join("queue.json").is_file());
    let (hx, hy) = (hashes(&x.join("reports")), hashes(&y.join("reports")));
    assert_eq!(hx.len(), 3);
    assert_eq!(hx, hy);
    assert_eq!(
        std::fs::read(x.join("queue.json")).unwrap(),
        std::fs::read(y.join("queue.json")).unwrap()
    );
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(x.join("reports/frame_0000.json")).unwrap()).unwrap();
    assert_eq!(report["frame"], 0);
    let candidates = report["candidates"].as_array().unwrap();
    assert!(candidates.iter().any(|c| c["verified"] == true));
}

#[test]
fn unchanged_scene_reports_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut scene: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(docs("scene_small.json")).unwrap()).unwrap();
    scene["changes"] = serde_json::json!([]);
    let scene_path = dir.path().join("scene.json");
    std::fs::write(&scene_path, serde_json::to_string(&scene).unwrap()).unwrap();
    let data = dir.path().join("data");
    simulate(&data, 2024, &scene_path);
    let out = dir.path().join("out");
    ok(&["detect", s(&data), "--out", s(&out)]);
    for i in 0..3 {
        let path = out.join(format!("reports/frame_{i:04}.json"));
        let report: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
        assert_eq!(report["candidates"], serde_json::json!([]), "frame {i}");
    }
}

#[test]
fn bench_render_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, 2024, &docs("scene_small.json"));

    let bench = dir.path().join("bench");
    ok(&["bench", s(&data), "--out", s(&bench), "--methods", "pixel_baseline,lasersam_3d_prompts"]);
    let text = std::fs::read_to_string(bench.join("metrics.txt")).unwrap();
    assert!(text.contains("Full Field of View"));
    assert!(text.contains("Corridor Filtered"));
    assert!(text.contains("IoU Precision  Recall"));
    assert!(text.contains("Run Time (ms)"));
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(bench.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["frames"], 3);
    let methods: Vec<&str> =
        metrics["methods"].as_array().unwrap().iter().map(|m| m["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["pixel_baseline", "lasersam_3d_prompts"]);
    for m in metrics["methods"].as_array().unwrap() {
        for key in ["iou", "precision", "recall"] {
            let v = m["full_fov"][key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    let render = dir.path().join("render");
    ok(&["render", s(&data), "--frame", "1", "--out", s(&render)]);
    for f in ["live.png", "map.png", "live.json", "map.json", "live_equirect.png"] {
        assert!(render.join(f).is_file(), "missing {f}");
    }

    let eval = dir.path().join("eval");
    ok(&["eval", s(&data), "--masks", s(&data.join("gt")), "--out", s(&eval)]);
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(eval.join("metrics.json")).unwrap()).unwrap();
    let m = &metrics["methods"][0];
    assert_eq!(m["method"], "external");
    for table in ["full_fov", "corridor"] {
        for key in ["iou", "precision", "recall"] {
            assert_eq!(m[table][key].as_f64().unwrap(), 1.0, "{table}.{key}");
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, 2024, &docs("scene_small.json"));
    let out = dir.path().join("out");
    let code = |args: &[&str]| run(args).status.code();

    assert_eq!(code(&["bench", s(&data), "--out", s(&out), "--methods", "nonsense"]), Some(2));
    assert_eq!(code(&["detect", s(&data), "--out", s(&out), "--set", "detection.verify_rho"]), Some(2));
    assert_eq!(code(&["detect", s(&data), "--out", s(&out), "--set", "detection.nope=1"]), Some(2));
    assert_eq!(code(&["detect", s(&data), "--out", s(&out), "--segmenter", "bridge"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    let missing = dir.path().join("missing");
    assert_eq!(code(&["detect", s(&missing), "--out", s(&out)]), Some(1));
}
