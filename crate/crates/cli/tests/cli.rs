use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_densiface"));
    c.env("DENSIFACE_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn densiface")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Quarter-resolution rig so the tests stay fast.
fn intrinsics() -> Value {
    let cam = |f: f64| json!({"focal_px": f, "principal_u": 79.5, "principal_v": 59.5, "width": 160, "height": 120});
    json!({"depth_intrinsics": cam(145.0), "color_intrinsics": cam(131.25), "baseline": [0.025, 0.0, 0.0]})
}

fn scene() -> Value {
    json!({
        "face_center": [0.0, 0.0, 0.6],
        "face_radii": [0.085, 0.11, 0.06],
        "nose": {"offset": [0.0, 0.0], "amplitude": 0.022, "width": 0.012},
        "eyes": [
            {"offset": [-0.032, -0.03], "amplitude": 0.006, "width": 0.01},
            {"offset": [0.032, -0.03], "amplitude": 0.006, "width": 0.01}
        ],
        "background_depth": 1.3,
        "noise_sigma": 1.0,
        "dropout_fraction": 0.02,
        "hole_rects": [{"center": [80.0, 61.0], "semi_axes": [1.5, 2.0]}],
        "rng_seed": 11
    })
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        ws.write_json("intrinsics.json", &intrinsics());
        ws.write_json("scene.json", &scene());
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_json(&self, name: &str, v: &Value) -> PathBuf {
        let path = self.path(name);
        std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
        path
    }

    fn synth(&self, scene: &str, out: &str) -> Output {
        run(&[
            "synth",
            "--scene",
            p(&self.path(scene)),
            "--intrinsics",
            p(&self.path("intrinsics.json")),
            "--out",
            p(&self.path(out)),
        ])
    }
}

#[test]
fn synth_writes_frames_and_is_deterministic() {
    let ws = Workspace::new();
    for out in ["a", "b"] {
        let o = ws.synth("scene.json", out);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["depth.pgm", "color.ppm", "scene.json"] {
        let a = std::fs::read(ws.path("a").join(name)).unwrap();
        let b = std::fs::read(ws.path("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    let depth = std::fs::read(ws.path("a/depth.pgm")).unwrap();
    assert!(depth.starts_with(b"P5\n160 120\n65535\n"));
    assert_eq!(depth.len(), 17 + 160 * 120 * 2);
    let color = std::fs::read(ws.path("a/color.ppm")).unwrap();
    assert!(color.starts_with(b"P6\n160 120\n255\n"));
    assert_eq!(
        std::fs::read(ws.path("a/scene.json")).unwrap(),
        std::fs::read(ws.path("scene.json")).unwrap()
    );
}

#[test]
fn invalid_scene_is_a_validation_error() {
    let ws = Workspace::new();
    let mut s = scene();
    s["dropout_fraction"] = json!(0.99);
    ws.write_json("bad.json", &s);
    let o = ws.synth("bad.json", "out");
    assert_eq!(code(&o), 3);
    assert!(!ws.path("out/depth.pgm").exists());
}

#[test]
fn reconstruct_without_face_source_exits_2() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.synth("scene.json", "f")), 0);
    let o = run(&[
        "reconstruct",
        "--depth",
        p(&ws.path("f/depth.pgm")),
        "--color",
        p(&ws.path("f/color.ppm")),
        "--intrinsics",
        p(&ws.path("intrinsics.json")),
        "--out",
        p(&ws.path("dense.ply")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!ws.path("dense.ply").exists());
}

#[test]
fn corrupted_depth_exits_3() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.synth("scene.json", "f")), 0);
    let mut depth = std::fs::read(ws.path("f/depth.pgm")).unwrap();
    depth.truncate(depth.len() / 2);
    std::fs::write(ws.path("f/depth.pgm"), depth).unwrap();
    let o = run(&[
        "reconstruct",
        "--depth",
        p(&ws.path("f/depth.pgm")),
        "--color",
        p(&ws.path("f/color.ppm")),
        "--intrinsics",
        p(&ws.path("intrinsics.json")),
        "--face-bbox",
        "50,30,60,60",
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("densiface: "));
}

#[test]
fn reconstruct_with_box_densifies() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.synth("scene.json", "f")), 0);
    let o = run(&[
        "reconstruct",
        "--depth",
        p(&ws.path("f/depth.pgm")),
        "--color",
        p(&ws.path("f/color.ppm")),
        "--intrinsics",
        p(&ws.path("intrinsics.json")),
        "--face-bbox",
        "40,20,80,80",
        "--out",
        p(&ws.path("dense.ply")),
        "--metrics",
        p(&ws.path("metrics.json")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: Value =
        serde_json::from_slice(&std::fs::read(ws.path("metrics.json")).unwrap()).unwrap();
    let initial = metrics["stage_counts"]["initial_count"].as_u64().unwrap();
    let dense = metrics["stage_counts"]["dense_count"].as_u64().unwrap();
    assert_eq!(metrics["face_source"], "override");
    assert!(initial > 500, "only {initial} seeds");
    assert!(
        dense >= 7 * initial,
        "{dense} dense points from {initial} seeds"
    );
    let ply = String::from_utf8(std::fs::read(ws.path("dense.ply")).unwrap()).unwrap();
    assert!(ply.contains(&format!("element vertex {dense}\n")));
    assert!(String::from_utf8_lossy(&o.stdout).contains(&initial.to_string()));
}

#[test]
fn clean_eval_is_accurate() {
    let ws = Workspace::new();
    let mut s = scene();
    s["noise_sigma"] = json!(0.0);
    s["hole_rects"] = json!([]);
    ws.write_json("clean.json", &s);
    let o = run(&[
        "eval",
        "--scene",
        p(&ws.path("clean.json")),
        "--intrinsics",
        p(&ws.path("intrinsics.json")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let json_start = stdout.find('{').expect("metrics JSON on stdout");
    let metrics: Value = serde_json::from_str(&stdout[json_start..]).unwrap();
    let mean = metrics["error"]["mean_abs_mm"].as_f64().unwrap();
    assert!(mean <= 0.5, "mean error {mean} mm");
    assert_eq!(metrics["face_source"], "ground_truth");
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["reconstruct", "--bogus"])), 1);
    assert_eq!(code(&run(&["reconstruct", "--face-bbox", "1,2,3"])), 1);
    assert_eq!(code(&run(&[])), 1);
}
