use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn stgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stgrid")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: serde_json::Value) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_run(out: &Path, editor: serde_json::Value, scene: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "output": out,
        "scene": scene,
        "editor": editor,
        "splat": { "gaussians_per_side": 3, "optimizer": { "iterations": 20 } }
    })
}

#[test]
fn synth_then_identity_edit_keeps_frames() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"views":2,"times":3,"height":8,"width":8,"seed":5}"#).unwrap();
    let scene_dir = dir.path().join("scene");
    let o = stgrid(&["synth", "--spec", spec.to_str().unwrap(), "--out", scene_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let out = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        serde_json::json!({ "input": scene_dir.join("manifest.json"), "output": out, "editor": {"kind": "identity"} }),
    );
    let o = stgrid(&["--config", &cfg, "edit"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for v in 0..2 {
        for t in 0..3 {
            let name = format!("frame_v{v}_t{t}.png");
            assert_eq!(std::fs::read(scene_dir.join(&name)).unwrap(), std::fs::read(out.join("edited").join(&name)).unwrap());
        }
    }
    let o = stgrid(&["--config", &cfg, "evaluate"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["warp_error_local"]["value"], 0.0);
    assert!(report["psnr"].is_null());
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({ "patch": 0 }));
    let o = stgrid(&["--config", &cfg, "edit"]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "validation");

    let o = stgrid(&["edit"]);
    assert_eq!(o.status.code(), Some(2));
    let o = stgrid(&["--config", "/nonexistent/config.json", "run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_files_exit_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({ "input": dir.path().join("nope/manifest.json"), "output": dir.path().join("run") }),
    );
    let o = stgrid(&["--config", &cfg, "edit"]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "runtime");
}

#[test]
fn full_runs_with_same_seed_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scene = serde_json::json!({
        "views": 2, "times": 4, "height": 12, "width": 12,
        "sprites": [{"shape": {"kind": "rect", "half_width": 2.5, "half_height": 2.0},
                     "center": [5.0, 6.0], "motion": {"kind": "linear", "velocity": [1.0, 0.0]},
                     "color": [0.8, 0.3, 0.2]}]
    });
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let cfg_dir = dir.path().join(format!("cfg_{run}"));
        std::fs::create_dir_all(&cfg_dir).unwrap();
        // identical output path name relative to config so config.json matches byte for byte
        let cfg = write_config(&cfg_dir, small_run(Path::new("out"), serde_json::json!({"kind": "mock_stack"}), scene.clone()));
        let o = Command::new(env!("CARGO_BIN_EXE_stgrid"))
            .current_dir(&cfg_dir)
            .args(["--config", &cfg, "--seed", "9", "--workers", "2", "--deterministic", "run"])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::rename(cfg_dir.join("out"), &out).unwrap();
        trees.push(tree(&out));
    }
    assert!(trees[0].len() > 10);
    assert_eq!(trees[0].keys().collect::<Vec<_>>(), trees[1].keys().collect::<Vec<_>>());
    for (k, v) in &trees[0] {
        assert!(v == &trees[1][k], "{k} differs");
    }
}

#[test]
fn render_subcommand_writes_frames() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        small_run(&out, serde_json::json!({"kind": "identity"}), serde_json::json!({"views": 2, "times": 2, "height": 8, "width": 8})),
    );
    assert!(stgrid(&["--config", &cfg, "run"]).status.success());
    let scene = out.join("scene.json");
    let target = dir.path().join("frames");
    let o = stgrid(&["render", "--scene", scene.to_str().unwrap(), "--times", "3", "--out", target.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(target.join("frame_t2.png").exists());
    let o = stgrid(&["render", "--scene", scene.to_str().unwrap(), "--times", "0", "--out", target.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
