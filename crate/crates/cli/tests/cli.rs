use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fadec(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fadec"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("FADEC_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_reference_matches_and_writes_reports() {
    let d = tempfile::tempdir().unwrap();
    let o = fadec(d.path(), &["analyze", "--reference"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("Conv (1, 1)              33"));
    let census = std::fs::read_to_string(d.path().join("census.txt")).unwrap();
    assert!(census.contains("Grid Sampling             0     0   128"));
    let plan = read_json(d.path().join("partition.json"));
    assert!(!plan["placements"].as_array().unwrap().is_empty());
    let report = read_json(d.path().join("report.json"));
    assert!(report["conv_mult_share_cve_cvd"].as_f64().unwrap() > 0.99);
}

#[test]
fn analyze_small_graphs() {
    let d = tempfile::tempdir().unwrap();
    let empty = d.path().join("empty.json");
    std::fs::write(&empty, r#"{"nodes": [], "edges": []}"#).unwrap();
    let o = fadec(&d.path().join("a"), &["analyze", "--graph", s(&empty)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(d.path().join("a/report.json"));
    assert!(report["mult_counts"].as_object().unwrap().values().all(|v| v == 0));

    let grid = d.path().join("grid.json");
    std::fs::write(
        &grid,
        r#"{"nodes": [{"id": 0, "kind": "grid_sample", "process": "CVF", "name": "w",
            "shapes": {"inputs": [[4, 8, 8]], "output": [4, 8, 8]}}], "edges": []}"#,
    )
    .unwrap();
    let o = fadec(&d.path().join("b"), &["analyze", "--graph", s(&grid)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let plan = read_json(d.path().join("b/partition.json"));
    assert_eq!(plan["placements"][0]["side"], "SW");

    let unlabeled = d.path().join("unlabeled.json");
    std::fs::write(
        &unlabeled,
        r#"{"nodes": [{"id": 0, "kind": "add", "name": "x", "shapes": {"inputs": [], "output": [1]}}], "edges": []}"#,
    )
    .unwrap();
    let o = fadec(&d.path().join("c"), &["analyze", "--graph", s(&unlabeled)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("analysis error"), "{}", stderr(&o));
}

#[test]
fn schedule_reference_prints_anchors() {
    let d = tempfile::tempdir().unwrap();
    let o = fadec(d.path(), &["schedule", "--reference"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("CVF hidden fraction: 0.930"), "{out}");
    assert!(out.contains("share 0.0169"), "{out}");
    let svg = std::fs::read_to_string(d.path().join("gantt.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    let summary = read_json(d.path().join("schedule.json"));
    assert_eq!(summary["makespan_us"], 278_000);
}

#[test]
fn schedule_serial_and_cyclic_profiles() {
    let d = tempfile::tempdir().unwrap();
    let serial = d.path().join("serial.json");
    std::fs::write(
        &serial,
        r#"{"stages": [
            {"name": "a", "placement": "CPU", "latency_us": 100},
            {"name": "b", "placement": "CPU", "latency_us": 50, "deps": [{"stage": "a"}]}
        ]}"#,
    )
    .unwrap();
    let o = fadec(&d.path().join("s"), &["--json", "schedule", "--profile", s(&serial)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["speedup_vs_serial"], 1.0);
    assert_eq!(v["makespan_us"], 150);

    let cyclic = d.path().join("cyclic.json");
    std::fs::write(
        &cyclic,
        r#"{"stages": [
            {"name": "a", "placement": "PL", "latency_us": 1, "deps": [{"stage": "b"}]},
            {"name": "b", "placement": "CPU", "latency_us": 1, "deps": [{"stage": "a"}]}
        ]}"#,
    )
    .unwrap();
    let o = fadec(&d.path().join("c"), &["schedule", "--profile", s(&cyclic)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("cycle among a, b"), "{}", stderr(&o));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nope");
    let o = fadec(d.path(), &["calibrate", "--model", s(&missing), "--synthetic"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope"));
    assert_eq!(code(&fadec(d.path(), &["frobnicate"])), 1);
    assert_eq!(code(&fadec(d.path(), &["analyze"])), 1);
    assert_eq!(code(&fadec(d.path(), &["--help"])), 0);
}

#[test]
fn out_dir_precedence() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.json");
    std::fs::write(
        &cfg,
        format!(r#"{{"out_dir": "{}"}}"#, s(&d.path().join("from_config"))),
    )
    .unwrap();
    let run = |env: Option<&Path>, flag: Option<&Path>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_fadec"));
        c.args(["--config", s(&cfg)]);
        if let Some(f) = flag {
            c.arg("--out").arg(f);
        }
        c.env_remove("FADEC_OUT_DIR");
        if let Some(e) = env {
            c.env("FADEC_OUT_DIR", e);
        }
        c.args(["schedule", "--reference"]);
        assert!(c.output().unwrap().status.success());
    };
    run(None, None);
    assert!(d.path().join("from_config/schedule.json").exists());
    run(Some(&d.path().join("from_env")), None);
    assert!(d.path().join("from_env/schedule.json").exists());
    run(Some(&d.path().join("from_env2")), Some(&d.path().join("from_flag")));
    assert!(d.path().join("from_flag/schedule.json").exists());
    assert!(!d.path().join("from_env2").exists());
}

/// synth → calibrate → infer on a small preset.
#[test]
fn pipeline_commands() {
    let d = tempfile::tempdir().unwrap();
    let w = d.path();
    let o = fadec(w, &["--seed", "5", "synth", "--preset", "fast", "--frames", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (model, scene) = (w.join("model"), w.join("scene"));

    let o = fadec(
        &w.join("empty"),
        &["calibrate", "--model", s(&model), "--synthetic", "--count", "0"],
    );
    assert_eq!(code(&o), 1);

    let o = fadec(
        &w.join("zeros"),
        &[
            "calibrate",
            "--model",
            s(&model),
            "--synthetic",
            "--mean",
            "0",
            "--variance",
            "0",
            "--count",
            "1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: input.image saw only zeros"));

    let o = fadec(w, &["calibrate", "--model", s(&model), "--scene", s(&scene)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let quant = w.join("quant.json");
    assert!(read_json(quant.clone())["params"]["exps"].as_object().unwrap().len() > 100);

    let o = fadec(
        &w.join("f"),
        &["infer", "--model", s(&model), "--scene", s(&scene), "--mode", "float"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(w.join("f/metrics.json"));
    assert_eq!(m["frames"].as_array().unwrap().len(), 2);
    assert_eq!(m["frames"][0]["fused"], false);
    assert!(w.join("f/depth/depth_0001.ftz").exists());

    let o = fadec(
        &w.join("q"),
        &[
            "infer",
            "--model",
            s(&model),
            "--scene",
            s(&scene),
            "--mode",
            "quant",
            "--quant",
            s(&quant),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(w.join("q/metrics.json"));
    assert!(m["degradation"].as_f64().unwrap() < 0.10);
    assert_eq!(m["within_budget"], true);

    // a sidecar without intrinsics is named in the error
    let broken = w.join("broken");
    std::fs::create_dir_all(&broken).unwrap();
    for f in std::fs::read_dir(&scene).unwrap() {
        let f = f.unwrap().path();
        std::fs::copy(&f, broken.join(f.file_name().unwrap())).unwrap();
    }
    std::fs::write(
        broken.join("frame_0001.json"),
        r#"{"pose": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]}"#,
    )
    .unwrap();
    let o = fadec(&w.join("b"), &["infer", "--model", s(&model), "--scene", s(&broken)]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("intrinsics") && stderr(&o).contains("frame_0001.json"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn float_inference_golden() {
    let d = tempfile::tempdir().unwrap();
    let w = d.path();
    assert!(
        fadec(w, &["--seed", "11", "synth", "--preset", "fast", "--frames", "2"])
            .status
            .success()
    );
    let o = fadec(
        w,
        &["infer", "--model", s(&w.join("model")), "--scene", s(&w.join("scene"))],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(w.join("metrics.json"));
    let got: Vec<f64> = m["frames"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["mse"].as_f64().unwrap())
        .collect();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/infer_float.json");
    if std::env::var_os("FADEC_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&serde_json::json!({ "mse": got })).unwrap(),
        )
        .unwrap();
    }
    let want: Vec<f64> = read_json(path)["mse"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-6 * w.abs().max(1.0), "{g} vs {w}");
    }
}
