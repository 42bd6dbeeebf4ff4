use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn formloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_formloop")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = formloop(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

fn err_json(out: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).expect("structured error")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let col = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(formloop(&["--help"]).status.code(), Some(0));
    assert_eq!(formloop(&["track", "--help"]).status.code(), Some(0));
    let bad = formloop(&["study", "--no-such-flag"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("Usage"));
    assert_eq!(formloop(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn config_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = formloop(&["--out", s(dir.path()), "--set", "study.trails=10", "study"]);
    assert_eq!(out.status.code(), Some(2));
    let e = err_json(&out);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("study.trails"));

    let out = formloop(&["--out", s(dir.path()), "--server", "http://127.0.0.1:1", "synth"]);
    assert_eq!(out.status.code(), Some(2));
    let out = formloop(&["--out", s(dir.path()), "synth", "--occlude", "blue:9-3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one_with_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = formloop(&["--out", s(dir.path()), "track", "--log", s(&dir.path().join("missing.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(err_json(&out)["message"].as_str().unwrap().contains("missing.jsonl"));
}

#[test]
fn noiseless_track_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    ok(&["--out", s(&synth), "synth", "--frames", "25", "--occlude", "yellow:8-14"]);
    let track = dir.path().join("track");
    let summary = ok(&[
        "--out",
        s(&track),
        "track",
        "--log",
        s(&synth.join("observations.jsonl")),
        "--truth",
        s(&synth.join("truth.json")),
        "--passes",
        "2",
        "--mode",
        "moving_camera",
    ]);
    let m = &summary["summary"]["metrics"];
    for key in ["mean_rot_deg", "mean_trans_m", "mean_add_m"] {
        assert!(m[key].as_f64().unwrap() < 1e-9, "{key} = {}", m[key]);
    }
    assert_eq!(summary["summary"]["provenance"]["anchor_inferred"], 7);
    for f in ["trajectories.jsonl", "metrics.json", "pass_metrics.csv", "manifest.json"] {
        assert!(track.join(f).exists(), "{f}");
    }
}

#[test]
fn study_ratios_follow_distance() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["--out", s(dir.path()), "--seed", "3", "study", "--sigma-deg", "1", "--distances", "0.1,0.2,0.4"]);
    let mean = csv_column(&dir.path().join("amplification.csv"), "mean_error_m");
    assert_eq!(mean.len(), 3);
    for (m, r) in mean.iter().zip([1.0, 2.0, 4.0]) {
        assert!((m / mean[0] / r - 1.0).abs() < 0.15);
    }
    assert!(dir.path().join("amplification.ppm").exists());
}

#[test]
fn manifest_lists_artifacts_seed_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"seed": 5, "study": {"trials": 120, "distances": [0.1, 0.3]}}"#).unwrap();
    let out = dir.path().join("o");
    ok(&["--out", s(&out), "--config", s(&cfg), "--set", "study.trials=150", "study", "--trials", "200"]);
    let m: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "study");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["seeds"]["study"], 5);
    assert_eq!(m["config"]["study"]["trials"], 200);
    assert_eq!(m["config"]["study"]["distances"], serde_json::json!([0.1, 0.3]));
    let paths: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    assert_eq!(paths, ["amplification.csv", "amplification.ppm"]);
    assert_eq!(m["artifacts"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn wind_then_overlay_writes_named_frames() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    ok(&["--out", s(&synth), "synth", "--frames", "4"]);
    let wind = dir.path().join("wind");
    let w = ok(&["--out", s(&wind), "wind", "--scene", s(&synth.join("truth.json")), "--nx", "48", "--ny", "24", "--set", "wind.spec.dx=0.0133", "--set", "wind.spec.origin=[-0.32,-0.16]", "--tol", "1e-4"]);
    assert_eq!(w["summary"]["converged"], true);
    for f in ["wind.bin", "wind.json", "wind.csv", "wind.ppm"] {
        assert!(wind.join(f).exists(), "{f}");
    }
    let ov = dir.path().join("ov");
    ok(&["--out", s(&ov), "overlay", "--truth", s(&synth.join("truth.json")), "--field", s(&wind.join("wind.bin"))]);
    let names: Vec<String> = tree(&ov.join("frames")).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["frame_00000.ppm", "frame_00001.ppm", "frame_00002.ppm", "frame_00003.ppm"]);
}

#[test]
fn normalize_writes_unit_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("in.ply");
    std::fs::write(
        &ply,
        "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n4 0 0\n0 2 0\n9 9 9\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let summary = ok(&["--out", s(&out), "normalize", s(&ply), "--crop", "-1,-1,-1,5,5,5"]);
    assert_eq!(summary["summary"]["points"], 3);
    let params: Value = serde_json::from_slice(&std::fs::read(out.join("normalization.json")).unwrap()).unwrap();
    assert!(params["radius"].as_f64().unwrap() > 0.0);
    assert!(out.join("normalized.ply").exists());
}

#[test]
fn exp1_is_deterministic_and_holds_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |o: &Path| vec!["--out".to_string(), o.display().to_string(), "--seed".into(), "11".into(), "--set".into(), "repro.exp1_frames=36".into(), "repro-exp1".into()];
    let ra = ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(tree(&a), tree(&b));
    assert_eq!(ra["summary"]["held_poses_bitwise"], true);
    assert!(ra["summary"]["held_frames"].as_u64().unwrap() > 0);
    let errs = ra["summary"]["pass_mean_rot_err_deg"].as_array().unwrap();
    assert!(errs[1].as_f64().unwrap() <= errs[0].as_f64().unwrap());
}

#[test]
fn remote_runs_match_local_runs() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let server = rt.block_on(formloop_server::spawn("127.0.0.1:0", Default::default())).unwrap();
    let url = server.url();
    let dir = tempfile::tempdir().unwrap();
    let (local, remote) = (dir.path().join("local"), dir.path().join("remote"));

    let study = ["study", "--trials", "150", "--distances", "0.1,0.25"];
    ok(&[&["--out", s(&local.join("study"))][..], &study].concat());
    ok(&[&["--out", s(&remote.join("study")), "--server", &url][..], &study].concat());
    assert_eq!(
        std::fs::read(local.join("study/amplification.csv")).unwrap(),
        std::fs::read(remote.join("study/amplification.csv")).unwrap()
    );

    let wind = ["wind", "--nx", "40", "--ny", "20", "--set", "wind.spec.dx=0.016", "--set", "wind.spec.origin=[-0.32,-0.16]", "--tol", "1e-4"];
    ok(&[&["--out", s(&local.join("wind"))][..], &wind].concat());
    ok(&[&["--out", s(&remote.join("wind")), "--server", &url][..], &wind].concat());
    for f in ["wind.bin", "wind.csv", "wind.ppm"] {
        assert_eq!(std::fs::read(local.join("wind").join(f)).unwrap(), std::fs::read(remote.join("wind").join(f)).unwrap(), "{f}");
    }

    let synth = dir.path().join("synth");
    ok(&["--out", s(&synth), "synth", "--frames", "10", "--rot-noise-deg", "2"]);
    let log = synth.join("observations.jsonl");
    let track = |out: &Path, server: Option<&str>| {
        let mut args = vec!["--out", s(out)];
        if let Some(u) = server {
            args.extend(["--server", u]);
        }
        args.extend(["track", "--log", s(&log), "--passes", "1"]);
        ok(&args)
    };
    track(&local.join("track"), None);
    track(&remote.join("track"), Some(&url));
    assert_eq!(
        std::fs::read(local.join("track/trajectories.jsonl")).unwrap(),
        std::fs::read(remote.join("track/trajectories.jsonl")).unwrap()
    );
    rt.block_on(server.stop()).unwrap();
}
