use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use animforge::metrics::MetricReport;
use animforge::pipeline::FinalReport;
use animforge::providers::{FrameSequence, Image};

const STORY: &str = "Tom, a grey cat, and Jerry, a brown mouse, live in a cosy house. \
    One morning Jerry steals cheese from the kitchen while Tom naps in the garden. \
    Tom wakes and chases Jerry through the house.";

fn animforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_animforge"))
        .args(args)
        .env_remove("ANIMFORGE_WORKSPACE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A reduced-size run configuration so each run takes well under a second.
fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    let cfg = serde_json::json!({
        "image_size": 48,
        "frame_size": 24,
        "frame_count": 8,
        "pools": { "images": 2, "videos": 4 }
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

fn small_run(dir: &Path, ws: &Path) -> Output {
    let cfg = small_config(dir);
    animforge(&[
        "run",
        "--narrative",
        STORY,
        "--workspace",
        ws.to_str().unwrap(),
        "--providers",
        "mock",
        "--seed",
        "7",
        "--config",
        &cfg,
    ])
}

#[test]
fn run_writes_manifest_and_keeps_stdout_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let story = dir.path().join("story.txt");
    std::fs::write(&story, STORY).unwrap();
    let ws = dir.path().join("w");
    let cfg = small_config(dir.path());
    let out = animforge(&[
        "run",
        "--narrative",
        story.to_str().unwrap(),
        "--workspace",
        ws.to_str().unwrap(),
        "--providers",
        "mock",
        "--seed",
        "7",
        "--config",
        &cfg,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let manifest = ws.join("final/manifest.json");
    assert!(manifest.is_file());
    assert_eq!(stdout(&out).trim(), manifest.to_str().unwrap());
    let err = stderr(&out);
    for n in 1..=6 {
        assert!(err.contains(&format!("[{n}/6]")), "{err}");
    }
}

#[test]
fn missing_workspace_is_a_usage_error() {
    let out = animforge(&["run", "--narrative", STORY]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn bad_flag_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("w");
    let out = animforge(&["run", "--narrative", STORY, "--workspace", ws.to_str().unwrap(), "--providers", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let out = animforge(&["run", "--narrative", "   ", "--workspace", ws.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = animforge(&["eval", "--clip", "a", "--workspace", "b"]);
    assert_eq!(out.status.code(), Some(2));
    let out = animforge(&["run", "--narrative", STORY, "--workspace", ws.to_str().unwrap(), "--seed", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!ws.exists());
}

#[test]
fn rerun_is_refused_and_resume_has_nothing_to_do() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("w");
    assert_eq!(small_run(dir.path(), &ws).status.code(), Some(0));

    let again = small_run(dir.path(), &ws);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("resume"));

    let resumed = animforge(&["resume", "--workspace", ws.to_str().unwrap()]);
    assert_eq!(resumed.status.code(), Some(0), "{}", stderr(&resumed));
    assert!(stderr(&resumed).contains("nothing to do"));

    let inspect = animforge(&["inspect", "--workspace", ws.to_str().unwrap()]);
    assert_eq!(stdout(&inspect).matches(" done").count(), 6);
}

#[test]
fn inspect_fresh_workspace_is_all_pending() {
    let dir = tempfile::tempdir().unwrap();
    let out = animforge(&["inspect", "--workspace", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).matches("pending").count(), 6);

    let out = Command::new(env!("CARGO_BIN_EXE_animforge"))
        .arg("inspect")
        .env("ANIMFORGE_WORKSPACE", dir.path().join("absent"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).matches("pending").count(), 6);
}

#[test]
fn resume_outside_a_workspace_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
    let out = animforge(&["resume", "--workspace", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn providers_check_with_mock_is_fast_and_ok() {
    let t0 = Instant::now();
    let out = animforge(&["providers-check", "--providers", "mock", "--json"]);
    let elapsed = t0.elapsed().as_secs_f64();
    assert_eq!(out.status.code(), Some(0));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r["ok"] == true));
    assert!(elapsed < 1.0, "{elapsed}s");
}

#[test]
fn eval_identical_frames_scores_full_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = Vec::new();
    for y in 0..32i32 {
        for x in 0..32i32 {
            let inside = (x - 16).pow(2) + (y - 16).pow(2) < 64;
            data.extend_from_slice(if inside { &[200, 40, 40] } else { &[90, 140, 60] });
        }
    }
    let frame = Image::new(32, 32, data).unwrap();
    FrameSequence::new(vec![frame; 6], 8.0).unwrap().write_dir(dir.path()).unwrap();
    let out = animforge(&["eval", "--clip", dir.path().to_str().unwrap(), "--text", "a green field"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: MetricReport = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((report.subject_consistency - 1.0).abs() < 1e-9);
    assert!((report.background_consistency - 1.0).abs() < 1e-9);
    assert!(report.text_visual_alignment.is_some());
    let again: MetricReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(report, again);
}

#[test]
fn eval_unreadable_frames_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("meta.json"), "{not json").unwrap();
    let out = animforge(&["eval", "--clip", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_workspace_reports_scenes_and_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("w");
    assert_eq!(small_run(dir.path(), &ws).status.code(), Some(0));
    let out = animforge(&["eval", "--workspace", ws.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: FinalReport = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report.scenes.len(), 3);
    let stored: FinalReport =
        serde_json::from_slice(&std::fs::read(ws.join("final/report.json")).unwrap()).unwrap();
    assert_eq!(report.boundaries.len(), stored.boundaries.len());
    for (a, b) in report.scenes.iter().zip(&stored.scenes) {
        assert_eq!(a.selected, b.selected);
        assert!((a.report.subject_consistency - b.report.subject_consistency).abs() < 1e-9);
    }
}
