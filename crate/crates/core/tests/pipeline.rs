use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use animforge::pipeline::{
    CallMeter, Pipeline, PipelineError, Progress, RunConfig, StageError, StageId, StageStatus, Workspace,
};
use animforge::providers::mock::{MockChat, MockChatKnobs};
use animforge::providers::ProviderSet;
use animforge::script::Narrative;

const STORY: &str = "Tom, a grey cat, and Jerry, a brown mouse, live in a cosy house. \
    One morning Jerry steals cheese from the kitchen while Tom naps in the garden. \
    Tom wakes and chases Jerry through the house, but Jerry escapes into his hole.";

fn small_config(root: &Path) -> RunConfig {
    let mut c = RunConfig::new(Narrative::new(STORY).unwrap()).with_workspace(root);
    c.image_size = 48;
    c.frame_size = 24;
    c.frame_count = 8;
    c.pools.images = 2;
    c.pools.videos = 4;
    c.seed = 7;
    c
}

fn pipeline(config: RunConfig, knobs: MockChatKnobs) -> Pipeline {
    let size = config.image_size;
    Pipeline::new(config, ProviderSet::mock_with(size, MockChat::with_knobs(knobs))).unwrap()
}

/// Relative path and bytes of every file under `root`, sorted.
fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn three_scene_run_produces_a_consistent_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let summary = pipeline(cfg.clone(), MockChatKnobs::default()).run().unwrap();
    assert!(!summary.nothing_to_do);
    assert_eq!(summary.manifest.clips.len(), 3);
    assert_eq!(summary.manifest.total_frames, 3 * cfg.frame_count);
    assert!(summary.manifest.is_consistent());
    assert_eq!(summary.report.scenes.len(), 3);
    assert!(summary.calls.total() <= summary.call_bound, "{:?} > {}", summary.calls, summary.call_bound);
    let frames = fs::read_dir(dir.path().join("final/frames")).unwrap().count();
    assert_eq!(frames, 3 * cfg.frame_count + 1);
    let cp = Workspace::read_checkpoint(dir.path()).unwrap().unwrap();
    assert!(cp.is_complete());
}

#[test]
fn runs_are_deterministic_and_resume_is_free() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(small_config(a.path()), MockChatKnobs::default()).run().unwrap();
    pipeline(small_config(b.path()), MockChatKnobs::default()).run().unwrap();
    assert!(snapshot(a.path()) == snapshot(b.path()));

    let before = snapshot(a.path());
    let p = pipeline(small_config(a.path()), MockChatKnobs::default());
    let summary = p.resume().unwrap();
    assert!(summary.nothing_to_do);
    assert_eq!(p.meter().counts().total(), 0);
    assert!(snapshot(a.path()) == before);
}

#[test]
fn fault_then_resume_matches_an_uninterrupted_run() {
    let clean = tempfile::tempdir().unwrap();
    pipeline(small_config(clean.path()), MockChatKnobs::default()).run().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let err = pipeline(small_config(dir.path()), MockChatKnobs::default())
        .with_meter(Arc::new(CallMeter::failing_at(20)))
        .run()
        .unwrap_err();
    assert!(err.to_string().contains("injected fault"), "{err}");
    assert!(matches!(
        pipeline(small_config(dir.path()), MockChatKnobs::default()).run(),
        Err(PipelineError::WorkspaceNotEmpty(_))
    ));
    pipeline(small_config(dir.path()), MockChatKnobs::default()).resume().unwrap();
    assert!(snapshot(clean.path()) == snapshot(dir.path()));
}

#[test]
fn tampered_artifact_blocks_resume() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(small_config(dir.path()), MockChatKnobs::default()).run().unwrap();
    fs::write(dir.path().join("story/refined.txt"), "edited").unwrap();
    let err = pipeline(small_config(dir.path()), MockChatKnobs::default()).resume().unwrap_err();
    assert!(matches!(err, PipelineError::CorruptWorkspace { ref path, .. } if path == "story/refined.txt"));
}

#[test]
fn resume_with_other_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(small_config(dir.path()), MockChatKnobs::default()).run().unwrap();
    let mut other = small_config(dir.path());
    other.seed += 1;
    assert!(matches!(
        pipeline(other, MockChatKnobs::default()).resume(),
        Err(PipelineError::ConfigMismatch { .. })
    ));
}

#[test]
fn unknown_setting_costs_one_repair_round() {
    let dir = tempfile::tempdir().unwrap();
    let knobs = MockChatKnobs {
        unknown_setting: true,
        ..MockChatKnobs::default()
    };
    pipeline(small_config(dir.path()), knobs).run().unwrap();
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("script/validation.json")).unwrap()).unwrap();
    assert_eq!(v["repair_rounds"], 1);
    assert_eq!(v["verify_calls"], 2);
}

#[test]
fn endless_revisions_fail_with_a_bounded_budget() {
    let dir = tempfile::tempdir().unwrap();
    let knobs = MockChatKnobs {
        always_revise: true,
        ..MockChatKnobs::default()
    };
    let mut cfg = small_config(dir.path());
    cfg.max_repair_iters = 2;
    let err = pipeline(cfg, knobs).run().unwrap_err();
    match err {
        PipelineError::StageFailed {
            stage: StageId::GenerateScript,
            cause: StageError::ScriptUnrepairable { rounds, .. },
            ..
        } => assert_eq!(rounds, 2),
        other => panic!("unexpected {other}"),
    }
    let cp = Workspace::read_checkpoint(dir.path()).unwrap().unwrap();
    assert_eq!(cp.status(StageId::RefineStory), StageStatus::Done);
    assert_eq!(cp.status(StageId::GenerateScript), StageStatus::InProgress);
    assert!(cp.steps.contains_key("script/verify_2"));
    assert!(!cp.steps.contains_key("script/verify_3"));
}

#[test]
fn retries_recover_short_stories_and_bad_params() {
    let dir = tempfile::tempdir().unwrap();
    let knobs = MockChatKnobs {
        short_refinements: 1,
        invalid_params: 1,
        garbage_judgements: 1,
        ..MockChatKnobs::default()
    };
    let summary = pipeline(small_config(dir.path()), knobs).run().unwrap();
    assert!(summary.calls.total() <= summary.call_bound);
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("videos/0/params.json")).unwrap()).unwrap();
    assert!(v["rejected_reply"].is_string());
}

#[test]
fn repeated_short_stories_fail_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let knobs = MockChatKnobs {
        short_refinements: 2,
        ..MockChatKnobs::default()
    };
    let err = pipeline(small_config(dir.path()), knobs).run().unwrap_err();
    assert!(matches!(
        err,
        PipelineError::StageFailed {
            cause: StageError::RefinementFailed { .. },
            ..
        }
    ));
}

#[test]
fn scene_parallelism_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(small_config(a.path()), MockChatKnobs::default()).run().unwrap();
    let mut wide = small_config(b.path());
    wide.scene_parallelism = 3;
    pipeline(wide, MockChatKnobs::default()).run().unwrap();
    let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        v.into_iter().filter(|(p, _)| p != "config.json" && p != "run.json").collect()
    };
    assert!(strip(snapshot(a.path())) == strip(snapshot(b.path())));
}

#[test]
fn progress_reports_every_stage_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = seen.clone();
    pipeline(small_config(dir.path()), MockChatKnobs::default())
        .on_progress(move |p| {
            if let Progress::StageFinished(t) = p {
                sink.lock().unwrap().push(t.stage);
            }
        })
        .run()
        .unwrap();
    assert_eq!(*seen.lock().unwrap(), StageId::ALL.to_vec());
}
