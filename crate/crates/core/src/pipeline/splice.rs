use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::workspace::sha256_hex;
use super::{call_bound, CallCounts, PipelineError, RunConfig, RunSummary, StageError, Workspace};
use crate::metrics::{Evaluator, MetricReport};
use crate::providers::FrameSequence;
use crate::script::SceneSpec;

pub(crate) const MANIFEST_PATH: &str = "final/manifest.json";
pub(crate) const REPORT_PATH: &str = "final/report.json";
pub(crate) const FINAL_FRAMES_DIR: &str = "final/frames";

/// The clip chosen for one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRef {
    pub scene: usize,
    /// Index within the scene's candidate pool.
    pub candidate: usize,
    /// Workspace-relative directory holding the clip's frames.
    pub path: String,
    pub frames: usize,
    /// Content hash of the clip.
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpliceManifest {
    /// In scene order.
    pub clips: Vec<ClipRef>,
    pub total_frames: usize,
    pub fps: f64,
    pub frames_dir: String,
    /// Hex SHA-256 over the fields above.
    pub digest: String,
}

impl SpliceManifest {
    pub fn new(clips: Vec<ClipRef>, fps: f64) -> Self {
        let mut m = Self {
            total_frames: clips.iter().map(|c| c.frames).sum(),
            clips,
            fps,
            frames_dir: FINAL_FRAMES_DIR.into(),
            digest: String::new(),
        };
        m.digest = m.compute_digest();
        m
    }

    pub fn compute_digest(&self) -> String {
        let body = serde_json::to_vec(&(&self.clips, self.total_frames, self.fps, &self.frames_dir))
            .expect("manifest serializes");
        sha256_hex(&body)
    }

    /// Digest matches, clips are in scene order and frame counts add up.
    pub fn is_consistent(&self) -> bool {
        self.digest == self.compute_digest()
            && self.clips.windows(2).all(|w| w[0].scene < w[1].scene)
            && self.total_frames == self.clips.iter().map(|c| c.frames).sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene: usize,
    pub setting: String,
    pub selected: usize,
    pub report: MetricReport,
}

/// Background consistency across the cut between two consecutive scenes
/// that share a setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub from_scene: usize,
    pub to_scene: usize,
    pub setting: String,
    pub background_consistency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub scenes: Vec<SceneReport>,
    pub boundaries: Vec<BoundaryReport>,
    /// Mean over the selected clips.
    pub aggregate: MetricReport,
}

/// Combines per-scene reports of the selected clips with cross-boundary
/// background scores. The boundary clip is the last frame of one scene
/// followed by the first frame of the next.
pub(crate) fn assemble_report(
    scenes: &[SceneSpec],
    selected: &[usize],
    reports: Vec<MetricReport>,
    clips: &[&FrameSequence],
    evaluator: &Evaluator,
) -> Result<FinalReport, StageError> {
    let mut boundaries = Vec::new();
    for i in 1..scenes.len() {
        if scenes[i].setting != scenes[i - 1].setting {
            continue;
        }
        let last = clips[i - 1].frames().last().expect("clips are non-empty").clone();
        let first = clips[i].frames()[0].clone();
        let pair = FrameSequence::new(vec![last, first], clips[i].fps())?;
        boundaries.push(BoundaryReport {
            from_scene: scenes[i - 1].index,
            to_scene: scenes[i].index,
            setting: scenes[i].setting.clone(),
            background_consistency: evaluator.background_consistency(&pair)?,
        });
    }
    let aggregate = MetricReport::mean(&reports).ok_or(StageError::EmptyScript)?;
    Ok(FinalReport {
        scenes: scenes
            .iter()
            .zip(selected)
            .zip(reports)
            .map(|((s, sel), report)| SceneReport {
                scene: s.index,
                setting: s.setting.clone(),
                selected: *sel,
                report,
            })
            .collect(),
        boundaries,
        aggregate,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(ws: &Workspace, rel: &str) -> Result<T, PipelineError> {
    serde_json::from_slice(&ws.read(rel)?).map_err(|e| PipelineError::CorruptWorkspace {
        path: rel.into(),
        reason: e.to_string(),
    })
}

/// Summary of a run whose stages are all done, read back from disk.
pub(crate) fn completed_summary(
    ws: &Workspace,
    config: &RunConfig,
    run_id: String,
) -> Result<RunSummary, PipelineError> {
    let manifest: SpliceManifest = read_json(ws, MANIFEST_PATH)?;
    let report: FinalReport = read_json(ws, REPORT_PATH)?;
    let script: crate::script::Script = read_json(ws, super::stages::SCRIPT_PATH)?;
    let assets = script.characters.len() + script.settings.len();
    Ok(RunSummary {
        run_id,
        workspace: ws.root().to_path_buf(),
        nothing_to_do: true,
        stages: Vec::new(),
        calls: CallCounts::default(),
        call_bound: call_bound(config, assets, script.scenes.len()),
        manifest_path: PathBuf::from(ws.root()).join(MANIFEST_PATH),
        manifest,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(scene: usize, frames: usize) -> ClipRef {
        ClipRef {
            scene,
            candidate: 0,
            path: format!("videos/{scene}/cand_0/frames"),
            frames,
            digest: "x".into(),
        }
    }

    #[test]
    fn manifest_sums_and_digests() {
        let m = SpliceManifest::new(vec![clip(0, 24), clip(1, 24), clip(2, 20)], 8.0);
        assert_eq!(m.total_frames, 68);
        assert!(m.is_consistent());
        let mut tampered = m.clone();
        tampered.clips.swap(0, 1);
        assert!(!tampered.is_consistent());
    }
}
