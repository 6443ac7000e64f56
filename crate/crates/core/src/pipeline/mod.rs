//! The six-stage orchestrator: refine the story, write and repair the
//! script, draw character and setting assets, compose scene images, produce
//! candidate clips, then score, judge and splice them.
//!
//! Every provider call's output is stored in the workspace as a recorded
//! artifact before the run moves on, so an interrupted run resumes without
//! repeating paid work, and a resumed run produces the same bytes as an
//! uninterrupted one.

mod meter;
mod splice;
mod stages;
mod workspace;

pub use meter::{metered, CallCounts, CallMeter};
pub use splice::{BoundaryReport, ClipRef, FinalReport, SceneReport, SpliceManifest};
pub use stages::{evaluate_workspace, LENGTH_REMINDER, PARAMS_REMINDER, REFINED_WORDS};
pub use workspace::{Checkpoint, Files, StageId, StageStatus, Workspace, CHECKPOINT_FILE, CONFIG_FILE};

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::{CurationError, MAX_VIDEO_JUDGE};
use crate::exec::Exec;
use crate::metrics::{CompositeWeights, Evaluator, MetricsError};
use crate::prompt::{ParamsError, PromptError, TemplateSet};
use crate::providers::{MediaError, ProviderBindings, ProviderConfigError, ProviderError, ProviderSet};
use crate::script::{Narrative, ScriptDocumentError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("workspace {} is not empty; use `resume` to continue a run", .0.display())]
    WorkspaceNotEmpty(PathBuf),
    #[error("{} is not a pipeline workspace", .0.display())]
    NotAWorkspace(PathBuf),
    #[error("the run in {} has not finished; use `resume` first", .0.display())]
    Incomplete(PathBuf),
    #[error("workspace is corrupt at {path}: {reason}")]
    CorruptWorkspace { path: String, reason: String },
    #[error("configuration digest {found} does not match the checkpoint's {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Providers(#[from] ProviderConfigError),
    #[error("stage {stage} failed ({subject}): {cause}")]
    StageFailed {
        stage: StageId,
        subject: String,
        #[source]
        cause: StageError,
    },
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("refined story has {words} words after a retry; expected {}..={}", REFINED_WORDS.start(), REFINED_WORDS.end())]
    RefinementFailed { words: usize },
    #[error("reply is not a readable script: {0}")]
    ScriptUnreadable(#[from] ScriptDocumentError),
    #[error("script still needs revision after {rounds} repair rounds: {outstanding}")]
    ScriptUnrepairable { rounds: usize, outstanding: String },
    #[error("script has no scenes")]
    EmptyScript,
    #[error("scene references unknown {what} {name:?}")]
    MissingProfile { what: &'static str, name: String },
    #[error("parameter reply rejected after a retry: {0}")]
    ParamsRejected(ParamsError),
    #[error("provider returned {got} candidates, expected {expected}")]
    CandidateCount { expected: usize, got: usize },
    #[error("artifact {path}: {reason}")]
    Artifact { path: String, reason: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Workspace(Box<PipelineError>),
}

impl From<PipelineError> for StageError {
    fn from(e: PipelineError) -> Self {
        StageError::Workspace(Box::new(e))
    }
}

impl StageError {
    fn in_stage(self, stage: StageId, subject: impl Into<String>) -> PipelineError {
        match self {
            StageError::Workspace(e) => *e,
            cause => PipelineError::StageFailed {
                stage,
                subject: subject.into(),
                cause,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolSizes {
    /// Candidates per asset and per scene image.
    pub images: usize,
    /// Candidate clips per scene.
    pub videos: usize,
    /// Best-ranked clips shown to the video judge.
    pub judge_top_k: usize,
}

impl Default for PoolSizes {
    fn default() -> Self {
        Self {
            images: 4,
            videos: 10,
            judge_top_k: 3,
        }
    }
}

/// Everything that determines a run's outputs. Stored as `config.json`;
/// its digest pins a workspace to one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub narrative: Narrative,
    pub seed: u64,
    pub providers: ProviderBindings,
    pub pools: PoolSizes,
    pub frame_count: usize,
    pub fps: f64,
    /// Bound on script repair rounds and on consistency checks per scene.
    pub max_repair_iters: usize,
    /// Side of square images drawn by the mock image generator.
    pub image_size: u32,
    /// Side of the square conditioning image handed to the video generator.
    pub frame_size: u32,
    pub sheet_tiles: usize,
    /// Scenes processed concurrently in the per-scene stages.
    pub scene_parallelism: usize,
    pub weights: CompositeWeights,
    /// Fills the renaming rule of the scene image prompt.
    pub rename_rule: String,
    #[serde(skip)]
    pub workspace: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            narrative: Narrative {
                id: String::new(),
                text: String::new(),
            },
            seed: 0,
            providers: ProviderBindings::default(),
            pools: PoolSizes::default(),
            frame_count: 24,
            fps: 8.0,
            max_repair_iters: crate::curation::DEFAULT_MAX_REPAIR_ITERS,
            image_size: 512,
            frame_size: 256,
            sheet_tiles: crate::metrics::SHEET_TILES,
            scene_parallelism: 1,
            weights: CompositeWeights::default(),
            rename_rule: "keep every character's name exactly as it appears in the character list".into(),
            workspace: PathBuf::new(),
        }
    }
}

impl RunConfig {
    pub fn new(narrative: Narrative) -> Self {
        Self {
            narrative,
            ..Self::default()
        }
    }

    pub fn with_workspace(mut self, workspace: impl Into<PathBuf>) -> Self {
        self.workspace = workspace.into();
        self
    }

    pub fn clip_seconds(&self) -> f64 {
        self.frame_count as f64 / self.fps
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::ConfigInvalid(m));
        if self.narrative.text.trim().is_empty() {
            return bad("narrative is empty".into());
        }
        let p = &self.pools;
        if p.images == 0 || p.videos == 0 || p.judge_top_k == 0 {
            return bad("pool sizes must be at least 1".into());
        }
        let top = p.videos.min(MAX_VIDEO_JUDGE);
        if p.judge_top_k > top {
            return bad(format!("judge_top_k is {} but at most {top} clips can be judged", p.judge_top_k));
        }
        if self.sheet_tiles < 2 {
            return bad("sheet_tiles must be at least 2".into());
        }
        if self.frame_count < self.sheet_tiles {
            return bad(format!(
                "frame_count {} is below the {} contact-sheet tiles",
                self.frame_count, self.sheet_tiles
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if self.max_repair_iters == 0 {
            return bad("max_repair_iters must be at least 1".into());
        }
        if self.image_size < 8 || self.frame_size < 8 {
            return bad("image_size and frame_size must be at least 8".into());
        }
        if self.scene_parallelism == 0 {
            return bad("scene_parallelism must be at least 1".into());
        }
        self.weights
            .validate()
            .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form; the workspace path is excluded.
    pub fn digest(&self) -> String {
        workspace::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Upper bound on provider calls for a run with `assets` profiles and
/// `scenes` scenes.
pub fn call_bound(config: &RunConfig, assets: usize, scenes: usize) -> usize {
    let r = config.max_repair_iters;
    let v = config.pools.videos;
    let refine = 2;
    let script = 2 + (r + 1);
    let per_asset = 1 + 2;
    let per_scene_image = 1 + 1 + 2 + r + 2 * (r - 1);
    let per_scene_video = 1 + 2 + 1;
    // One segmentation per distinct first frame, one embedding batch per
    // clip, the text embedding and the judge with its retry.
    let per_scene_enhance = v + v + 1 + 2;
    let boundaries = 2 * scenes.saturating_sub(1);
    refine
        + script
        + assets * per_asset
        + scenes * (per_scene_image + per_scene_video + per_scene_enhance)
        + boundaries
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Progress {
    StageStarted { stage: StageId },
    Step { stage: StageId, key: String, cached: bool },
    StageFinished(StageTiming),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: StageId,
    pub seconds: f64,
    pub calls: CallCounts,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub workspace: PathBuf,
    /// The run was already complete; nothing was executed.
    pub nothing_to_do: bool,
    pub stages: Vec<StageTiming>,
    pub calls: CallCounts,
    pub call_bound: usize,
    pub manifest_path: PathBuf,
    pub manifest: SpliceManifest,
    pub report: FinalReport,
}

type ProgressFn = dyn Fn(&Progress) + Send + Sync;

/// A configured run: providers, templates and execution options.
pub struct Pipeline {
    config: RunConfig,
    providers: ProviderSet,
    templates: TemplateSet,
    exec: Exec,
    meter: Arc<CallMeter>,
    progress: Option<Arc<ProgressFn>>,
}

impl Pipeline {
    pub fn new(config: RunConfig, providers: ProviderSet) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            config,
            providers,
            templates: TemplateSet::builtin(),
            exec: Exec::default(),
            meter: Arc::new(CallMeter::new()),
            progress: None,
        })
    }

    /// Instantiates the providers named by the configuration's bindings.
    pub fn from_config(config: RunConfig) -> Result<Self, PipelineError> {
        let providers = config.providers.build(config.image_size)?;
        Self::new(config, providers)
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    /// Routes provider calls through `meter`, e.g. one that injects a fault.
    pub fn with_meter(mut self, meter: Arc<CallMeter>) -> Self {
        self.meter = meter;
        self
    }

    pub fn on_progress(mut self, f: impl Fn(&Progress) + Send + Sync + 'static) -> Self {
        self.progress = Some(Arc::new(f));
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn meter(&self) -> &Arc<CallMeter> {
        &self.meter
    }

    /// Starts a run in the configured workspace, which must be empty.
    pub fn run(&self) -> Result<RunSummary, PipelineError> {
        let ws = Workspace::create(&self.config.workspace, &self.config)?;
        self.execute(&ws)
    }

    /// Continues the run stored in the configured workspace.
    pub fn resume(&self) -> Result<RunSummary, PipelineError> {
        let (ws, stored) = Workspace::open(&self.config.workspace)?;
        let mine = self.config.digest();
        if stored.digest() != mine {
            return Err(PipelineError::ConfigMismatch {
                expected: stored.digest(),
                found: mine,
            });
        }
        self.execute(&ws)
    }

    fn notify(&self, p: Progress) {
        if let Some(f) = &self.progress {
            f(&p);
        }
    }

    fn execute(&self, ws: &Workspace) -> Result<RunSummary, PipelineError> {
        let checkpoint = ws.checkpoint();
        if checkpoint.is_complete() {
            return splice::completed_summary(ws, &self.config, checkpoint.run_id);
        }
        let providers = metered(&self.providers, &self.meter);
        let evaluator = Evaluator::new(providers.embedder.clone(), providers.segmenter.clone()).with_exec(self.exec);
        let notify = |p: Progress| self.notify(p);
        let run = stages::Run {
            cfg: &self.config,
            ws,
            p: &providers,
            templates: &self.templates,
            evaluator,
            exec: self.exec,
            notify: &notify,
        };
        let start_counts = self.meter.counts();
        let mut timings = Vec::new();
        let mut time = |stage: StageId, t0: Instant, c0: CallCounts| -> Result<(), PipelineError> {
            ws.advance(stage, StageStatus::Done)?;
            let timing = StageTiming {
                stage,
                seconds: t0.elapsed().as_secs_f64(),
                calls: self.meter.counts().since(&c0),
            };
            self.notify(Progress::StageFinished(timing.clone()));
            timings.push(timing);
            Ok(())
        };
        let begin = |stage: StageId| -> Result<(Instant, CallCounts), PipelineError> {
            ws.advance(stage, StageStatus::InProgress)?;
            self.notify(Progress::StageStarted { stage });
            Ok((Instant::now(), self.meter.counts()))
        };

        let (t, c) = begin(StageId::RefineStory)?;
        let story = run.refine_story().map_err(|e| e.in_stage(StageId::RefineStory, "story"))?;
        time(StageId::RefineStory, t, c)?;

        let (t, c) = begin(StageId::GenerateScript)?;
        let script = run.generate_script(&story).map_err(|e| e.in_stage(StageId::GenerateScript, "script"))?;
        time(StageId::GenerateScript, t, c)?;

        let (t, c) = begin(StageId::GenerateAssets)?;
        let assets = run.generate_assets(&script)?;
        time(StageId::GenerateAssets, t, c)?;

        let (t, c) = begin(StageId::GenerateSceneImages)?;
        let scenes = run.generate_scene_images(&script, &assets)?;
        time(StageId::GenerateSceneImages, t, c)?;

        let (t, c) = begin(StageId::ProduceVideos)?;
        let pools = run.produce_videos(&script, &scenes)?;
        time(StageId::ProduceVideos, t, c)?;

        let (t, c) = begin(StageId::EnhanceAndSplice)?;
        let (manifest, report) = run.enhance_and_splice(&script, &pools)?;
        time(StageId::EnhanceAndSplice, t, c)?;

        Ok(RunSummary {
            run_id: ws.checkpoint().run_id,
            workspace: ws.root().to_path_buf(),
            nothing_to_do: false,
            stages: timings,
            calls: self.meter.counts().since(&start_counts),
            call_bound: call_bound(&self.config, assets.len(), script.scenes.len()),
            manifest_path: ws.root().join(splice::MANIFEST_PATH),
            manifest,
            report,
        })
    }
}

/// Runs `config` into its (empty) workspace with providers from its bindings.
pub fn run(config: RunConfig) -> Result<RunSummary, PipelineError> {
    Pipeline::from_config(config)?.run()
}

/// Continues the run stored at `workspace` with providers from its stored
/// bindings.
pub fn resume(workspace: &Path) -> Result<RunSummary, PipelineError> {
    if Workspace::read_checkpoint(workspace)?.is_none() {
        return Err(PipelineError::NotAWorkspace(workspace.to_path_buf()));
    }
    let config = Workspace::read_config(workspace)?;
    Pipeline::from_config(config)?.resume()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> RunConfig {
        RunConfig::new(Narrative::new("A cat and a dog play in the garden.").unwrap())
    }

    #[test]
    fn defaults() {
        let c = config();
        assert_eq!((c.pools.images, c.pools.videos, c.pools.judge_top_k), (4, 10, 3));
        assert_eq!((c.frame_count, c.fps), (24, 8.0));
        assert_eq!(c.clip_seconds(), 3.0);
        c.validate().unwrap();
    }

    #[test]
    fn validation() {
        let mut c = config();
        c.pools.judge_top_k = 4;
        assert!(c.validate().is_err());
        let mut c = config();
        c.pools.videos = 2;
        c.pools.judge_top_k = 3;
        assert!(c.validate().is_err());
        let mut c = config();
        c.frame_count = 4;
        assert!(c.validate().is_err());
        let mut c = config();
        c.pools.images = 0;
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_err());
    }

    #[test]
    fn digest_ignores_workspace_and_round_trips() {
        let a = config();
        let b = config().with_workspace("/somewhere/else");
        assert_eq!(a.digest(), b.digest());
        let back: RunConfig = serde_json::from_slice(&a.to_json()).unwrap();
        assert_eq!(back.digest(), a.digest());
        let mut c = config();
        c.seed = 1;
        assert_ne!(c.digest(), a.digest());
    }

    #[test]
    fn partial_config_files_take_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 9, "pools": {"videos": 6}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!((c.pools.images, c.pools.videos), (4, 6));
        assert_eq!(c.frame_count, 24);
    }
}
