use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, RunConfig, StageError};

pub const CHECKPOINT_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    RefineStory,
    GenerateScript,
    GenerateAssets,
    GenerateSceneImages,
    ProduceVideos,
    EnhanceAndSplice,
}

impl StageId {
    pub const ALL: [StageId; 6] = [
        StageId::RefineStory,
        StageId::GenerateScript,
        StageId::GenerateAssets,
        StageId::GenerateSceneImages,
        StageId::ProduceVideos,
        StageId::EnhanceAndSplice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageId::RefineStory => "refine_story",
            StageId::GenerateScript => "generate_script",
            StageId::GenerateAssets => "generate_assets",
            StageId::GenerateSceneImages => "generate_scene_images",
            StageId::ProduceVideos => "produce_videos",
            StageId::EnhanceAndSplice => "enhance_and_splice",
        }
    }

    /// 1-based position in the run.
    pub fn number(self) -> usize {
        StageId::ALL.iter().position(|s| *s == self).expect("listed") + 1
    }
}

impl std::fmt::Display for StageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    InProgress,
    Done,
}

/// Contents of `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub run_id: String,
    pub config_digest: String,
    pub stages: BTreeMap<StageId, StageStatus>,
    /// Completed step → the artifacts it wrote, in order.
    pub steps: BTreeMap<String, Vec<String>>,
    /// Artifact path → hex SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(config_digest: &str) -> Self {
        Self {
            run_id: format!("run-{}", &config_digest[..16]),
            config_digest: config_digest.to_string(),
            stages: StageId::ALL.iter().map(|s| (*s, StageStatus::Pending)).collect(),
            steps: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn status(&self, stage: StageId) -> StageStatus {
        self.stages.get(&stage).copied().unwrap_or(StageStatus::Pending)
    }

    pub fn is_complete(&self) -> bool {
        StageId::ALL.iter().all(|s| self.status(*s) == StageStatus::Done)
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files produced by one step: `(workspace-relative path, bytes)`.
pub type Files = Vec<(String, Vec<u8>)>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Writes through a sibling temp file and a rename so readers never see a
/// partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

fn safe_relative(rel: &str) -> bool {
    let p = Path::new(rel);
    !rel.is_empty()
        && p.components()
            .all(|c| matches!(c, std::path::Component::Normal(_)))
}

/// The on-disk state of one run. Artifacts are written once and recorded
/// with their digest; every checkpoint mutation goes through one lock and
/// an atomic rewrite of `run.json`.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    state: Mutex<Checkpoint>,
}

impl Workspace {
    /// Initializes `root`, which must be absent or an empty directory.
    pub fn create(root: &Path, config: &RunConfig) -> Result<Self, PipelineError> {
        if root.exists() {
            let mut entries = fs::read_dir(root).map_err(io(root))?;
            if entries.next().is_some() {
                return Err(PipelineError::WorkspaceNotEmpty(root.to_path_buf()));
            }
        }
        fs::create_dir_all(root).map_err(io(root))?;
        write_atomic(&root.join(CONFIG_FILE), &config.to_json())?;
        let ws = Self {
            root: root.to_path_buf(),
            state: Mutex::new(Checkpoint::new(&config.digest())),
        };
        ws.commit(&ws.state.lock().expect("checkpoint lock"))?;
        Ok(ws)
    }

    /// Reads `run.json`; `None` when `root` is absent or empty.
    pub fn read_checkpoint(root: &Path) -> Result<Option<Checkpoint>, PipelineError> {
        let path = root.join(CHECKPOINT_FILE);
        if !path.exists() {
            let empty = !root.exists() || fs::read_dir(root).map_err(io(root))?.next().is_none();
            return if empty {
                Ok(None)
            } else {
                Err(PipelineError::NotAWorkspace(root.to_path_buf()))
            };
        }
        let bytes = fs::read(&path).map_err(io(&path))?;
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| corrupt(CHECKPOINT_FILE, e.to_string()))
    }

    pub fn read_config(root: &Path) -> Result<RunConfig, PipelineError> {
        let path = root.join(CONFIG_FILE);
        let bytes = fs::read(&path).map_err(io(&path))?;
        let mut config: RunConfig =
            serde_json::from_slice(&bytes).map_err(|e| corrupt(CONFIG_FILE, e.to_string()))?;
        config.workspace = root.to_path_buf();
        Ok(config)
    }

    /// Opens an existing workspace and verifies every recorded artifact.
    pub fn open(root: &Path) -> Result<(Self, RunConfig), PipelineError> {
        let checkpoint =
            Self::read_checkpoint(root)?.ok_or_else(|| PipelineError::NotAWorkspace(root.to_path_buf()))?;
        let config = Self::read_config(root)?;
        let digest = config.digest();
        if digest != checkpoint.config_digest {
            return Err(PipelineError::ConfigMismatch {
                expected: checkpoint.config_digest,
                found: digest,
            });
        }
        let ws = Self {
            root: root.to_path_buf(),
            state: Mutex::new(checkpoint),
        };
        ws.verify()?;
        Ok((ws, config))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.state.lock().expect("checkpoint lock").clone()
    }

    /// Checks that every recorded artifact exists with its recorded digest.
    pub fn verify(&self) -> Result<(), PipelineError> {
        let artifacts = self.checkpoint().artifacts;
        for (rel, digest) in &artifacts {
            self.read_recorded(rel, digest)?;
        }
        Ok(())
    }

    fn read_recorded(&self, rel: &str, digest: &str) -> Result<Vec<u8>, PipelineError> {
        let bytes = fs::read(self.root.join(rel)).map_err(|e| corrupt(rel, e.to_string()))?;
        if sha256_hex(&bytes) != digest {
            return Err(corrupt(rel, "content does not match the recorded digest".into()));
        }
        Ok(bytes)
    }

    /// Reads a recorded artifact, checking its digest.
    pub fn read(&self, rel: &str) -> Result<Vec<u8>, PipelineError> {
        let digest = self
            .checkpoint()
            .artifacts
            .get(rel)
            .cloned()
            .ok_or_else(|| corrupt(rel, "artifact is not recorded".into()))?;
        self.read_recorded(rel, &digest)
    }

    fn commit(&self, checkpoint: &Checkpoint) -> Result<(), PipelineError> {
        let bytes = serde_json::to_vec_pretty(checkpoint).expect("checkpoint serializes");
        write_atomic(&self.root.join(CHECKPOINT_FILE), &bytes)
    }

    /// Moves `stage` forward to `status`; never moves it back.
    pub fn advance(&self, stage: StageId, status: StageStatus) -> Result<(), PipelineError> {
        let mut state = self.state.lock().expect("checkpoint lock");
        if state.status(stage) >= status {
            return Ok(());
        }
        state.stages.insert(stage, status);
        self.commit(&state)
    }

    pub fn is_step_done(&self, key: &str) -> bool {
        self.state.lock().expect("checkpoint lock").steps.contains_key(key)
    }

    /// Returns the files of step `key`, running `produce` and recording its
    /// output only if the step has not completed before. The flag is true
    /// when the files came from disk.
    pub fn memo(
        &self,
        key: &str,
        produce: impl FnOnce() -> Result<Files, StageError>,
    ) -> Result<(Files, bool), StageError> {
        let recorded = {
            let state = self.state.lock().expect("checkpoint lock");
            state.steps.get(key).map(|paths| {
                paths
                    .iter()
                    .map(|p| (p.clone(), state.artifacts.get(p).cloned().unwrap_or_default()))
                    .collect::<Vec<_>>()
            })
        };
        if let Some(paths) = recorded {
            let files = paths
                .into_iter()
                .map(|(rel, digest)| Ok((rel.clone(), self.read_recorded(&rel, &digest)?)))
                .collect::<Result<Files, PipelineError>>()?;
            return Ok((files, true));
        }
        let files = produce()?;
        for (rel, bytes) in &files {
            if !safe_relative(rel) || rel == CHECKPOINT_FILE || rel == CONFIG_FILE {
                return Err(PipelineError::Io {
                    path: rel.clone(),
                    reason: "artifact path must be a plain relative path".into(),
                }
                .into());
            }
            write_atomic(&self.root.join(rel), bytes)?;
        }
        let mut state = self.state.lock().expect("checkpoint lock");
        for (rel, bytes) in &files {
            state.artifacts.insert(rel.clone(), sha256_hex(bytes));
        }
        state
            .steps
            .insert(key.to_string(), files.iter().map(|(p, _)| p.clone()).collect());
        self.commit(&state)?;
        Ok((files, false))
    }
}

fn corrupt(path: &str, reason: String) -> PipelineError {
    PipelineError::CorruptWorkspace {
        path: path.to_string(),
        reason,
    }
}
