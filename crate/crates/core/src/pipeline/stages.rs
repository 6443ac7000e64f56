use std::collections::{HashMap, HashSet};
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::splice::{self, assemble_report, ClipRef, FinalReport, SpliceManifest, MANIFEST_PATH, REPORT_PATH};
use super::workspace::{sha256_hex, Files};
use super::{PipelineError, Progress, RunConfig, StageError, StageId, StageStatus, Workspace};
use crate::curation::{
    consistency_repair, judge_select_image, judge_select_video, rank_scores, CandidatePool, Provenance,
    RepairInputs,
};
use crate::exec::Exec;
use crate::metrics::{contact_sheet, Evaluator, MetricReport};
use crate::prompt::{parse_params, parse_repair_verdict, slots, GenerationParams, RepairVerdict, SlotMap, TemplateId, TemplateSet};
use crate::providers::{
    ChatRequest, ChatTask, FrameSequence, Image, ImageRequest, Message, ProviderSet, VideoRequest,
};
use crate::script::{
    parse_script, validate_script, word_count, CharacterProfile, RefinedStory, SceneSpec, Script,
    ValidationReport,
};

/// Accepted length of a refined story, in words.
pub const REFINED_WORDS: RangeInclusive<usize> = 75..=300;

/// Follow-up sent when a refined story misses the length band.
pub const LENGTH_REMINDER: &str =
    "Please rewrite the story so that it is about 150 words long, keeping the original names of the characters.";

/// Follow-up sent when a parameter reply fails validation.
pub const PARAMS_REMINDER: &str =
    "These parameters cannot be used. Reply again with a single JSON object that follows the template exactly.";

pub(crate) const SCRIPT_PATH: &str = "script/script.json";

pub(super) struct Run<'a> {
    pub cfg: &'a RunConfig,
    pub ws: &'a Workspace,
    pub p: &'a ProviderSet,
    pub templates: &'a TemplateSet,
    pub evaluator: Evaluator,
    pub exec: Exec,
    pub notify: &'a (dyn Fn(Progress) + Sync),
}

/// Selected character and setting images by name.
#[derive(Default)]
pub(super) struct Assets {
    characters: HashMap<String, Image>,
    settings: HashMap<String, Image>,
}

impl Assets {
    pub fn len(&self) -> usize {
        self.characters.len() + self.settings.len()
    }
}

#[derive(Serialize, Deserialize)]
struct Selection {
    index: usize,
    judge_calls: usize,
    analysis: String,
    path: String,
}

#[derive(Serialize, Deserialize)]
struct ScriptRecord {
    report: ValidationReport,
    repair_rounds: usize,
    verify_calls: usize,
}

#[derive(Serialize, Deserialize)]
struct ParamsRecord {
    /// The accepted reply, verbatim.
    reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rejected_reply: Option<String>,
    params: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct MetricsRecord {
    reports: Vec<MetricReport>,
    composite: Vec<f64>,
    /// Every candidate, best first.
    ranked: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ClipSelection {
    /// Index in the candidate pool.
    index: usize,
    /// Candidates shown to the judge, best-ranked first.
    top: Vec<usize>,
    judge_choice: usize,
    judge_calls: usize,
    analysis: String,
    sheet_frames: Vec<usize>,
    path: String,
}

fn text(rel: String, s: &str) -> (String, Vec<u8>) {
    (rel, s.as_bytes().to_vec())
}

fn json<T: Serialize>(rel: String, v: &T) -> (String, Vec<u8>) {
    (rel, serde_json::to_vec_pretty(v).expect("record serializes"))
}

fn artifact_err(path: &str, reason: impl ToString) -> StageError {
    StageError::Artifact {
        path: path.to_string(),
        reason: reason.to_string(),
    }
}

fn find<'f>(files: &'f Files, rel: &str) -> Result<&'f [u8], StageError> {
    files
        .iter()
        .find(|(p, _)| p == rel)
        .map(|(_, b)| b.as_slice())
        .ok_or_else(|| artifact_err(rel, "missing from step output"))
}

fn read_text(files: &Files, rel: &str) -> Result<String, StageError> {
    String::from_utf8(find(files, rel)?.to_vec()).map_err(|e| artifact_err(rel, e))
}

fn read_json<T: serde::de::DeserializeOwned>(files: &Files, rel: &str) -> Result<T, StageError> {
    serde_json::from_slice(find(files, rel)?).map_err(|e| artifact_err(rel, e))
}

fn check_count(expected: usize, got: usize) -> Result<(), StageError> {
    if expected != got {
        return Err(StageError::CandidateCount { expected, got });
    }
    Ok(())
}

/// Directory-safe form of a profile name.
fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    let out = out.trim_end_matches('-').to_string();
    if out.is_empty() {
        "asset".into()
    } else {
        out
    }
}

fn character_lines(chars: &[(CharacterProfile, Image)]) -> String {
    chars.iter().map(|(p, _)| p.to_line()).collect::<Vec<_>>().join("\n")
}

/// The scene lines of a reply, with or without its own section header.
fn scenes_only(reply: &str) -> Result<Vec<SceneSpec>, StageError> {
    let is_header = |l: &str| l.trim_start().starts_with("##");
    let lines: Vec<&str> = reply.lines().collect();
    let body: Vec<&str> = match lines.iter().position(|l| {
        is_header(l) && l.trim().trim_start_matches('#').trim().trim_end_matches(':').eq_ignore_ascii_case("scenes")
    }) {
        Some(h) => lines[h + 1..].iter().copied().take_while(|l| !is_header(l)).collect(),
        None => lines.into_iter().filter(|l| !is_header(l)).collect(),
    };
    let doc = format!("## Characters\n\n## Settings\n\n## Scenes\n{}\n", body.join("\n"));
    Ok(parse_script(&doc)?.scenes)
}

/// Character and setting sections; a scene section is optional.
fn parse_profiles(reply: &str) -> Result<Script, StageError> {
    match parse_script(reply) {
        Ok(s) => Ok(s),
        Err(_) => Ok(parse_script(&format!("{reply}\n## Scenes\n"))?),
    }
}

fn profile_document(profiles: &Script) -> String {
    let doc = Script {
        characters: profiles.characters.clone(),
        settings: profiles.settings.clone(),
        scenes: Vec::new(),
    }
    .to_document();
    doc.trim_end().trim_end_matches("## Scenes").trim_end().to_string() + "\n"
}

fn decode_pngs(files: &Files) -> Result<Vec<Image>, StageError> {
    files
        .iter()
        .map(|(_, b)| Image::from_png(b).map_err(StageError::from))
        .collect()
}

fn clip_files(prefix: &str, clip: &FrameSequence) -> Files {
    clip.encode_files()
        .into_iter()
        .map(|(name, bytes)| (format!("{prefix}/{name}"), bytes))
        .collect()
}

fn decode_clip(files: &Files, prefix: &str) -> Result<FrameSequence, StageError> {
    let lead = format!("{prefix}/");
    let meta_path = format!("{prefix}/meta.json");
    let frames: Vec<Vec<u8>> = files
        .iter()
        .filter(|(p, _)| p.starts_with(&lead) && *p != meta_path)
        .map(|(_, b)| b.clone())
        .collect();
    Ok(FrameSequence::decode_files(find(files, &meta_path)?, &frames, prefix)?)
}

impl Run<'_> {
    fn seed(&self, key: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.cfg.seed.to_le_bytes());
        h.update(key.as_bytes());
        u64::from_be_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }

    fn step(
        &self,
        stage: StageId,
        key: &str,
        produce: impl FnOnce() -> Result<Files, StageError>,
    ) -> Result<Files, StageError> {
        let (files, cached) = self.ws.memo(key, produce)?;
        (self.notify)(Progress::Step {
            stage,
            key: key.to_string(),
            cached,
        });
        Ok(files)
    }

    fn ask(&self, id: TemplateId, ctx: SlotMap, images: Vec<Image>) -> Result<String, StageError> {
        let prompt = self.templates.render(id, &ctx)?;
        let request = ChatRequest::new(
            ChatTask::Instruction(id),
            vec![Message::user(prompt).with_images(images)],
            ctx,
        );
        Ok(self.p.chat.chat(&request)?)
    }

    /// One chat call whose reply is stored verbatim at `rel`.
    fn chat_step(
        &self,
        stage: StageId,
        key: &str,
        rel: &str,
        id: TemplateId,
        ctx: SlotMap,
        images: Vec<Image>,
    ) -> Result<String, StageError> {
        let files = self.step(stage, key, || Ok(vec![text(rel.to_string(), &self.ask(id, ctx, images)?)]))?;
        read_text(&files, rel)
    }

    /// Maps `f` over scene indices, `scene_parallelism` at a time, in order.
    fn per_scene<T: Send>(
        &self,
        n: usize,
        f: impl Fn(usize) -> Result<T, PipelineError> + Sync + Send,
    ) -> Result<Vec<T>, PipelineError> {
        let width = self.cfg.scene_parallelism.max(1);
        let mode = if width > 1 { self.exec } else { Exec::Sequential };
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + width).min(n);
            for r in mode.map_range(end - start, |k| f(start + k)) {
                out.push(r?);
            }
            start = end;
        }
        Ok(out)
    }

    pub fn refine_story(&self) -> Result<RefinedStory, StageError> {
        let stage = StageId::RefineStory;
        let narrative = &self.cfg.narrative;
        let rel = "story/refined.txt";
        let files = self.step(stage, "story/refine", || {
            let id = TemplateId::Refine;
            let ctx = slots([("Narrative", narrative.text.as_str())]);
            let mut messages = vec![Message::user(self.templates.render(id, &ctx)?)];
            let mut reply = self
                .p
                .chat
                .chat(&ChatRequest::new(ChatTask::Instruction(id), messages.clone(), ctx.clone()))?;
            if !REFINED_WORDS.contains(&word_count(&reply)) {
                messages.push(Message::assistant(reply));
                messages.push(Message::user(LENGTH_REMINDER));
                reply = self
                    .p
                    .chat
                    .chat(&ChatRequest::new(ChatTask::Instruction(id), messages, ctx))?;
                let words = word_count(&reply);
                if !REFINED_WORDS.contains(&words) {
                    return Err(StageError::RefinementFailed { words });
                }
            }
            Ok(vec![text(rel.into(), reply.trim())])
        })?;
        Ok(RefinedStory::new(read_text(&files, rel)?, narrative))
    }

    /// Extraction, scene writing, then up to `max_repair_iters` revisions
    /// until both the local validator and the chat review pass.
    pub fn generate_script(&self, story: &RefinedStory) -> Result<Script, StageError> {
        let stage = StageId::GenerateScript;
        let extract = self.chat_step(
            stage,
            "script/extract",
            "script/chat/extract.txt",
            TemplateId::ExtractProfiles,
            slots([("Story", story.text.as_str())]),
            vec![],
        )?;
        let profiles = parse_profiles(&extract)?;
        let profiles_doc = profile_document(&profiles);
        let scenes_reply = self.chat_step(
            stage,
            "script/scenes",
            "script/chat/scenes.txt",
            TemplateId::GenerateScenes,
            slots([("Profiles", profiles_doc.as_str())]),
            vec![],
        )?;
        let mut script = Script {
            characters: profiles.characters,
            settings: profiles.settings,
            scenes: scenes_only(&scenes_reply)?,
        };

        let budget = self.cfg.max_repair_iters;
        let mut rounds = 0;
        let mut verify_calls = 0;
        let mut accepted = false;
        let mut outstanding = String::new();
        for round in 0..=budget {
            let report = validate_script(&script);
            let issues = if report.is_empty() { "none".to_string() } else { report.summary() };
            let reply = self.chat_step(
                stage,
                &format!("script/verify_{round}"),
                &format!("script/chat/verify_{round}.txt"),
                TemplateId::Verify,
                slots([
                    ("Story", story.text.as_str()),
                    ("Script", script.to_document().as_str()),
                    ("Issues", issues.as_str()),
                ]),
                vec![],
            )?;
            verify_calls += 1;
            match parse_repair_verdict(&reply) {
                RepairVerdict::NoProblem if report.is_empty() => {
                    accepted = true;
                    break;
                }
                RepairVerdict::NoProblem => outstanding = report.summary(),
                RepairVerdict::NeedsRevision(revision) => {
                    outstanding = if report.is_empty() {
                        "the review still asks for a revision".into()
                    } else {
                        report.summary()
                    };
                    if round < budget {
                        if let Ok(revised) = parse_script(&revision) {
                            script = revised;
                            rounds += 1;
                        }
                    }
                }
            }
        }
        if !accepted {
            return Err(StageError::ScriptUnrepairable { rounds, outstanding });
        }
        if script.scenes.is_empty() {
            return Err(StageError::EmptyScript);
        }
        let record = ScriptRecord {
            report: validate_script(&script),
            repair_rounds: rounds,
            verify_calls,
        };
        let files = self.step(stage, "script/final", || {
            Ok(vec![
                text(SCRIPT_PATH.into(), &script.to_json()),
                json("script/validation.json".into(), &record),
            ])
        })?;
        Script::from_json(&read_text(&files, SCRIPT_PATH)?).map_err(|e| artifact_err(SCRIPT_PATH, e))
    }

    /// Generates a pool for `prompt` and has the judge pick one.
    fn judged_image(
        &self,
        stage: StageId,
        dir: &str,
        prompt: &str,
        refs: Vec<Image>,
        description: &str,
    ) -> Result<Image, StageError> {
        let n = self.cfg.pools.images;
        let key = format!("{dir}/candidates");
        let seed = self.seed(&key);
        let mut fresh = None;
        let files = self.step(stage, &key, || {
            let images = self.p.images.generate_images(&ImageRequest::new(prompt, refs, seed), n)?;
            check_count(n, images.len())?;
            let files = images
                .iter()
                .enumerate()
                .map(|(i, img)| (format!("{dir}/cand_{i}.png"), img.to_png()))
                .collect();
            fresh = Some(images);
            Ok(files)
        })?;
        let images = match fresh {
            Some(images) => images,
            None => decode_pngs(&files)?,
        };
        let pool = CandidatePool::new(
            images,
            Provenance {
                request_digest: sha256_hex(prompt.as_bytes()),
                seed,
            },
        )?;
        let rel = format!("{dir}/selected.json");
        let files = self.step(stage, &format!("{dir}/select"), || {
            let out = judge_select_image(&pool, description, self.p.chat.as_ref(), self.templates)?;
            let sel = Selection {
                index: out.index,
                judge_calls: out.calls,
                analysis: out.analysis,
                path: format!("{dir}/cand_{}.png", out.index),
            };
            Ok(vec![json(rel.clone(), &sel)])
        })?;
        let sel: Selection = read_json(&files, &rel)?;
        pool.items()
            .get(sel.index)
            .cloned()
            .ok_or_else(|| artifact_err(&rel, "selected index outside the pool"))
    }

    pub fn generate_assets(&self, script: &Script) -> Result<Assets, PipelineError> {
        let stage = StageId::GenerateAssets;
        let mut used = HashSet::new();
        let mut dir_for = |name: &str| {
            let base = format!("assets/{}", slug(name));
            let mut dir = base.clone();
            let mut k = 2;
            while !used.insert(dir.clone()) {
                dir = format!("{base}-{k}");
                k += 1;
            }
            dir
        };
        let mut assets = Assets::default();
        for c in &script.characters {
            let dir = dir_for(&c.name);
            let line = c.to_line();
            let img = self
                .judged_image(stage, &dir, &line, vec![], &line)
                .map_err(|e| e.in_stage(stage, format!("character {}", c.name)))?;
            assets.characters.insert(c.name.clone(), img);
        }
        for s in &script.settings {
            let dir = dir_for(&s.name);
            let line = s.to_line();
            let img = self
                .judged_image(stage, &dir, &line, vec![], &line)
                .map_err(|e| e.in_stage(stage, format!("setting {}", s.name)))?;
            assets.settings.insert(s.name.clone(), img);
        }
        Ok(assets)
    }

    fn scene_cast(
        &self,
        script: &Script,
        scene: &SceneSpec,
        assets: &Assets,
    ) -> Result<Vec<(CharacterProfile, Image)>, StageError> {
        scene
            .characters
            .iter()
            .map(|name| {
                let missing = || StageError::MissingProfile {
                    what: "character",
                    name: name.clone(),
                };
                let profile = script.character(name).ok_or_else(missing)?;
                let image = assets.characters.get(name).ok_or_else(missing)?;
                Ok((profile.clone(), image.clone()))
            })
            .collect()
    }

    fn scene_image(&self, script: &Script, scene: &SceneSpec, assets: &Assets) -> Result<Image, StageError> {
        let stage = StageId::GenerateSceneImages;
        let dir = format!("scenes/{}", scene.index);
        let cast = self.scene_cast(script, scene, assets)?;
        let missing = || StageError::MissingProfile {
            what: "setting",
            name: scene.setting.clone(),
        };
        let setting = script.setting(&scene.setting).ok_or_else(missing)?;
        let backdrop = assets.settings.get(&scene.setting).ok_or_else(missing)?;

        let lines = character_lines(&cast);
        let setting_line = setting.to_line();
        let prompt = self.chat_step(
            stage,
            &format!("{dir}/prompt"),
            &format!("{dir}/prompt.txt"),
            TemplateId::ImagePrompts,
            slots([
                ("Scene", scene.description.as_str()),
                ("Characters", lines.as_str()),
                ("Setting", setting_line.as_str()),
                ("RenameRule", self.cfg.rename_rule.as_str()),
            ]),
            vec![],
        )?;
        let mut refs: Vec<Image> = cast.iter().map(|(_, img)| img.clone()).collect();
        refs.push(backdrop.clone());
        let selected = self.judged_image(stage, &dir, prompt.trim(), refs, &scene.description)?;

        let key = format!("{dir}/repair");
        let final_rel = format!("{dir}/final.png");
        let mut fresh = None;
        let files = self.step(stage, &key, || {
            let inputs = RepairInputs {
                segmenter: self.p.segmenter.as_ref(),
                images: self.p.images.as_ref(),
                chat: self.p.chat.as_ref(),
                templates: self.templates,
                seed: self.seed(&key),
            };
            let outcome = consistency_repair(&selected, &cast, &inputs, self.cfg.max_repair_iters)?;
            let files = vec![
                json(format!("{dir}/repair/audit.json"), &outcome),
                (final_rel.clone(), outcome.final_item.to_png()),
            ];
            fresh = Some(outcome.final_item);
            Ok(files)
        })?;
        match fresh {
            Some(img) => Ok(img),
            None => Ok(Image::from_png(find(&files, &final_rel)?)?),
        }
    }

    pub fn generate_scene_images(&self, script: &Script, assets: &Assets) -> Result<Vec<Image>, PipelineError> {
        self.per_scene(script.scenes.len(), |i| {
            let scene = &script.scenes[i];
            self.scene_image(script, scene, assets)
                .map_err(|e| e.in_stage(StageId::GenerateSceneImages, format!("scene {}", scene.index)))
        })
    }

    fn predict_params(&self, dir: &str, animation: &str, scene: &SceneSpec) -> Result<GenerationParams, StageError> {
        let rel = format!("{dir}/params.json");
        let files = self.step(StageId::ProduceVideos, &format!("{dir}/params"), || {
            let id = TemplateId::ParamPredict;
            let ctx = slots([("AnimationPrompt", animation), ("SceneDescription", scene.description.as_str())]);
            let mut messages = vec![Message::user(self.templates.render(id, &ctx)?)];
            let ask = |m: &Vec<Message>| {
                self.p
                    .chat
                    .chat(&ChatRequest::new(ChatTask::Instruction(id), m.clone(), ctx.clone()))
            };
            let first = ask(&messages)?;
            let (reply, rejected, params) = match parse_params(&first) {
                Ok(p) => (first, None, p),
                Err(e) => {
                    messages.push(Message::assistant(first.clone()));
                    messages.push(Message::user(format!("{PARAMS_REMINDER} Problem: {e}.")));
                    let second = ask(&messages)?;
                    let p = parse_params(&second).map_err(StageError::ParamsRejected)?;
                    (second, Some(first), p)
                }
            };
            let record = ParamsRecord {
                reply,
                rejected_reply: rejected,
                params: params.to_wire_json(),
            };
            Ok(vec![json(rel.clone(), &record)])
        })?;
        let record: ParamsRecord = read_json(&files, &rel)?;
        GenerationParams::from_wire_json(&record.params).map_err(|e| artifact_err(&rel, e))
    }

    fn scene_clips(&self, script: &Script, scene: &SceneSpec, image: &Image) -> Result<Vec<FrameSequence>, StageError> {
        let stage = StageId::ProduceVideos;
        let dir = format!("videos/{}", scene.index);
        let lines: Vec<String> = scene
            .characters
            .iter()
            .filter_map(|n| script.character(n).map(CharacterProfile::to_line))
            .collect();
        let animation = self.chat_step(
            stage,
            &format!("{dir}/prompt"),
            &format!("{dir}/prompt.txt"),
            TemplateId::VideoPrompts,
            slots([
                ("SceneDescription", scene.description.as_str()),
                ("Character", lines.join("\n").as_str()),
            ]),
            vec![image.clone()],
        )?;
        let params = self.predict_params(&dir, &animation, scene)?;

        let n = self.cfg.pools.videos;
        let key = format!("{dir}/candidates");
        let mut fresh = None;
        let files = self.step(stage, &key, || {
            let size = self.cfg.frame_size;
            let request = VideoRequest {
                conditioning_image: image.resized(size, size),
                prompt: animation.trim().to_string(),
                params,
                seed: self.seed(&key),
                frame_count: self.cfg.frame_count,
                fps: self.cfg.fps,
            };
            let clips = self.p.video.generate_videos(&request, n)?;
            check_count(n, clips.len())?;
            let files = clips
                .iter()
                .enumerate()
                .flat_map(|(j, clip)| clip_files(&format!("{dir}/cand_{j}/frames"), clip))
                .collect();
            fresh = Some(clips);
            Ok(files)
        })?;
        match fresh {
            Some(clips) => Ok(clips),
            None => (0..n)
                .map(|j| decode_clip(&files, &format!("{dir}/cand_{j}/frames")))
                .collect(),
        }
    }

    pub fn produce_videos(&self, script: &Script, images: &[Image]) -> Result<Vec<Vec<FrameSequence>>, PipelineError> {
        self.per_scene(script.scenes.len(), |i| {
            let scene = &script.scenes[i];
            self.scene_clips(script, scene, &images[i])
                .map_err(|e| e.in_stage(StageId::ProduceVideos, format!("scene {}", scene.index)))
        })
    }

    /// Scores the pool, keeps the best `judge_top_k` and lets the judge
    /// pick from their contact sheets.
    fn pick_clip(&self, scene: &SceneSpec, pool: &[FrameSequence]) -> Result<(usize, MetricReport), StageError> {
        let stage = StageId::EnhanceAndSplice;
        let dir = format!("videos/{}", scene.index);
        let metrics_rel = format!("{dir}/metrics.json");
        let files = self.step(stage, &format!("{dir}/metrics"), || {
            let reports = self.evaluator.evaluate_pool(pool, Some(&scene.description))?;
            let composite: Vec<f64> = reports.iter().map(|r| r.composite(&self.cfg.weights)).collect();
            let record = MetricsRecord {
                ranked: rank_scores(&composite, composite.len()),
                reports,
                composite,
            };
            Ok(vec![json(metrics_rel.clone(), &record)])
        })?;
        let metrics: MetricsRecord = read_json(&files, &metrics_rel)?;
        if metrics.reports.len() != pool.len() {
            return Err(artifact_err(&metrics_rel, "report count differs from the pool size"));
        }
        let top: Vec<usize> = metrics.ranked.iter().copied().take(self.cfg.pools.judge_top_k).collect();

        let rel = format!("{dir}/selected.json");
        let files = self.step(stage, &format!("{dir}/select"), || {
            let sheets = top
                .iter()
                .map(|&j| contact_sheet(&pool[j], self.cfg.sheet_tiles))
                .collect::<Result<Vec<_>, _>>()?;
            let out = judge_select_video(&sheets, &scene.description, self.p.chat.as_ref(), self.templates)?;
            let index = top[out.index];
            let sel = ClipSelection {
                index,
                top: top.clone(),
                judge_choice: out.index,
                judge_calls: out.calls,
                analysis: out.analysis,
                sheet_frames: sheets[0].source_frame_indices.clone(),
                path: format!("{dir}/cand_{index}/frames"),
            };
            let mut files = vec![json(rel.clone(), &sel)];
            for (r, sheet) in sheets.iter().enumerate() {
                files.push((format!("{dir}/sheet_{r}.png"), sheet.image.to_png()));
            }
            Ok(files)
        })?;
        let sel: ClipSelection = read_json(&files, &rel)?;
        if !top.contains(&sel.index) {
            return Err(artifact_err(&rel, "selected clip is not among the judged candidates"));
        }
        Ok((sel.index, metrics.reports[sel.index].clone()))
    }

    pub fn enhance_and_splice(
        &self,
        script: &Script,
        pools: &[Vec<FrameSequence>],
    ) -> Result<(SpliceManifest, FinalReport), PipelineError> {
        let stage = StageId::EnhanceAndSplice;
        let picks = self.per_scene(script.scenes.len(), |i| {
            let scene = &script.scenes[i];
            self.pick_clip(scene, &pools[i])
                .map_err(|e| e.in_stage(stage, format!("scene {}", scene.index)))
        })?;
        let chosen: Vec<&FrameSequence> = picks.iter().zip(pools).map(|((j, _), pool)| &pool[*j]).collect();
        let selected: Vec<usize> = picks.iter().map(|(j, _)| *j).collect();

        let files = self
            .step(stage, "final/splice", || {
                let refs = script
                    .scenes
                    .iter()
                    .zip(&chosen)
                    .zip(&selected)
                    .map(|((scene, clip), &j)| ClipRef {
                        scene: scene.index,
                        candidate: j,
                        path: format!("videos/{}/cand_{j}/frames", scene.index),
                        frames: clip.len(),
                        digest: clip.content_hash(),
                    })
                    .collect();
                let whole = FrameSequence::concat(&chosen.iter().map(|c| (*c).clone()).collect::<Vec<_>>())?;
                let manifest = SpliceManifest::new(refs, whole.fps());
                let mut files = clip_files(splice::FINAL_FRAMES_DIR, &whole);
                files.push(json(MANIFEST_PATH.into(), &manifest));
                Ok(files)
            })
            .map_err(|e| e.in_stage(stage, "splice"))?;
        let manifest: SpliceManifest = read_json(&files, MANIFEST_PATH).map_err(|e| e.in_stage(stage, "splice"))?;

        let reports: Vec<MetricReport> = picks.into_iter().map(|(_, r)| r).collect();
        let files = self
            .step(stage, "final/report", || {
                let report = assemble_report(&script.scenes, &selected, reports, &chosen, &self.evaluator)?;
                Ok(vec![json(REPORT_PATH.into(), &report)])
            })
            .map_err(|e| e.in_stage(stage, "report"))?;
        let report: FinalReport = read_json(&files, REPORT_PATH).map_err(|e| e.in_stage(stage, "report"))?;
        Ok((manifest, report))
    }
}

/// Re-scores the selected clip of every scene of a finished run, plus the
/// cross-boundary background consistency of same-setting neighbours.
pub fn evaluate_workspace(root: &Path, evaluator: &Evaluator) -> Result<FinalReport, PipelineError> {
    let (ws, _) = Workspace::open(root)?;
    if ws.checkpoint().status(StageId::EnhanceAndSplice) != StageStatus::Done {
        return Err(PipelineError::Incomplete(root.to_path_buf()));
    }
    let eval_err = |e: StageError| e.in_stage(StageId::EnhanceAndSplice, "evaluation");
    let corrupt = |path: &str, e: serde_json::Error| PipelineError::CorruptWorkspace {
        path: path.into(),
        reason: e.to_string(),
    };
    let script = Script::from_json(&String::from_utf8_lossy(&ws.read(SCRIPT_PATH)?)).map_err(|e| corrupt(SCRIPT_PATH, e))?;
    let mut clips = Vec::new();
    let mut selected = Vec::new();
    let mut reports = Vec::new();
    for scene in &script.scenes {
        let rel = format!("videos/{}/selected.json", scene.index);
        let sel: ClipSelection = serde_json::from_slice(&ws.read(&rel)?).map_err(|e| corrupt(&rel, e))?;
        let clip = FrameSequence::read_dir(&root.join(&sel.path)).map_err(|e| eval_err(e.into()))?;
        reports.push(
            evaluator
                .evaluate_clip(&clip, Some(&scene.description))
                .map_err(|e| eval_err(e.into()))?,
        );
        selected.push(sel.index);
        clips.push(clip);
    }
    let refs: Vec<&FrameSequence> = clips.iter().collect();
    assemble_report(&script.scenes, &selected, reports, &refs, evaluator).map_err(eval_err)
}
