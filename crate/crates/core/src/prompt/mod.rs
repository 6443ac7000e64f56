//! Instruction templates and parsers for structured chat replies.
//!
//! Templates are plain text with `{Name}` slots. A slot name starts with an
//! ASCII letter and continues with letters, digits, `_` or `#`; any other
//! brace (JSON examples inside a template, for instance) is literal text.

mod params;
mod reply;

pub use params::{parse_params, Camera, GenerationParams, Pan, ParamsError, Rotate, Tilt, Zoom};
pub use reply::{
    parse_judge_verdict, parse_repair_verdict, JudgeVerdict, RepairVerdict, VerdictError,
    NO_PROBLEM_SENTINEL,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bumped whenever a shipped template body changes.
pub const TEMPLATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("slot `{0}` has no value")]
    MissingSlot(String),
    #[error("slot `{0}` is not used by this template")]
    UnknownSlot(String),
    #[error("slot `{0}` has an empty value")]
    EmptySlotValue(String),
    #[error("template {id} uses undeclared slot `{slot}`")]
    UndeclaredSlot { id: TemplateId, slot: String },
    #[error("cannot read template override {path}: {reason}")]
    Override { path: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Refine,
    ExtractProfiles,
    GenerateScenes,
    Verify,
    ImagePrompts,
    ImageJudge,
    ConsistencyCheck,
    VideoPrompts,
    ParamPredict,
    VideoJudge,
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::Refine,
        TemplateId::ExtractProfiles,
        TemplateId::GenerateScenes,
        TemplateId::Verify,
        TemplateId::ImagePrompts,
        TemplateId::ImageJudge,
        TemplateId::ConsistencyCheck,
        TemplateId::VideoPrompts,
        TemplateId::ParamPredict,
        TemplateId::VideoJudge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::Refine => "refine",
            TemplateId::ExtractProfiles => "extract_profiles",
            TemplateId::GenerateScenes => "generate_scenes",
            TemplateId::Verify => "verify",
            TemplateId::ImagePrompts => "image_prompts",
            TemplateId::ImageJudge => "image_judge",
            TemplateId::ConsistencyCheck => "consistency_check",
            TemplateId::VideoPrompts => "video_prompts",
            TemplateId::ParamPredict => "param_predict",
            TemplateId::VideoJudge => "video_judge",
        }
    }

    pub fn declared_slots(self) -> &'static [&'static str] {
        match self {
            TemplateId::Refine => &["Narrative"],
            TemplateId::ExtractProfiles => &["Story"],
            TemplateId::GenerateScenes => &["Profiles"],
            TemplateId::Verify => &["Story", "Script", "Issues"],
            TemplateId::ImagePrompts => &["Scene", "Characters", "Setting", "RenameRule"],
            TemplateId::ImageJudge => &["description", "count"],
            TemplateId::ConsistencyCheck => &["Characters", "count"],
            TemplateId::VideoPrompts => &["SceneDescription", "Character"],
            TemplateId::ParamPredict => &["AnimationPrompt", "SceneDescription"],
            TemplateId::VideoJudge => &["description", "count"],
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateId::Refine => include_str!("../../templates/refine.txt"),
            TemplateId::ExtractProfiles => include_str!("../../templates/extract_profiles.txt"),
            TemplateId::GenerateScenes => include_str!("../../templates/generate_scenes.txt"),
            TemplateId::Verify => include_str!("../../templates/verify.txt"),
            TemplateId::ImagePrompts => include_str!("../../templates/image_prompts.txt"),
            TemplateId::ImageJudge => include_str!("../../templates/image_judge.txt"),
            TemplateId::ConsistencyCheck => include_str!("../../templates/consistency_check.txt"),
            TemplateId::VideoPrompts => include_str!("../../templates/video_prompts.txt"),
            TemplateId::ParamPredict => include_str!("../../templates/param_predict.txt"),
            TemplateId::VideoJudge => include_str!("../../templates/video_judge.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| format!("unknown template id `{s}`"))
    }
}

/// Slot name → value.
pub type SlotMap = BTreeMap<String, String>;

/// Convenience constructor for a [`SlotMap`].
pub fn slots<const N: usize>(pairs: [(&str, &str); N]) -> SlotMap {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

enum Piece {
    Text(std::ops::Range<usize>),
    Slot(String),
}

fn scan(body: &str) -> Vec<Piece> {
    let bytes = body.as_bytes();
    let mut pieces = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_alphabetic() {
            let name_len = bytes[i + 1..]
                .iter()
                .take_while(|b| b.is_ascii_alphanumeric() || **b == b'_' || **b == b'#')
                .count();
            let close = i + 1 + name_len;
            if close < bytes.len() && bytes[close] == b'}' {
                if text_start < i {
                    pieces.push(Piece::Text(text_start..i));
                }
                pieces.push(Piece::Slot(body[i + 1..close].to_string()));
                i = close + 1;
                text_start = i;
                continue;
            }
        }
        i += 1;
    }
    if text_start < bytes.len() {
        pieces.push(Piece::Text(text_start..bytes.len()));
    }
    pieces
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    id: TemplateId,
    body: String,
    slots: BTreeSet<String>,
}

impl PromptTemplate {
    /// Fails when the body uses a slot the template id does not declare.
    pub fn new(id: TemplateId, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let declared = id.declared_slots();
        let mut slots = BTreeSet::new();
        for piece in scan(&body) {
            if let Piece::Slot(name) = piece {
                if !declared.contains(&name.as_str()) {
                    return Err(PromptError::UndeclaredSlot { id, slot: name });
                }
                slots.insert(name);
            }
        }
        Ok(Self { id, body, slots })
    }

    pub fn builtin(id: TemplateId) -> Self {
        Self::new(id, id.builtin_body().trim_end()).expect("shipped templates are well formed")
    }

    pub fn id(&self) -> TemplateId {
        self.id
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Slots that occur in the body.
    pub fn slots(&self) -> &BTreeSet<String> {
        &self.slots
    }

    /// Substitutes every slot with its value verbatim. Values are not
    /// rescanned, so a value containing `{X}` is emitted as is.
    pub fn render(&self, values: &SlotMap) -> Result<String, PromptError> {
        for (name, value) in values {
            if !self.slots.contains(name) {
                return Err(PromptError::UnknownSlot(name.clone()));
            }
            if value.is_empty() {
                return Err(PromptError::EmptySlotValue(name.clone()));
            }
        }
        let mut out = String::with_capacity(self.body.len());
        for piece in scan(&self.body) {
            match piece {
                Piece::Text(r) => out.push_str(&self.body[r]),
                Piece::Slot(name) => match values.get(&name) {
                    Some(v) => out.push_str(v),
                    None => return Err(PromptError::MissingSlot(name)),
                },
            }
        }
        Ok(out)
    }
}

/// The full set of instruction templates, built-in or overridden from disk.
#[derive(Clone, Debug)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            templates: TemplateId::ALL
                .into_iter()
                .map(|id| (id, PromptTemplate::builtin(id)))
                .collect(),
        }
    }

    /// Replaces every template for which `<dir>/<id>.txt` exists.
    pub fn with_overrides(mut self, dir: &Path) -> Result<Self, PromptError> {
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.name()));
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Override {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            self.templates
                .insert(id, PromptTemplate::new(id, body.trim_end())?);
        }
        Ok(self)
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render(&self, id: TemplateId, values: &SlotMap) -> Result<String, PromptError> {
        self.get(id).render(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn builtin_templates_use_exactly_their_declared_slots() {
        for id in TemplateId::ALL {
            let t = PromptTemplate::builtin(id);
            let declared: BTreeSet<String> =
                id.declared_slots().iter().map(|s| s.to_string()).collect();
            assert_eq!(t.slots(), &declared, "{id}");
            assert_eq!(id.name().parse::<TemplateId>(), Ok(id));
        }
    }

    #[test]
    fn refine_contains_narrative_verbatim() {
        let narrative = "A cat and a dog are playing in the garden.";
        let out = TemplateSet::builtin()
            .render(TemplateId::Refine, &slots([("Narrative", narrative)]))
            .unwrap();
        assert!(out.contains(narrative));
        assert!(out.contains("approximately 150 words"));
    }

    #[test]
    fn missing_and_unknown_slots() {
        let t = PromptTemplate::builtin(TemplateId::Refine);
        assert_eq!(
            t.render(&SlotMap::new()),
            Err(PromptError::MissingSlot("Narrative".into()))
        );
        assert_eq!(
            t.render(&slots([("Narrative", "x"), ("Story", "y")])),
            Err(PromptError::UnknownSlot("Story".into()))
        );
        assert_eq!(
            t.render(&slots([("Narrative", "")])),
            Err(PromptError::EmptySlotValue("Narrative".into()))
        );
    }

    #[test]
    fn json_braces_are_not_slots() {
        let t = PromptTemplate::builtin(TemplateId::ParamPredict);
        let out = t
            .render(&slots([("AnimationPrompt", "a"), ("SceneDescription", "b")]))
            .unwrap();
        assert!(out.contains("\"guidanceScale\""));
        assert!(out.contains("{\n  \"description\""));
    }

    #[test]
    fn undeclared_slot_in_override_rejected() {
        assert_eq!(
            PromptTemplate::new(TemplateId::Refine, "{Narrative} {Oops}"),
            Err(PromptError::UndeclaredSlot {
                id: TemplateId::Refine,
                slot: "Oops".into()
            })
        );
    }

    #[test]
    fn overrides_load_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("refine.txt"), "Polish: {Narrative}\n").unwrap();
        let set = TemplateSet::builtin().with_overrides(dir.path()).unwrap();
        assert_eq!(
            set.render(TemplateId::Refine, &slots([("Narrative", "hi")])).unwrap(),
            "Polish: hi"
        );
        assert_eq!(set.get(TemplateId::Verify), &PromptTemplate::builtin(TemplateId::Verify));
    }

    proptest! {
        #[test]
        fn render_length_accounts_for_every_slot(
            story in "[^\\n]{1,40}", script in "\\PC{1,80}", issues in "[{}a-z ]{1,20}"
        ) {
            let t = PromptTemplate::builtin(TemplateId::Verify);
            let values = slots([("Story", &story), ("Script", &script), ("Issues", &issues)]);
            let out = t.render(&values).unwrap();
            let mut expected = t.body().len() as i64;
            for piece in scan(t.body()) {
                if let Piece::Slot(name) = piece {
                    expected += values[&name].len() as i64 - (name.len() as i64 + 2);
                }
            }
            prop_assert_eq!(out.len() as i64, expected);
            for v in values.values() {
                prop_assert!(out.contains(v.as_str()));
            }
            prop_assert_eq!(out, t.render(&values).unwrap());
        }
    }
}
