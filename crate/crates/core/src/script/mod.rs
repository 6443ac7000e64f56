//! Narratives and director's scripts.
//!
//! A script is three lists: character profiles, setting profiles and an
//! ordered run of scenes. Scenes reference profiles by name using the
//! one-line grammar
//!
//! ```text
//! [Tom the cat, Max the dog][Garden]: Tom chases Max around the oak tree.
//! ```
//!
//! Parsing never checks cross references; [`validate_script`] does that and
//! reports problems as data so a repair loop can act on them.

mod document;
mod grammar;
mod validate;

pub use document::{parse_script, ScriptDocumentError};
pub use grammar::{parse_scene_line, serialize_scene_line, SceneLineError};
pub use validate::{validate_script, ValidationReport, Violation, ViolationKind};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NarrativeError {
    #[error("narrative text is empty")]
    Empty,
}

/// User-supplied story or topic sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Narrative {
    pub id: String,
    pub text: String,
}

impl Narrative {
    /// Builds a narrative whose id is derived from its text.
    pub fn new(text: impl Into<String>) -> Result<Self, NarrativeError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(NarrativeError::Empty);
        }
        let digest = Sha256::digest(text.as_bytes());
        let id = format!("narr-{}", &hex::encode(digest)[..12]);
        Ok(Self { id, text })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedStory {
    pub text: String,
    pub word_count: usize,
    /// Id of the narrative this story was refined from.
    pub source: String,
}

impl RefinedStory {
    pub fn new(text: impl Into<String>, source: &Narrative) -> Self {
        let text = text.into();
        Self {
            word_count: word_count(&text),
            text,
            source: source.id.clone(),
        }
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub name: String,
    pub description: String,
}

impl CharacterProfile {
    /// The profile as one `Name: description` line.
    pub fn to_line(&self) -> String {
        format!("{}: {}", self.name, self.description)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Indoor,
    Outdoor,
}

impl Placement {
    pub fn label(self) -> &'static str {
        match self {
            Placement::Indoor => "Indoor",
            Placement::Outdoor => "Outdoor",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingProfile {
    pub name: String,
    pub placement: Placement,
    pub description: String,
}

impl SettingProfile {
    /// The profile as one `Name (Indoor): description` line.
    pub fn to_line(&self) -> String {
        format!(
            "{} ({}): {}",
            self.name,
            self.placement.label(),
            self.description
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub index: usize,
    pub characters: Vec<String>,
    pub setting: String,
    pub description: String,
}

/// A director's script. Values may be held unvalidated; see
/// [`validate_script`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub characters: Vec<CharacterProfile>,
    pub settings: Vec<SettingProfile>,
    pub scenes: Vec<SceneSpec>,
}

impl Script {
    pub fn character(&self, name: &str) -> Option<&CharacterProfile> {
        self.characters.iter().find(|c| c.name == name)
    }

    pub fn setting(&self, name: &str) -> Option<&SettingProfile> {
        self.settings.iter().find(|s| s.name == name)
    }

    /// Renders the script in the sectioned text format accepted by
    /// [`parse_script`].
    pub fn to_document(&self) -> String {
        let mut out = String::from("## Characters\n");
        for c in &self.characters {
            out.push_str(&c.to_line());
            out.push('\n');
        }
        out.push_str("\n## Settings\n");
        for s in &self.settings {
            out.push_str(&s.to_line());
            out.push('\n');
        }
        out.push_str("\n## Scenes\n");
        for scene in &self.scenes {
            out.push_str(&serialize_scene_line(scene));
            out.push('\n');
        }
        out
    }

    /// Canonical JSON form, used as the checkpoint format.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Trims and NFC-normalizes a name so comparisons are exact and stable.
pub fn normalize_name(raw: &str) -> String {
    raw.trim().nfc().collect()
}
