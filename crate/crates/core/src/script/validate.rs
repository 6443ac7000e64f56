use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{normalize_name, Script};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    UnknownCharacter,
    UnknownSetting,
    /// Reference differs from a profile name only by letter case.
    TerminologyMismatch,
    /// Never produced by [`validate_script`]; reserved for chat-model review.
    MissingCharacter,
    DuplicateProfile,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// `None` for script-level problems such as duplicate profiles.
    pub scene_index: Option<usize>,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    /// One line per violation, for feeding back into a chat prompt.
    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| match v.scene_index {
                Some(i) => format!("scene {}: {:?}: {}", i + 1, v.kind, v.detail),
                None => format!("{:?}: {}", v.kind, v.detail),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

struct NameIndex {
    exact: HashMap<String, usize>,
    folded: HashMap<String, String>,
}

impl NameIndex {
    fn build<'a>(
        names: impl Iterator<Item = &'a str>,
        what: &str,
        out: &mut Vec<Violation>,
    ) -> Self {
        let mut exact = HashMap::new();
        let mut folded = HashMap::new();
        for name in names {
            let name = normalize_name(name);
            let count = exact.entry(name.clone()).or_insert(0);
            *count += 1;
            if *count == 2 {
                out.push(Violation {
                    scene_index: None,
                    kind: ViolationKind::DuplicateProfile,
                    detail: format!("{what} `{name}` is defined more than once"),
                });
            }
            folded.entry(name.to_lowercase()).or_insert(name);
        }
        Self { exact, folded }
    }

    /// `None` when the reference resolves to exactly one profile.
    fn classify(&self, reference: &str, unknown: ViolationKind) -> Option<(ViolationKind, String)> {
        let reference = normalize_name(reference);
        if self.exact.contains_key(&reference) {
            return None;
        }
        match self.folded.get(&reference.to_lowercase()) {
            Some(canonical) => Some((
                ViolationKind::TerminologyMismatch,
                format!("`{reference}` should be written `{canonical}`"),
            )),
            None => Some((unknown, format!("`{reference}` is not a listed profile"))),
        }
    }
}

/// Checks every scene reference against the profile lists.
pub fn validate_script(script: &Script) -> ValidationReport {
    let mut violations = Vec::new();
    let characters = NameIndex::build(
        script.characters.iter().map(|c| c.name.as_str()),
        "character",
        &mut violations,
    );
    let settings = NameIndex::build(
        script.settings.iter().map(|s| s.name.as_str()),
        "setting",
        &mut violations,
    );

    for (position, scene) in script.scenes.iter().enumerate() {
        for name in &scene.characters {
            if let Some((kind, detail)) = characters.classify(name, ViolationKind::UnknownCharacter) {
                violations.push(Violation {
                    scene_index: Some(position),
                    kind,
                    detail,
                });
            }
        }
        if let Some((kind, detail)) = settings.classify(&scene.setting, ViolationKind::UnknownSetting) {
            violations.push(Violation {
                scene_index: Some(position),
                kind,
                detail,
            });
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::parse_script;

    fn script() -> Script {
        parse_script(
            "## Characters\nTom the cat: cat\nMax the dog: dog\n## Settings\nGarden (Outdoor): lawn\n\
             ## Scenes\n[Tom the cat, Max the dog][Garden]: play\n[Max the dog][Beach]: swim\n",
        )
        .unwrap()
    }

    #[test]
    fn unknown_setting_reported_at_scene() {
        let r = validate_script(&script());
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::UnknownSetting);
        assert_eq!(r.violations[0].scene_index, Some(1));
    }

    #[test]
    fn consistent_script_is_clean() {
        let mut s = script();
        s.scenes[1].setting = "Garden".into();
        assert!(validate_script(&s).is_empty());
    }

    #[test]
    fn case_only_difference_is_terminology_mismatch() {
        let mut s = script();
        s.scenes[1].setting = "Garden".into();
        s.scenes[0].characters[0] = "tom the Cat".into();
        let r = validate_script(&s);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::TerminologyMismatch);
        assert_eq!(r.violations[0].scene_index, Some(0));
    }

    #[test]
    fn duplicate_profiles_flagged_once() {
        let mut s = script();
        s.scenes[1].setting = "Garden".into();
        s.characters.push(s.characters[0].clone());
        s.characters.push(s.characters[0].clone());
        let r = validate_script(&s);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::DuplicateProfile);
        assert!(r.summary().contains("Tom the cat"));
    }
}
