use thiserror::Error;

use super::grammar::{parse_scene_line, SceneLineError};
use super::{normalize_name, CharacterProfile, Placement, Script, SettingProfile};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ScriptDocumentError {
    #[error("script document has no `## {0}` section")]
    MissingSection(&'static str),
    #[error("line {line}: malformed profile line: {reason}")]
    MalformedProfileLine { line: usize, reason: String },
    #[error("scene {index}: {source}")]
    Scene {
        index: usize,
        #[source]
        source: SceneLineError,
    },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Preamble,
    Characters,
    Settings,
    Scenes,
    Other,
}

fn section_header(line: &str) -> Option<Section> {
    let rest = line.trim().strip_prefix("##")?;
    let title = rest.trim().trim_end_matches(':').trim().to_ascii_lowercase();
    Some(match title.as_str() {
        "characters" => Section::Characters,
        "settings" => Section::Settings,
        "scenes" => Section::Scenes,
        _ => Section::Other,
    })
}

/// Drops list markers such as `- `, `* ` or `3. ` that chat models like to add.
fn strip_list_marker(line: &str) -> &str {
    let t = line.trim();
    if let Some(rest) = t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")) {
        return rest.trim_start();
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r.trim_start();
        }
    }
    t
}

fn parse_character(line: &str, line_no: usize) -> Result<CharacterProfile, ScriptDocumentError> {
    let malformed = |reason: &str| ScriptDocumentError::MalformedProfileLine {
        line: line_no,
        reason: reason.into(),
    };
    let (name, description) = line
        .split_once(':')
        .ok_or_else(|| malformed("expected `Name: description`"))?;
    let name = normalize_name(name);
    if name.is_empty() {
        return Err(malformed("empty character name"));
    }
    Ok(CharacterProfile {
        name,
        description: description.trim().to_string(),
    })
}

fn parse_setting(line: &str, line_no: usize) -> Result<SettingProfile, ScriptDocumentError> {
    let malformed = |reason: &str| ScriptDocumentError::MalformedProfileLine {
        line: line_no,
        reason: reason.into(),
    };
    let (head, description) = line
        .split_once(':')
        .ok_or_else(|| malformed("expected `Name (Indoor/Outdoor): description`"))?;
    let head = head.trim();
    let open = head
        .rfind('(')
        .filter(|_| head.ends_with(')'))
        .ok_or_else(|| malformed("missing (Indoor) or (Outdoor) marker"))?;
    let placement = match head[open + 1..head.len() - 1].trim().to_ascii_lowercase().as_str() {
        "indoor" => Placement::Indoor,
        "outdoor" => Placement::Outdoor,
        other => return Err(malformed(&format!("unknown placement `{other}`"))),
    };
    let name = normalize_name(&head[..open]);
    if name.is_empty() {
        return Err(malformed("empty setting name"));
    }
    Ok(SettingProfile {
        name,
        placement,
        description: description.trim().to_string(),
    })
}

/// Parses a sectioned script document. Text before the first section
/// header is ignored, as are unknown sections. Cross references are not
/// checked here.
pub fn parse_script(text: &str) -> Result<Script, ScriptDocumentError> {
    let mut script = Script::default();
    let mut seen = [false; 3];
    let mut section = Section::Preamble;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if let Some(next) = section_header(raw) {
            section = next;
            match next {
                Section::Characters => seen[0] = true,
                Section::Settings => seen[1] = true,
                Section::Scenes => seen[2] = true,
                _ => {}
            }
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        match section {
            Section::Preamble | Section::Other => {}
            Section::Characters => script
                .characters
                .push(parse_character(strip_list_marker(raw), line_no)?),
            Section::Settings => script
                .settings
                .push(parse_setting(strip_list_marker(raw), line_no)?),
            Section::Scenes => {
                let index = script.scenes.len();
                let mut scene = parse_scene_line(strip_list_marker(raw))
                    .map_err(|source| ScriptDocumentError::Scene { index, source })?;
                scene.index = index;
                script.scenes.push(scene);
            }
        }
    }

    for (present, name) in seen.iter().zip(["Characters", "Settings", "Scenes"]) {
        if !present {
            return Err(ScriptDocumentError::MissingSection(name));
        }
    }
    Ok(script)
}
