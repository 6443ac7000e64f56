use thiserror::Error;

use super::{normalize_name, SceneSpec};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SceneLineError {
    #[error("malformed scene line: {0}")]
    MalformedSceneLine(String),
    #[error("empty {0} in scene line")]
    EmptyField(&'static str),
    #[error("character `{0}` listed twice in one scene")]
    DuplicateCharacter(String),
}

/// Returns the content of the bracket group opening at `open` and the byte
/// offset just past its closing bracket. Nested groups are kept verbatim.
fn bracket_group(line: &str, open: usize) -> Result<(&str, usize), SceneLineError> {
    let mut depth = 0usize;
    for (i, ch) in line[open..].char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    let end = open + i;
                    return Ok((&line[open + 1..end], end + 1));
                }
            }
            _ => {}
        }
    }
    Err(SceneLineError::MalformedSceneLine(
        "unbalanced brackets".into(),
    ))
}

fn skip_ws(line: &str, at: usize) -> usize {
    at + (line[at..].len() - line[at..].trim_start().len())
}

/// Parses `[A, B][Setting]: description`. The returned scene has index 0;
/// callers that know the position set it.
pub fn parse_scene_line(line: &str) -> Result<SceneSpec, SceneLineError> {
    if line.contains('\n') {
        return Err(SceneLineError::MalformedSceneLine(
            "scene line spans several lines".into(),
        ));
    }
    let start = skip_ws(line, 0);
    if !line[start..].starts_with('[') {
        return Err(SceneLineError::MalformedSceneLine(
            "expected `[` opening the character group".into(),
        ));
    }
    let (cast, after_cast) = bracket_group(line, start)?;
    let next = skip_ws(line, after_cast);
    if !line[next..].starts_with('[') {
        return Err(SceneLineError::MalformedSceneLine(
            "expected a second bracket group naming the setting".into(),
        ));
    }
    let (setting, after_setting) = bracket_group(line, next)?;
    let colon = skip_ws(line, after_setting);
    if !line[colon..].starts_with(':') {
        return Err(SceneLineError::MalformedSceneLine(
            "expected `:` after the setting group".into(),
        ));
    }
    let description = line[colon + 1..].trim();

    if cast.trim().is_empty() {
        return Err(SceneLineError::EmptyField("character list"));
    }
    let mut characters: Vec<String> = Vec::new();
    for raw in cast.split(',') {
        let name = normalize_name(raw);
        if name.is_empty() {
            return Err(SceneLineError::EmptyField("character name"));
        }
        if characters.contains(&name) {
            return Err(SceneLineError::DuplicateCharacter(name));
        }
        characters.push(name);
    }
    let setting = normalize_name(setting);
    if setting.is_empty() {
        return Err(SceneLineError::EmptyField("setting"));
    }
    if description.is_empty() {
        return Err(SceneLineError::EmptyField("description"));
    }
    Ok(SceneSpec {
        index: 0,
        characters,
        setting,
        description: description.to_string(),
    })
}

pub fn serialize_scene_line(scene: &SceneSpec) -> String {
    format!(
        "[{}][{}]: {}",
        scene.characters.join(", "),
        scene.setting,
        scene.description
    )
}
