use std::collections::HashSet;

use regex::Regex;
use sha2::{Digest, Sha256};

use super::{hash64, MockSegmenter};
use crate::color::{dominant_hue, hue_distance};
use crate::prompt::{Camera, GenerationParams, Pan, SlotMap, TemplateId};
use crate::providers::{ChatProvider, ChatRequest, ChatTask, Image, ProviderError, Segmenter};
use crate::script::{
    normalize_name, parse_script, serialize_scene_line, validate_script, word_count,
    CharacterProfile, Placement, SceneSpec, Script, SettingProfile,
};

const NOUNS: &[&str] = &[
    "cat", "dog", "fox", "rabbit", "bird", "bear", "mouse", "owl", "duck", "frog", "horse", "girl",
    "boy", "dragon", "robot", "lion", "tiger", "turtle",
];
const FIRST_NAMES: &[&str] = &[
    "Tom", "Max", "Lily", "Bella", "Oscar", "Luna", "Milo", "Daisy", "Leo", "Ruby",
];
const SETTINGS: &[(&str, Placement, &str)] = &[
    ("garden", Placement::Outdoor, "a sunlit lawn with flower beds and an old oak tree"),
    ("park", Placement::Outdoor, "wide green grass, winding paths and wooden benches"),
    ("forest", Placement::Outdoor, "tall pines, mossy stones and soft dappled light"),
    ("beach", Placement::Outdoor, "pale sand, gentle waves and scattered shells"),
    ("meadow", Placement::Outdoor, "rolling grass dotted with wildflowers under a blue sky"),
    ("river", Placement::Outdoor, "a slow clear stream lined with reeds and smooth pebbles"),
    ("kitchen", Placement::Indoor, "a warm tiled room with copper pots and a big wooden table"),
    ("house", Placement::Indoor, "a cosy living room with a rug, an armchair and a fireplace"),
    ("bedroom", Placement::Indoor, "a small room with a patchwork quilt and a round window"),
    ("school", Placement::Indoor, "a bright classroom with rows of desks and a chalkboard"),
    ("library", Placement::Indoor, "tall shelves of books, reading lamps and a quiet corner"),
];
const TRAITS: &[&str] = &["curious", "playful", "gentle", "brave", "mischievous", "cheerful"];
const LOOKS: &[&str] = &["small", "fluffy", "sleek", "round-eyed", "spotted", "scruffy"];
const FILLER: &[&str] = &[
    "{A} looks around the {s} with bright, curious eyes.",
    "\"Come and play!\" {B} calls out, bouncing with excitement.",
    "{A} hesitates for a moment, then laughs and runs after {B}.",
    "The friends race past the flowers, their shadows stretching across the {s}.",
    "Suddenly a gust of wind scatters the leaves, and {B} freezes in surprise.",
    "{A} notices a small nest that has fallen from a low branch.",
    "Together they lift it back to safety, working carefully side by side.",
    "\"We make a good team,\" {A} says softly, and {B} agrees with a grin.",
    "As the sun sets over the {s}, {A} and {B} rest together, tired but happy.",
    "It is a day neither of them will ever forget.",
];
const SHORT_STORY: &str = "They played together in the garden until the sun went down.";
pub const CONSISTENT_REPLY: &str = "All characters are consistent.";

/// Failure modes and sizes the mock chat can be told to exhibit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MockChatKnobs {
    /// Story refinement replies are far too short for the first N attempts.
    pub short_refinements: usize,
    /// Scene generation references a setting that has no profile.
    pub unknown_setting: bool,
    /// Verification always asks for a revision, even for clean scripts.
    pub always_revise: bool,
    /// Judge replies lack a verdict for the first N attempts.
    pub garbage_judgements: usize,
    /// The consistency check reports every character as inconsistent.
    pub always_inconsistent: bool,
    /// Parameter replies carry an out-of-range motion for the first N attempts.
    pub invalid_params: usize,
    /// Scenes written by scene generation.
    pub scene_count: usize,
}

impl Default for MockChatKnobs {
    fn default() -> Self {
        Self {
            short_refinements: 0,
            unknown_setting: false,
            always_revise: false,
            garbage_judgements: 0,
            always_inconsistent: false,
            invalid_params: 0,
            scene_count: 3,
        }
    }
}

/// Stateless persona-based chat model. The persona is picked from the
/// request's task; its inputs come from the request's slot context and
/// attachments, and the attempt number is the count of user turns.
#[derive(Clone, Debug, Default)]
pub struct MockChat {
    pub knobs: MockChatKnobs,
    segmenter: MockSegmenter,
}

fn slot<'a>(ctx: &'a SlotMap, name: &str) -> &'a str {
    ctx.get(name).map(String::as_str).unwrap_or("")
}

fn word_regex() -> Regex {
    Regex::new(r"[A-Za-z][A-Za-z'-]*").expect("word regex")
}

fn capitalized(w: &str) -> bool {
    w.chars().next().is_some_and(char::is_uppercase)
}

/// Characters mentioned in `text`, in order of first mention: explicit
/// `Name the noun` phrases, bare `a noun` mentions (given a derived name),
/// and lone known first names.
pub(crate) fn extract_cast(text: &str) -> Vec<(String, Option<String>)> {
    let words: Vec<&str> = word_regex().find_iter(text).map(|m| m.as_str()).collect();
    let mut cast: Vec<(String, Option<String>)> = Vec::new();
    let mut nouns: HashSet<String> = HashSet::new();
    let noun_at = |i: usize| {
        words
            .get(i)
            .map(|w| w.to_lowercase())
            .filter(|w| NOUNS.contains(&w.as_str()))
    };
    let mut i = 0;
    while i < words.len() {
        let w = words[i];
        if capitalized(w) && words.get(i + 1).is_some_and(|t| t.eq_ignore_ascii_case("the")) {
            if let Some(noun) = noun_at(i + 2) {
                let name = format!("{w} the {noun}");
                if !cast.iter().any(|(n, _)| *n == name) {
                    cast.push((name, Some(noun.clone())));
                }
                nouns.insert(noun);
                i += 3;
                continue;
            }
        }
        if ["a", "an", "the"].contains(&w.to_lowercase().as_str()) {
            if let Some(noun) = noun_at(i + 1) {
                if nouns.insert(noun.clone()) {
                    let start = (hash64(&[noun.as_bytes()]) % FIRST_NAMES.len() as u64) as usize;
                    let first = (0..FIRST_NAMES.len())
                        .map(|k| FIRST_NAMES[(start + k) % FIRST_NAMES.len()])
                        .find(|f| !cast.iter().any(|(n, _)| n.starts_with(&format!("{f} "))))
                        .unwrap_or(FIRST_NAMES[start]);
                    cast.push((format!("{first} the {noun}"), Some(noun)));
                }
                i += 2;
                continue;
            }
        }
        if FIRST_NAMES.contains(&w)
            && !cast
                .iter()
                .any(|(n, _)| n == w || n.starts_with(&format!("{w} ")))
        {
            cast.push((w.to_string(), None));
        }
        i += 1;
    }
    cast
}

pub(crate) fn extract_settings(text: &str) -> Vec<SettingProfile> {
    let mut out: Vec<SettingProfile> = Vec::new();
    for w in word_regex().find_iter(text) {
        let lower = w.as_str().to_lowercase();
        if let Some((name, placement, desc)) = SETTINGS.iter().find(|(n, _, _)| *n == lower) {
            let mut title = name.to_string();
            title[..1].make_ascii_uppercase();
            if !out.iter().any(|s| s.name == title) {
                out.push(SettingProfile {
                    name: title,
                    placement: *placement,
                    description: desc.to_string(),
                });
            }
        }
    }
    if out.is_empty() {
        out.push(SettingProfile {
            name: "Meadow".into(),
            placement: Placement::Outdoor,
            description: SETTINGS[4].2.into(),
        });
    }
    out
}

fn pick<'a>(list: &[&'a str], key: &str, salt: &[u8]) -> &'a str {
    list[(hash64(&[key.as_bytes(), salt]) % list.len() as u64) as usize]
}

fn character_profile(name: &str, noun: Option<&str>) -> CharacterProfile {
    let t = pick(TRAITS, name, b"trait");
    let description = match noun {
        Some(noun) => format!(
            "a {} {noun} with a {t} personality who is at the heart of the story",
            pick(LOOKS, name, b"look")
        ),
        None => format!("a {t} young friend who takes part in every adventure"),
    };
    CharacterProfile {
        name: name.to_string(),
        description,
    }
}

/// Rewrites a script so that every scene reference resolves: case
/// mismatches take the profile's spelling, unknown characters are dropped,
/// unknown settings fall back to the first setting, duplicate profiles are
/// removed.
fn repair(script: &Script) -> Script {
    let mut out = Script::default();
    for c in &script.characters {
        if out.character(&c.name).is_none() {
            out.characters.push(c.clone());
        }
    }
    for s in &script.settings {
        if out.setting(&s.name).is_none() {
            out.settings.push(s.clone());
        }
    }
    if out.characters.is_empty() {
        out.characters.push(character_profile("Milo the fox", Some("fox")));
    }
    if out.settings.is_empty() {
        out.settings.extend(extract_settings(""));
    }
    for scene in &script.scenes {
        let mut chars: Vec<String> = Vec::new();
        for name in &scene.characters {
            let resolved = out
                .characters
                .iter()
                .find(|c| c.name == *name)
                .or_else(|| out.characters.iter().find(|c| c.name.to_lowercase() == name.to_lowercase()))
                .map(|c| c.name.clone());
            if let Some(r) = resolved {
                if !chars.contains(&r) {
                    chars.push(r);
                }
            }
        }
        if chars.is_empty() {
            chars.push(out.characters[0].name.clone());
        }
        let setting = out
            .settings
            .iter()
            .find(|s| s.name == scene.setting)
            .or_else(|| {
                out.settings
                    .iter()
                    .find(|s| s.name.to_lowercase() == scene.setting.to_lowercase())
            })
            .unwrap_or(&out.settings[0])
            .name
            .clone();
        out.scenes.push(SceneSpec {
            index: out.scenes.len(),
            characters: chars,
            setting,
            description: scene.description.clone(),
        });
    }
    out
}

/// 1-based judge pick: one plus the attachment-hash modulo the count.
pub fn judge_pick<'a>(images: impl Iterator<Item = &'a Image>, count: usize) -> usize {
    let mut h = Sha256::new();
    for img in images {
        h.update(img.content_hash().as_bytes());
    }
    let d = h.finalize();
    let v = u64::from_be_bytes(d[..8].try_into().expect("8 bytes"));
    1 + (v % count.max(1) as u64) as usize
}

fn starts_with_any(word: &str, stems: &[&str]) -> bool {
    stems.iter().any(|s| word.starts_with(s))
}

impl MockChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_knobs(knobs: MockChatKnobs) -> Self {
        Self {
            knobs,
            ..Self::default()
        }
    }

    fn refine(&self, ctx: &SlotMap, attempt: usize) -> String {
        if attempt <= self.knobs.short_refinements {
            return SHORT_STORY.to_string();
        }
        let narrative = slot(ctx, "Narrative").trim();
        if word_count(narrative) >= 150 {
            return narrative.split_whitespace().take(280).collect::<Vec<_>>().join(" ");
        }
        let mut cast: Vec<String> = extract_cast(narrative).into_iter().map(|(n, _)| n).collect();
        if cast.is_empty() {
            cast.push("Milo the fox".into());
        }
        let a = cast[0].clone();
        let b = cast.get(1).cloned().unwrap_or_else(|| "a new friend".into());
        let s = extract_settings(narrative)[0].name.to_lowercase();
        let mut story = narrative.to_string();
        let mut k = 0;
        while word_count(&story) < 150 {
            let sentence = FILLER[k % FILLER.len()]
                .replace("{A}", &a)
                .replace("{B}", &b)
                .replace("{s}", &s);
            story.push(' ');
            story.push_str(&sentence);
            k += 1;
        }
        story
    }

    fn extract_profiles(&self, ctx: &SlotMap) -> String {
        let story = slot(ctx, "Story");
        let cast = extract_cast(story);
        let mut out = String::from("Here are the characters and settings of the story.\n\n## Characters\n");
        if cast.is_empty() {
            out.push_str(&character_profile("Milo the fox", Some("fox")).to_line());
            out.push('\n');
        }
        for (name, noun) in &cast {
            out.push_str(&character_profile(name, noun.as_deref()).to_line());
            out.push('\n');
        }
        out.push_str("\n## Settings\n");
        for s in extract_settings(story) {
            out.push_str(&s.to_line());
            out.push('\n');
        }
        out
    }

    fn generate_scenes(&self, ctx: &SlotMap) -> String {
        let profiles = parse_script(&format!("{}\n## Scenes\n", slot(ctx, "Profiles"))).unwrap_or_default();
        let chars: Vec<&str> = profiles.characters.iter().map(|c| c.name.as_str()).collect();
        let settings: Vec<&str> = profiles.settings.iter().map(|s| s.name.as_str()).collect();
        let mut out = String::from("## Scenes\n");
        if chars.is_empty() || settings.is_empty() {
            return out;
        }
        for i in 0..self.knobs.scene_count {
            let a = chars[0];
            let b = chars.get(1).copied();
            let mut setting = settings[i % settings.len()].to_string();
            if self.knobs.unknown_setting && i == 1 % self.knobs.scene_count.max(1) {
                setting = "Moon Base".into();
            }
            let s = setting.to_lowercase();
            let (cast, description): (Vec<&str>, String) = match (i % 3, b) {
                (0, Some(b)) => (chars.iter().copied().take(3).collect(), format!("{a} chases {b} around the {s}.")),
                (0, None) => (vec![a], format!("{a} chases a butterfly around the {s}.")),
                (1, _) => (vec![a], format!("{a} sits quietly in the {s}, watching the clouds drift by.")),
                (_, Some(b)) => (
                    chars.iter().copied().take(3).collect(),
                    format!("{a} jumps over a puddle while {b} cheers."),
                ),
                (_, None) => (vec![a], format!("{a} jumps over a puddle in the {s}.")),
            };
            let scene = SceneSpec {
                index: i,
                characters: cast.into_iter().map(normalize_name).collect(),
                setting,
                description,
            };
            out.push_str(&serialize_scene_line(&scene));
            out.push('\n');
        }
        out
    }

    fn verify(&self, ctx: &SlotMap) -> String {
        let Ok(script) = parse_script(slot(ctx, "Script")) else {
            return "Yes. The script could not be read, so no revision is possible.".into();
        };
        if validate_script(&script).is_empty() && !self.knobs.always_revise {
            return crate::prompt::NO_PROBLEM_SENTINEL.to_string();
        }
        format!("Yes.\nRevised script:\n\n{}", repair(&script).to_document())
    }

    fn image_prompt(&self, ctx: &SlotMap) -> String {
        let chars: Vec<&str> = slot(ctx, "Characters")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        format!(
            "An illustration of the following scene: {} Characters: {}. Setting: {}.",
            slot(ctx, "Scene").trim(),
            chars.join("; "),
            slot(ctx, "Setting").trim()
        )
    }

    fn judge(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let n = request.attachment_count();
        if n == 0 {
            return Err(ProviderError::Permanent("judge request has no images".into()));
        }
        if request.attempt() <= self.knobs.garbage_judgements {
            return Ok("They are all lovely in their own way.".into());
        }
        let k = judge_pick(request.images(), n);
        Ok(format!(
            "The answer is image {k}. It reflects the description most faithfully, with clear shapes and colours."
        ))
    }

    fn consistency(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let images: Vec<&Image> = request.images().collect();
        let Some((scene, refs)) = images.split_first() else {
            return Err(ProviderError::Permanent("consistency check needs a scene image".into()));
        };
        let listed: Vec<String> = slot(&request.context, "Characters")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| match l.strip_prefix("Image ") {
                Some(rest) => rest.split_once(':').map_or(rest, |(_, n)| n).trim().to_string(),
                None => l.trim_start_matches("- ").to_string(),
            })
            .collect();
        let name = |i: usize| listed.get(i).cloned().unwrap_or_else(|| format!("character {}", i + 1));

        let regions: Vec<f64> = self
            .segmenter
            .segment(scene)?
            .iter()
            .filter(|m| !m.is_background())
            .filter_map(|m| {
                dominant_hue(
                    scene
                        .pixels()
                        .zip(m.bitmap())
                        .filter(|(_, b)| **b)
                        .map(|(p, _)| p),
                )
            })
            .collect();
        let expected: Vec<Option<f64>> = refs.iter().map(|r| dominant_hue(r.pixels())).collect();
        let close = |a: f64, b: Option<f64>| b.is_some_and(|b| hue_distance(a, b) <= 15.0);
        let stray = regions
            .iter()
            .copied()
            .find(|h| !expected.iter().any(|e| close(*h, *e)));

        let mut lines = Vec::new();
        for (i, e) in expected.iter().enumerate() {
            let ok = !self.knobs.always_inconsistent && regions.iter().any(|h| close(*h, *e));
            if !ok {
                let observed = stray.or(regions.first().copied());
                lines.push(match observed {
                    Some(h) => format!("Inconsistent character: {} (observed hue {h:.0})", name(i)),
                    None => format!("Inconsistent character: {}", name(i)),
                });
            }
        }
        Ok(if lines.is_empty() {
            CONSISTENT_REPLY.to_string()
        } else {
            lines.join("\n")
        })
    }

    fn params(&self, ctx: &SlotMap, attempt: usize) -> String {
        let text = slot(ctx, "SceneDescription").to_lowercase();
        let words: Vec<&str> = text
            .split(|c: char| !c.is_alphabetic())
            .filter(|w| !w.is_empty())
            .collect();
        let key = hash64(&[text.as_bytes()]);
        let dynamic = words
            .iter()
            .any(|w| starts_with_any(w, &["chase", "chasi", "run", "jump", "race", "raci", "danc"]));
        let still = words
            .iter()
            .any(|w| starts_with_any(w, &["sit", "sleep", "rest", "quiet", "still", "watch", "nap"]));
        let mut camera = Camera::default();
        let motion = if dynamic {
            camera.pan = if key.is_multiple_of(2) { Pan::Left } else { Pan::Right };
            3 + (key >> 4) as u8 % 2
        } else if still {
            (key >> 4) as u8 % 2
        } else {
            2
        };
        let description = slot(ctx, "AnimationPrompt")
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or("An animated scene")
            .to_string();
        let params = GenerationParams {
            description,
            motion: if attempt <= self.knobs.invalid_params { 9 } else { motion },
            guidance_scale: 12.0,
            negative_prompt: "blurry, distorted, extra limbs".into(),
            camera,
        };
        format!(
            "Here are the parameters I predict:\n```json\n{}\n```\nThey keep the motion in line with the described action.",
            params.to_wire_string()
        )
    }

    fn video_prompt(&self, ctx: &SlotMap) -> String {
        let desc = slot(ctx, "SceneDescription").trim();
        format!(
            "Part#1. Screen Description: {}\nPart#2. Action Description: {desc}",
            slot(ctx, "Character").lines().next().unwrap_or("").trim()
        )
    }
}

impl ChatProvider for MockChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        if request.messages.is_empty() {
            return Err(ProviderError::Permanent("chat request has no messages".into()));
        }
        if request.attachment_count() > self.max_attachments() {
            return Err(ProviderError::Permanent(format!(
                "{} attachments exceed the limit of {}",
                request.attachment_count(),
                self.max_attachments()
            )));
        }
        let ctx = &request.context;
        let attempt = request.attempt();
        Ok(match request.task {
            ChatTask::Ping => "pong".into(),
            ChatTask::Instruction(id) => match id {
                TemplateId::Refine => self.refine(ctx, attempt),
                TemplateId::ExtractProfiles => self.extract_profiles(ctx),
                TemplateId::GenerateScenes => self.generate_scenes(ctx),
                TemplateId::Verify => self.verify(ctx),
                TemplateId::ImagePrompts => self.image_prompt(ctx),
                TemplateId::ImageJudge | TemplateId::VideoJudge => self.judge(request)?,
                TemplateId::ConsistencyCheck => self.consistency(request)?,
                TemplateId::VideoPrompts => self.video_prompt(ctx),
                TemplateId::ParamPredict => self.params(ctx, attempt),
            },
        })
    }
}
