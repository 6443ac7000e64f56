use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::color::{dominant_hue, hue_distance};
use crate::prompt::{slots, TemplateId, TemplateSet};
use crate::providers::{
    ChatProvider, ChatRequest, ChatTask, Image, ImageGenerator, ImageRequest, Message,
    SegmentationMask, Segmenter,
};
use crate::script::CharacterProfile;

pub const DEFAULT_MAX_REPAIR_ITERS: usize = 3;
const PASS_PHRASE: &str = "all characters are consistent";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    Judge,
    Replace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub iteration: usize,
    pub action: AuditAction,
    /// The judge's reply, or a note on what was replaced.
    pub verdict: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionOutcome<T> {
    pub iterations_used: usize,
    pub passed: bool,
    #[serde(skip)]
    pub final_item: T,
    pub audit_log: Vec<AuditEntry>,
}

/// One `Inconsistent character: <name>` line of a consistency verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct Inconsistency {
    pub name: String,
    pub observed_hue: Option<f64>,
}

fn line_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)inconsistent\s+character\s*:\s*([^(;\n]+)(.*)").expect("regex"))
}

fn hue_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)hue\D{0,12}?(\d+(?:\.\d+)?)").expect("regex"))
}

/// `None` when the reply passes the check; otherwise the reported
/// inconsistencies (possibly empty when the reply fails without naming
/// anyone).
pub fn parse_inconsistencies(reply: &str) -> Option<Vec<Inconsistency>> {
    let found: Vec<Inconsistency> = reply
        .lines()
        .filter_map(|line| {
            let caps = line_pattern().captures(line)?;
            let name = caps[1].trim().trim_end_matches('.').trim().to_string();
            let observed_hue = hue_pattern()
                .captures(&caps[2])
                .and_then(|h| h[1].parse::<f64>().ok());
            Some(Inconsistency { name, observed_hue })
        })
        .collect();
    if found.is_empty() && reply.to_lowercase().contains(PASS_PHRASE) {
        None
    } else {
        Some(found)
    }
}

/// Providers and prompts the repair loop works with.
pub struct RepairInputs<'a> {
    pub segmenter: &'a dyn Segmenter,
    pub images: &'a dyn ImageGenerator,
    pub chat: &'a dyn ChatProvider,
    pub templates: &'a TemplateSet,
    pub seed: u64,
}

fn mask_hue(image: &Image, mask: &SegmentationMask) -> Option<f64> {
    dominant_hue(image.pixels().zip(mask.bitmap()).filter(|(_, b)| **b).map(|(p, _)| p))
}

/// The region to regenerate: the one whose hue is nearest the reported
/// hue, else the largest non-background region.
fn pick_region(image: &Image, masks: Vec<SegmentationMask>, hue: Option<f64>) -> Option<SegmentationMask> {
    let regions: Vec<SegmentationMask> = masks.into_iter().filter(|m| !m.is_background()).collect();
    if let Some(h) = hue {
        let best = regions
            .iter()
            .enumerate()
            .filter_map(|(i, m)| mask_hue(image, m).map(|mh| (hue_distance(mh, h), i)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, i)) = best {
            return regions.into_iter().nth(i);
        }
    }
    regions
        .into_iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.area().cmp(&b.area()).then(j.cmp(i)))
        .map(|(_, m)| m)
}

/// Checks the scene against each character reference and regenerates the
/// region of an inconsistent character until the check passes or
/// `max_iters` checks have been made. No replacement follows the final
/// failed check. On failure the returned image is the one with the fewest
/// reported inconsistencies (the latest such on ties).
pub fn consistency_repair(
    scene: &Image,
    expected: &[(CharacterProfile, Image)],
    inputs: &RepairInputs<'_>,
    max_iters: usize,
) -> Result<ReflectionOutcome<Image>, CurationError> {
    if max_iters == 0 {
        return Err(CurationError::ZeroBudget);
    }
    let listing: String = expected
        .iter()
        .enumerate()
        .map(|(i, (p, _))| format!("Image {}: {}\n", i + 2, p.name))
        .collect();
    let count = expected.len().to_string();
    let context = slots([("Characters", listing.trim_end()), ("count", &count)]);
    let prompt = inputs.templates.render(TemplateId::ConsistencyCheck, &context)?;

    let mut current = scene.clone();
    let mut audit = Vec::new();
    let mut best: Option<(usize, Image)> = None;
    for iteration in 1..=max_iters {
        let mut attachments = vec![current.clone()];
        attachments.extend(expected.iter().map(|(_, img)| img.clone()));
        let request = ChatRequest::new(
            ChatTask::Instruction(TemplateId::ConsistencyCheck),
            vec![Message::user(prompt.clone()).with_images(attachments)],
            context.clone(),
        );
        let reply = inputs.chat.chat(&request)?;
        audit.push(AuditEntry {
            iteration,
            action: AuditAction::Judge,
            verdict: reply.clone(),
        });
        let Some(failures) = parse_inconsistencies(&reply) else {
            return Ok(ReflectionOutcome {
                iterations_used: iteration,
                passed: true,
                final_item: current,
                audit_log: audit,
            });
        };
        let severity = failures.len().max(1);
        if best.as_ref().is_none_or(|(s, _)| severity <= *s) {
            best = Some((severity, current.clone()));
        }
        if iteration == max_iters {
            break;
        }

        let first = failures.first();
        let target = first
            .and_then(|f| {
                expected
                    .iter()
                    .find(|(p, _)| p.name == f.name)
                    .or_else(|| expected.iter().find(|(p, _)| p.name.eq_ignore_ascii_case(&f.name)))
                    .or_else(|| expected.iter().find(|(p, _)| f.name.contains(&p.name)))
            })
            .or(expected.first());
        let Some((profile, reference)) = target else {
            break;
        };
        let masks = inputs.segmenter.segment(&current)?;
        let Some(mask) = pick_region(&current, masks, first.and_then(|f| f.observed_hue)) else {
            audit.push(AuditEntry {
                iteration,
                action: AuditAction::Replace,
                verdict: format!("no region available to redraw {}", profile.name),
            });
            break;
        };
        let request = ImageRequest::new(
            profile.to_line(),
            vec![reference.clone()],
            inputs.seed.wrapping_add(iteration as u64),
        );
        current = inputs.images.region_replace(&current, &mask, &request)?;
        audit.push(AuditEntry {
            iteration,
            action: AuditAction::Replace,
            verdict: format!("redrew {} ({} px) as {}", mask.label, mask.area(), profile.name),
        });
    }
    let iterations_used = audit.iter().filter(|e| e.action == AuditAction::Judge).count();
    Ok(ReflectionOutcome {
        iterations_used,
        passed: false,
        final_item: best.map(|(_, img)| img).unwrap_or(current),
        audit_log: audit,
    })
}
