//! Clip and image quality metrics used for curation and reporting.
//!
//! Consistency and alignment are parameterized by an [`Embedder`] and a
//! [`Segmenter`]; with the toy mock embedder every number is reproducible,
//! with a CLIP-style remote embedder they track perceptual similarity.

mod blur;
mod consistency;
mod sheet;

pub use blur::{blur_score, blur_score_with, laplacian_variance, BLUR_C};
pub use consistency::{coherence, mean_alignment, temporal_consistency};
pub use sheet::{contact_sheet, sheet_indices, ContactSheet, SHEET_TILES};

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::providers::{
    Embedder, EmbeddingVector, FrameSequence, Image, ProviderError, SegmentationMask, Segmenter,
};

/// Tag recorded next to text alignment scores: the mean cosine between the
/// text and each frame.
pub const ALIGNMENT_METHOD: &str = "frame_mean_cosine";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("image is {width}x{height}; at least 3x3 is required")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("segmentation found no subject besides the background")]
    NoSubjectFound,
    #[error("clip has {frames} frames, fewer than the {k} tiles requested")]
    ClipTooShort { frames: usize, k: usize },
    #[error("contact sheets need at least 2 tiles, got {0}")]
    BadTileCount(usize),
    #[error("consistency needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("mask is {mask:?} but frames are {frames:?}")]
    MaskMismatch { mask: (u32, u32), frames: (u32, u32) },
    #[error("embedder returned {got} vectors for {expected} images")]
    EmbeddingCount { expected: usize, got: usize },
    #[error("composite weights must be finite, non-negative and not all zero")]
    BadWeights,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean sharpness over frames; higher means less blur.
    pub distortion_quality: f64,
    pub subject_consistency: f64,
    pub background_consistency: f64,
    pub coherence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_visual_alignment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment_method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_image_similarity: Option<f64>,
}

impl MetricReport {
    pub fn composite(&self, weights: &CompositeWeights) -> f64 {
        weights.combine(
            self.distortion_quality,
            self.subject_consistency,
            self.background_consistency,
        )
    }

    /// Field-wise mean; coherence is recomputed from the mean consistencies.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let avg_opt = |f: fn(&MetricReport) -> Option<f64>| {
            let vals: Vec<f64> = reports.iter().filter_map(f).collect();
            (vals.len() == reports.len()).then(|| vals.iter().sum::<f64>() / n)
        };
        let subject = avg(|r| r.subject_consistency);
        let background = avg(|r| r.background_consistency);
        let tva = avg_opt(|r| r.text_visual_alignment);
        Some(MetricReport {
            distortion_quality: avg(|r| r.distortion_quality),
            subject_consistency: subject,
            background_consistency: background,
            coherence: coherence(subject, background),
            alignment_method: tva.map(|_| ALIGNMENT_METHOD.to_string()),
            text_visual_alignment: tva,
            image_image_similarity: avg_opt(|r| r.image_image_similarity),
        })
    }
}

/// Weights of the curation score over (distortion, subject, background).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeWeights {
    pub distortion: f64,
    pub subject: f64,
    pub background: f64,
}

impl Default for CompositeWeights {
    fn default() -> Self {
        Self {
            distortion: 1.0,
            subject: 1.0,
            background: 1.0,
        }
    }
}

impl CompositeWeights {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let ws = [self.distortion, self.subject, self.background];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(MetricsError::BadWeights);
        }
        Ok(())
    }

    pub fn combine(&self, distortion: f64, subject: f64, background: f64) -> f64 {
        (self.distortion * distortion + self.subject * subject + self.background * background)
            / (self.distortion + self.subject + self.background)
    }
}

/// Mean cosine between `text` and every frame.
pub fn text_visual_alignment(
    text: &str,
    frames: &[Image],
    embedder: &dyn Embedder,
) -> Result<f64, MetricsError> {
    if frames.is_empty() {
        return Err(MetricsError::TooFewFrames(0));
    }
    let t = embedder.embed_text(text)?;
    let fs = embed_checked(embedder, frames)?;
    Ok(mean_alignment(&t, &fs).expect("non-empty"))
}

pub fn image_image_similarity(a: &Image, b: &Image, embedder: &dyn Embedder) -> Result<f64, MetricsError> {
    let v = embed_checked(embedder, &[a.clone(), b.clone()])?;
    Ok(v[0].cosine(&v[1]))
}

fn embed_checked(embedder: &dyn Embedder, images: &[Image]) -> Result<Vec<EmbeddingVector>, MetricsError> {
    let v = embedder.embed_images(images)?;
    if v.len() != images.len() {
        return Err(MetricsError::EmbeddingCount {
            expected: images.len(),
            got: v.len(),
        });
    }
    Ok(v)
}

/// Subject and background masks of a clip's first frame.
#[derive(Clone, Debug)]
pub struct FrameMasks {
    pub subject: Option<SegmentationMask>,
    pub background: SegmentationMask,
}

impl FrameMasks {
    pub fn from_segmentation(masks: Vec<SegmentationMask>) -> Result<Self, MetricsError> {
        let mut background = None;
        let mut subject: Option<SegmentationMask> = None;
        for m in masks {
            if m.is_background() && background.is_none() {
                background = Some(m);
            } else if subject.as_ref().is_none_or(|s| m.area() > s.area()) {
                subject = Some(m);
            }
        }
        let background = match (background, &subject) {
            (Some(b), _) => b,
            // No labelled background: treat the largest region as background.
            (None, Some(_)) => subject.take().expect("checked"),
            (None, None) => {
                return Err(ProviderError::Permanent("segmenter returned no masks".into()).into())
            }
        };
        Ok(Self { subject, background })
    }
}

/// Computes [`MetricReport`]s with one segmentation per distinct first
/// frame and one batched embedding call per clip.
#[derive(Clone)]
pub struct Evaluator {
    embedder: Arc<dyn Embedder>,
    segmenter: Arc<dyn Segmenter>,
    pub exec: Exec,
}

impl Evaluator {
    pub fn new(embedder: Arc<dyn Embedder>, segmenter: Arc<dyn Segmenter>) -> Self {
        Self {
            embedder,
            segmenter,
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn masks(&self, frame: &Image) -> Result<FrameMasks, MetricsError> {
        FrameMasks::from_segmentation(self.segmenter.segment(frame)?)
    }

    pub fn distortion_quality(&self, clip: &FrameSequence) -> Result<f64, MetricsError> {
        let scores = self.exec.map(clip.frames(), |f| blur_score_with(f, Exec::Sequential));
        let scores = scores.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    fn masked_vectors(&self, clip: &FrameSequence, mask: &SegmentationMask) -> Result<Vec<EmbeddingVector>, MetricsError> {
        check_mask(clip, mask)?;
        let frames = self.exec.map(clip.frames(), |f| f.masked(mask.bitmap()));
        embed_checked(self.embedder.as_ref(), &frames)
    }

    /// Consistency of the subject region; the largest non-background region
    /// of frame 0 unless `subject_mask` is given.
    pub fn subject_consistency(
        &self,
        clip: &FrameSequence,
        subject_mask: Option<&SegmentationMask>,
    ) -> Result<f64, MetricsError> {
        require_frames(clip)?;
        let owned;
        let mask = match subject_mask {
            Some(m) => m,
            None => {
                owned = self.masks(&clip.frames()[0])?.subject.ok_or(MetricsError::NoSubjectFound)?;
                &owned
            }
        };
        let v = self.masked_vectors(clip, mask)?;
        Ok(temporal_consistency(&v).expect("two frames"))
    }

    pub fn background_consistency(&self, clip: &FrameSequence) -> Result<f64, MetricsError> {
        require_frames(clip)?;
        let mask = self.masks(&clip.frames()[0])?.background;
        let v = self.masked_vectors(clip, &mask)?;
        Ok(temporal_consistency(&v).expect("two frames"))
    }

    pub fn evaluate_clip(&self, clip: &FrameSequence, text: Option<&str>) -> Result<MetricReport, MetricsError> {
        let masks = self.masks(&clip.frames()[0])?;
        let text = text.map(|t| self.embedder.embed_text(t)).transpose()?;
        self.report(clip, &masks, text.as_ref())
    }

    /// Reports for every clip of a candidate pool, in order.
    pub fn evaluate_pool(&self, clips: &[FrameSequence], text: Option<&str>) -> Result<Vec<MetricReport>, MetricsError> {
        let text = text.map(|t| self.embedder.embed_text(t)).transpose()?;
        let mut masks: HashMap<String, FrameMasks> = HashMap::new();
        clips
            .iter()
            .map(|clip| {
                require_frames(clip)?;
                let first = &clip.frames()[0];
                let key = first.content_hash().to_string();
                if !masks.contains_key(&key) {
                    masks.insert(key.clone(), self.masks(first)?);
                }
                self.report(clip, &masks[&key], text.as_ref())
            })
            .collect()
    }

    fn report(
        &self,
        clip: &FrameSequence,
        masks: &FrameMasks,
        text: Option<&EmbeddingVector>,
    ) -> Result<MetricReport, MetricsError> {
        require_frames(clip)?;
        let subject = masks.subject.as_ref().ok_or(MetricsError::NoSubjectFound)?;
        check_mask(clip, subject)?;
        check_mask(clip, &masks.background)?;
        let n = clip.len();
        let frames = clip.frames();
        let mut batch: Vec<Image> = self.exec.map_range(2 * n, |i| {
            if i < n {
                frames[i].masked(subject.bitmap())
            } else {
                frames[i - n].masked(masks.background.bitmap())
            }
        });
        if text.is_some() {
            batch.extend(frames.iter().cloned());
        }
        let vectors = embed_checked(self.embedder.as_ref(), &batch)?;
        let s = temporal_consistency(&vectors[..n]).expect("two frames");
        let b = temporal_consistency(&vectors[n..2 * n]).expect("two frames");
        let tva = text.map(|t| mean_alignment(t, &vectors[2 * n..]).expect("frames"));
        Ok(MetricReport {
            distortion_quality: self.distortion_quality(clip)?,
            subject_consistency: s,
            background_consistency: b,
            coherence: coherence(s, b),
            alignment_method: tva.map(|_| ALIGNMENT_METHOD.to_string()),
            text_visual_alignment: tva,
            image_image_similarity: None,
        })
    }
}

fn require_frames(clip: &FrameSequence) -> Result<(), MetricsError> {
    if clip.len() < 2 {
        return Err(MetricsError::TooFewFrames(clip.len()));
    }
    Ok(())
}

fn check_mask(clip: &FrameSequence, mask: &SegmentationMask) -> Result<(), MetricsError> {
    if (mask.width, mask.height) != clip.dimensions() {
        return Err(MetricsError::MaskMismatch {
            mask: (mask.width, mask.height),
            frames: clip.dimensions(),
        });
    }
    Ok(())
}
