//! Capability interfaces for the external generative services, their
//! deterministic mock implementations, and JSON-over-HTTP adapters.
//!
//! Every capability is a `Send + Sync` trait so one instance can serve
//! concurrent callers. Mocks are pure functions of the request, the seed
//! and the candidate ordinal.

mod config;
mod image;
pub mod mock;
mod policy;
pub mod remote;

pub use self::image::{frame_file_name, ClipMeta, FrameSequence, Image, MediaError};
pub use config::{Binding, Capability, ProviderBindings, ProviderConfigError};
pub use policy::{Clock, ProviderPolicy, RateLimiter, Retrier, SystemClock};

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{GenerationParams, SlotMap, TemplateId};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider error: {0}")]
    Permanent(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, ProviderError::Permanent(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub role: Role,
    pub text: String,
    pub images: Vec<Image>,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn with_images(mut self, images: Vec<Image>) -> Self {
        self.images = images;
        self
    }
}

/// What a chat request is for. Remote adapters forward it as metadata;
/// the mock uses it to pick a persona.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChatTask {
    Instruction(TemplateId),
    Ping,
}

impl fmt::Display for ChatTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChatTask::Instruction(id) => f.write_str(id.name()),
            ChatTask::Ping => f.write_str("ping"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatRequest {
    pub task: ChatTask,
    pub messages: Vec<Message>,
    /// Slot values the first user message was rendered from.
    pub context: SlotMap,
}

impl ChatRequest {
    pub fn new(task: ChatTask, messages: Vec<Message>, context: SlotMap) -> Self {
        Self {
            task,
            messages,
            context,
        }
    }

    pub fn attachment_count(&self) -> usize {
        self.messages.iter().map(|m| m.images.len()).sum()
    }

    /// Number of user turns, i.e. 1 for a first ask and 2 after one re-ask.
    pub fn attempt(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::User).count()
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.messages.iter().flat_map(|m| m.images.iter())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRequest {
    pub prompt: String,
    pub reference_images: Vec<Image>,
    pub seed: u64,
}

impl ImageRequest {
    pub fn new(prompt: impl Into<String>, reference_images: Vec<Image>, seed: u64) -> Self {
        Self {
            prompt: prompt.into(),
            reference_images,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.trim().is_empty() {
            return Err(ProviderError::Permanent("image request prompt is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRequest {
    pub conditioning_image: Image,
    pub prompt: String,
    pub params: GenerationParams,
    pub seed: u64,
    pub frame_count: usize,
    pub fps: f64,
}

impl VideoRequest {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.trim().is_empty() {
            return Err(ProviderError::Permanent("video request prompt is empty".into()));
        }
        if self.frame_count < 2 {
            return Err(ProviderError::Permanent(format!(
                "frame_count must be at least 2, got {}",
                self.frame_count
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(ProviderError::Permanent(format!("bad fps {}", self.fps)));
        }
        Ok(())
    }
}

/// A labelled region of an image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMask {
    pub label: String,
    pub width: u32,
    pub height: u32,
    bitmap: Vec<bool>,
    area: usize,
}

impl SegmentationMask {
    pub fn new(label: impl Into<String>, width: u32, height: u32, bitmap: Vec<bool>) -> Result<Self, String> {
        if bitmap.len() != width as usize * height as usize {
            return Err(format!(
                "mask bitmap has {} cells, expected {}x{}",
                bitmap.len(),
                width,
                height
            ));
        }
        let area = bitmap.iter().filter(|b| **b).count();
        if area == 0 {
            return Err("mask is empty".into());
        }
        Ok(Self {
            label: label.into(),
            width,
            height,
            bitmap,
            area,
        })
    }

    pub fn bitmap(&self) -> &[bool] {
        &self.bitmap
    }

    pub fn area(&self) -> usize {
        self.area
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.bitmap[y as usize * self.width as usize + x as usize]
    }

    pub fn is_background(&self) -> bool {
        self.label == "background"
    }

    /// Run lengths of alternating false/true cells, starting with false.
    pub fn runs(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.bitmap {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_runs(label: impl Into<String>, width: u32, height: u32, runs: &[u32]) -> Result<Self, String> {
        let mut bitmap = Vec::with_capacity(width as usize * height as usize);
        for (i, &len) in runs.iter().enumerate() {
            bitmap.extend(std::iter::repeat_n(i % 2 == 1, len as usize));
        }
        Self::new(label, width, height, bitmap)
    }
}

#[derive(Serialize, Deserialize)]
struct MaskWire {
    label: String,
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl Serialize for SegmentationMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MaskWire {
            label: self.label.clone(),
            width: self.width,
            height: self.height,
            runs: self.runs(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SegmentationMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = MaskWire::deserialize(d)?;
        SegmentationMask::from_runs(w.label, w.width, w.height, &w.runs).map_err(serde::de::Error::custom)
    }
}

/// Unit-norm feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    /// L2-normalizes `values`. An all-zero input maps to the first basis
    /// vector so the result is always unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, ProviderError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::Permanent("embedding has non-finite or no values".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            values[0] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self { values })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity clamped to [-1, 1].
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        (dot / denom).clamp(-1.0, 1.0)
    }
}

pub trait ChatProvider: Send + Sync {
    /// Images accepted per request.
    fn max_attachments(&self) -> usize {
        16
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait ImageGenerator: Send + Sync {
    fn generate_images(&self, request: &ImageRequest, n: usize) -> Result<Vec<Image>, ProviderError>;

    /// Regenerates the pixels inside `mask`; pixels outside stay untouched.
    fn region_replace(
        &self,
        image: &Image,
        mask: &SegmentationMask,
        request: &ImageRequest,
    ) -> Result<Image, ProviderError>;
}

pub trait VideoGenerator: Send + Sync {
    fn generate_videos(&self, request: &VideoRequest, n: usize) -> Result<Vec<FrameSequence>, ProviderError>;
}

pub trait Segmenter: Send + Sync {
    /// Pairwise disjoint masks covering the image; one is labelled
    /// `background`.
    fn segment(&self, image: &Image) -> Result<Vec<SegmentationMask>, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;

    /// One call for a whole batch.
    fn embed_images(&self, images: &[Image]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn embed_image(&self, image: &Image) -> Result<EmbeddingVector, ProviderError> {
        self.embed_images(std::slice::from_ref(image))?
            .pop()
            .ok_or_else(|| ProviderError::Permanent("embedder returned no vector".into()))
    }
}

/// One provider per capability.
#[derive(Clone)]
pub struct ProviderSet {
    pub chat: Arc<dyn ChatProvider>,
    pub images: Arc<dyn ImageGenerator>,
    pub video: Arc<dyn VideoGenerator>,
    pub segmenter: Arc<dyn Segmenter>,
    pub embedder: Arc<dyn Embedder>,
}

impl ProviderSet {
    /// All-mock set rendering images of `image_size` pixels square.
    pub fn mock(image_size: u32) -> Self {
        Self::mock_with(image_size, mock::MockChat::new())
    }

    pub fn mock_with(image_size: u32, chat: mock::MockChat) -> Self {
        Self {
            chat: Arc::new(chat),
            images: Arc::new(mock::MockImageGenerator::new(image_size)),
            video: Arc::new(mock::MockVideoGenerator),
            segmenter: Arc::new(mock::MockSegmenter::default()),
            embedder: Arc::new(mock::ToyEmbedder),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_runs_round_trip() {
        let bits = vec![true, true, false, true, false, false];
        let m = SegmentationMask::new("region_1", 3, 2, bits.clone()).unwrap();
        assert_eq!(m.area(), 3);
        assert_eq!(m.runs(), vec![0, 2, 1, 1, 2]);
        let json = serde_json::to_string(&m).unwrap();
        let back: SegmentationMask = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert!(SegmentationMask::new("x", 2, 1, vec![false, false]).is_err());
    }

    #[test]
    fn embedding_normalization() {
        let v = EmbeddingVector::normalized(vec![3.0, 4.0]).unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-12);
        let z = EmbeddingVector::normalized(vec![0.0, 0.0]).unwrap();
        assert_eq!(z.values, vec![1.0, 0.0]);
        assert!(EmbeddingVector::normalized(vec![f64::NAN]).is_err());
    }

    #[test]
    fn attempt_counts_user_turns() {
        let req = ChatRequest::new(
            ChatTask::Ping,
            vec![Message::user("a"), Message::assistant("b"), Message::user("c")],
            SlotMap::new(),
        );
        assert_eq!(req.attempt(), 2);
    }
}
