use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::providers::{
    Capability, ChatProvider, ChatRequest, Embedder, EmbeddingVector, FrameSequence, Image,
    ImageGenerator, ImageRequest, ProviderError, ProviderSet, SegmentationMask, Segmenter,
    VideoGenerator, VideoRequest,
};

/// Provider calls made, per capability. A batched call counts once.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub chat: usize,
    pub image: usize,
    pub video: usize,
    pub segment: usize,
    pub embed: usize,
}

impl CallCounts {
    pub fn total(&self) -> usize {
        self.chat + self.image + self.video + self.segment + self.embed
    }

    pub fn since(&self, earlier: &CallCounts) -> CallCounts {
        CallCounts {
            chat: self.chat - earlier.chat,
            image: self.image - earlier.image,
            video: self.video - earlier.video,
            segment: self.segment - earlier.segment,
            embed: self.embed - earlier.embed,
        }
    }
}

/// Counts provider calls and, for fault-injection tests, fails the n-th.
#[derive(Debug, Default)]
pub struct CallMeter {
    counts: [AtomicUsize; 5],
    fail_at: Option<usize>,
    total: AtomicUsize,
}

impl CallMeter {
    pub fn new() -> Self {
        Self::default()
    }

    /// A meter whose `n`-th call (1-based) fails permanently.
    pub fn failing_at(n: usize) -> Self {
        Self {
            fail_at: Some(n),
            ..Self::default()
        }
    }

    fn enter(&self, capability: Capability) -> Result<(), ProviderError> {
        let slot = Capability::ALL.iter().position(|c| *c == capability).expect("listed");
        self.counts[slot].fetch_add(1, Ordering::SeqCst);
        let n = self.total.fetch_add(1, Ordering::SeqCst) + 1;
        if self.fail_at == Some(n) {
            return Err(ProviderError::Permanent(format!("injected fault at provider call {n}")));
        }
        Ok(())
    }

    pub fn counts(&self) -> CallCounts {
        let c = |i: usize| self.counts[i].load(Ordering::SeqCst);
        CallCounts {
            chat: c(0),
            image: c(1),
            video: c(2),
            segment: c(3),
            embed: c(4),
        }
    }
}

struct Metered<T: ?Sized> {
    inner: Arc<T>,
    meter: Arc<CallMeter>,
}

impl ChatProvider for Metered<dyn ChatProvider> {
    fn max_attachments(&self) -> usize {
        self.inner.max_attachments()
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.meter.enter(Capability::Chat)?;
        self.inner.chat(request)
    }
}

impl ImageGenerator for Metered<dyn ImageGenerator> {
    fn generate_images(&self, request: &ImageRequest, n: usize) -> Result<Vec<Image>, ProviderError> {
        self.meter.enter(Capability::Image)?;
        self.inner.generate_images(request, n)
    }

    fn region_replace(
        &self,
        image: &Image,
        mask: &SegmentationMask,
        request: &ImageRequest,
    ) -> Result<Image, ProviderError> {
        self.meter.enter(Capability::Image)?;
        self.inner.region_replace(image, mask, request)
    }
}

impl VideoGenerator for Metered<dyn VideoGenerator> {
    fn generate_videos(&self, request: &VideoRequest, n: usize) -> Result<Vec<FrameSequence>, ProviderError> {
        self.meter.enter(Capability::Video)?;
        self.inner.generate_videos(request, n)
    }
}

impl Segmenter for Metered<dyn Segmenter> {
    fn segment(&self, image: &Image) -> Result<Vec<SegmentationMask>, ProviderError> {
        self.meter.enter(Capability::Segment)?;
        self.inner.segment(image)
    }
}

impl Embedder for Metered<dyn Embedder> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.meter.enter(Capability::Embed)?;
        self.inner.embed_text(text)
    }

    fn embed_images(&self, images: &[Image]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.meter.enter(Capability::Embed)?;
        self.inner.embed_images(images)
    }
}

/// Wraps every provider of `set` so its calls go through `meter`.
pub fn metered(set: &ProviderSet, meter: &Arc<CallMeter>) -> ProviderSet {
    ProviderSet {
        chat: Arc::new(Metered {
            inner: set.chat.clone(),
            meter: meter.clone(),
        }),
        images: Arc::new(Metered {
            inner: set.images.clone(),
            meter: meter.clone(),
        }),
        video: Arc::new(Metered {
            inner: set.video.clone(),
            meter: meter.clone(),
        }),
        segmenter: Arc::new(Metered {
            inner: set.segmenter.clone(),
            meter: meter.clone(),
        }),
        embedder: Arc::new(Metered {
            inner: set.embedder.clone(),
            meter: meter.clone(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_injects() {
        let meter = Arc::new(CallMeter::failing_at(3));
        let set = metered(&ProviderSet::mock(16), &meter);
        let img = Image::filled(16, 16, [10, 200, 30]);
        set.segmenter.segment(&img).unwrap();
        set.embedder.embed_image(&img).unwrap();
        let err = set.embedder.embed_text("a red ball").unwrap_err();
        assert!(err.to_string().contains("injected fault at provider call 3"));
        set.embedder.embed_text("a red ball").unwrap();
        let c = meter.counts();
        assert_eq!((c.segment, c.embed, c.total()), (1, 3, 4));
    }
}
