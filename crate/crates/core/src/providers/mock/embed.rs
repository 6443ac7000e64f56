use super::hash64;
use crate::color::rgb_to_hsv;
use crate::providers::{Embedder, EmbeddingVector, Image, ProviderError};

const GRID: usize = 4;
const GRAY_DIMS: usize = GRID * GRID;
const HUE_BINS: usize = 48;
pub const TOY_DIMENSION: usize = GRAY_DIMS + HUE_BINS;

const COLOUR_WORDS: &[(&str, f64)] = &[
    ("red", 0.0),
    ("orange", 30.0),
    ("yellow", 60.0),
    ("green", 120.0),
    ("cyan", 180.0),
    ("blue", 240.0),
    ("purple", 270.0),
    ("magenta", 300.0),
    ("pink", 300.0),
];

/// Classical 64-dimensional embedder.
///
/// Images: the 4×4 grayscale block means (scaled to [0, 1]) and a 48-bin
/// hue histogram weighted by chroma, each part L2-normalized, concatenated,
/// then normalized again. Text: words hash into the 16 layout dimensions
/// and colour words vote for their hue bin, so "red" text sits near red
/// images.
#[derive(Clone, Copy, Debug, Default)]
pub struct ToyEmbedder;

fn normalize(part: &mut [f64]) {
    let n = part.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        part.iter_mut().for_each(|v| *v /= n);
    }
}

fn hue_bin(hue: f64) -> usize {
    ((hue / (360.0 / HUE_BINS as f64)) as usize) % HUE_BINS
}

impl ToyEmbedder {
    pub fn image_vector(image: &Image) -> EmbeddingVector {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mut gray = [0.0f64; GRAY_DIMS];
        let mut counts = [0usize; GRAY_DIMS];
        let mut hist = [0.0f64; HUE_BINS];
        for (i, p) in image.pixels().enumerate() {
            let (x, y) = (i % w, i / w);
            let cell = (y * GRID / h) * GRID + x * GRID / w;
            let luma = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            gray[cell] += luma / 255.0;
            counts[cell] += 1;
            let max = p.iter().max().copied().unwrap_or(0);
            let min = p.iter().min().copied().unwrap_or(0);
            let chroma = (max - min) as f64 / 255.0;
            if chroma > 0.0 {
                hist[hue_bin(rgb_to_hsv(p).0)] += chroma;
            }
        }
        for (g, c) in gray.iter_mut().zip(counts) {
            if c > 0 {
                *g /= c as f64;
            }
        }
        Self::combine(gray, hist)
    }

    pub fn text_vector(text: &str) -> EmbeddingVector {
        let mut gray = [0.0f64; GRAY_DIMS];
        let mut hist = [0.0f64; HUE_BINS];
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            let word = word.to_lowercase();
            gray[(hash64(&[word.as_bytes()]) % GRAY_DIMS as u64) as usize] += 1.0;
            if let Some((_, hue)) = COLOUR_WORDS.iter().find(|(c, _)| *c == word) {
                hist[hue_bin(*hue)] += 1.0;
            }
        }
        Self::combine(gray, hist)
    }

    fn combine(mut gray: [f64; GRAY_DIMS], mut hist: [f64; HUE_BINS]) -> EmbeddingVector {
        normalize(&mut gray);
        normalize(&mut hist);
        let values: Vec<f64> = gray.iter().chain(hist.iter()).copied().collect();
        EmbeddingVector::normalized(values).expect("finite toy embedding")
    }
}

impl Embedder for ToyEmbedder {
    fn dimension(&self) -> usize {
        TOY_DIMENSION
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::Permanent("cannot embed empty text".into()));
        }
        Ok(Self::text_vector(text))
    }

    fn embed_images(&self, images: &[Image]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(images.iter().map(Self::image_vector).collect())
    }
}
