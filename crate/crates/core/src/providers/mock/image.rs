use super::{hash64, name_hue, prompt_subject, texture};
use crate::color::{dominant_hue, hsv_to_rgb};
use crate::providers::{Image, ImageGenerator, ImageRequest, ProviderError, SegmentationMask};

pub const SETTING_SATURATION: f64 = 0.45;
pub const SUBJECT_SATURATION: f64 = 0.85;
const SETTING_VALUE: f64 = 0.72;
const SUBJECT_VALUE: f64 = 0.88;
const NEUTRAL_VALUE: f64 = 0.92;
/// Hue offset applied to the deliberately wrong character in a flawed
/// scene candidate.
const WRONG_HUE_SHIFT: f64 = 150.0;

/// Renders square images of `size` pixels.
///
/// Without reference images the prompt is an asset profile: a setting
/// (`Name (Outdoor): ...`) becomes a textured fill in the setting's hue, a
/// character becomes a disc in its hue on a light neutral ground. With
/// references (characters first, setting last) the result is a scene: a
/// backdrop in the setting's dominant hue with one disc per character.
/// Roughly one scene candidate in three draws one character in the wrong
/// hue, which gives the consistency repair loop something to do.
#[derive(Clone, Debug)]
pub struct MockImageGenerator {
    pub size: u32,
}

impl Default for MockImageGenerator {
    fn default() -> Self {
        Self { size: 512 }
    }
}

impl MockImageGenerator {
    pub fn new(size: u32) -> Self {
        Self { size: size.max(8) }
    }

    fn candidate_seed(request: &ImageRequest, ordinal: usize) -> u64 {
        let refs: Vec<&[u8]> = request
            .reference_images
            .iter()
            .map(|r| r.content_hash().as_bytes())
            .collect();
        let mut parts: Vec<&[u8]> = vec![b"image", request.prompt.as_bytes()];
        let seed = request.seed.to_le_bytes();
        let ord = (ordinal as u64).to_le_bytes();
        parts.push(&seed);
        parts.push(&ord);
        parts.extend(refs);
        hash64(&parts)
    }

    fn asset(&self, prompt: &str, seed: u64) -> Image {
        let size = self.size;
        let (name, placement) = prompt_subject(prompt);
        let hue = name_hue(&name) as f64;
        if placement.is_some() {
            return Image::from_fn(size, size, |x, y| {
                hsv_to_rgb(hue, SETTING_SATURATION, SETTING_VALUE + texture(x, y, size, seed, 0.06))
            });
        }
        let s = size as f64;
        let jitter = |k: u64| ((seed >> k) % 1000) as f64 / 1000.0 - 0.5;
        let (cx, cy) = (s * (0.5 + 0.16 * jitter(0)), s * (0.5 + 0.16 * jitter(20)));
        let r = 0.3 * s;
        Image::from_fn(size, size, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= r * r {
                hsv_to_rgb(hue, SUBJECT_SATURATION, SUBJECT_VALUE + texture(x, y, size, seed >> 3, 0.05))
            } else {
                hsv_to_rgb(0.0, 0.0, NEUTRAL_VALUE + texture(x, y, size, seed >> 5, 0.03))
            }
        })
    }

    fn scene(&self, refs: &[Image], seed: u64) -> Image {
        let size = self.size;
        let s = size as f64;
        let (setting, chars) = refs.split_last().expect("scene has references");
        let backdrop = dominant_hue(setting.pixels());
        let mut hues: Vec<f64> = chars
            .iter()
            .map(|c| dominant_hue(c.pixels()).unwrap_or(0.0))
            .collect();
        if !hues.is_empty() && seed.is_multiple_of(3) {
            let wrong = ((seed >> 8) % hues.len() as u64) as usize;
            hues[wrong] = (hues[wrong] + WRONG_HUE_SHIFT).rem_euclid(360.0);
        }
        let m = hues.len().max(1) as f64;
        let jitter = |k: u64| ((seed >> k) % 1000) as f64 / 1000.0 - 0.5;
        let radius = (0.22 * s).min(0.42 * s / m);
        let discs: Vec<(f64, f64, f64)> = hues
            .iter()
            .enumerate()
            .map(|(j, h)| {
                let cx = (j as f64 + 0.5) * s / m + 0.1 * jitter(4 + 6 * j as u64) * s / m;
                let cy = s * (0.6 + 0.1 * jitter(40 + 3 * j as u64));
                (cx, cy, *h)
            })
            .collect();
        Image::from_fn(size, size, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            for &(cx, cy, h) in &discs {
                if (px - cx).powi(2) + (py - cy).powi(2) <= radius * radius {
                    return hsv_to_rgb(
                        h,
                        SUBJECT_SATURATION,
                        SUBJECT_VALUE + texture(x, y, size, seed >> 3, 0.05),
                    );
                }
            }
            let v = SETTING_VALUE + texture(x, y, size, seed >> 7, 0.06);
            match backdrop {
                Some(h) => hsv_to_rgb(h, SETTING_SATURATION, v),
                None => hsv_to_rgb(0.0, 0.0, v),
            }
        })
    }
}

impl ImageGenerator for MockImageGenerator {
    fn generate_images(&self, request: &ImageRequest, n: usize) -> Result<Vec<Image>, ProviderError> {
        request.validate()?;
        if n == 0 {
            return Err(ProviderError::Permanent("n must be at least 1".into()));
        }
        Ok((0..n)
            .map(|i| {
                let seed = Self::candidate_seed(request, i);
                if request.reference_images.is_empty() {
                    self.asset(&request.prompt, seed)
                } else {
                    self.scene(&request.reference_images, seed)
                }
            })
            .collect())
    }

    fn region_replace(
        &self,
        image: &Image,
        mask: &SegmentationMask,
        request: &ImageRequest,
    ) -> Result<Image, ProviderError> {
        request.validate()?;
        if (mask.width, mask.height) != image.dimensions() {
            return Err(ProviderError::Permanent(format!(
                "mask is {}x{}, image is {}x{}",
                mask.width,
                mask.height,
                image.width(),
                image.height()
            )));
        }
        let (name, _) = prompt_subject(&request.prompt);
        let hue = name_hue(&name) as f64;
        let seed = hash64(&[b"replace", request.prompt.as_bytes(), &request.seed.to_le_bytes()]);
        let size = image.width().max(image.height());
        Ok(Image::from_fn(image.width(), image.height(), |x, y| {
            if mask.contains(x, y) {
                hsv_to_rgb(hue, SUBJECT_SATURATION, SUBJECT_VALUE + texture(x, y, size, seed, 0.05))
            } else {
                image.pixel(x, y)
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::hue_distance;

    fn gen() -> MockImageGenerator {
        MockImageGenerator::new(64)
    }

    #[test]
    fn character_asset_carries_the_name_hue() {
        let imgs = gen()
            .generate_images(&ImageRequest::new("Max the dog: a scruffy terrier", vec![], 7), 4)
            .unwrap();
        assert_eq!(imgs.len(), 4);
        let want = name_hue("Max the dog") as f64;
        for img in &imgs {
            assert_eq!(img.dimensions(), (64, 64));
            let h = dominant_hue(img.pixels()).unwrap();
            assert!(hue_distance(h, want) < 2.0, "{h} vs {want}");
        }
        assert_ne!(imgs[0], imgs[1]);
    }

    #[test]
    fn setting_asset_is_a_fill() {
        let img = &gen()
            .generate_images(&ImageRequest::new("Garden (Outdoor): a lawn", vec![], 1), 1)
            .unwrap()[0];
        let h = dominant_hue(img.pixels()).unwrap();
        assert!(hue_distance(h, name_hue("Garden") as f64) < 2.0);
    }

    #[test]
    fn deterministic_per_request_and_ordinal() {
        let req = ImageRequest::new("Tom the cat: orange", vec![], 3);
        let a = gen().generate_images(&req, 2).unwrap();
        let b = gen().generate_images(&req, 1).unwrap();
        assert_eq!(a[0].content_hash(), b[0].content_hash());
    }

    #[test]
    fn region_replace_keeps_outside_pixels() {
        let img = Image::from_fn(8, 8, |x, y| [x as u8 * 30, y as u8 * 30, 9]);
        let bits: Vec<bool> = (0..64).map(|i| i % 8 < 4).collect();
        let mask = SegmentationMask::new("region_1", 8, 8, bits.clone()).unwrap();
        let out = gen()
            .region_replace(&img, &mask, &ImageRequest::new("Tom the cat: x", vec![], 0))
            .unwrap();
        for y in 0..8 {
            for x in 0..8 {
                if !bits[(y * 8 + x) as usize] {
                    assert_eq!(out.pixel(x, y), img.pixel(x, y));
                }
            }
        }
        let inside = dominant_hue((0..8).flat_map(|y| (0..4).map(move |x| (x, y))).map(|(x, y)| out.pixel(x, y)));
        assert!(hue_distance(inside.unwrap(), name_hue("Tom the cat") as f64) < 2.0);
        let empty = ImageRequest::new("  ", vec![], 0);
        assert!(matches!(
            gen().region_replace(&img, &mask, &empty),
            Err(ProviderError::Permanent(_))
        ));
    }
}
