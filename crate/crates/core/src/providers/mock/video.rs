use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::hash64;
use crate::prompt::{Pan, Tilt};
use crate::providers::{FrameSequence, Image, ProviderError, VideoGenerator, VideoRequest};

/// Animates the conditioning image.
///
/// Frame 0 is the conditioning image itself. Frame `t` is the image shifted
/// toroidally by `t * motion * speed` pixels plus uniform noise of
/// amplitude `motion * grain`; speed, grain, direction and an optional
/// softening blur are per-candidate. Camera pan/tilt fix the direction.
/// `motion == 0` therefore yields a still clip.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockVideoGenerator;

struct Schedule {
    dir: (i64, i64),
    speed: f64,
    grain: f64,
    blur: bool,
}

const DIRECTIONS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn schedule(request: &VideoRequest, ordinal: usize) -> (Schedule, u64) {
    let key = hash64(&[
        b"video",
        request.conditioning_image.content_hash().as_bytes(),
        request.prompt.as_bytes(),
        &request.seed.to_le_bytes(),
        &(ordinal as u64).to_le_bytes(),
    ]);
    let cam = request.params.camera;
    let dx = match cam.pan {
        Pan::Left => Some(-1),
        Pan::Right => Some(1),
        Pan::None => None,
    };
    let dy = match cam.tilt {
        Tilt::Up => Some(-1),
        Tilt::Down => Some(1),
        Tilt::None => None,
    };
    let dir = if dx.is_some() || dy.is_some() {
        (dx.unwrap_or(0), dy.unwrap_or(0))
    } else {
        DIRECTIONS[(key % 8) as usize]
    };
    let unit = |k: u64| ((key >> k) % 1000) as f64 / 1000.0;
    (
        Schedule {
            dir,
            speed: 0.5 + unit(8),
            grain: 1.0 + 5.0 * unit(24),
            blur: (key >> 40).is_multiple_of(4),
        },
        key,
    )
}

fn box_blur(img: &Image) -> Image {
    let (w, h) = (img.width() as i64, img.height() as i64);
    Image::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = [0u32; 3];
        let mut n = 0u32;
        for yy in (y as i64 - 1).max(0)..=(y as i64 + 1).min(h - 1) {
            for xx in (x as i64 - 1).max(0)..=(x as i64 + 1).min(w - 1) {
                let p = img.pixel(xx as u32, yy as u32);
                for c in 0..3 {
                    acc[c] += p[c] as u32;
                }
                n += 1;
            }
        }
        acc.map(|a| ((a + n / 2) / n) as u8)
    })
}

fn frame(base: &Image, t: usize, motion: u8, s: &Schedule, key: u64) -> Image {
    let (w, h) = (base.width() as i64, base.height() as i64);
    let scale = w.max(h) as f64 / 256.0;
    let dist = (t as f64 * motion as f64 * s.speed * scale * 2.0).round() as i64;
    let (ox, oy) = (s.dir.0 * dist, s.dir.1 * dist);
    let amp = motion as f64 * s.grain;
    let mut rng = ChaCha8Rng::seed_from_u64(key ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let shifted = Image::from_fn(base.width(), base.height(), |x, y| {
        let p = base.pixel(
            (x as i64 - ox).rem_euclid(w) as u32,
            (y as i64 - oy).rem_euclid(h) as u32,
        );
        p.map(|c| (c as f64 + rng.gen_range(-amp..=amp)).round().clamp(0.0, 255.0) as u8)
    });
    if s.blur {
        box_blur(&shifted)
    } else {
        shifted
    }
}

impl VideoGenerator for MockVideoGenerator {
    fn generate_videos(&self, request: &VideoRequest, n: usize) -> Result<Vec<FrameSequence>, ProviderError> {
        request.validate()?;
        if n == 0 {
            return Err(ProviderError::Permanent("n must be at least 1".into()));
        }
        let motion = request.params.motion;
        (0..n)
            .map(|i| {
                let (s, key) = schedule(request, i);
                let frames: Vec<Image> = (0..request.frame_count)
                    .map(|t| {
                        if t == 0 || motion == 0 {
                            request.conditioning_image.clone()
                        } else {
                            frame(&request.conditioning_image, t, motion, &s, key)
                        }
                    })
                    .collect();
                FrameSequence::new(frames, request.fps).map_err(|e| ProviderError::Permanent(e.to_string()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::GenerationParams;

    pub(crate) fn request(motion: u8) -> VideoRequest {
        VideoRequest {
            conditioning_image: Image::from_fn(32, 32, |x, y| [(x * 8) as u8, (y * 8) as u8, 100]),
            prompt: "Tom runs".into(),
            params: GenerationParams {
                description: "d".into(),
                motion,
                guidance_scale: 12.0,
                negative_prompt: String::new(),
                camera: Default::default(),
            },
            seed: 5,
            frame_count: 6,
            fps: 8.0,
        }
    }

    fn mean_delta(clip: &FrameSequence) -> f64 {
        let f = clip.frames();
        let mut total = 0.0;
        for w in f.windows(2) {
            let d: u64 = w[0]
                .data()
                .iter()
                .zip(w[1].data())
                .map(|(a, b)| (*a as i64 - *b as i64).unsigned_abs())
                .sum();
            total += d as f64 / w[0].data().len() as f64;
        }
        total / (f.len() - 1) as f64
    }

    #[test]
    fn frame_zero_is_the_conditioning_image() {
        let req = request(3);
        let clips = MockVideoGenerator.generate_videos(&req, 3).unwrap();
        assert_eq!(clips.len(), 3);
        for c in &clips {
            assert_eq!(c.len(), 6);
            assert_eq!(c.frames()[0], req.conditioning_image);
        }
    }

    #[test]
    fn zero_motion_is_still() {
        let req = request(0);
        let clip = &MockVideoGenerator.generate_videos(&req, 1).unwrap()[0];
        assert!(clip.frames().iter().all(|f| *f == req.conditioning_image));
    }

    #[test]
    fn more_motion_more_change() {
        for ordinal in 0..4 {
            let hi = &MockVideoGenerator.generate_videos(&request(4), 4).unwrap()[ordinal];
            let lo = &MockVideoGenerator.generate_videos(&request(1), 4).unwrap()[ordinal];
            assert!(mean_delta(hi) > mean_delta(lo));
        }
    }

    #[test]
    fn deterministic() {
        let a = MockVideoGenerator.generate_videos(&request(2), 2).unwrap();
        let b = MockVideoGenerator.generate_videos(&request(2), 2).unwrap();
        assert_eq!(a, b);
    }
}
