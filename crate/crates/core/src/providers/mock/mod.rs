//! Deterministic stand-ins for every capability.
//!
//! Identity is carried by colour: a character or setting is drawn in the
//! hue derived from its name ([`name_hue`]), so consistency metrics, the
//! judge personas and the repair loop all see real, checkable signal.

mod chat;
mod embed;
mod image;
mod segment;
mod video;

pub use chat::{MockChat, MockChatKnobs};
pub use embed::{ToyEmbedder, TOY_DIMENSION};
pub use image::{MockImageGenerator, SETTING_SATURATION, SUBJECT_SATURATION};
pub use segment::MockSegmenter;
pub use video::MockVideoGenerator;

use sha2::{Digest, Sha256};

pub use crate::color::name_hue;

/// First eight bytes (big-endian) of SHA-256 over length-prefixed parts.
pub fn hash64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Subject part of a `Name: description` or `Name (Outdoor): description`
/// prompt, with the placement marker split off.
pub fn prompt_subject(prompt: &str) -> (String, Option<&'static str>) {
    let head = prompt.split_once(':').map_or(prompt, |(h, _)| h).trim();
    for (marker, placement) in [("(Indoor)", "Indoor"), ("(Outdoor)", "Outdoor")] {
        if let Some(name) = head.strip_suffix(marker) {
            return (name.trim().to_string(), Some(placement));
        }
    }
    (head.to_string(), None)
}

/// Smooth value-only modulation in `[-amp, amp]`; leaves hue untouched.
pub(crate) fn texture(x: u32, y: u32, size: u32, phase: u64, amp: f64) -> f64 {
    let fx = 1.0 + (phase % 3) as f64;
    let fy = 1.0 + ((phase >> 8) % 3) as f64;
    let p = (phase >> 16) as f64 / (u64::MAX >> 16) as f64 * std::f64::consts::TAU;
    let s = size.max(1) as f64;
    amp * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / s + p).sin()
}
