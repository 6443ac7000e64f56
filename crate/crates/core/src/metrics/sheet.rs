use serde::Serialize;

use super::MetricsError;
use crate::providers::{FrameSequence, Image};

/// Default number of tiles.
pub const SHEET_TILES: usize = 5;

/// `k` frames of a clip laid out left to right in one row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContactSheet {
    #[serde(skip)]
    pub image: Image,
    pub k: usize,
    pub source_frame_indices: Vec<usize>,
}

/// `round(i * (n - 1) / (k - 1))` for `i in 0..k`, halves rounded up,
/// evaluated in integers.
pub fn sheet_indices(n: usize, k: usize) -> Result<Vec<usize>, MetricsError> {
    if k < 2 {
        return Err(MetricsError::BadTileCount(k));
    }
    if n < k {
        return Err(MetricsError::ClipTooShort { frames: n, k });
    }
    let denom = 2 * (k - 1);
    Ok((0..k).map(|i| (2 * i * (n - 1) + (k - 1)) / denom).collect())
}

pub fn contact_sheet(clip: &FrameSequence, k: usize) -> Result<ContactSheet, MetricsError> {
    let indices = sheet_indices(clip.len(), k)?;
    let (w, h) = clip.dimensions();
    let frames = clip.frames();
    let image = Image::from_fn(w * k as u32, h, |x, y| {
        frames[indices[(x / w) as usize]].pixel(x % w, y)
    });
    Ok(ContactSheet {
        image,
        k,
        source_frame_indices: indices,
    })
}
