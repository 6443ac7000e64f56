use std::collections::VecDeque;

use crate::color::{hue_distance, rgb_to_hsv, NEUTRAL_SATURATION};
use crate::providers::{Image, ProviderError, SegmentationMask, Segmenter};

/// Region-growing segmentation over HSV.
///
/// Two 4-neighbours join when both are chromatic with hue within
/// `hue_tolerance` degrees and saturation/value close, or both are neutral
/// with close value. The largest component (first in scan order on ties)
/// plus every component smaller than `max(min_area, min_fraction * pixels)`
/// becomes `background`; the rest are `region_1`, `region_2`, ... in scan
/// order. The result always partitions the image.
#[derive(Clone, Debug)]
pub struct MockSegmenter {
    pub hue_tolerance: f64,
    pub saturation_tolerance: f64,
    pub value_tolerance: f64,
    pub min_area: usize,
    pub min_fraction: f64,
}

impl Default for MockSegmenter {
    fn default() -> Self {
        Self {
            hue_tolerance: 10.0,
            saturation_tolerance: 0.15,
            value_tolerance: 0.1,
            min_area: 16,
            min_fraction: 0.002,
        }
    }
}

fn is_neutral((_, s, v): (f64, f64, f64)) -> bool {
    s < NEUTRAL_SATURATION || v < 0.15
}

impl MockSegmenter {
    fn joins(&self, a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
        match (is_neutral(a), is_neutral(b)) {
            (true, true) => (a.2 - b.2).abs() <= self.value_tolerance,
            (false, false) => {
                hue_distance(a.0, b.0) <= self.hue_tolerance
                    && (a.1 - b.1).abs() <= self.saturation_tolerance
                    && (a.2 - b.2).abs() <= self.value_tolerance
            }
            _ => false,
        }
    }

    /// Component label per pixel plus component sizes, labels in scan order.
    pub fn components(&self, image: &Image) -> (Vec<usize>, Vec<usize>) {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let hsv: Vec<_> = image.pixels().map(rgb_to_hsv).collect();
        let mut label = vec![usize::MAX; w * h];
        let mut sizes = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..w * h {
            if label[start] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            label[start] = id;
            queue.push_back(start);
            let mut size = 0;
            while let Some(p) = queue.pop_front() {
                size += 1;
                let (x, y) = (p % w, p / w);
                let mut visit = |q: usize| {
                    if label[q] == usize::MAX && self.joins(hsv[p], hsv[q]) {
                        label[q] = id;
                        queue.push_back(q);
                    }
                };
                if x > 0 {
                    visit(p - 1);
                }
                if x + 1 < w {
                    visit(p + 1);
                }
                if y > 0 {
                    visit(p - w);
                }
                if y + 1 < h {
                    visit(p + w);
                }
            }
            sizes.push(size);
        }
        (label, sizes)
    }
}

impl Segmenter for MockSegmenter {
    fn segment(&self, image: &Image) -> Result<Vec<SegmentationMask>, ProviderError> {
        let (w, h) = image.dimensions();
        let total = image.pixel_count();
        if total == 0 {
            return Err(ProviderError::Permanent("cannot segment an empty image".into()));
        }
        let (labels, sizes) = self.components(image);
        let threshold = self.min_area.max((self.min_fraction * total as f64).ceil() as usize);
        let largest = sizes
            .iter()
            .enumerate()
            .max_by_key(|(i, s)| (**s, usize::MAX - i))
            .map(|(i, _)| i)
            .expect("at least one component");
        // Map each component to an output mask slot: 0 is background.
        let mut slot = vec![0usize; sizes.len()];
        let mut regions = 0;
        for (i, &s) in sizes.iter().enumerate() {
            if i != largest && s >= threshold {
                regions += 1;
                slot[i] = regions;
            }
        }
        let mut bitmaps = vec![vec![false; total]; regions + 1];
        for (p, &l) in labels.iter().enumerate() {
            bitmaps[slot[l]][p] = true;
        }
        bitmaps
            .into_iter()
            .enumerate()
            .map(|(i, bits)| {
                let label = if i == 0 {
                    "background".to_string()
                } else {
                    format!("region_{i}")
                };
                SegmentationMask::new(label, w, h, bits).map_err(ProviderError::Permanent)
            })
            .collect()
    }
}
