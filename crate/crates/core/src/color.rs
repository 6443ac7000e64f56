//! HSV conversions and the name → hue convention used by the mock providers.

use sha2::{Digest, Sha256};

/// Saturation below which a pixel counts as neutral (no meaningful hue).
pub const NEUTRAL_SATURATION: f64 = 0.2;

/// `(hue in [0, 360), saturation, value)`, saturation and value in [0, 1].
pub fn rgb_to_hsv([r, g, b]: [u8; 3]) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let hue = if chroma == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / chroma + 2.0)
    } else {
        60.0 * ((r - g) / chroma + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { chroma / max };
    (hue.rem_euclid(360.0), sat, max)
}

pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [u8; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = val * sat;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    let q = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Shortest angular distance in degrees.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Deterministic hue in whole degrees for a name.
pub fn name_hue(name: &str) -> u16 {
    let digest = Sha256::digest(name.as_bytes());
    let head = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    (head % 360) as u16
}

/// Circular mean of hues, weighted.
pub fn circular_mean(hues: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for (h, w) in hues {
        let rad = h.to_radians();
        sx += w * rad.cos();
        sy += w * rad.sin();
        total += w;
    }
    if total == 0.0 || (sx == 0.0 && sy == 0.0) {
        return None;
    }
    Some(sy.atan2(sx).to_degrees().rem_euclid(360.0))
}

/// Dominant hue of the saturated pixels: the heaviest 10° bin, refined by
/// the circular mean over that bin and its two neighbours. `None` when the
/// image has no saturated pixel.
pub fn dominant_hue<'a>(pixels: impl Iterator<Item = [u8; 3]> + 'a) -> Option<f64> {
    let hues: Vec<f64> = pixels
        .filter_map(|p| {
            let (h, s, v) = rgb_to_hsv(p);
            (s >= NEUTRAL_SATURATION && v > 0.1).then_some(h)
        })
        .collect();
    let mut bins = [0usize; 36];
    for h in &hues {
        bins[(*h as usize / 10) % 36] += 1;
    }
    let (best, &count) = bins.iter().enumerate().max_by_key(|(i, c)| (**c, usize::MAX - i))?;
    if count == 0 {
        return None;
    }
    let centre = best as f64 * 10.0 + 5.0;
    circular_mean(
        hues.iter()
            .filter(|h| hue_distance(**h, centre) <= 15.0)
            .map(|h| (*h, 1.0)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primaries() {
        assert_eq!(rgb_to_hsv([255, 0, 0]), (0.0, 1.0, 1.0));
        assert_eq!(rgb_to_hsv([0, 255, 0]).0, 120.0);
        assert_eq!(rgb_to_hsv([0, 0, 255]).0, 240.0);
        assert_eq!(rgb_to_hsv([128, 128, 128]).1, 0.0);
        assert_eq!(hsv_to_rgb(240.0, 1.0, 1.0), [0, 0, 255]);
    }

    #[test]
    fn hsv_round_trip_keeps_hue_within_a_degree() {
        for hue in (0..360).step_by(7) {
            let rgb = hsv_to_rgb(hue as f64, 0.8, 0.9);
            let (h, _, _) = rgb_to_hsv(rgb);
            assert!(hue_distance(h, hue as f64) < 1.0, "{hue} -> {h}");
        }
    }

    #[test]
    fn hue_distance_wraps() {
        assert_eq!(hue_distance(350.0, 10.0), 20.0);
        assert_eq!(hue_distance(10.0, 350.0), 20.0);
        assert_eq!(hue_distance(0.0, 180.0), 180.0);
    }

    #[test]
    fn name_hue_is_stable() {
        assert_eq!(name_hue("Max the dog"), name_hue("Max the dog"));
        assert!(name_hue("Max the dog") < 360);
    }

    #[test]
    fn dominant_hue_ignores_neutral_pixels() {
        let mut px = vec![[200u8, 200, 200]; 100];
        px.extend(std::iter::repeat_n(hsv_to_rgb(200.0, 0.8, 0.9), 10));
        let h = dominant_hue(px.into_iter()).unwrap();
        assert!(hue_distance(h, 200.0) < 1.0);
        assert_eq!(dominant_hue(std::iter::repeat_n([9u8, 9, 9], 4)), None);
    }
}
