use super::MetricsError;
use crate::exec::Exec;
use crate::providers::Image;

/// Squashing constant: `score = v / (v + BLUR_C)` for Laplacian variance `v`.
pub const BLUR_C: f64 = 1000.0;

/// Luma scaled by 1000 so the whole computation stays in integers.
fn luma_milli(p: [u8; 3]) -> i64 {
    299 * p[0] as i64 + 587 * p[1] as i64 + 114 * p[2] as i64
}

/// Population variance of the 8-neighbour Laplacian
/// `[[-1,-1,-1],[-1,8,-1],[-1,-1,-1]]` over the grayscale image
/// (`0.299 R + 0.587 G + 0.114 B`), with edge pixels replicated at the
/// border. Sums are exact integers, so the result does not depend on
/// evaluation order or on mirroring the image.
pub fn laplacian_variance(image: &Image, exec: Exec) -> Result<f64, MetricsError> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w < 3 || h < 3 {
        return Err(MetricsError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
        });
    }
    let gray: Vec<i64> = image.pixels().map(luma_milli).collect();
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        gray[y * w + x]
    };
    let rows = exec.map_range(h, |y| {
        let y = y as isize;
        let (mut s, mut s2) = (0i128, 0i128);
        for x in 0..w as isize {
            let mut r = 9 * at(x, y);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    r -= at(x + dx, y + dy);
                }
            }
            s += r as i128;
            s2 += (r as i128) * (r as i128);
        }
        (s, s2)
    });
    let (sum, sum_sq) = rows
        .into_iter()
        .fold((0i128, 0i128), |(a, b), (s, s2)| (a + s, b + s2));
    let n = (w * h) as i128;
    let numerator = n * sum_sq - sum * sum;
    Ok(numerator as f64 / (n as f64 * n as f64) / 1e6)
}

/// Sharpness in [0, 1): 0 for a constant image, increasing with the
/// Laplacian variance.
pub fn blur_score(image: &Image) -> Result<f64, MetricsError> {
    blur_score_with(image, Exec::default())
}

pub fn blur_score_with(image: &Image, exec: Exec) -> Result<f64, MetricsError> {
    let v = laplacian_variance(image, exec)?;
    Ok(v / (v + BLUR_C))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_is_zero() {
        assert_eq!(blur_score(&Image::filled(9, 7, [120, 30, 200])).unwrap(), 0.0);
    }

    #[test]
    fn centre_dot_by_hand() {
        // Centre response 8*255 = 2040, each of the eight neighbours -255.
        // Mean 0, variance (2040^2 + 8*255^2)/9 = 520200.
        let img = Image::from_fn(3, 3, |x, y| if (x, y) == (1, 1) { [255; 3] } else { [0; 3] });
        assert_eq!(laplacian_variance(&img, Exec::Sequential).unwrap(), 520200.0);
        assert_eq!(blur_score(&img).unwrap(), 520200.0 / 521200.0);
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            blur_score(&Image::filled(2, 5, [0; 3])),
            Err(MetricsError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn blurring_lowers_the_score() {
        let checker = Image::from_fn(16, 16, |x, y| if (x + y) % 2 == 0 { [255; 3] } else { [0; 3] });
        let blurred = Image::from_fn(16, 16, |x, y| {
            let mut acc = 0u32;
            let mut n = 0u32;
            for yy in y.saturating_sub(1)..=(y + 1).min(15) {
                for xx in x.saturating_sub(1)..=(x + 1).min(15) {
                    acc += checker.pixel(xx, yy)[0] as u32;
                    n += 1;
                }
            }
            [(acc / n) as u8; 3]
        });
        assert!(blur_score(&checker).unwrap() > blur_score(&blurred).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mirror_invariant_and_mode_independent(
            w in 3u32..20, h in 3u32..20, data in proptest::collection::vec(any::<u8>(), 1200)
        ) {
            let img = Image::from_fn(w, h, |x, y| {
                let i = ((y * w + x) * 3) as usize;
                [data[i % 1200], data[(i + 1) % 1200], data[(i + 2) % 1200]]
            });
            let flip_h = Image::from_fn(w, h, |x, y| img.pixel(w - 1 - x, y));
            let flip_v = Image::from_fn(w, h, |x, y| img.pixel(x, h - 1 - y));
            let s = blur_score_with(&img, Exec::Sequential).unwrap();
            prop_assert_eq!(s, blur_score_with(&img, Exec::Parallel).unwrap());
            prop_assert_eq!(s, blur_score(&flip_h).unwrap());
            prop_assert_eq!(s, blur_score(&flip_v).unwrap());
            prop_assert!((0.0..1.0).contains(&s));
        }
    }
}
