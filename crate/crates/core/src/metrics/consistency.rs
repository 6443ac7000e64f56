use crate::providers::EmbeddingVector;

/// Anchor-plus-adjacent temporal consistency of per-frame embeddings:
/// the mean over `t >= 1` of `(cos(f_t, f_0) + cos(f_t, f_{t-1})) / 2`,
/// mapped from [-1, 1] to [0, 1]. `None` for fewer than two frames.
pub fn temporal_consistency(frames: &[EmbeddingVector]) -> Option<f64> {
    if frames.len() < 2 {
        return None;
    }
    let total: f64 = (1..frames.len())
        .map(|t| 0.5 * (frames[t].cosine(&frames[0]) + frames[t].cosine(&frames[t - 1])))
        .sum();
    let mean = total / (frames.len() - 1) as f64;
    Some(((mean + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Arithmetic mean of subject and background consistency.
pub fn coherence(subject: f64, background: f64) -> f64 {
    (subject + background) / 2.0
}

/// Mean cosine between a text vector and each frame vector.
pub fn mean_alignment(text: &EmbeddingVector, frames: &[EmbeddingVector]) -> Option<f64> {
    if frames.is_empty() {
        return None;
    }
    let sum: f64 = frames.iter().map(|f| text.cosine(f)).sum();
    Some((sum / frames.len() as f64).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(x.to_vec()).unwrap()
    }

    #[test]
    fn identical_frames_score_one() {
        let f = vec![v(&[1.0, 2.0, 3.0]); 6];
        assert!((temporal_consistency(&f).unwrap() - 1.0).abs() <= 1e-12);
        assert_eq!(temporal_consistency(&f[..1]), None);
    }

    #[test]
    fn hand_computed_three_frames() {
        // f1 orthogonal to f0; f2 = f0.
        // t=1: (0 + 0)/2 = 0; t=2: (1 + 0)/2 = 0.5; mean 0.25 -> 0.625.
        let f = [v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 0.0])];
        assert!((temporal_consistency(&f).unwrap() - 0.625).abs() < 1e-15);
    }

    #[test]
    fn coherence_examples() {
        assert_eq!(coherence(1.0, 1.0), 1.0);
        assert_eq!(coherence(0.86, 0.93), 0.895);
    }

    proptest! {
        #[test]
        fn bounded_and_palindrome_symmetric(
            raw in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 2..8)
        ) {
            let frames: Vec<_> = raw.iter().map(|x| v(x)).collect();
            let s = temporal_consistency(&frames).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            let mut pal = frames.clone();
            pal.extend(frames.iter().rev().cloned());
            let mut rev = pal.clone();
            rev.reverse();
            prop_assert_eq!(temporal_consistency(&pal), temporal_consistency(&rev));
        }
    }
}
