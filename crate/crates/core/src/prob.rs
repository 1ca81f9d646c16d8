//! Discrete distribution helpers: convex blends, quantiles and inverse-CDF sampling.

use rand::Rng;

use crate::scalar::{normalize_in_place, Scalar};

/// Convex blend `alpha * a + (1 - alpha) * b`, renormalized against rounding drift.
///
/// Both inputs must have the same length; `alpha` must lie in `[0, 1]`.
pub fn blend<F: Scalar>(a: &[F], b: &[F], alpha: F) -> Vec<F> {
    assert_eq!(a.len(), b.len(), "blend inputs must be conformable");
    debug_assert!(alpha >= F::zero() && alpha <= F::one());
    let beta = F::one() - alpha;
    let mut out: Vec<F> = a.iter().zip(b).map(|(x, y)| alpha * *x + beta * *y).collect();
    normalize_in_place(&mut out);
    out
}

/// Inverse-CDF draw of an index from unnormalized non-negative weights.
///
/// Returns `None` when the weights carry no mass.
pub fn sample_index<F: Scalar, R: Rng + ?Sized>(weights: &[F], rng: &mut R) -> Option<usize> {
    let total: F = weights.iter().copied().sum();
    if !(total > F::zero()) {
        return None;
    }
    let u = F::lit(rng.random::<f64>()) * total;
    let mut acc = F::zero();
    let mut last_positive = None;
    for (i, w) in weights.iter().enumerate() {
        if *w > F::zero() {
            acc = acc + *w;
            last_positive = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last_positive
}

/// Lower quantile of a discrete distribution given as `(value, probability)` pairs:
/// the smallest value whose cumulative probability reaches `p`.
pub fn discrete_quantile(dist: &[(f64, f64)], p: f64) -> Option<f64> {
    let mut sorted: Vec<(f64, f64)> = dist.iter().copied().filter(|(_, w)| *w > 0.0).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = sorted.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return None;
    }
    let mut acc = 0.0;
    for (v, w) in &sorted {
        acc += w / total;
        if acc + 1e-12 >= p {
            return Some(*v);
        }
    }
    sorted.last().map(|(v, _)| *v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blend_arithmetic() {
        let b: Vec<f64> = blend(&[1.0, 0.0], &[0.0, 1.0], 0.7);
        assert!((b[0] - 0.7).abs() < 1e-15 && (b[1] - 0.3).abs() < 1e-15);
        assert_eq!(blend(&[0.2, 0.8], &[0.5, 0.5], 1.0), vec![0.2, 0.8]);
    }

    #[test]
    fn sampling_respects_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let i = sample_index(&[0.0, 2.0, 0.0, 1.0], &mut rng).unwrap();
            assert!(i == 1 || i == 3);
        }
        assert_eq!(sample_index::<f64, _>(&[0.0, 0.0], &mut rng), None);
    }

    #[test]
    fn quantiles() {
        let d = [(1.0, 0.1), (2.0, 0.4), (3.0, 0.5)];
        assert_eq!(discrete_quantile(&d, 0.1), Some(1.0));
        assert_eq!(discrete_quantile(&d, 0.11), Some(2.0));
        assert_eq!(discrete_quantile(&d, 0.9), Some(3.0));
        assert_eq!(discrete_quantile(&[], 0.5), None);
    }
}
