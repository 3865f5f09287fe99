//! Numerical kernels shared by every stage: normalization, cosine similarity,
//! temperature softmax and the seedable random stream.
//!
//! Storage is `f32`; every reduction (dot products, norms, sums) accumulates
//! in `f64`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, param_err, Result, TacError};

/// Dot product accumulated in `f64`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[inline]
pub fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    let mut out = v.to_vec();
    l2_normalize_in_place(&mut out)?;
    Ok(out)
}

pub fn l2_normalize_in_place(v: &mut [f32]) -> Result<()> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(TacError::Normalization);
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / n) as f32;
    }
    Ok(())
}

/// Normalizes an `f64` accumulator into an `f32` unit vector.
pub(crate) fn normalize_f64_into(acc: &[f64], out: &mut [f32]) -> Result<()> {
    let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(TacError::Normalization);
    }
    for (o, &a) in out.iter_mut().zip(acc) {
        *o = (a / n) as f32;
    }
    Ok(())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_sim(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err(format!(
            "cosine_sim on vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(TacError::Normalization);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Softmax of `scores / tau`. The maximum score is subtracted before
/// exponentiation, so temperatures as low as 0.005 stay finite.
pub fn softmax_temp(scores: &[f64], tau: f64) -> Result<Vec<f64>> {
    let mut out = scores.to_vec();
    softmax_temp_in_place(&mut out, tau)?;
    Ok(out)
}

pub fn softmax_temp_in_place(scores: &mut [f64], tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(param_err(format!(
            "softmax temperature must be > 0, got {tau}"
        )));
    }
    if scores.is_empty() {
        return Err(param_err("softmax over an empty score vector"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(TacError::Data("non-finite softmax score".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = ((*s - max) / tau).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Well-known stream ids, one per consumer of randomness.
pub mod stream {
    pub const KMEANS_INIT: u64 = 1;
    pub const BATCH_SHUFFLE: u64 = 2;
    pub const NEIGHBOR_SAMPLING: u64 = 3;
    pub const WEIGHT_INIT: u64 = 4;
    pub const SYNTHETIC: u64 = 5;
}

/// Deterministic random stream identified by `(seed, stream)`.
///
/// Backed by ChaCha8, a counter-based generator whose output for a given
/// key and stream is fixed across platforms. Distinct stream ids give
/// independent sequences from the same seed.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// A fresh generator on another stream of the same seed.
    pub fn split(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `[0, n)` (Lemire's multiply-and-reject).
    pub fn uniform_int(&mut self, n: usize) -> usize {
        assert!(n >= 1, "uniform_int requires n >= 1");
        let n = n as u64;
        let mut m = self.next_u64() as u128 * n as u128;
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = self.next_u64() as u128 * n as u128;
            }
        }
        (m >> 64) as usize
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_int(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_three_four_five() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-7 && (v[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_is_idempotent_on_unit_vectors() {
        let u = [0.6f32, 0.8];
        let v = l2_normalize(&u).unwrap();
        assert_eq!(v, u);
    }

    #[test]
    fn normalize_zero_vector_fails() {
        assert!(matches!(
            l2_normalize(&[0.0, 0.0]),
            Err(TacError::Normalization)
        ));
    }

    #[test]
    fn cosine_basic_cases() {
        let u = [0.3f32, -0.2, 0.9];
        assert!((cosine_sim(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(
            cosine_sim(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(TacError::Dimension(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_temp(&[0.7, 0.7, 0.7], 0.3).unwrap();
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_temp(&[1.0, 0.0], 0.005).unwrap();
        assert!(p[0] >= 1.0 - 1e-80);
        assert!(p[1] < 1e-80);
        // exp(2) / (exp(2) + 1) with scalar arithmetic
        let expected = 2f64.exp() / (2f64.exp() + 1.0);
        let p = softmax_temp(&[0.3, 0.1], 0.1).unwrap();
        assert!((p[0] - 0.8808).abs() < 1e-4 && (p[0] - expected).abs() < 1e-12);
        assert!((p[1] - 0.1192).abs() < 1e-4);
        assert!(matches!(
            softmax_temp(&[1.0], 0.0),
            Err(TacError::Parameter(_))
        ));
        assert!(matches!(
            softmax_temp(&[1.0], -1.0),
            Err(TacError::Parameter(_))
        ));
    }

    #[test]
    fn uniform_int_singleton_and_determinism() {
        let mut r = RngState::new(7, 0);
        for _ in 0..100 {
            assert_eq!(r.uniform_int(1), 0);
        }
        let draw = |seed| {
            let mut r = RngState::new(seed, 3);
            (0..5).map(|_| r.uniform_int(10)).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn uniform_int_bucket_frequencies() {
        let mut r = RngState::new(2024, 9);
        let mut counts = [0usize; 4];
        let draws = 1_000_000;
        for _ in 0..draws {
            counts[r.uniform_int(4)] += 1;
        }
        let mut chi2 = 0.0;
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() <= 0.01, "bucket frequency {freq}");
            let e = draws as f64 / 4.0;
            chi2 += (c as f64 - e).powi(2) / e;
        }
        // 3 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 16.27, "chi-square {chi2}");
    }

    #[test]
    fn streams_are_independent() {
        let mut a = RngState::new(1, stream::KMEANS_INIT);
        let mut b = a.split(stream::BATCH_SHUFFLE);
        let xs: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            scores in prop::collection::vec(-5.0f64..5.0, 1..12),
            shift in -50.0f64..50.0,
            tau in 0.01f64..5.0,
        ) {
            let a = softmax_temp(&scores, tau).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let b = softmax_temp(&shifted, tau).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn cosine_symmetric(
            pair in (1usize..16).prop_flat_map(|d| (
                prop::collection::vec(-1.0f32..1.0, d),
                prop::collection::vec(-1.0f32..1.0, d),
            ))
        ) {
            let (a, b) = pair;
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let ab = cosine_sim(&a, &b).unwrap();
            prop_assert_eq!(ab.to_bits(), cosine_sim(&b, &a).unwrap().to_bits());
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn normalize_scale_invariant(
            v in prop::collection::vec(-1.0f32..1.0, 1..16),
            c in 0.01f32..100.0,
        ) {
            prop_assume!(norm(&v) > 1e-3);
            let scaled: Vec<f32> = v.iter().map(|x| x * c).collect();
            let a = l2_normalize(&v).unwrap();
            let b = l2_normalize(&scaled).unwrap();
            // c * v itself rounds in f32, so only f32-level agreement holds here
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((*x as f64 - *y as f64).abs() <= 1e-6);
            }
        }

        #[test]
        fn normalize_exact_scale_invariant(
            v in prop::collection::vec(-1.0f32..1.0, 1..16),
            e in -20i32..20,
        ) {
            prop_assume!(norm(&v) > 1e-3);
            let c = 2f32.powi(e);
            let scaled: Vec<f32> = v.iter().map(|x| x * c).collect();
            let a = l2_normalize(&v).unwrap();
            let b = l2_normalize(&scaled).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((*x as f64 - *y as f64).abs() <= 1e-9);
            }
        }
    }
}
