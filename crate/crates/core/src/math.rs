//! Numerical primitives shared by every other module.
//!
//! All arithmetic is `f64`. Softmax weights are computed in max-subtracted
//! form, entropy uses the natural logarithm with `0 ln 0 = 0`.

use std::ops::Index;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Tolerance on `Σ p_i = 1` accepted by [`SimplexWeights::new`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Flat model parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Builds a vector, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite parameter at coordinate {pos}"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        Error::check_dim(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        Error::check_dim(self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scaled(&self, scale: f64) -> ParamVector {
        Self(self.0.iter().map(|v| v * scale).collect())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// `Σ_i weights_i · vectors_i`; all vectors must share one dimension.
    pub fn weighted_sum(vectors: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::param("weighted sum of an empty vector list"))?;
        Error::check_dim(vectors.len(), weights.len())?;
        let mut out = ParamVector::zeros(first.len());
        for (v, w) in vectors.iter().zip(weights) {
            out.axpy(*w, v)?;
        }
        Ok(out)
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// A probability vector: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::param("simplex weights must be nonempty"));
        }
        if let Some(pos) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Input(format!(
                "weight {pos} is negative or non-finite: {}",
                probs[pos]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Input(format!("weights sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::param("uniform weights over zero clients"));
        }
        Ok(Self(vec![1.0 / m as f64; m]))
    }

    /// Normalises strictly positive masses into weights.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Degenerate(format!(
                "cannot normalise masses with total {total}"
            )));
        }
        Self::new(masses.iter().map(|m| m / total).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }
}

impl Index<usize> for SimplexWeights {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// Seeded pseudo-random source.
///
/// Backed by ChaCha8 keyed through `SeedableRng::seed_from_u64`, whose output
/// stream is fixed across platforms. Independent streams for (round, client)
/// pairs come from [`SeededRng::derive`], which mixes the labels into the seed
/// with SplitMix64 so that draws for one client never depend on how many
/// draws another client made.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A generator for the labelled sub-stream `labels` of `seed`.
    pub fn derive(seed: u64, labels: &[u64]) -> Self {
        let mixed = labels
            .iter()
            .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)));
        Self::new(mixed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        let dist = Gamma::new(shape, 1.0)
            .map_err(|e| Error::param(format!("gamma shape {shape}: {e}")))?;
        Ok(dist.sample(&mut self.inner))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..length`, in ascending order.
    pub fn sample_indices(&mut self, length: usize, amount: usize) -> Result<Vec<usize>> {
        if amount > length {
            return Err(Error::param(format!(
                "cannot sample {amount} of {length} without replacement"
            )));
        }
        let mut picked = rand::seq::index::sample(&mut self.inner, length, amount).into_vec();
        picked.sort_unstable();
        Ok(picked)
    }
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::param("softmax of an empty vector"));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("value {pos} is not finite")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::param(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// Temperature softmax `p_i ∝ exp(v_i / τ)`.
pub fn softmax_temperature(values: &[f64], tau: f64) -> Result<SimplexWeights> {
    check_tau(tau)?;
    check_values(values)?;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let masses: Vec<f64> = values.iter().map(|v| ((v - max) / tau).exp()).collect();
    SimplexWeights::from_masses(&masses)
}

/// Prior-weighted softmax `p_i ∝ q_i exp(v_i / τ)`, the maximiser of the
/// entropy relative to `prior`.
pub fn softmax_with_prior(
    values: &[f64],
    tau: f64,
    prior: &SimplexWeights,
) -> Result<SimplexWeights> {
    check_tau(tau)?;
    check_values(values)?;
    Error::check_dim(values.len(), prior.len())?;
    if let Some(pos) = prior.iter().position(|q| *q <= 0.0) {
        return Err(Error::param(format!(
            "prior weight {pos} must be strictly positive"
        )));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let masses: Vec<f64> = values
        .iter()
        .zip(prior.iter())
        .map(|(v, q)| q * ((v - max) / tau).exp())
        .collect();
    SimplexWeights::from_masses(&masses)
}

/// Shannon entropy in nats.
pub fn entropy(p: &SimplexWeights) -> f64 {
    -p.iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| pi * pi.ln())
        .sum::<f64>()
}

/// `Σ_i (w_i − p_i)² / p_i`; the second argument is the reference in the
/// denominator.
pub fn chi_square_divergence(w: &SimplexWeights, p: &SimplexWeights) -> Result<f64> {
    Error::check_dim(w.len(), p.len())?;
    if let Some(pos) = p.iter().position(|pi| *pi <= 0.0) {
        return Err(Error::Domain(format!(
            "chi-square reference weight {pos} is zero"
        )));
    }
    Ok(w.iter()
        .zip(p.iter())
        .map(|(wi, pi)| (wi - pi).powi(2) / pi)
        .sum())
}

/// Angle in radians between a loss vector and the all-ones direction.
pub fn fair_angle(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::param("fair angle of an empty loss vector"));
    }
    if let Some(pos) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::Input(format!("loss {pos} is not finite")));
    }
    if let Some(pos) = losses.iter().position(|l| *l < 0.0) {
        return Err(Error::param(format!("loss {pos} is negative")));
    }
    let norm = losses.iter().map(|l| l * l).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Degenerate(
            "fair angle of an all-zero loss vector".into(),
        ));
    }
    let sum: f64 = losses.iter().sum();
    let cos = sum / (norm * (losses.len() as f64).sqrt());
    Ok(cos.clamp(-1.0, 1.0).acos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, LN_2};

    fn w(v: &[f64]) -> SimplexWeights {
        SimplexWeights::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_temperature(&[1.0, 1.0, 1.0], 0.1).unwrap();
        for pi in p.iter() {
            assert_abs_diff_eq!(*pi, 1.0 / 3.0, epsilon = 1e-15);
        }

        // 1 / (1 + e^4.5) evaluated independently.
        let e = 4.5f64.exp();
        let p = softmax_temperature(&[0.0, 4.5], 1.0).unwrap();
        assert_abs_diff_eq!(p[0], 1.0 / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.010_986_942_630_593_2, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.989_013_057_369_406_8, epsilon = 1e-12);

        let p = softmax_temperature(&[3.0, 7.0], 1e9).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(
            softmax_temperature(&[1.0], 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            softmax_temperature(&[1.0], -1.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            softmax_temperature(&[], 1.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            softmax_temperature(&[f64::NAN, 1.0], 1.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn softmax_large_losses_do_not_overflow() {
        let p = softmax_temperature(&[1e4, 1e4 + 1.0], 1e-3).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn prior_softmax_examples() {
        let p = softmax_with_prior(&[2.0, 2.0], 1.0, &w(&[0.25, 0.75])).unwrap();
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-15);

        let values = [0.3, -1.2, 4.0];
        let a = softmax_with_prior(&values, 1.0, &SimplexWeights::uniform(3).unwrap()).unwrap();
        let b = softmax_temperature(&values, 1.0).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-15);
        }

        let e = 4.5f64.exp();
        let p = softmax_with_prior(&[0.0, 4.5], 1.0, &w(&[0.9, 0.1])).unwrap();
        assert_abs_diff_eq!(p[0], 0.9 / (0.9 + 0.1 * e), epsilon = 1e-14);
        assert_abs_diff_eq!(p[0], 0.0909, epsilon = 1e-4);
        assert_abs_diff_eq!(p[1], 0.9091, epsilon = 1e-4);
    }

    #[test]
    fn prior_softmax_rejects_zero_prior() {
        let err = softmax_with_prior(&[1.0, 2.0], 1.0, &w(&[0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&w(&[1.0, 0.0])), 0.0);
        assert_abs_diff_eq!(entropy(&w(&[0.5, 0.5])), LN_2, epsilon = 1e-15);
        let direct = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert_abs_diff_eq!(entropy(&w(&[0.25, 0.75])), direct, epsilon = 1e-15);
        assert_abs_diff_eq!(direct, 0.562_335, epsilon = 1e-6);
    }

    #[test]
    fn chi_square_examples() {
        let p = w(&[0.25, 0.75]);
        assert_eq!(chi_square_divergence(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(
            chi_square_divergence(&w(&[0.5, 0.5]), &p).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            chi_square_divergence(&w(&[1.0, 0.0]), &w(&[0.5, 0.5])).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            chi_square_divergence(&w(&[0.5, 0.5]), &w(&[1.0, 0.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn fair_angle_examples() {
        assert_abs_diff_eq!(fair_angle(&[3.0; 7]).unwrap(), 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(fair_angle(&[1.0, 0.0]).unwrap(), FRAC_PI_4, epsilon = 1e-15);
        assert!(matches!(fair_angle(&[0.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(matches!(fair_angle(&[1.0, -0.5]), Err(Error::Parameter(_))));
        assert!(matches!(fair_angle(&[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn simplex_weights_validation() {
        assert!(SimplexWeights::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexWeights::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexWeights::new(vec![]).is_err());
        assert!(SimplexWeights::new(vec![0.5, 0.5 + 1e-10]).is_ok());
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(7);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);

        let mut c = SeededRng::derive(7, &[1, 2]);
        let mut d = SeededRng::derive(7, &[2, 1]);
        assert_ne!(c.next_u64(), d.next_u64());

        let picked = SeededRng::new(3).sample_indices(10, 4).unwrap();
        assert_eq!(picked.len(), 4);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        assert!(SeededRng::new(3).sample_indices(3, 4).is_err());
    }

    fn simplex_point(raw: &[f64]) -> SimplexWeights {
        SimplexWeights::from_masses(raw).unwrap()
    }

    fn random_simplex(rng: &mut SeededRng, m: usize) -> SimplexWeights {
        let raw: Vec<f64> = (0..m).map(|_| rng.uniform() + 1e-12).collect();
        simplex_point(&raw)
    }

    #[test]
    fn uniform_maximises_entropy() {
        let mut rng = SeededRng::new(11);
        for _ in 0..1000 {
            let m = 2 + rng.index(7);
            let p = random_simplex(&mut rng, m);
            let uniform = SimplexWeights::uniform(m).unwrap();
            assert!(entropy(&p) <= entropy(&uniform) + 1e-12);
        }
    }

    #[test]
    fn entropy_is_concave_on_the_simplex() {
        let mut rng = SeededRng::new(12);
        for _ in 0..1000 {
            let m = 2 + rng.index(7);
            let p = random_simplex(&mut rng, m);
            let q = random_simplex(&mut rng, m);
            let lambda = rng.uniform_range(1e-6, 1.0 - 1e-6);
            let mix: Vec<f64> = p
                .iter()
                .zip(q.iter())
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let mix = simplex_point(&mix);
            assert!(entropy(&mix) >= lambda * entropy(&p) + (1.0 - lambda) * entropy(&q) - 1e-12);
        }
    }

    proptest! {
        #[test]
        fn softmax_is_a_simplex_point(
            values in prop::collection::vec(-1e3f64..1e3, 1..12),
            log_tau in -6f64..12.0,
        ) {
            let tau = 10f64.powf(log_tau);
            let p = softmax_temperature(&values, tau).unwrap();
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE);
        }

        #[test]
        fn softmax_is_shift_invariant(
            values in prop::collection::vec(-50f64..50.0, 1..10),
            shift in -100f64..100.0,
            tau in 0.05f64..20.0,
        ) {
            let a = softmax_temperature(&values, tau).unwrap();
            let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
            let b = softmax_temperature(&shifted, tau).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn higher_loss_gets_higher_weight(
            values in prop::collection::vec(0f64..10.0, 2..10),
            tau in 0.1f64..100.0,
        ) {
            let p = softmax_temperature(&values, tau).unwrap();
            for i in 0..values.len() {
                for j in 0..values.len() {
                    let gap = (values[i] - values[j]) / tau;
                    if gap > 1e-6 && gap < 30.0 {
                        prop_assert!(p[i] > p[j]);
                    }
                    if values[i] >= values[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
            }
        }

        #[test]
        fn small_temperature_concentrates_on_argmax(
            values in prop::collection::vec(0f64..10.0, 2..8),
        ) {
            let (arg, max) = values
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
            let runner_up = values
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != arg)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assume!(max - runner_up > 1e-3);
            let p = softmax_temperature(&values, 1e-6).unwrap();
            prop_assert!(p[arg] > 1.0 - 1e-6);
            let flat = softmax_temperature(&values, 1e12).unwrap();
            for x in flat.iter() {
                prop_assert!((x - 1.0 / values.len() as f64).abs() < 1e-9);
            }
        }

        #[test]
        fn chi_square_is_nonnegative(
            raw_w in prop::collection::vec(0.01f64..1.0, 1..8),
            raw_p in prop::collection::vec(0.01f64..1.0, 1..8),
        ) {
            let m = raw_w.len().min(raw_p.len());
            let w = simplex_point(&raw_w[..m]);
            let p = simplex_point(&raw_p[..m]);
            let chi = chi_square_divergence(&w, &p).unwrap();
            prop_assert!(chi >= 0.0);
            prop_assert!(chi_square_divergence(&p, &p).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn fair_angle_stays_in_first_quadrant(
            losses in prop::collection::vec(0f64..100.0, 1..20),
        ) {
            prop_assume!(losses.iter().any(|l| *l > 0.0));
            let angle = fair_angle(&losses).unwrap();
            prop_assert!((0.0..=FRAC_PI_2).contains(&angle));
        }
    }
}
