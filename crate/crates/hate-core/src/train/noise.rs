//! Smoothed unigram noise distribution with an alias table for O(1) draws.

use rand::Rng;

use crate::dataset::TrainingInstance;
use crate::error::{Error, Result};

/// A distribution over the item vocabulary with full support, used to draw
/// negative samples. Probabilities follow `(count(i as target) + 1)^power`,
/// normalized; the `+1` smoothing keeps every item reachable.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDistribution {
    probs: Vec<f64>,
    // Vose alias table: draw a bucket uniformly, then flip a biased coin to
    // keep the bucket or take its alias.
    accept: Vec<f64>,
    alias: Vec<u32>,
}

impl NoiseDistribution {
    pub fn from_probabilities(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("noise distribution over empty vocabulary".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Config(
                "noise probabilities must be finite and strictly positive".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "noise probabilities sum to {sum}, expected 1"
            )));
        }

        let n = probs.len();
        let mut scaled: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
        let mut small: Vec<u32> = Vec::new();
        let mut large: Vec<u32> = Vec::new();
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i as u32);
            } else {
                large.push(i as u32);
            }
        }
        let mut accept = vec![1.0f64; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        while let (Some(s), Some(l)) = (small.pop(), large.pop()) {
            accept[s as usize] = scaled[s as usize];
            alias[s as usize] = l;
            scaled[l as usize] = (scaled[l as usize] + scaled[s as usize]) - 1.0;
            if scaled[l as usize] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        // Items left on either stack have weight 1 up to rounding.

        Ok(NoiseDistribution {
            probs,
            accept,
            alias,
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, item: u32) -> f64 {
        self.probs[item as usize]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let bucket = rng.gen_range(0..self.probs.len());
        if rng.gen::<f64>() < self.accept[bucket] {
            bucket as u32
        } else {
            self.alias[bucket]
        }
    }

    /// Draws a sample, re-drawing on collision with `avoid` up to 100 times
    /// before accepting the collision.
    pub fn sample_avoiding<R: Rng>(&self, rng: &mut R, avoid: u32) -> u32 {
        let mut draw = self.sample(rng);
        for _ in 0..100 {
            if draw != avoid {
                return draw;
            }
            draw = self.sample(rng);
        }
        draw
    }
}

/// Builds the noise distribution from target occurrence counts over the
/// training split.
pub fn build_noise_distribution(
    train: &[TrainingInstance],
    n_items: usize,
    noise_power: f64,
) -> Result<NoiseDistribution> {
    if train.is_empty() {
        return Err(Error::Config("cannot build a noise distribution without training instances".into()));
    }
    if n_items == 0 {
        return Err(Error::Config("noise distribution over empty vocabulary".into()));
    }
    if !noise_power.is_finite() {
        return Err(Error::Config("noise_power must be finite".into()));
    }
    let mut counts = vec![0u64; n_items];
    for instance in train {
        let t = instance.target as usize;
        if t >= n_items {
            return Err(Error::IndexOutOfRange {
                index: instance.target,
                n_items,
            });
        }
        counts[t] += 1;
    }
    let weights: Vec<f64> = counts
        .iter()
        .map(|&c| ((c + 1) as f64).powf(noise_power))
        .collect();
    let sum: f64 = weights.iter().sum();
    NoiseDistribution::from_probabilities(weights.into_iter().map(|w| w / sum).collect())
}
