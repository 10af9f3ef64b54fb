//! Mixup augmentation: convex interpolation of standardized input windows
//! and their targets, applied at the input layer during training.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::data::StandardizedSample;
use crate::error::{CourageError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MixupConfig {
    pub enabled: bool,
    /// Shape of the symmetric Beta distribution the mixing weight is drawn
    /// from. Small values concentrate mass near 0 and 1.
    pub alpha: f64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig {
            enabled: false,
            alpha: 0.2,
        }
    }
}

impl MixupConfig {
    pub fn enabled(alpha: f64) -> Self {
        MixupConfig {
            enabled: true,
            alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && self.alpha <= 0.0 {
            return Err(CourageError::config(format!(
                "mixup alpha must be > 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Draws the mixing weight lambda ~ Beta(alpha, alpha) in [0, 1].
pub fn sample_lambda(config: &MixupConfig, rng: &mut impl Rng) -> Result<f64> {
    if config.alpha <= 0.0 {
        return Err(CourageError::config(format!(
            "mixup alpha must be > 0, got {}",
            config.alpha
        )));
    }
    let beta = Beta::new(config.alpha, config.alpha)
        .map_err(|e| CourageError::config(format!("beta distribution: {e}")))?;
    Ok(beta.sample(rng))
}

/// Elementwise convex combination of two standardized windows and both of
/// their targets: `lambda * a + (1 - lambda) * b`.
pub fn mixup_pair(
    a: &StandardizedSample,
    b: &StandardizedSample,
    lambda: f64,
) -> Result<StandardizedSample> {
    if !a.features.same_shape(&b.features) {
        return Err(CourageError::Dim {
            op: "mixup_pair",
            lhs_rows: a.features.rows(),
            lhs_cols: a.features.cols(),
            rhs_rows: b.features.rows(),
            rhs_cols: b.features.cols(),
        });
    }
    let features = a
        .features
        .zip_map(&b.features, |x, y| lambda * x + (1.0 - lambda) * y);
    Ok(StandardizedSample {
        location: a.location.clone(),
        level: a.level,
        state: a.state.clone(),
        anchor: a.anchor,
        features,
        target_week1: lambda * a.target_week1 + (1.0 - lambda) * b.target_week1,
        target_week2: lambda * a.target_week2 + (1.0 - lambda) * b.target_week2,
    })
}

/// Mixes every sample with a partner drawn as a random permutation of the
/// batch, one lambda per pair. Disabled configs and single-sample batches
/// pass through unchanged.
pub fn mixup_batch(
    batch: &[StandardizedSample],
    config: &MixupConfig,
    rng: &mut impl Rng,
) -> Result<Vec<StandardizedSample>> {
    if !config.enabled {
        return Ok(batch.to_vec());
    }
    config.validate()?;
    if batch.len() < 2 {
        log::warn!("mixup on a batch of {}: passthrough", batch.len());
        return Ok(batch.to_vec());
    }
    let partners = random_permutation(batch.len(), rng);
    let mut out = Vec::with_capacity(batch.len());
    for (i, sample) in batch.iter().enumerate() {
        let lambda = sample_lambda(config, rng)?;
        out.push(mixup_pair(sample, &batch[partners[i]], lambda)?);
    }
    Ok(out)
}

/// Fisher-Yates shuffle of 0..n driven by the given RNG.
pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}
