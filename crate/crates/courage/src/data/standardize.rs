//! Per-feature z-scoring fit on the training split only.

use sha2::{Digest, Sha256};

use crate::data::{Level, SampleWindow, FEATURE_DIM};
use crate::error::{CourageError, Result};
use crate::numerics::Matrix;

/// Standard deviations below this are treated as constant features and
/// replaced by 1 so centering maps them to exactly zero.
pub const STD_FLOOR: f64 = 1e-8;

/// Feature and target statistics. Fitting is the only constructor, so
/// applying before fitting is unrepresentable.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: [f64; 2],
    pub target_std: [f64; 2],
}

/// A window in standardized feature/target space.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedSample {
    pub location: String,
    pub level: Level,
    pub state: String,
    pub anchor: chrono::NaiveDate,
    pub features: Matrix,
    pub target_week1: f64,
    pub target_week2: f64,
}

/// Standardized samples plus the digest of the standardizer that produced
/// them, so inference can reject mismatched inputs.
#[derive(Debug, Clone)]
pub struct StandardizedSet {
    pub samples: Vec<StandardizedSample>,
    pub digest: [u8; 32],
}

impl Standardizer {
    /// Fits mean and standard deviation per feature row and per target over
    /// the given (training) windows.
    pub fn fit(windows: &[SampleWindow]) -> Result<Standardizer> {
        if windows.is_empty() {
            return Err(CourageError::contract(
                "cannot fit a standardizer on zero windows",
            ));
        }
        let k = windows[0].features.rows();
        if k != FEATURE_DIM {
            return Err(CourageError::contract(format!(
                "expected {FEATURE_DIM} feature rows, got {k}"
            )));
        }

        let mut mean = vec![0.0; k];
        let mut count = vec![0.0; k];
        for w in windows {
            for r in 0..k {
                for &v in w.features.row(r) {
                    mean[r] += v;
                    count[r] += 1.0;
                }
            }
        }
        for r in 0..k {
            mean[r] /= count[r];
        }
        let mut var = vec![0.0; k];
        for w in windows {
            for r in 0..k {
                for &v in w.features.row(r) {
                    var[r] += (v - mean[r]) * (v - mean[r]);
                }
            }
        }
        let std: Vec<f64> = var
            .iter()
            .zip(&count)
            .map(|(v, n)| clamp_std((v / n).sqrt()))
            .collect();

        let n = windows.len() as f64;
        let mut target_mean = [0.0; 2];
        for w in windows {
            target_mean[0] += w.target_week1;
            target_mean[1] += w.target_week2;
        }
        target_mean[0] /= n;
        target_mean[1] /= n;
        let mut target_var = [0.0; 2];
        for w in windows {
            target_var[0] += (w.target_week1 - target_mean[0]).powi(2);
            target_var[1] += (w.target_week2 - target_mean[1]).powi(2);
        }
        let target_std = [
            clamp_std((target_var[0] / n).sqrt()),
            clamp_std((target_var[1] / n).sqrt()),
        ];

        Ok(Standardizer {
            feature_mean: mean,
            feature_std: std,
            target_mean,
            target_std,
        })
    }

    pub fn apply(&self, w: &SampleWindow) -> StandardizedSample {
        let mut features = w.features.clone();
        for r in 0..features.rows() {
            for c in 0..features.cols() {
                let z = (features.get(r, c) - self.feature_mean[r]) / self.feature_std[r];
                features.set(r, c, z);
            }
        }
        StandardizedSample {
            location: w.location.clone(),
            level: w.level,
            state: w.state.clone(),
            anchor: w.anchor,
            features,
            target_week1: (w.target_week1 - self.target_mean[0]) / self.target_std[0],
            target_week2: (w.target_week2 - self.target_mean[1]) / self.target_std[1],
        }
    }

    pub fn apply_all(&self, windows: &[SampleWindow]) -> StandardizedSet {
        StandardizedSet {
            samples: windows.iter().map(|w| self.apply(w)).collect(),
            digest: self.digest(),
        }
    }

    /// Undoes `apply`, returning to raw feature/target space.
    pub fn inverse(&self, s: &StandardizedSample) -> SampleWindow {
        let mut features = s.features.clone();
        for r in 0..features.rows() {
            for c in 0..features.cols() {
                let v = features.get(r, c) * self.feature_std[r] + self.feature_mean[r];
                features.set(r, c, v);
            }
        }
        SampleWindow {
            location: s.location.clone(),
            level: s.level,
            state: s.state.clone(),
            anchor: s.anchor,
            features,
            target_week1: s.target_week1 * self.target_std[0] + self.target_mean[0],
            target_week2: s.target_week2 * self.target_std[1] + self.target_mean[1],
        }
    }

    /// Maps model outputs from standardized target space back to deaths.
    pub fn destandardize_targets(&self, week1: f64, week2: f64) -> (f64, f64) {
        (
            week1 * self.target_std[0] + self.target_mean[0],
            week2 * self.target_std[1] + self.target_mean[1],
        )
    }

    /// SHA-256 over the canonical little-endian encoding of all statistics.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.feature_mean.len() as u32).to_le_bytes());
        for v in self.feature_mean.iter().chain(&self.feature_std) {
            hasher.update(v.to_le_bytes());
        }
        for v in self.target_mean.iter().chain(&self.target_std) {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().into()
    }
}

fn clamp_std(std: f64) -> f64 {
    if std < STD_FLOOR {
        1.0
    } else {
        std
    }
}
