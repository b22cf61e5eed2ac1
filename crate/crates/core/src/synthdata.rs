//! Two correlated Gaussian classes with ring-shaped training anomalies.
//!
//! Class means are `(3, 3)` for label −1 and `(−3, −3)` for label +1, with
//! common covariance `[[20, 16], [16, 20]]`. A fraction of each class's
//! training quota is replaced by points drawn uniformly (by area) from the
//! origin-centered annulus `R ≤ ‖x‖ ≤ R + 1`; these carry the class label of
//! the quota they fill, so labels are independent of position. Test data is
//! clean.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledDataset};
use crate::error::{input, Result};

pub const COVARIANCE: [[f64; 2]; 2] = [[20.0, 16.0], [16.0, 20.0]];

pub fn class_mean(label: Label) -> [f64; 2] {
    match label {
        Label::Neg => [3.0, 3.0],
        Label::Pos => [-3.0, -3.0],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingExperimentConfig {
    /// Inner ring radius `R`.
    pub radius: f64,
    /// Corruption rate `r_a`.
    pub corruption: f64,
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    pub seed: u64,
}

impl Default for RingExperimentConfig {
    fn default() -> Self {
        Self {
            radius: 55.0,
            corruption: 0.2,
            n_train_per_class: 100,
            n_test_per_class: 2000,
            seed: 0,
        }
    }
}

impl RingExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return input(format!("ring radius must be positive, got {}", self.radius));
        }
        if !(0.0..1.0).contains(&self.corruption) {
            return input(format!(
                "corruption rate must lie in [0,1), got {}",
                self.corruption
            ));
        }
        if self.n_train_per_class == 0 || self.n_test_per_class == 0 {
            return input("per-class sample counts must be positive");
        }
        Ok(())
    }

    /// Anomalies per class in the training set.
    pub fn anomalies_per_class(&self) -> usize {
        (self.corruption * self.n_train_per_class as f64).round() as usize
    }
}

/// One draw from `Normal(class_mean(label), COVARIANCE)`.
pub fn sample_nominal<R: Rng + ?Sized>(label: Label, rng: &mut R) -> Vec<f64> {
    let l11 = COVARIANCE[0][0].sqrt();
    let l21 = COVARIANCE[1][0] / l11;
    let l22 = (COVARIANCE[1][1] - l21 * l21).sqrt();
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let m = class_mean(label);
    vec![m[0] + l11 * z1, m[1] + l21 * z1 + l22 * z2]
}

/// Uniform draw from the annulus `radius ≤ ‖x‖ ≤ radius + 1`.
pub fn sample_ring<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> Vec<f64> {
    let u: f64 = rng.random();
    let r = (radius * radius + u * ((radius + 1.0).powi(2) - radius * radius)).sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    vec![r * theta.cos(), r * theta.sin()]
}

/// `count` ring points with random ±1 labels, all flagged anomalous.
pub fn ring_points(radius: f64, count: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feats = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        feats.push(sample_ring(radius, &mut rng));
        labels.push(if rng.random::<bool>() {
            Label::Pos
        } else {
            Label::Neg
        });
    }
    LabeledDataset {
        features: feats,
        labels,
        anomaly: Some(vec![true; count]),
    }
}

/// Returns `(train, test)`; training rows carry anomaly flags, test rows are clean.
pub fn generate(cfg: &RingExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.anomalies_per_class();
    let mut train: Vec<(Vec<f64>, Label, bool)> = Vec::with_capacity(2 * cfg.n_train_per_class);
    for label in Label::BOTH {
        for _ in 0..cfg.n_train_per_class - m {
            train.push((sample_nominal(label, &mut rng), label, false));
        }
        for _ in 0..m {
            train.push((sample_ring(cfg.radius, &mut rng), label, true));
        }
    }
    train.shuffle(&mut rng);
    let mut test: Vec<(Vec<f64>, Label)> = Vec::with_capacity(2 * cfg.n_test_per_class);
    for label in Label::BOTH {
        for _ in 0..cfg.n_test_per_class {
            test.push((sample_nominal(label, &mut rng), label));
        }
    }
    test.shuffle(&mut rng);

    let mut tf = Vec::with_capacity(train.len());
    let mut tl = Vec::with_capacity(train.len());
    let mut ta = Vec::with_capacity(train.len());
    for (x, l, a) in train {
        tf.push(x);
        tl.push(l);
        ta.push(a);
    }
    let (sf, sl): (Vec<_>, Vec<_>) = test.into_iter().unzip();
    Ok((
        LabeledDataset {
            features: tf,
            labels: tl,
            anomaly: Some(ta),
        },
        LabeledDataset {
            features: sf,
            labels: sl,
            anomaly: None,
        },
    ))
}
