//! Anomaly-blind comparison classifiers.
//!
//! [`train_svm`] solves the bias-free soft-margin kernel SVM dual
//!
//! ```text
//! max_α  Σ α_n − ½ Σ α_i α_j y_i y_j K_ij    s.t. 0 ≤ α_n ≤ C
//! ```
//!
//! by exact coordinate ascent. Without an intercept there is no equality
//! constraint, so each coordinate step is a clipped Newton step. The
//! two-stage pipeline first drops the largest k-NN distance sums per class and
//! then trains the SVM on what is left.

use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledDataset};
use crate::error::{input, Result};
use crate::gem::{GemConfig, GemStats};
use crate::kernels::KernelSpec;

pub const KKT_TOLERANCE: f64 = 1e-3;

/// Kernel expansion `x ↦ sign(Σ w_n y_n K(x, x_n))`.
///
/// This is the MED/SVM prediction rule; the weights are dual coefficients
/// (optionally multiplied by indicator means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelExpansion {
    pub kernel: KernelSpec,
    pub support: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub weights: Vec<f64>,
}

impl KernelExpansion {
    fn signed_weights(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.labels)
            .map(|(w, l)| w * l.sign())
            .collect()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.kernel
            .expansion(x, &self.support, &self.signed_weights())
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        Label::from_decision(self.decision(x))
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Vec<Label> {
        let w = self.signed_weights();
        xs.iter()
            .map(|x| Label::from_decision(self.kernel.expansion(x, &self.support, &w)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub rule: KernelExpansion,
    pub c: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Dual objective after each pass over the coordinates.
    pub objective_trace: Vec<f64>,
}

impl SvmModel {
    pub fn alpha(&self) -> &[f64] {
        &self.rule.weights
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        self.rule.predict(x)
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Vec<Label> {
        self.rule.predict_all(xs)
    }
}

fn dual_objective(alpha: &[f64], labels: &[Label], f: &[f64]) -> f64 {
    // f_i = Σ_j α_j y_j K_ij, so ½ αᵀQα = ½ Σ α_i y_i f_i
    alpha
        .iter()
        .zip(labels)
        .zip(f)
        .map(|((a, y), fi)| a - 0.5 * a * y.sign() * fi)
        .sum()
}

/// Soft-margin kernel SVM without intercept, solved to KKT tolerance `1e-3`.
///
/// `max_iter` bounds the number of full passes over the coordinates; when it
/// runs out the last iterate is returned with `converged = false`.
pub fn train_svm(
    data: &LabeledDataset,
    kernel: &KernelSpec,
    c: f64,
    max_iter: usize,
) -> Result<SvmModel> {
    data.require_both_classes()?;
    kernel.validate()?;
    if !(c > 0.0 && c.is_finite()) {
        return input(format!("C must be positive, got {c}"));
    }
    let n = data.len();
    let xs = &data.features;
    let y: Vec<f64> = data.labels.iter().map(|l| l.sign()).collect();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = kernel.eval_unchecked(&xs[i], &xs[j]);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }
    let mut alpha = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut max_violation: f64 = 0.0;
        for i in 0..n {
            let kii = gram[i * n + i];
            let g = 1.0 - y[i] * f[i];
            let violation = if alpha[i] <= 0.0 {
                g.max(0.0)
            } else if alpha[i] >= c {
                (-g).max(0.0)
            } else {
                g.abs()
            };
            max_violation = max_violation.max(violation);
            if kii <= 0.0 || violation == 0.0 {
                continue;
            }
            let new = (alpha[i] + g / kii).clamp(0.0, c);
            let delta = new - alpha[i];
            if delta != 0.0 {
                alpha[i] = new;
                let row = &gram[i * n..(i + 1) * n];
                let s = delta * y[i];
                for (fj, kij) in f.iter_mut().zip(row) {
                    *fj += s * kij;
                }
            }
        }
        trace.push(dual_objective(&alpha, &data.labels, &f));
        if max_violation <= KKT_TOLERANCE {
            converged = true;
            break;
        }
    }
    Ok(SvmModel {
        rule: KernelExpansion {
            kernel: *kernel,
            support: data.features.clone(),
            labels: data.labels.clone(),
            weights: alpha,
        },
        c,
        converged,
        iterations,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageModel {
    pub svm: SvmModel,
    pub gem: GemStats,
    /// Training indices kept by the GEM prescreen, ascending.
    pub kept: Vec<usize>,
    /// Training indices removed as anomalous, ascending.
    pub removed: Vec<usize>,
}

/// GEM prescreen followed by [`train_svm`] on the survivors.
///
/// In each class the `K_z = round(coverage · |T_z|)` samples with the smallest
/// k-NN distance sums survive.
pub fn train_two_stage(
    data: &LabeledDataset,
    kernel: &KernelSpec,
    gem_config: &GemConfig,
    c: f64,
    max_iter: usize,
) -> Result<TwoStageModel> {
    let gem = GemStats::compute(data, gem_config)?;
    let kept = gem.me_set.clone();
    let removed: Vec<usize> = (0..data.len())
        .filter(|i| kept.binary_search(i).is_err())
        .collect();
    let svm = train_svm(&data.subset(&kept), kernel, c, max_iter)?;
    Ok(TwoStageModel {
        svm,
        gem,
        kept,
        removed,
    })
}
