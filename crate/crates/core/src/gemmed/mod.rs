//! The GEM-MED trainer: a Gaussian-process large-margin classifier whose
//! per-sample indicators `η_n ∈ {0,1}` are learned jointly with the decision
//! function under k-NN entropy and coverage constraints.
//!
//! For fixed dual variables `(λ, μ, κ)` the posterior over decision values at
//! the training points `f` and the indicators `η` has the log-density
//!
//! ```text
//! −½ fᵀK⁻¹f + Σ η_n λ_n y_n f_n − Σ μ_{y_n} η_n d̃_n + Σ κ_{y_n} η_n / |T|
//!     + Σ [η_n log p0_n + (1 − η_n) log(1 − p0_n)]
//! ```
//!
//! and training maximizes the concave dual
//!
//! ```text
//! D = Σ [λ_n + log(1 − λ_n/c)] − Σ_z μ_z γ̂_z + Σ_z κ_z β̂_z − log Z(λ, μ, κ)
//! ```
//!
//! by projected stochastic gradient ascent, with the expectations in the
//! gradient estimated by a blocked Gibbs sampler.

mod sampler;
mod trainer;

pub use sampler::{
    eta_conditional, gibbs_expectations, gibbs_expectations_from, sample_f_given_eta, Expectations,
    FConditioning, GibbsEstimate,
};
pub use trainer::{
    dual_gradient, dual_objective_estimate, init_duals, projected_step, train, train_with_gram,
    Detection, DualGradient, TrainedModel,
};

use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledDataset};
use crate::error::{input, Error, Result};
use crate::gem::GemStats;
use crate::kernels::GramMatrix;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Bounds applied when the indicator prior is derived from the target coverage.
pub const MIN_COVERAGE_PRIOR: f64 = 0.01;
pub const MAX_COVERAGE_PRIOR: f64 = 0.99;

/// Starting indicators of the Gibbs chains run during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainInit {
    /// `η = 1` on the GEM minimal-entropy set and `0` elsewhere.
    #[default]
    MeSet,
    /// `η = 1` everywhere.
    AllOnes,
}

/// Trainer and sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Rate `c` of the exponential slack prior.
    pub c: f64,
    /// Clip bound `C₁` for λ; `None` means `0.99 c`.
    pub lambda_cap: Option<f64>,
    /// Indicator prior location; when set (and `p0` is not), `p0 = σ(a_eta − 1)`.
    pub a_eta: Option<f64>,
    /// Explicit prior probability of `η = 1`. With neither `p0` nor `a_eta`
    /// set, the prior matches the GEM target coverage.
    pub p0: Option<f64>,
    /// Projected-gradient steps `T`.
    pub steps: usize,
    /// Step sizes for (λ, μ, κ).
    pub rates: (f64, f64, f64),
    /// Gibbs sweeps per gradient estimate.
    pub gibbs_sweeps: usize,
    /// Indicator draws per sweep.
    pub inner_draws: usize,
    pub burn_in: usize,
    pub f_conditioning: FConditioning,
    /// Indicator vector each training-step chain starts from.
    pub chain_init: ChainInit,
    /// Stop once every projected-gradient residual stays below `1e-3` for
    /// five consecutive steps.
    pub early_stop: bool,
    /// Box bound of the SVM used to initialize λ.
    pub svm_c: f64,
    pub svm_max_iter: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            c: 10.0,
            lambda_cap: None,
            a_eta: None,
            p0: None,
            steps: 200,
            rates: (2e-3, 2e-2, 2e-2),
            gibbs_sweeps: 30,
            inner_draws: 20,
            burn_in: 10,
            f_conditioning: FConditioning::default(),
            chain_init: ChainInit::default(),
            early_stop: false,
            svm_c: 1.0,
            svm_max_iter: 2000,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn lambda_cap(&self) -> f64 {
        self.lambda_cap.unwrap_or(0.99 * self.c)
    }

    /// Prior probability of `η = 1` given the GEM target coverage.
    pub fn prior_p0(&self, target_coverage: f64) -> f64 {
        match (self.p0, self.a_eta) {
            (Some(p), _) => p,
            (None, Some(a)) => sigmoid(a - 1.0),
            (None, None) => target_coverage.clamp(MIN_COVERAGE_PRIOR, MAX_COVERAGE_PRIOR),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return input(format!("c must be positive, got {}", self.c));
        }
        let cap = self.lambda_cap();
        if !(cap > 0.0 && cap < self.c) {
            return input(format!(
                "lambda cap must satisfy 0 < C1 < c, got C1 = {cap}, c = {}",
                self.c
            ));
        }
        if let Some(p0) = self.p0 {
            if !(p0 > 0.0 && p0 < 1.0) {
                return input(format!("prior p0 must lie in (0,1), got {p0}"));
            }
        }
        if let Some(a) = self.a_eta {
            if !a.is_finite() {
                return input(format!("a_eta must be finite, got {a}"));
            }
        }
        let (phi, psi, tau) = self.rates;
        if !(phi > 0.0 && psi > 0.0 && tau > 0.0) {
            return input("learning rates must be positive");
        }
        if self.gibbs_sweeps == 0 || self.inner_draws == 0 {
            return input("gibbs sweeps and inner draws must be positive");
        }
        if self.burn_in >= self.gibbs_sweeps {
            return input(format!(
                "burn-in ({}) must be smaller than the number of sweeps ({})",
                self.burn_in, self.gibbs_sweeps
            ));
        }
        if !(self.svm_c > 0.0) || self.svm_max_iter == 0 {
            return input("svm_c and svm_max_iter must be positive");
        }
        Ok(())
    }

    /// Learning rates outside the range where training is known to be stable.
    pub fn warnings(&self) -> Vec<String> {
        let (phi, psi, tau) = self.rates;
        let mut w = Vec::new();
        if !(1e-4..=1e-2).contains(&phi) {
            w.push(format!(
                "lambda rate {phi} outside the stable range [1e-4, 1e-2]"
            ));
        }
        if !(1e-3..=1e-1).contains(&psi) {
            w.push(format!(
                "mu rate {psi} outside the stable range [1e-3, 1e-1]"
            ));
        }
        if !(1e-3..=1e-1).contains(&tau) {
            w.push(format!(
                "kappa rate {tau} outside the stable range [1e-3, 1e-1]"
            ));
        }
        w
    }
}

/// Dual variables. Per-class arrays are indexed by [`Label::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub mu: [f64; 2],
    pub kappa: [f64; 2],
}

impl DualState {
    pub fn zeros(n: usize) -> Self {
        Self {
            lambda: vec![0.0; n],
            mu: [0.0; 2],
            kappa: [0.0; 2],
        }
    }

    /// Whether λ ∈ [0, cap], μ ⪰ 0 and κ ⪰ 0.
    pub fn is_feasible(&self, cap: f64) -> bool {
        self.lambda.iter().all(|&l| (0.0..=cap).contains(&l))
            && self.mu.iter().chain(&self.kappa).all(|&v| v >= 0.0)
    }
}

/// Everything the posterior over `(f, η)` depends on besides the duals.
#[derive(Debug, Clone)]
pub struct Instance {
    pub gram: GramMatrix,
    pub labels: Vec<Label>,
    /// Normalized k-NN distance sums `d̃_n`.
    pub d_tilde: Vec<f64>,
    /// Prior probability of `η_n = 1`.
    pub p0: Vec<f64>,
    pub gamma_hat: [f64; 2],
    pub beta_hat: [f64; 2],
    pub c: f64,
}

impl Instance {
    pub fn new(
        gram: GramMatrix,
        labels: Vec<Label>,
        d_tilde: Vec<f64>,
        p0: Vec<f64>,
        gamma_hat: [f64; 2],
        beta_hat: [f64; 2],
        c: f64,
    ) -> Result<Self> {
        let n = labels.len();
        if gram.size() != n || d_tilde.len() != n || p0.len() != n {
            return input("instance components have inconsistent sizes");
        }
        if n == 0 {
            return input("instance must have at least one sample");
        }
        if p0.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return input("prior probabilities must lie in (0,1)");
        }
        Ok(Self {
            gram,
            labels,
            d_tilde,
            p0,
            gamma_hat,
            beta_hat,
            c,
        })
    }

    pub fn from_parts(
        data: &LabeledDataset,
        gram: GramMatrix,
        gem: &GemStats,
        hyper: &HyperParams,
        target_coverage: f64,
    ) -> Result<Self> {
        let p0 = vec![hyper.prior_p0(target_coverage); data.len()];
        Self::new(
            gram,
            data.labels.clone(),
            gem.d_tilde.clone(),
            p0,
            gem.gamma_hat,
            gem.beta_hat,
            hyper.c,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub(crate) fn check_state(&self, state: &DualState) -> Result<()> {
        if state.lambda.len() != self.len() {
            return Err(Error::Input(format!(
                "dual state has {} multipliers for {} samples",
                state.lambda.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// `λ ⊙ η ⊙ y`.
    pub(crate) fn weighted(&self, lambda: &[f64], eta: &[f64]) -> Vec<f64> {
        lambda
            .iter()
            .zip(eta)
            .zip(&self.labels)
            .map(|((l, e), y)| l * e * y.sign())
            .collect()
    }

    /// Per-sample additive term of the indicator log-odds that does not depend on f.
    pub(crate) fn eta_offset(&self, state: &DualState, n: usize) -> f64 {
        let z = self.labels[n].index();
        logit(self.p0[n]) - state.mu[z] * self.d_tilde[n] + state.kappa[z] / self.len() as f64
    }

    /// `Σ [λ_n + log(1 − λ_n/c)] − Σ μ_z γ̂_z + Σ κ_z β̂_z`.
    pub(crate) fn dual_explicit_terms(&self, state: &DualState) -> f64 {
        let slack: f64 = state
            .lambda
            .iter()
            .map(|&l| l + (1.0 - l / self.c).ln())
            .sum();
        let mut v = slack;
        for z in 0..2 {
            v += -state.mu[z] * self.gamma_hat[z] + state.kappa[z] * self.beta_hat[z];
        }
        v
    }
}
