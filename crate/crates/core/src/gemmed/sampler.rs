//! Blocked Gibbs sampler over decision values and indicators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, DualState, Instance};
use crate::error::{Error, Result};
use crate::kernels::GramMatrix;

/// Which indicator vector the `f | η` draw of the next sweep conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FConditioning {
    /// The last of the sweep's indicator draws; a valid Gibbs chain.
    #[default]
    LastDraw,
    /// The sweep's averaged indicators `η̂_t` (fractional).
    MeanIndicator,
}

/// Posterior expectations entering the dual gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    /// `E[η_n y_n f(x_n)]`.
    pub eta_y_f: Vec<f64>,
    /// `E[Σ_{n: y_n = z} η_n d̃_n]`.
    pub eta_d: [f64; 2],
    /// `E[Σ_{n: y_n = z} η_n]`.
    pub eta_count: [f64; 2],
    /// `E[η_n]`.
    pub eta_hat: Vec<f64>,
}

impl Expectations {
    fn zeros(n: usize) -> Self {
        Self {
            eta_y_f: vec![0.0; n],
            eta_d: [0.0; 2],
            eta_count: [0.0; 2],
            eta_hat: vec![0.0; n],
        }
    }

    /// All scalar entries, in the order `eta_y_f, eta_d, eta_count, eta_hat`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.eta_y_f.clone();
        v.extend(self.eta_d);
        v.extend(self.eta_count);
        v.extend(&self.eta_hat);
        v
    }

    fn from_flat(v: &[f64], n: usize) -> Self {
        Self {
            eta_y_f: v[..n].to_vec(),
            eta_d: [v[n], v[n + 1]],
            eta_count: [v[n + 2], v[n + 3]],
            eta_hat: v[n + 4..2 * n + 4].to_vec(),
        }
    }
}

/// Monte-Carlo estimate with autocorrelation-aware standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsEstimate {
    pub mean: Expectations,
    pub std_err: Expectations,
    /// Number of post-burn-in sweeps averaged.
    pub samples: usize,
}

/// Draws `f ~ Normal(K (λ ⊙ η ⊙ y), K)`.
pub fn sample_f_given_eta<R: Rng + ?Sized>(
    state: &DualState,
    eta: &[f64],
    gram: &GramMatrix,
    labels: &[crate::data::Label],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = gram.size();
    if eta.len() != n || labels.len() != n || state.lambda.len() != n {
        return Err(Error::Input(
            "sizes of λ, η, labels and Gram matrix differ".into(),
        ));
    }
    let v: Vec<f64> = (0..n)
        .map(|i| state.lambda[i] * eta[i] * labels[i].sign())
        .collect();
    let mean = gram.mul(&v);
    Ok(gram.sample(&mean, rng))
}

/// `P(η_n = 1 | f) = σ(logit p0_n + λ_n y_n f_n − μ_{y_n} d̃_n + κ_{y_n}/|T|)`.
pub fn eta_conditional(state: &DualState, f_n: f64, n: usize, instance: &Instance) -> f64 {
    let y = instance.labels[n].sign();
    sigmoid(instance.eta_offset(state, n) + state.lambda[n] * y * f_n)
}

/// Runs `sweeps` blocked Gibbs sweeps and averages the gradient targets over
/// the sweeps after `burn_in`.
///
/// The chain starts from `η = 1`. Each sweep draws `f | η`, then `draws`
/// independent indicator vectors from `η | f`; the sweep's contribution uses
/// their average `η̂_t`.
pub fn gibbs_expectations<R: Rng + ?Sized>(
    state: &DualState,
    instance: &Instance,
    sweeps: usize,
    draws: usize,
    burn_in: usize,
    conditioning: FConditioning,
    rng: &mut R,
) -> Result<GibbsEstimate> {
    let start = vec![1.0; instance.len()];
    gibbs_expectations_from(
        state,
        instance,
        &start,
        sweeps,
        draws,
        burn_in,
        conditioning,
        rng,
    )
}

/// As [`gibbs_expectations`], with the first `f` draw conditioned on `start`.
#[allow(clippy::too_many_arguments)]
pub fn gibbs_expectations_from<R: Rng + ?Sized>(
    state: &DualState,
    instance: &Instance,
    start: &[f64],
    sweeps: usize,
    draws: usize,
    burn_in: usize,
    conditioning: FConditioning,
    rng: &mut R,
) -> Result<GibbsEstimate> {
    instance.check_state(state)?;
    if start.len() != instance.len() {
        return Err(Error::Input(
            "initial indicator vector does not match the instance size".into(),
        ));
    }
    if sweeps == 0 || draws == 0 || burn_in >= sweeps {
        return Err(Error::Input(format!(
            "need sweeps > burn_in and draws > 0 (sweeps {sweeps}, burn_in {burn_in}, draws {draws})"
        )));
    }
    let n = instance.len();
    let y: Vec<f64> = instance.labels.iter().map(|l| l.sign()).collect();
    let cls: Vec<usize> = instance.labels.iter().map(|l| l.index()).collect();
    let offset: Vec<f64> = (0..n).map(|i| instance.eta_offset(state, i)).collect();

    let mut cond = start.to_vec();
    let mut last = vec![0.0; n];
    let mut counts = vec![0u32; n];
    let mut probs = vec![0.0; n];
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(sweeps - burn_in);

    for t in 0..sweeps {
        let v = instance.weighted(&state.lambda, &cond);
        let mean = instance.gram.mul(&v);
        let f = instance.gram.sample(&mean, rng);
        for i in 0..n {
            probs[i] = sigmoid(offset[i] + state.lambda[i] * y[i] * f[i]);
        }
        counts.iter_mut().for_each(|c| *c = 0);
        for _ in 0..draws {
            for i in 0..n {
                let hit = rng.random::<f64>() < probs[i];
                last[i] = if hit { 1.0 } else { 0.0 };
                counts[i] += hit as u32;
            }
        }
        let eta_t: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
        if t >= burn_in {
            let mut g = Expectations::zeros(n);
            for i in 0..n {
                g.eta_y_f[i] = eta_t[i] * y[i] * f[i];
                g.eta_d[cls[i]] += eta_t[i] * instance.d_tilde[i];
                g.eta_count[cls[i]] += eta_t[i];
                g.eta_hat[i] = eta_t[i];
            }
            history.push(g.flatten());
        }
        cond = match conditioning {
            FConditioning::LastDraw => last.clone(),
            FConditioning::MeanIndicator => eta_t,
        };
    }

    let m = history.len();
    let width = 2 * n + 4;
    let mut means = vec![0.0; width];
    let mut errs = vec![0.0; width];
    let mut series = vec![0.0; m];
    for j in 0..width {
        for (s, h) in series.iter_mut().zip(&history) {
            *s = h[j];
        }
        let (mu, se) = mean_and_std_err(&series);
        means[j] = mu;
        errs[j] = se;
    }
    Ok(GibbsEstimate {
        mean: Expectations::from_flat(&means, n),
        std_err: Expectations::from_flat(&errs, n),
        samples: m,
    })
}

/// Sample mean and its standard error from Geyer's initial monotone
/// sequence estimate of the integrated autocorrelation time.
pub(crate) fn mean_and_std_err(x: &[f64]) -> (f64, f64) {
    let m = x.len();
    let mean = x.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| -> f64 {
        dev[..m - lag]
            .iter()
            .zip(&dev[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / m as f64
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return (mean, 0.0);
    }
    // sum of Γ_k = ρ_{2k} + ρ_{2k+1}, truncated at the first nonpositive pair
    // and forced monotone
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < m {
        let pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    let tau = tau.max(1.0 / m as f64);
    (mean, (c0 * tau / m as f64).sqrt())
}
