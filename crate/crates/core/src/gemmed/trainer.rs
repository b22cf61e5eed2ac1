use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gibbs_expectations_from, ChainInit, DualState, Expectations, HyperParams, Instance};
use crate::baselines::{train_svm, KernelExpansion};
use crate::data::{Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::gem::{knn_distance_sum, loo_threshold, GemConfig, GemStats};
use crate::kernels::{gram_matrix, GramMatrix, KernelSpec};

/// Starting duals: `μ = κ = 0` and λ from the baseline SVM, clipped to `[0, C₁]`.
///
/// Falls back to `λ = C₁/2` when the SVM cannot be trained.
pub fn init_duals(data: &LabeledDataset, kernel: &KernelSpec, hyper: &HyperParams) -> DualState {
    let cap = hyper.lambda_cap();
    let lambda = match train_svm(data, kernel, hyper.svm_c, hyper.svm_max_iter) {
        Ok(svm) => svm.alpha().iter().map(|a| a.clamp(0.0, cap)).collect(),
        Err(_) => vec![cap / 2.0; data.len()],
    };
    DualState {
        lambda,
        mu: [0.0; 2],
        kappa: [0.0; 2],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualGradient {
    pub lambda: Vec<f64>,
    pub mu: [f64; 2],
    pub kappa: [f64; 2],
}

impl DualGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.lambda.clone();
        v.extend(self.mu);
        v.extend(self.kappa);
        v
    }
}

/// Gradient of the dual objective given posterior expectations:
///
/// ```text
/// ∂D/∂λ_n = 1 − 1/(c − λ_n) − E[η_n y_n f_n]
/// ∂D/∂μ_z = −γ̂_z + E[Σ_{n:z} η_n d̃_n]
/// ∂D/∂κ_z = β̂_z − E[Σ_{n:z} η_n] / |T|
/// ```
pub fn dual_gradient(
    state: &DualState,
    expect: &Expectations,
    instance: &Instance,
) -> Result<DualGradient> {
    instance.check_state(state)?;
    if expect.eta_y_f.len() != instance.len() {
        return Err(Error::Input(
            "expectations do not match the instance size".into(),
        ));
    }
    let c = instance.c;
    if let Some((n, l)) = state.lambda.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(Error::Invariant(format!(
            "lambda[{n}] = {l} must stay below c = {c}"
        )));
    }
    let lambda = state
        .lambda
        .iter()
        .zip(&expect.eta_y_f)
        .map(|(&l, &e)| 1.0 - 1.0 / (c - l) - e)
        .collect();
    let total = instance.len() as f64;
    let mu = [0, 1].map(|z| -instance.gamma_hat[z] + expect.eta_d[z]);
    let kappa = [0, 1].map(|z| instance.beta_hat[z] - expect.eta_count[z] / total);
    Ok(DualGradient { lambda, mu, kappa })
}

/// Cheap estimate of the dual objective for progress traces.
///
/// Replaces `log Z` by the mean-field lower bound at independent Bernoulli
/// indicators with means `eta_hat`, so the value is an upper bound on `D`.
pub fn dual_objective_estimate(state: &DualState, instance: &Instance, eta_hat: &[f64]) -> f64 {
    let n = instance.len();
    let v = instance.weighted(&state.lambda, eta_hat);
    let mut elbo = 0.5 * instance.gram.quad(&v);
    for i in 0..n {
        let q = eta_hat[i].clamp(0.0, 1.0);
        let l = state.lambda[i];
        elbo += 0.5 * l * l * instance.gram.get(i, i) * q * (1.0 - q);
        let z = instance.labels[i].index();
        elbo += q * (-state.mu[z] * instance.d_tilde[i] + state.kappa[z] / n as f64);
        let p0 = instance.p0[i];
        elbo += q * p0.ln() + (1.0 - q) * (1.0 - p0).ln();
        // Bernoulli entropy
        if q > 0.0 {
            elbo -= q * q.ln();
        }
        if q < 1.0 {
            elbo -= (1.0 - q) * (1.0 - q).ln();
        }
    }
    instance.dual_explicit_terms(state) - elbo
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detection {
    Nominal,
    Anomaly,
}

/// A trained classifier and detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kernel: KernelSpec,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub lambda_star: Vec<f64>,
    pub mu: [f64; 2],
    pub kappa: [f64; 2],
    /// Posterior-mean indicators; low values mark likely anomalies.
    pub eta_hat: Vec<f64>,
    pub gem: GemStats,
    /// Detection threshold on the k-NN distance sum to the nominal set.
    pub theta: f64,
    /// Neighbor count used for detection.
    pub k: usize,
    pub hyper: HyperParams,
    /// Dual objective estimate after each step.
    pub trace: Vec<f64>,
    pub steps_run: usize,
}

impl TrainedModel {
    /// Training indices with `η̂ > ½`.
    pub fn nominal_indices(&self) -> Vec<usize> {
        (0..self.eta_hat.len())
            .filter(|&i| self.eta_hat[i] > 0.5)
            .collect()
    }

    pub fn nominal_points(&self) -> Vec<Vec<f64>> {
        self.nominal_indices()
            .into_iter()
            .map(|i| self.features[i].clone())
            .collect()
    }

    /// The prediction rule with weights `η̂_n λ*_n`.
    pub fn rule(&self) -> KernelExpansion {
        KernelExpansion {
            kernel: self.kernel,
            support: self.features.clone(),
            labels: self.labels.clone(),
            weights: self
                .eta_hat
                .iter()
                .zip(&self.lambda_star)
                .map(|(e, l)| e * l)
                .collect(),
        }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.rule().decision(x)
    }

    /// `sign(Σ η̂_n λ*_n y_n K(x, x_n))`, zero mapped to +1.
    pub fn predict(&self, x: &[f64]) -> Label {
        self.rule().predict(x)
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Vec<Label> {
        self.rule().predict_all(xs)
    }

    /// k-NN distance sum from `x` to the learned nominal set.
    pub fn anomaly_score(&self, x: &[f64]) -> Result<f64> {
        let nominal = self.nominal_points();
        if nominal.len() < self.k {
            return Err(Error::Config(format!(
                "nominal set has {} points, fewer than k = {}",
                nominal.len(),
                self.k
            )));
        }
        knn_distance_sum(x, &nominal, self.k)
    }

    pub fn detect(&self, x: &[f64]) -> Result<Detection> {
        Ok(if self.anomaly_score(x)? > self.theta {
            Detection::Anomaly
        } else {
            Detection::Nominal
        })
    }

    /// Scores and calls for many points, reusing the nominal set.
    pub fn detect_all(&self, xs: &[Vec<f64>]) -> Result<Vec<(f64, Detection)>> {
        let nominal = self.nominal_points();
        if nominal.len() < self.k {
            return Err(Error::Config(format!(
                "nominal set has {} points, fewer than k = {}",
                nominal.len(),
                self.k
            )));
        }
        xs.iter()
            .map(|x| {
                let s = knn_distance_sum(x, &nominal, self.k)?;
                Ok((
                    s,
                    if s > self.theta {
                        Detection::Anomaly
                    } else {
                        Detection::Nominal
                    },
                ))
            })
            .collect()
    }
}

/// One projected ascent step: `λ ← clip(λ + φ ∂λ, 0, cap)`, `μ ← max(μ + ψ ∂μ, 0)`,
/// `κ ← max(κ + τ ∂κ, 0)`.
///
/// Returns the largest projected-gradient magnitude `|Δ|/rate` over all coordinates.
pub fn projected_step(
    state: &mut DualState,
    grad: &DualGradient,
    rates: (f64, f64, f64),
    cap: f64,
) -> f64 {
    let (phi, psi, tau) = rates;
    let mut residual: f64 = 0.0;
    for (l, g) in state.lambda.iter_mut().zip(&grad.lambda) {
        let new = (*l + phi * g).clamp(0.0, cap);
        residual = residual.max(((new - *l) / phi).abs());
        *l = new;
    }
    for z in 0..2 {
        let new = (state.mu[z] + psi * grad.mu[z]).max(0.0);
        residual = residual.max(((new - state.mu[z]) / psi).abs());
        state.mu[z] = new;
        let new = (state.kappa[z] + tau * grad.kappa[z]).max(0.0);
        residual = residual.max(((new - state.kappa[z]) / tau).abs());
        state.kappa[z] = new;
    }
    residual
}

/// Trains with the Gram matrix built from `kernel`.
pub fn train(
    data: &LabeledDataset,
    kernel: &KernelSpec,
    gem_config: &GemConfig,
    hyper: &HyperParams,
) -> Result<TrainedModel> {
    data.require_both_classes()?;
    let gram = gram_matrix(kernel, &data.features)?;
    train_with_gram(data, kernel, gram, gem_config, hyper)
}

/// Projected stochastic gradient ascent on the dual.
///
/// Each step estimates the expectations by Gibbs sampling, then moves
/// `λ ← clip(λ + φ ∂λ, 0, C₁)`, `μ ← max(μ + ψ ∂μ, 0)`, `κ ← max(κ + τ ∂κ, 0)`.
/// A final Gibbs pass at the last duals supplies `η̂`.
pub fn train_with_gram(
    data: &LabeledDataset,
    kernel: &KernelSpec,
    gram: GramMatrix,
    gem_config: &GemConfig,
    hyper: &HyperParams,
) -> Result<TrainedModel> {
    hyper.validate()?;
    data.require_both_classes()?;
    let gem = GemStats::compute(data, gem_config)?;
    let instance = Instance::from_parts(data, gram, &gem, hyper, gem_config.target_coverage)?;
    let mut state = init_duals(data, kernel, hyper);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let cap = hyper.lambda_cap();
    let mut trace = Vec::with_capacity(hyper.steps);
    let start = match hyper.chain_init {
        ChainInit::MeSet => gem.me_indicator(),
        ChainInit::AllOnes => vec![1.0; data.len()],
    };
    let mut quiet_steps = 0;
    let mut steps_run = 0;

    for _ in 0..hyper.steps {
        let est = gibbs_expectations_from(
            &state,
            &instance,
            &start,
            hyper.gibbs_sweeps,
            hyper.inner_draws,
            hyper.burn_in,
            hyper.f_conditioning,
            &mut rng,
        )?;
        let grad = dual_gradient(&state, &est.mean, &instance)?;
        let residual = projected_step(&mut state, &grad, hyper.rates, cap);
        debug_assert!(state.is_feasible(cap));
        trace.push(dual_objective_estimate(
            &state,
            &instance,
            &est.mean.eta_hat,
        ));
        steps_run += 1;
        if hyper.early_stop {
            quiet_steps = if residual < 1e-3 { quiet_steps + 1 } else { 0 };
            if quiet_steps >= 5 {
                break;
            }
        }
    }

    let last = gibbs_expectations_from(
        &state,
        &instance,
        &start,
        hyper.gibbs_sweeps,
        hyper.inner_draws,
        hyper.burn_in,
        hyper.f_conditioning,
        &mut rng,
    )?;
    let eta_hat = last.mean.eta_hat;
    let nominal: Vec<Vec<f64>> = (0..data.len())
        .filter(|&i| eta_hat[i] > 0.5)
        .map(|i| data.features[i].clone())
        .collect();
    if nominal.len() < gem_config.k + 1 {
        return Err(Error::Training(format!(
            "only {} samples have eta_hat > 1/2 (need at least k+1 = {}); mean eta_hat = {:.3}, mu = {:?}, kappa = {:?}",
            nominal.len(),
            gem_config.k + 1,
            eta_hat.iter().sum::<f64>() / eta_hat.len() as f64,
            state.mu,
            state.kappa,
        )));
    }
    let theta = loo_threshold(&nominal, gem_config.k, gem_config.alpha)?;
    Ok(TrainedModel {
        kernel: *kernel,
        features: data.features.clone(),
        labels: data.labels.clone(),
        lambda_star: state.lambda,
        mu: state.mu,
        kappa: state.kappa,
        eta_hat,
        gem,
        theta,
        k: gem_config.k,
        hyper: hyper.clone(),
        trace,
        steps_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gemmed::gibbs_expectations;
    use crate::oracle::exact_dual_value;
    use proptest::prelude::*;
    use rand::Rng;

    /// Two tight clusters around (±3, 0), perfectly separable by a line through the origin.
    fn separable(per_class: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for label in Label::BOTH {
            for _ in 0..per_class {
                let s = -label.sign();
                features.push(vec![
                    3.0 * s + rng.random_range(-0.5..0.5),
                    rng.random_range(-1.0..1.0),
                ]);
                labels.push(label);
            }
        }
        LabeledDataset::new(features, labels, None).unwrap()
    }

    fn quick() -> HyperParams {
        HyperParams {
            steps: 30,
            ..HyperParams::default()
        }
    }

    fn small_instance(n: usize, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let gram = gram_matrix(&KernelSpec::rbf(0.5), &xs).unwrap();
        let labels = (0..n)
            .map(|i| if i % 2 == 0 { Label::Pos } else { Label::Neg })
            .collect();
        let d = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let p0 = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
        Instance::new(gram, labels, d, p0, [0.3, 0.2], [0.4, 0.3], 10.0).unwrap()
    }

    #[test]
    fn init_duals_start_at_zero_mu_kappa() {
        let data = separable(5, 1);
        let hyper = HyperParams::default();
        let s = init_duals(&data, &KernelSpec::linear(), &hyper);
        assert_eq!(s.mu, [0.0; 2]);
        assert_eq!(s.kappa, [0.0; 2]);
        assert!(s.is_feasible(hyper.lambda_cap()));
    }

    #[test]
    fn decoupled_gradient() {
        let inst = small_instance(4, 3);
        let state = DualState::zeros(4);
        let ex = Expectations {
            eta_y_f: vec![0.0; 4],
            eta_d: [0.3, 0.25],
            eta_count: [1.0, 1.0],
            eta_hat: vec![0.5; 4],
        };
        let g = dual_gradient(&state, &ex, &inst).unwrap();
        for v in &g.lambda {
            assert!((v - 0.9).abs() < 1e-15);
        }
        assert!((g.kappa[0] - (0.4 - 0.25)).abs() < 1e-15);
        // E[Σηd̃] = γ̂ → ∂μ = 0
        assert_eq!(g.mu[0], 0.0);
    }

    #[test]
    fn gradient_rejects_lambda_at_c() {
        let inst = small_instance(2, 3);
        let state = DualState {
            lambda: vec![10.0, 0.0],
            mu: [0.0; 2],
            kappa: [0.0; 2],
        };
        let ex = Expectations {
            eta_y_f: vec![0.0; 2],
            eta_d: [0.0; 2],
            eta_count: [0.0; 2],
            eta_hat: vec![0.0; 2],
        };
        assert!(matches!(
            dual_gradient(&state, &ex, &inst),
            Err(Error::Invariant(_))
        ));
    }

    proptest! {
        #[test]
        fn projected_step_stays_feasible(
            lambda in prop::collection::vec(0.0f64..9.9, 1..8),
            grads in prop::collection::vec(-1e4f64..1e4, 12),
            mu in prop::array::uniform2(0.0f64..5.0),
            kappa in prop::array::uniform2(0.0f64..5.0),
            phi in 1e-4f64..1e-1,
        ) {
            let n = lambda.len();
            let mut state = DualState { lambda, mu, kappa };
            let grad = DualGradient {
                lambda: grads[..n].to_vec(),
                mu: [grads[8], grads[9]],
                kappa: [grads[10], grads[11]],
            };
            let residual = projected_step(&mut state, &grad, (phi, 2e-2, 2e-2), 9.9);
            prop_assert!(state.is_feasible(9.9));
            prop_assert!(residual >= 0.0);
        }

        #[test]
        fn zero_gradient_is_a_fixed_point(lambda in prop::collection::vec(0.0f64..9.9, 1..8)) {
            let n = lambda.len();
            let mut state = DualState { lambda: lambda.clone(), mu: [0.5, 0.0], kappa: [0.0, 1.0] };
            let grad = DualGradient { lambda: vec![0.0; n], mu: [0.0; 2], kappa: [0.0; 2] };
            prop_assert_eq!(projected_step(&mut state, &grad, (2e-3, 2e-2, 2e-2), 9.9), 0.0);
            prop_assert_eq!(state.lambda, lambda);
        }

        #[test]
        fn mean_field_estimate_bounds_exact_dual(
            seed in 0u64..1000,
            q in prop::collection::vec(0.0f64..=1.0, 6),
            lambda in prop::collection::vec(0.0f64..2.0, 6),
            mu in prop::array::uniform2(0.0f64..2.0),
            kappa in prop::array::uniform2(0.0f64..3.0),
        ) {
            let inst = small_instance(6, seed);
            let state = DualState { lambda, mu, kappa };
            let exact = exact_dual_value(&state, &inst).unwrap();
            prop_assert!(dual_objective_estimate(&state, &inst, &q) >= exact - 1e-9);
        }
    }

    #[test]
    fn projection_clips_each_block() {
        let mut state = DualState {
            lambda: vec![0.1, 9.8],
            mu: [0.01, 1.0],
            kappa: [0.0, 0.0],
        };
        let grad = DualGradient {
            lambda: vec![-100.0, 100.0],
            mu: [-1.0, 1.0],
            kappa: [-1.0, 0.5],
        };
        let r = projected_step(&mut state, &grad, (1e-2, 2e-2, 2e-2), 9.9);
        assert_eq!(state.lambda, vec![0.0, 9.9]);
        assert_eq!(state.mu[0], 0.0);
        assert!((state.mu[1] - 1.02).abs() < 1e-15);
        assert_eq!(state.kappa, [0.0, 0.01]);
        assert!((r - 10.0).abs() < 1e-9);
    }

    #[test]
    fn clean_separable_data_is_fit_exactly() {
        let data = separable(15, 4);
        let kernel = KernelSpec::linear();
        let gem = GemConfig {
            k: 3,
            target_coverage: 1.0,
            ..GemConfig::default()
        };
        assert_eq!(
            train_svm(&data, &kernel, 1.0, 2000)
                .unwrap()
                .predict_all(&data.features),
            data.labels
        );
        let model = train(&data, &kernel, &gem, &quick()).unwrap();
        assert_eq!(model.predict_all(&data.features), data.labels);
        let mean = model.eta_hat.iter().sum::<f64>() / model.eta_hat.len() as f64;
        assert!(mean >= 0.9, "mean eta_hat {mean}");
        assert_eq!(model.steps_run, 30);
        assert_eq!(model.trace.len(), 30);
        assert!(model.theta > 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(15, 5);
        let gem = GemConfig {
            k: 3,
            ..GemConfig::default()
        };
        let a = train(&data, &KernelSpec::linear(), &gem, &quick()).unwrap();
        let b = train(&data, &KernelSpec::linear(), &gem, &quick()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_is_rejected() {
        let mut data = separable(5, 1);
        data.labels = vec![Label::Pos; data.len()];
        assert!(train(
            &data,
            &KernelSpec::linear(),
            &GemConfig::default(),
            &quick()
        )
        .is_err());
    }

    #[test]
    fn detection_on_clean_model() {
        let data = separable(15, 6);
        let gem = GemConfig {
            k: 1,
            target_coverage: 1.0,
            ..GemConfig::default()
        };
        let model = train(&data, &KernelSpec::linear(), &gem, &quick()).unwrap();
        let nominal = model.nominal_points();
        assert_eq!(model.anomaly_score(&nominal[0]).unwrap(), 0.0);
        assert_eq!(model.detect(&nominal[0]).unwrap(), Detection::Nominal);
        assert_eq!(model.detect(&[1e6, -1e6]).unwrap(), Detection::Anomaly);
    }

    #[test]
    fn mirrored_data_gives_mirrored_indicators() {
        // (x, y) and (−x, −y) both present; a few far points play anomalies
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let x = if i < 17 {
                vec![rng.random_range(1.0..4.0), rng.random_range(-2.0..2.0)]
            } else {
                vec![rng.random_range(-12.0..-10.0), rng.random_range(6.0..8.0)]
            };
            features.push(x);
            labels.push(Label::Neg);
        }
        let half = features.len();
        for i in 0..half {
            features.push(features[i].iter().map(|v| -v).collect());
            labels.push(Label::Pos);
        }
        let data = LabeledDataset::new(features, labels, None).unwrap();
        let gem = GemConfig {
            k: 3,
            target_coverage: 0.8,
            ..GemConfig::default()
        };
        let seeds = 60;
        let mut mean = vec![0.0; data.len()];
        for seed in 0..seeds {
            let hyper = HyperParams {
                seed,
                steps: 30,
                ..HyperParams::default()
            };
            let g = GemConfig {
                seed,
                ..gem.clone()
            };
            let m = train(&data, &KernelSpec::linear(), &g, &hyper).unwrap();
            for (acc, e) in mean.iter_mut().zip(&m.eta_hat) {
                *acc += e / seeds as f64;
            }
        }
        for i in 0..half {
            assert!(
                (mean[i] - mean[i + half]).abs() <= 0.05,
                "sample {i}: {} vs mirror {}",
                mean[i],
                mean[i + half]
            );
        }
    }

    #[test]
    fn larger_mu_lowers_indicator_of_farthest_sample() {
        let inst = small_instance(8, 21);
        let far = (0..8)
            .max_by(|&a, &b| inst.d_tilde[a].total_cmp(&inst.d_tilde[b]))
            .unwrap();
        let z = inst.labels[far].index();
        let base = DualState {
            lambda: vec![0.7; 8],
            mu: [0.5; 2],
            kappa: [0.5; 2],
        };
        let mut raised = base.clone();
        raised.mu[z] = 3.0;
        let seeds = 20;
        let avg = |s: &DualState| {
            (0..seeds)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    gibbs_expectations(s, &inst, 60, 20, 10, Default::default(), &mut rng)
                        .unwrap()
                        .mean
                        .eta_hat[far]
                })
                .sum::<f64>()
                / seeds as f64
        };
        let (lo, hi) = (avg(&base), avg(&raised));
        assert!(hi <= lo, "eta_hat rose from {lo} to {hi}");
    }

    #[test]
    fn frozen_indicators_reduce_to_kernel_med() {
        let data = separable(15, 8);
        let gem = GemConfig {
            k: 3,
            ..GemConfig::default()
        };
        let mut model = train(&data, &KernelSpec::linear(), &gem, &quick()).unwrap();
        model.eta_hat = vec![1.0; data.len()];
        model.mu = [0.0; 2];
        model.kappa = [0.0; 2];
        let med = KernelExpansion {
            kernel: model.kernel,
            support: data.features.clone(),
            labels: data.labels.clone(),
            weights: model.lambda_star.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let x = vec![rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
            assert_eq!(model.predict(&x), med.predict(&x));
        }
    }
}
