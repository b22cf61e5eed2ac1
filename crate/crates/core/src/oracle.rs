//! Exact posterior quantities for small instances.
//!
//! Enumerates all `2^|T|` indicator vectors. Given `η` the decision values are
//! Gaussian, `f | η ~ Normal(K v_η, K)` with `v_η = λ ⊙ η ⊙ y`, so integrating
//! `f` out against its normalized prior leaves the log-weight
//!
//! ```text
//! w(η) = ½ v_ηᵀ K v_η + Σ η_n (−μ_{y_n} d̃_n + κ_{y_n}/|T|)
//!        + Σ [η_n log p0_n + (1 − η_n) log(1 − p0_n)]
//! ```
//!
//! and `log Z = logsumexp_η w(η)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemmed::{DualGradient, DualState, Expectations, Instance};

pub const MAX_ORACLE_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub log_partition: f64,
    /// Dual objective `D(λ, μ, κ)`.
    pub dual_value: f64,
    pub expectations: Expectations,
    /// Log-probability of each indicator configuration; bit `n` of the index is `η_n`.
    pub log_probs: Vec<f64>,
}

fn log_weights(state: &DualState, instance: &Instance) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = instance.len();
    let total = n as f64;
    let lin: Vec<f64> = (0..n)
        .map(|i| {
            let z = instance.labels[i].index();
            -state.mu[z] * instance.d_tilde[i] + state.kappa[z] / total + instance.p0[i].ln()
        })
        .collect();
    let off: f64 = instance.p0.iter().map(|p| (1.0 - p).ln()).sum();
    let off_each: Vec<f64> = instance.p0.iter().map(|p| (1.0 - p).ln()).collect();
    let configs = 1usize << n;
    let mut w = Vec::with_capacity(configs);
    let mut means = Vec::with_capacity(configs);
    let mut eta = vec![0.0; n];
    for mask in 0..configs {
        for (i, e) in eta.iter_mut().enumerate() {
            *e = ((mask >> i) & 1) as f64;
        }
        let v = instance.weighted(&state.lambda, &eta);
        let kv = instance.gram.mul(&v);
        let quad: f64 = kv.iter().zip(&v).map(|(a, b)| a * b).sum();
        let mut lw = 0.5 * quad + off;
        for i in 0..n {
            if eta[i] == 1.0 {
                lw += lin[i] - off_each[i];
            }
        }
        w.push(lw);
        means.push(kv);
    }
    (w, means)
}

fn log_sum_exp(w: &[f64]) -> f64 {
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + w.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn refuse_if_large(instance: &Instance) -> Result<()> {
    if instance.len() > MAX_ORACLE_SIZE {
        return Err(Error::Refused(format!(
            "exact enumeration is limited to {MAX_ORACLE_SIZE} samples, got {}",
            instance.len()
        )));
    }
    Ok(())
}

/// `log Z` and `D` only, skipping the expectations.
pub fn exact_dual_value(state: &DualState, instance: &Instance) -> Result<f64> {
    refuse_if_large(instance)?;
    instance.check_state(state)?;
    let (w, _) = log_weights(state, instance);
    Ok(instance.dual_explicit_terms(state) - log_sum_exp(&w))
}

pub fn exact_posterior(state: &DualState, instance: &Instance) -> Result<OracleResult> {
    refuse_if_large(instance)?;
    instance.check_state(state)?;
    let n = instance.len();
    let (w, means) = log_weights(state, instance);
    let log_z = log_sum_exp(&w);
    let log_probs: Vec<f64> = w.iter().map(|x| x - log_z).collect();
    let mut ex = Expectations {
        eta_y_f: vec![0.0; n],
        eta_d: [0.0; 2],
        eta_count: [0.0; 2],
        eta_hat: vec![0.0; n],
    };
    for (mask, (lp, kv)) in log_probs.iter().zip(&means).enumerate() {
        let p = lp.exp();
        for i in 0..n {
            if (mask >> i) & 1 == 1 {
                let z = instance.labels[i].index();
                ex.eta_hat[i] += p;
                ex.eta_y_f[i] += p * instance.labels[i].sign() * kv[i];
                ex.eta_d[z] += p * instance.d_tilde[i];
                ex.eta_count[z] += p;
            }
        }
    }
    Ok(OracleResult {
        log_partition: log_z,
        dual_value: instance.dual_explicit_terms(state) - log_z,
        expectations: ex,
        log_probs,
    })
}

/// Finite-difference derivative of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub value: f64,
    /// Set when a bound forced a one-sided difference.
    pub one_sided: bool,
}

/// Central differences of `func` at `x` with step `h`, falling back to a
/// one-sided difference for coordinates within `h` of `lower`/`upper`.
pub fn central_differences<F>(
    func: F,
    x: &[f64],
    h: f64,
    lower: &[f64],
    upper: &[f64],
) -> Result<Vec<Partial>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Input(format!("step h must be positive, got {h}")));
    }
    let mut out = Vec::with_capacity(x.len());
    let mut p = x.to_vec();
    let f0 = func(x)?;
    for i in 0..x.len() {
        let near_lo = x[i] - h < lower[i];
        let near_hi = x[i] + h > upper[i];
        let partial = match (near_lo, near_hi) {
            (false, false) => {
                p[i] = x[i] + h;
                let fp = func(&p)?;
                p[i] = x[i] - h;
                let fm = func(&p)?;
                Partial {
                    value: (fp - fm) / (2.0 * h),
                    one_sided: false,
                }
            }
            (true, false) => {
                p[i] = x[i] + h;
                Partial {
                    value: (func(&p)? - f0) / h,
                    one_sided: true,
                }
            }
            (false, true) => {
                p[i] = x[i] - h;
                Partial {
                    value: (f0 - func(&p)?) / h,
                    one_sided: true,
                }
            }
            (true, true) => {
                return Err(Error::Input(format!(
                    "coordinate {i}: feasible interval narrower than 2h"
                )))
            }
        };
        p[i] = x[i];
        out.push(partial);
    }
    Ok(out)
}

/// Finite-difference gradient of the exact dual objective.
///
/// Coordinates are ordered `λ_1..λ_N, μ_-, μ_+, κ_-, κ_+`; λ is bounded by
/// `[0, lambda_cap]` and μ, κ below by 0.
pub fn finite_diff_dual(
    state: &DualState,
    instance: &Instance,
    lambda_cap: f64,
    h: f64,
) -> Result<(DualGradient, Vec<bool>)> {
    refuse_if_large(instance)?;
    instance.check_state(state)?;
    let n = instance.len();
    let mut x = state.lambda.clone();
    x.extend(state.mu);
    x.extend(state.kappa);
    let lower = vec![0.0; n + 4];
    let mut upper = vec![lambda_cap; n];
    upper.extend([f64::INFINITY; 4]);
    let unpack = |p: &[f64]| DualState {
        lambda: p[..n].to_vec(),
        mu: [p[n], p[n + 1]],
        kappa: [p[n + 2], p[n + 3]],
    };
    let parts = central_differences(
        |p| exact_dual_value(&unpack(p), instance),
        &x,
        h,
        &lower,
        &upper,
    )?;
    let vals: Vec<f64> = parts.iter().map(|p| p.value).collect();
    let flags = parts.iter().map(|p| p.one_sided).collect();
    Ok((
        DualGradient {
            lambda: vals[..n].to_vec(),
            mu: [vals[n], vals[n + 1]],
            kappa: [vals[n + 2], vals[n + 3]],
        },
        flags,
    ))
}
