//! Oracle-backed validation runs behind `gradcheck` and `oracle-compare`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gemmed::gemmed::{dual_gradient, gibbs_expectations, DualState, FConditioning, Instance};
use gemmed::kernels::{gram_matrix, KernelSpec};
use gemmed::oracle::{exact_posterior, finite_diff_dual};
use gemmed::{Label, Result};

pub const GRADIENT_TOLERANCE: f64 = 1e-5;
/// Relative errors are measured against `max(|a|, |b|, floor)`.
pub const GRADIENT_FLOOR: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-4;
pub const SE_MULTIPLE: f64 = 3.0;
pub const MIN_WITHIN_FRACTION: f64 = 0.95;
const C: f64 = 10.0;
const SWEEPS: usize = 200;
const DRAWS: usize = 50;
const BURN_IN: usize = 10;

/// Random rbf instance on points in `[-2, 2]²` with feasible interior duals.
fn random_case(n: usize, rng: &mut ChaCha8Rng) -> Result<(Instance, DualState)> {
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
        .collect();
    let gram = gram_matrix(&KernelSpec::rbf(rng.random_range(0.2..1.0)), &xs)?;
    let labels = (0..n)
        .map(|_| {
            if rng.random::<bool>() {
                Label::Pos
            } else {
                Label::Neg
            }
        })
        .collect();
    let d = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
    let p0 = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
    let gamma_hat = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
    let beta_hat = [rng.random_range(0.2..0.5), rng.random_range(0.2..0.5)];
    let inst = Instance::new(gram, labels, d, p0, gamma_hat, beta_hat, C)?;
    let state = DualState {
        lambda: (0..n).map(|_| rng.random_range(0.05..1.5)).collect(),
        mu: [rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)],
        kappa: [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)],
    };
    Ok((inst, state))
}

/// Worst relative error between analytic and finite-difference dual gradients.
pub fn gradient_check(n: usize, seed: u64, trials: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (inst, state) = random_case(n, &mut rng)?;
        let exact = exact_posterior(&state, &inst)?;
        let analytic = dual_gradient(&state, &exact.expectations, &inst)?.flatten();
        let (fd, _) = finite_diff_dual(&state, &inst, 0.99 * C, FD_STEP)?;
        for (a, b) in analytic.iter().zip(fd.flatten()) {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(GRADIENT_FLOOR));
        }
    }
    Ok(worst)
}

pub struct Comparison {
    /// Largest `|estimate − exact| / SE` over all expectations and trials.
    pub max_deviation: f64,
    pub within: usize,
    pub total: usize,
}

pub fn oracle_compare(n: usize, seed: u64, trials: usize) -> Result<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Comparison {
        max_deviation: 0.0,
        within: 0,
        total: 0,
    };
    for _ in 0..trials {
        let (inst, state) = random_case(n, &mut rng)?;
        let exact = exact_posterior(&state, &inst)?.expectations.flatten();
        let est = gibbs_expectations(
            &state,
            &inst,
            SWEEPS,
            DRAWS,
            BURN_IN,
            FConditioning::LastDraw,
            &mut rng,
        )?;
        for ((m, se), e) in est
            .mean
            .flatten()
            .iter()
            .zip(est.std_err.flatten())
            .zip(&exact)
        {
            let gap = (m - e).abs();
            // zero SE with an exact match happens for empty classes
            let z = if gap == 0.0 { 0.0 } else { gap / se };
            out.max_deviation = out.max_deviation.max(z);
            out.within += (z <= SE_MULTIPLE) as usize;
            out.total += 1;
        }
    }
    Ok(out)
}
