use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gemmed::gemmed::{dual_gradient, gibbs_expectations, DualState, FConditioning, Instance};
use gemmed::kernels::{gram_matrix, KernelSpec};
use gemmed::oracle::{exact_posterior, finite_diff_dual};
use gemmed::Label;

fn case(n: usize, seed: u64) -> (Instance, DualState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
        .collect();
    let labels = (0..n)
        .map(|i| if i % 2 == 0 { Label::Pos } else { Label::Neg })
        .collect();
    let inst = Instance::new(
        gram_matrix(&KernelSpec::rbf(0.5), &xs).unwrap(),
        labels,
        (0..n).map(|_| rng.random_range(0.0..0.5)).collect(),
        (0..n).map(|_| rng.random_range(0.2..0.8)).collect(),
        [0.3, 0.4],
        [0.3, 0.3],
        10.0,
    )
    .unwrap();
    let state = DualState {
        lambda: (0..n).map(|_| rng.random_range(0.1..1.5)).collect(),
        mu: [rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)],
        kappa: [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)],
    };
    (inst, state)
}

#[test]
fn gibbs_expectations_agree_with_enumeration() {
    let (mut within, mut total) = (0, 0);
    for seed in 0..10 {
        let (inst, state) = case(6, seed);
        let exact = exact_posterior(&state, &inst)
            .unwrap()
            .expectations
            .flatten();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let est = gibbs_expectations(
            &state,
            &inst,
            400,
            50,
            20,
            FConditioning::LastDraw,
            &mut rng,
        )
        .unwrap();
        for ((m, se), e) in est
            .mean
            .flatten()
            .iter()
            .zip(est.std_err.flatten())
            .zip(&exact)
        {
            within += ((m - e).abs() <= 3.0 * se) as usize;
            total += 1;
        }
    }
    assert!(within as f64 >= 0.95 * total as f64, "{within}/{total}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_gradient_matches_finite_differences(n in 1usize..8, seed in 0u64..10_000) {
        let (inst, state) = case(n, seed);
        let exact = exact_posterior(&state, &inst).unwrap();
        let total: f64 = exact.log_probs.iter().map(|l| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(exact.expectations.eta_hat.iter().all(|e| (0.0..=1.0).contains(e)));
        let g = dual_gradient(&state, &exact.expectations, &inst).unwrap().flatten();
        let (fd, _) = finite_diff_dual(&state, &inst, 9.9, 1e-4).unwrap();
        for (a, b) in g.iter().zip(fd.flatten()) {
            prop_assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3));
        }
    }
}
