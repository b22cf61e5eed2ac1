//! Kernel functions and Gram matrices.
//!
//! The Gram matrix doubles as the covariance of the zero-mean Gaussian-process
//! prior over decision values, so it carries a cached Cholesky factor used for
//! sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::sq_dist;
use crate::error::{input, Error, Result};

pub const DEFAULT_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
}

impl std::str::FromStr for KernelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(KernelKind::Linear),
            "rbf" => Ok(KernelKind::Rbf),
            other => Err(format!("unknown kernel {other:?} (expected linear or rbf)")),
        }
    }
}

/// Kernel choice plus the diagonal jitter applied to Gram matrices.
///
/// `gamma` is only meaningful for [`KernelKind::Rbf`] and is in units of
/// 1/distance².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
    pub jitter: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            gamma: 1.0,
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn rbf(gamma: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            gamma,
            jitter: DEFAULT_JITTER,
        }
    }

    /// RBF kernel with the bandwidth picked by [`median_heuristic_gamma`].
    pub fn rbf_auto(xs: &[Vec<f64>]) -> Result<Self> {
        Ok(Self::rbf(median_heuristic_gamma(xs)?))
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::Rbf && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return input(format!(
                "rbf gamma must be positive and finite, got {}",
                self.gamma
            ));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return input(format!("jitter must be nonnegative, got {}", self.jitter));
        }
        Ok(())
    }

    /// Kernel value without the dimension check; callers guarantee equal lengths.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => x.iter().zip(x2).map(|(a, b)| a * b).sum(),
            KernelKind::Rbf => (-self.gamma * sq_dist(x, x2)).exp(),
        }
    }

    /// Decision value `Σ w_n K(x, x_n)` for an expansion over `support`.
    pub(crate) fn expansion(&self, x: &[f64], support: &[Vec<f64>], weights: &[f64]) -> f64 {
        support
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w != 0.0)
            .map(|(s, &w)| w * self.eval_unchecked(x, s))
            .sum()
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != x2.len() {
        return input(format!("dimension mismatch: {} vs {}", x.len(), x2.len()));
    }
    Ok(spec.eval_unchecked(x, x2))
}

/// Symmetric Gram matrix with its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl GramMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Lower-triangular `L` with `L Lᵀ = values`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(v);
        (&self.values * v).as_slice().to_vec()
    }

    /// Quadratic form `vᵀ K v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        let kv = self.mul(v);
        kv.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Draws from `Normal(mean, K)` as `mean + L z`.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Vec<f64> {
        let n = self.size();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = mean.to_vec();
        for i in 0..n {
            let row = self.factor.row(i);
            let mut acc = 0.0;
            for j in 0..=i {
                acc += row[j] * z[j];
            }
            out[i] += acc;
        }
        out
    }
}

pub fn gram_matrix(spec: &KernelSpec, xs: &[Vec<f64>]) -> Result<GramMatrix> {
    spec.validate()?;
    let n = xs.len();
    if n == 0 {
        return input("gram matrix needs at least one point");
    }
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return input("inconsistent feature dimensions");
    }
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let k = spec.eval_unchecked(&xs[i], &xs[j]);
            values[(i, j)] = k;
            values[(j, i)] = k;
        }
        values[(i, i)] += spec.jitter;
    }
    let factor = values
        .clone()
        .cholesky()
        .ok_or_else(|| {
            Error::Numeric(format!(
                "Cholesky factorization of the {n}x{n} Gram matrix failed with jitter {}; retry with a larger jitter",
                spec.jitter
            ))
        })?
        .unpack();
    Ok(GramMatrix { values, factor })
}

/// `1 / median` of the squared pairwise distances.
pub fn median_heuristic_gamma(xs: &[Vec<f64>]) -> Result<f64> {
    if xs.len() < 2 {
        return input("median heuristic needs at least two points");
    }
    let mut d2 = Vec::with_capacity(xs.len() * (xs.len() - 1) / 2);
    for i in 0..xs.len() {
        for j in (i + 1)..xs.len() {
            if xs[i].len() != xs[j].len() {
                return input("inconsistent feature dimensions");
            }
            d2.push(sq_dist(&xs[i], &xs[j]));
        }
    }
    d2.sort_by(f64::total_cmp);
    let m = d2.len();
    let median = if m % 2 == 1 {
        d2[m / 2]
    } else {
        0.5 * (d2[m / 2 - 1] + d2[m / 2])
    };
    if median <= 0.0 {
        return input(
            "median pairwise distance is zero (points are identical or mostly duplicated)",
        );
    }
    Ok(1.0 / median)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_examples() {
        let rbf = KernelSpec::rbf(0.5);
        assert_eq!(kernel_eval(&rbf, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(
            kernel_eval(&KernelSpec::linear(), &[1.0, 2.0], &[3.0, 4.0]).unwrap(),
            11.0
        );
        let v = kernel_eval(&rbf, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!(kernel_eval(&rbf, &[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn single_point_gram() {
        let g = gram_matrix(&KernelSpec::rbf(1.0).with_jitter(0.25), &[vec![3.0, -1.0]]).unwrap();
        assert_eq!(g.get(0, 0), 1.25);
        assert_eq!(g.factor()[(0, 0)], 1.25f64.sqrt());
    }

    #[test]
    fn gram_eigenvalues_and_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let spec = KernelSpec::rbf(1.0);
        let g = gram_matrix(&spec, &xs).unwrap();
        let eig = g.values().clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-10 + spec.jitter);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        let l = g.factor();
        let rec = l * l.transpose();
        let err = (rec - g.values()).norm() / g.values().norm();
        assert!(err < 1e-8);
    }

    #[test]
    fn duplicate_points_without_jitter_fail_to_factor() {
        let xs = vec![vec![1.0], vec![1.0]];
        let r = gram_matrix(&KernelSpec::rbf(1.0).with_jitter(0.0), &xs);
        assert!(matches!(r, Err(Error::Numeric(_))));
        assert!(gram_matrix(&KernelSpec::rbf(1.0).with_jitter(1e-6), &xs).is_ok());
    }

    #[test]
    fn invalid_specs() {
        assert!(KernelSpec::rbf(0.0).validate().is_err());
        assert!(KernelSpec::rbf(1.0).with_jitter(-1.0).validate().is_err());
    }

    #[test]
    fn median_heuristic_examples() {
        assert_eq!(
            median_heuristic_gamma(&[vec![0.0], vec![1.0]]).unwrap(),
            1.0
        );
        assert_eq!(
            median_heuristic_gamma(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap(),
            0.25
        );
        let s = 3.0;
        let g = median_heuristic_gamma(&[vec![0.0], vec![s], vec![3.0 * s]]).unwrap();
        assert!((g - 0.25 / (s * s)).abs() < 1e-15);
        assert!(median_heuristic_gamma(&[vec![2.0], vec![2.0]]).is_err());
    }

    #[test]
    fn sample_has_requested_mean_at_zero_noise_limit() {
        // a 1x1 covariance with tiny variance
        let g = gram_matrix(&KernelSpec::linear().with_jitter(0.0), &[vec![1e-6]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = g.sample(&[4.0], &mut rng);
        assert!((s[0] - 4.0).abs() < 1e-4);
    }
}
