//! Geometric entropy minimization on a bipartite k-NN graph.
//!
//! Each class is split at random into a target part and a reference part.
//! Every sample gets a k-NN distance sum `d_n` against the reference part of
//! its own class; the smallest sums mark the minimal-entropy set, and their
//! total (plus a small slack) is the per-class entropy budget `γ̂_z`.
//!
//! Distances enter the trainer in units normalized by the training-set size:
//! `d̃_n = d_n / |T|` and `γ̂_z = (L*_z + ε) / |T|`.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{dist, Label, LabeledDataset};
use crate::error::{input, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GemConfig {
    /// Neighbor count.
    pub k: usize,
    /// Fraction of each class assigned to the reference part.
    pub partition_ratio: f64,
    /// Fraction of each class expected to be nominal.
    pub target_coverage: f64,
    /// Slack added to the optimal ME-set cost, in raw distance units.
    pub epsilon_gamma: f64,
    /// Intrinsic dimension; `None` uses the ambient feature dimension.
    pub intrinsic_dim: Option<usize>,
    /// False-alarm level for the leave-one-out detection threshold.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for GemConfig {
    fn default() -> Self {
        Self {
            k: 5,
            partition_ratio: 0.3,
            target_coverage: 0.8,
            epsilon_gamma: 1e-3,
            intrinsic_dim: None,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl GemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return input("k must be at least 1");
        }
        if !(self.partition_ratio > 0.0 && self.partition_ratio < 1.0) {
            return input(format!(
                "partition_ratio must lie in (0,1), got {}",
                self.partition_ratio
            ));
        }
        if !(self.target_coverage > 0.0 && self.target_coverage <= 1.0) {
            return input(format!(
                "target_coverage must lie in (0,1], got {}",
                self.target_coverage
            ));
        }
        if !(self.epsilon_gamma >= 0.0 && self.epsilon_gamma.is_finite()) {
            return input("epsilon_gamma must be nonnegative");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return input(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if self.intrinsic_dim == Some(0) {
            return input("intrinsic_dim must be positive");
        }
        Ok(())
    }
}

/// Target (`n_part`) and reference (`m_part`) index sets of one class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub n_part: Vec<usize>,
    pub m_part: Vec<usize>,
}

/// Per-sample and per-class GEM quantities for a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemStats {
    /// Raw k-NN distance sums.
    pub d: Vec<f64>,
    /// `d / |T|`.
    pub d_tilde: Vec<f64>,
    /// Local entropy estimates (absent when `k < 2`).
    pub h: Option<Vec<f64>>,
    /// Samples whose distance sum was zero and got clamped.
    pub degenerate: Vec<usize>,
    /// Per-class entropy budget, normalized; indexed by [`Label::index`].
    pub gamma_hat: [f64; 2],
    /// Per-class epigraph level.
    pub beta_hat: [f64; 2],
    /// Per-class ME-set size `K_z`.
    pub me_size: [usize; 2],
    /// Union of the per-class ME sets, in increasing index order.
    pub me_set: Vec<usize>,
    pub partition: [Partition; 2],
}

impl GemStats {
    pub fn compute(data: &LabeledDataset, cfg: &GemConfig) -> Result<Self> {
        cfg.validate()?;
        data.require_both_classes()?;
        let total = data.len();
        let dim = cfg.intrinsic_dim.unwrap_or(data.dim());
        let mut d = vec![0.0; total];
        let mut h = (cfg.k >= 2).then(|| vec![0.0; total]);
        let mut degenerate = Vec::new();
        let mut gamma = [0.0; 2];
        let mut beta = [0.0; 2];
        let mut me_size = [0; 2];
        let mut me_set = Vec::new();
        let mut partition: [Partition; 2] = Default::default();

        for label in Label::BOTH {
            let z = label.index();
            let (n_part, m_part) = bipartite_partition(data, label, cfg.partition_ratio, cfg.seed)?;
            if cfg.k >= m_part.len() {
                return Err(Error::Config(format!(
                    "k = {} must be smaller than the reference part of class {label} ({} samples)",
                    cfg.k,
                    m_part.len()
                )));
            }
            let m_c = m_part.len();
            for &i in &n_part {
                let refs: Vec<&[f64]> = m_part
                    .iter()
                    .map(|&j| data.features[j].as_slice())
                    .collect();
                d[i] = knn_sum(&data.features[i], &refs, cfg.k);
            }
            // Reference members are scored against the rest of the reference part.
            for &i in &m_part {
                let refs: Vec<&[f64]> = m_part
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| data.features[j].as_slice())
                    .collect();
                d[i] = knn_sum(&data.features[i], &refs, cfg.k);
            }
            let members = data.class_indices(label);
            for &i in &members {
                if d[i] == 0.0 {
                    degenerate.push(i);
                    d[i] = f64::EPSILON;
                }
                if let Some(h) = h.as_mut() {
                    h[i] = local_entropy(d[i], cfg.k, m_c, dim)?;
                }
            }
            let class_d: Vec<f64> = members.iter().map(|&i| d[i]).collect();
            let k_z = ((cfg.target_coverage * members.len() as f64).round() as usize)
                .clamp(1, members.len());
            gamma[z] = gamma_hat(&class_d, k_z, cfg.epsilon_gamma, total)?;
            beta[z] = cfg.target_coverage * members.len() as f64 / total as f64;
            me_size[z] = k_z;
            me_set.extend(gem_me_set(&class_d, k_z)?.into_iter().map(|j| members[j]));
            partition[z] = Partition { n_part, m_part };
        }
        degenerate.sort_unstable();
        me_set.sort_unstable();
        let d_tilde = d.iter().map(|v| v / total as f64).collect();
        Ok(Self {
            d,
            d_tilde,
            h,
            degenerate,
            gamma_hat: gamma,
            beta_hat: beta,
            me_size,
            me_set,
            partition,
        })
    }

    /// `1` on the ME set and `0` elsewhere.
    pub fn me_indicator(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.d.len()];
        for &i in &self.me_set {
            v[i] = 1.0;
        }
        v
    }
}

/// Seeded random split of class `label` into (target part, reference part).
///
/// The reference part holds `max(1, floor(ratio · n))` samples; both parts are
/// returned in increasing index order.
pub fn bipartite_partition(
    data: &LabeledDataset,
    label: Label,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return input(format!("partition ratio must lie in (0,1), got {ratio}"));
    }
    let mut idx = data.class_indices(label);
    if idx.len() < 2 {
        return input(format!(
            "class {label} needs at least 2 samples to partition, has {}",
            idx.len()
        ));
    }
    let m = ((ratio * idx.len() as f64).floor() as usize).clamp(1, idx.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(label.index() as u64 + 1)),
    );
    idx.shuffle(&mut rng);
    let mut m_part = idx[..m].to_vec();
    let mut n_part = idx[m..].to_vec();
    m_part.sort_unstable();
    n_part.sort_unstable();
    Ok((n_part, m_part))
}

fn knn_sum(x: &[f64], refs: &[&[f64]], k: usize) -> f64 {
    let mut ds: Vec<(f64, usize)> = refs
        .iter()
        .enumerate()
        .map(|(j, r)| (dist(x, r), j))
        .collect();
    ds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ds[..k].iter().map(|p| p.0).sum()
}

/// Sum of the `k` smallest Euclidean distances from `x` to `refs`.
pub fn knn_distance_sum(x: &[f64], refs: &[Vec<f64>], k: usize) -> Result<f64> {
    if k == 0 {
        return input("k must be at least 1");
    }
    if refs.len() < k {
        return input(format!(
            "need at least k = {k} reference points, have {}",
            refs.len()
        ));
    }
    if refs.iter().any(|r| r.len() != x.len()) {
        return input("dimension mismatch between query and reference points");
    }
    let refs: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
    Ok(knn_sum(x, &refs, k))
}

/// Volume of the unit ball in `d` dimensions, `π^{d/2} / Γ(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    PI.powf(half) / statrs::function::gamma::gamma(half + 1.0)
}

/// Local entropy `d·log(dk_sum) − log((k−1)/(M_c·c_d))`.
///
/// A zero distance sum (duplicate point) yields `-∞`.
pub fn local_entropy(dk_sum: f64, k: usize, m_c: usize, d: usize) -> Result<f64> {
    if k < 2 {
        return input("local entropy needs k >= 2");
    }
    if m_c == 0 || d == 0 {
        return input("reference size and dimension must be positive");
    }
    if !(dk_sum >= 0.0) {
        return input("distance sum must be nonnegative");
    }
    if dk_sum == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let c_d = unit_ball_volume(d);
    Ok(d as f64 * dk_sum.ln() - ((k - 1) as f64 / (m_c as f64 * c_d)).ln())
}

/// Indices of the `K` smallest values (ties to the lower index), ascending.
///
/// This is the exact minimizer of `Σ η_n d_n` subject to `Σ η_n ≥ K` for
/// nonnegative `d`.
pub fn gem_me_set(d: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > d.len() {
        return input(format!("ME-set size {k} outside 1..={}", d.len()));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// `(L* + ε) / |T|` where `L*` is the cost of the size-`K` ME set.
pub fn gamma_hat(d: &[f64], k: usize, epsilon: f64, total: usize) -> Result<f64> {
    if total == 0 {
        return input("training-set size must be positive");
    }
    let set = gem_me_set(d, k)?;
    let cost: f64 = set.iter().map(|&i| d[i]).sum();
    Ok((cost + epsilon) / total as f64)
}

/// Linear-interpolation quantile of `sorted` (ascending) at probability `p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Leave-one-out k-NN distance sums of `points` against each other.
pub fn loo_scores(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return input("k must be at least 1");
    }
    if points.len() < k + 1 {
        return input(format!(
            "leave-one-out scoring needs at least k+1 = {} points, have {}",
            k + 1,
            points.len()
        ));
    }
    Ok((0..points.len())
        .map(|i| {
            let refs: Vec<&[f64]> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| p.as_slice())
                .collect();
            knn_sum(&points[i], &refs, k)
        })
        .collect())
}

/// Detection threshold: the `(1 − α)` quantile of leave-one-out scores.
pub fn loo_threshold(points: &[Vec<f64>], k: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return input(format!("alpha must lie in (0,1), got {alpha}"));
    }
    let mut scores = loo_scores(points, k)?;
    scores.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&scores, 1.0 - alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    fn one_class_pair(n: usize) -> LabeledDataset {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            feats.push(vec![i as f64]);
            labels.push(Label::Pos);
            feats.push(vec![-(i as f64)]);
            labels.push(Label::Neg);
        }
        LabeledDataset::new(feats, labels, None).unwrap()
    }

    #[test]
    fn partition_sizes_and_determinism() {
        let ds = one_class_pair(10);
        let (n, m) = bipartite_partition(&ds, Label::Pos, 0.5, 11).unwrap();
        assert_eq!((n.len(), m.len()), (5, 5));
        let mut all: Vec<usize> = n.iter().chain(&m).copied().collect();
        all.sort_unstable();
        assert_eq!(all, ds.class_indices(Label::Pos));
        assert_eq!(
            bipartite_partition(&ds, Label::Pos, 0.5, 11).unwrap(),
            (n, m)
        );

        let big = one_class_pair(100);
        let (n, m) = bipartite_partition(&big, Label::Neg, 0.3, 0).unwrap();
        assert_eq!((n.len(), m.len()), (70, 30));
        let (_, m) = bipartite_partition(&one_class_pair(2), Label::Neg, 0.1, 0).unwrap();
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn partition_needs_two_samples() {
        let ds = LabeledDataset::new(
            vec![vec![0.0], vec![1.0]],
            vec![Label::Pos, Label::Neg],
            None,
        )
        .unwrap();
        assert!(matches!(
            bipartite_partition(&ds, Label::Pos, 0.5, 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn knn_examples() {
        assert_eq!(
            knn_distance_sum(&[0.0], &pts(&[1.0, -2.0, 3.0]), 2).unwrap(),
            3.0
        );
        assert_eq!(knn_distance_sum(&[0.0], &pts(&[5.0]), 1).unwrap(), 5.0);
        assert_eq!(
            knn_distance_sum(&[0.0], &pts(&[1.0, -1.0, 2.0]), 2).unwrap(),
            2.0
        );
        assert!(knn_distance_sum(&[0.0], &pts(&[1.0]), 2).is_err());
    }

    #[test]
    fn unit_ball_volumes() {
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-13);
        assert!((unit_ball_volume(2) - PI).abs() < 1e-13);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-13);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-13);
    }

    #[test]
    fn local_entropy_examples() {
        // (k-1)/(M_c c_d) = 1 with k=3, d=1 (c_d=2), M_c=1
        assert!(local_entropy(1.0, 3, 1, 1).unwrap().abs() < 1e-13);
        let h = local_entropy(1.0, 2, 4, 1).unwrap();
        assert!((h - 2.079_441_541_679_835_8).abs() < 1e-12);
        assert!(local_entropy(2.0, 2, 4, 1).unwrap() > h);
        assert_eq!(local_entropy(0.0, 2, 4, 1).unwrap(), f64::NEG_INFINITY);
        assert!(local_entropy(1.0, 1, 4, 1).is_err());
    }

    #[test]
    fn me_set_examples() {
        assert_eq!(gem_me_set(&[5.0, 1.0, 3.0], 2).unwrap(), vec![1, 2]);
        assert_eq!(gem_me_set(&[5.0, 1.0, 3.0], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(gem_me_set(&[5.0, 1.0, 3.0], 1).unwrap(), vec![1]);
        assert_eq!(gem_me_set(&[2.0, 2.0, 2.0], 1).unwrap(), vec![0]);
        assert!(gem_me_set(&[1.0], 0).is_err());
        assert!(gem_me_set(&[1.0], 2).is_err());
    }

    #[test]
    fn gamma_hat_examples() {
        assert!((gamma_hat(&[5.0, 1.0, 3.0], 2, 0.1, 10).unwrap() - 0.41).abs() < 1e-15);
        let d = [5.0, 1.0, 3.0, 7.0];
        assert!((gamma_hat(&d, 4, 0.0, 4).unwrap() - 4.0).abs() < 1e-15);
        assert!((gamma_hat(&[2.5; 6], 4, 0.5, 8).unwrap() - (4.0 * 2.5 + 0.5) / 8.0).abs() < 1e-15);
    }

    #[test]
    fn loo_threshold_examples() {
        // four collinear points with unit spacing: LOO 1-NN scores are all 1
        assert_eq!(
            loo_threshold(&pts(&[0.0, 1.0, 2.0, 3.0]), 1, 0.3).unwrap(),
            1.0
        );
        let scores = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&scores, 0.75), 3.25);
        assert_eq!(quantile_sorted(&scores, 1.0), 4.0);
        // alpha -> 0 approaches the max score
        let p = pts(&[0.0, 1.0, 3.0, 7.0]);
        let t = loo_threshold(&p, 1, 1e-12).unwrap();
        assert!((t - 4.0).abs() < 1e-9);
        assert!(loo_threshold(&pts(&[0.0, 1.0]), 2, 0.1).is_err());
    }

    #[test]
    fn stats_gamma_bounds_me_cost() {
        let ds = one_class_pair(20);
        let cfg = GemConfig {
            k: 3,
            target_coverage: 0.75,
            ..Default::default()
        };
        let s = GemStats::compute(&ds, &cfg).unwrap();
        for l in Label::BOTH {
            let z = l.index();
            let class_d: Vec<f64> = ds.class_indices(l).iter().map(|&i| s.d_tilde[i]).collect();
            let set = gem_me_set(&class_d, s.me_size[z]).unwrap();
            let cost: f64 = set.iter().map(|&i| class_d[i]).sum();
            assert!(s.gamma_hat[z] >= cost);
            assert_eq!(s.me_size[z], 15);
            let members = ds.class_indices(l);
            let global: Vec<usize> = set.iter().map(|&j| members[j]).collect();
            assert!(global.iter().all(|i| s.me_set.contains(i)));
            assert!((s.beta_hat[z] - 0.375).abs() < 1e-15);
        }
        assert!(s.d.iter().all(|&v| v >= 0.0));
        assert!(s.h.is_some());
    }

    #[test]
    fn stats_rejects_k_too_large() {
        let ds = one_class_pair(10);
        let cfg = GemConfig {
            k: 3,
            ..Default::default()
        };
        assert!(matches!(
            GemStats::compute(&ds, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn duplicate_points_are_clamped() {
        let mut feats = vec![vec![0.0]; 8];
        feats.extend((0..8).map(|i| vec![10.0 + i as f64]));
        let labels = (0..16)
            .map(|i| if i < 8 { Label::Pos } else { Label::Neg })
            .collect();
        let ds = LabeledDataset::new(feats, labels, None).unwrap();
        let s = GemStats::compute(
            &ds,
            &GemConfig {
                k: 1,
                partition_ratio: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(s.degenerate, (0..8).collect::<Vec<_>>());
        assert!(s.d[..8].iter().all(|&v| v == f64::EPSILON));
    }

    proptest! {
        #[test]
        fn me_set_is_permutation_equivariant(
            d in proptest::collection::hash_set(0u32..10_000, 1..12),
            k_frac in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let d: Vec<f64> = d.into_iter().map(|v| v as f64 / 7.0).collect();
            let k = 1 + ((d.len() - 1) as f64 * k_frac) as usize;
            let mut perm: Vec<usize> = (0..d.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&i| d[i]).collect();
            let base = gem_me_set(&d, k).unwrap();
            let mut mapped: Vec<usize> = gem_me_set(&permuted, k).unwrap().iter().map(|&j| perm[j]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(base, mapped);
        }

        #[test]
        fn loo_threshold_nonincreasing_in_alpha(
            xs in proptest::collection::vec(-50.0f64..50.0, 4..20),
            a1 in 0.01f64..0.99,
            a2 in 0.01f64..0.99,
        ) {
            let p = pts(&xs);
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            prop_assert!(loo_threshold(&p, 2, lo).unwrap() >= loo_threshold(&p, 2, hi).unwrap());
        }
    }
}
