//! Feature schemas, cohorts, the synthetic population and per-round sampling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Deref;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature actionability and recourse cost weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    names: Vec<String>,
    actionable: Vec<bool>,
    cost_weights: Vec<f64>,
    cost_offset: f64,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>, actionable: Vec<bool>, cost_weights: Vec<f64>, cost_offset: f64) -> Result<Self> {
        let d = names.len();
        if d == 0 {
            return Err(Error::Schema("schema declares no features".into()));
        }
        if actionable.len() != d || cost_weights.len() != d {
            return Err(Error::Schema(format!(
                "schema lengths disagree: {} names, {} actionable flags, {} cost weights",
                d,
                actionable.len(),
                cost_weights.len()
            )));
        }
        if let Some((i, c)) = cost_weights.iter().enumerate().find(|(_, c)| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::Schema(format!("cost weight of `{}` must be positive, got {c}", names[i])));
        }
        if !(cost_offset >= 0.0 && cost_offset.is_finite()) {
            return Err(Error::Schema(format!("cost offset must be nonnegative, got {cost_offset}")));
        }
        Ok(FeatureSchema { names, actionable, cost_weights, cost_offset })
    }

    /// Schema with generated names `x0..x{d-1}`, the first `n_actionable`
    /// features actionable, and unit cost weights.
    pub fn synthetic(d: usize, n_actionable: usize) -> Result<Self> {
        if d == 0 || n_actionable == 0 || n_actionable > d {
            return Err(Error::config(
                "n_actionable",
                format!("need 0 < n_actionable <= d, got n_actionable={n_actionable}, d={d}"),
            ));
        }
        let names = (0..d).map(|i| format!("x{i}")).collect();
        let actionable = (0..d).map(|i| i < n_actionable).collect();
        FeatureSchema::new(names, actionable, alloc::vec![1.0; d], 0.0)
    }

    pub fn with_cost_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        let offset = self.cost_offset;
        let names = core::mem::take(&mut self.names);
        let actionable = core::mem::take(&mut self.actionable);
        FeatureSchema::new(names, actionable, weights, offset)
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn actionable(&self) -> &[bool] {
        &self.actionable
    }

    pub fn is_actionable(&self, i: usize) -> bool {
        self.actionable[i]
    }

    pub fn n_actionable(&self) -> usize {
        self.actionable.iter().filter(|a| **a).count()
    }

    pub fn cost_weights(&self) -> &[f64] {
        &self.cost_weights
    }

    pub fn cost_offset(&self) -> f64 {
        self.cost_offset
    }
}

/// One round's users: a row-major feature matrix plus optional labels and
/// scores, and per-row recourse flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    dim: usize,
    features: Vec<f64>,
    labels: Option<Vec<bool>>,
    scores: Option<Vec<f64>>,
    recoursed: Vec<bool>,
    pub round: usize,
}

impl Cohort {
    pub fn new(dim: usize, features: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("cohort dimension must be positive"));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::contract(format!(
                "feature buffer of length {} is not a multiple of dimension {dim}",
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        let n = features.len() / dim;
        Ok(Cohort { dim, features, labels: None, scores: None, recoursed: alloc::vec![false; n], round: 0 })
    }

    pub fn from_rows(dim: usize, rows: &[&[f64]]) -> Result<Self> {
        let mut features = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::contract(format!("row of length {} in a {dim}-dimensional cohort", r.len())));
            }
            features.extend_from_slice(r);
        }
        Cohort::new(dim, features)
    }

    pub fn labeled(dim: usize, features: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        let mut c = Cohort::new(dim, features)?;
        c.set_labels(labels)?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.recoursed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recoursed.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Vec<bool>) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::contract(format!("{} labels for {} rows", labels.len(), self.len())));
        }
        self.labels = Some(labels);
        Ok(())
    }

    pub fn clear_labels(&mut self) {
        self.labels = None;
    }

    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn set_scores(&mut self, scores: Vec<f64>) -> Result<()> {
        if scores.len() != self.len() {
            return Err(Error::contract(format!("{} scores for {} rows", scores.len(), self.len())));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::contract("scores must lie in [0, 1]"));
        }
        self.scores = Some(scores);
        Ok(())
    }

    pub fn recoursed(&self) -> &[bool] {
        &self.recoursed
    }

    /// Replaces row `i` with a recourse iterate and flags it. The row must
    /// have been rejected (score < 0.5) under the scores it was given.
    pub fn apply_recourse(&mut self, i: usize, new_features: &[f64]) -> Result<()> {
        if new_features.len() != self.dim {
            return Err(Error::contract("recourse iterate has the wrong dimension"));
        }
        if let Some(s) = &self.scores {
            if s[i] >= 0.5 {
                return Err(Error::contract(format!("row {i} was accepted (score {}) and cannot recourse", s[i])));
            }
        }
        self.features[i * self.dim..(i + 1) * self.dim].copy_from_slice(new_features);
        self.recoursed[i] = true;
        Ok(())
    }

    /// New cohort made of the given rows, carrying labels, scores and flags.
    pub fn select(&self, indices: &[usize]) -> Cohort {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Cohort {
            dim: self.dim,
            features,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            scores: self.scores.as_ref().map(|s| indices.iter().map(|&i| s[i]).collect()),
            recoursed: indices.iter().map(|&i| self.recoursed[i]).collect(),
            round: self.round,
        }
    }

    /// Restores stored per-row state, used when reading archives back.
    pub fn with_state(
        mut self,
        labels: Option<Vec<bool>>,
        scores: Option<Vec<f64>>,
        recoursed: Vec<bool>,
    ) -> Result<Self> {
        if recoursed.len() != self.len() {
            return Err(Error::contract("recoursed flag count does not match rows"));
        }
        if let Some(l) = labels {
            self.set_labels(l)?;
        }
        if let Some(s) = scores {
            self.set_scores(s)?;
        }
        self.recoursed = recoursed;
        Ok(self)
    }
}

/// A cohort that can no longer be changed: only shared access is exposed.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenCohort(Cohort);

impl FrozenCohort {
    pub fn new(cohort: Cohort) -> Self {
        FrozenCohort(cohort)
    }
}

impl Deref for FrozenCohort {
    type Target = Cohort;

    fn deref(&self) -> &Cohort {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Synthetic,
    Csv,
}

/// The original pool D^0 with ground-truth labels, and the held-out test
/// set drawn from the same distribution once.
#[derive(Debug, Clone)]
pub struct PopulationSource {
    pub kind: SourceKind,
    pub seed: u64,
    pub schema: FeatureSchema,
    pub original_pool: Cohort,
    pub test_set: FrozenCohort,
}

/// Draws `n` users from two unit-covariance Gaussians centred at
/// `±1.2/√d · 1`, each user's class picked by a fair coin.
pub fn generate_synthetic<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    d: usize,
    n_actionable: usize,
) -> Result<(FeatureSchema, Cohort)> {
    if n < 2 {
        return Err(Error::config("pool_size", format!("need at least 2 users, got {n}")));
    }
    let schema = FeatureSchema::synthetic(d, n_actionable)?;
    let offset = SYNTHETIC_SEPARATION / libm::sqrt(d as f64);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let positive: bool = rng.random_bool(0.5);
        let centre = if positive { offset } else { -offset };
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            features.push(centre + z);
        }
        labels.push(positive);
    }
    let cohort = Cohort::labeled(d, features, labels)?;
    Ok((schema, cohort))
}

pub const SYNTHETIC_SEPARATION: f64 = 1.2;

/// Where a sampled row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOrigin {
    Original(usize),
    Previous(usize),
}

/// Mixed-distribution sampling of one round's cohort.
///
/// Each row comes from the original pool with probability `mix_ratio` and
/// otherwise from the previous round's post-recourse cohort, both with
/// replacement. Labels, scores and recourse flags are reset.
pub fn sample_round<R: Rng + ?Sized>(
    original: &Cohort,
    previous: &Cohort,
    mix_ratio: f64,
    n: usize,
    rng: &mut R,
) -> Result<Cohort> {
    sample_round_traced(original, previous, mix_ratio, n, rng).map(|(c, _)| c)
}

pub fn sample_round_traced<R: Rng + ?Sized>(
    original: &Cohort,
    previous: &Cohort,
    mix_ratio: f64,
    n: usize,
    rng: &mut R,
) -> Result<(Cohort, Vec<RowOrigin>)> {
    if n == 0 {
        return Err(Error::config("n", "cohort size must be positive"));
    }
    if !(0.0..=1.0).contains(&mix_ratio) {
        return Err(Error::config("mix_ratio", format!("must lie in [0, 1], got {mix_ratio}")));
    }
    if original.is_empty() {
        return Err(Error::contract("original pool is empty"));
    }
    if previous.is_empty() && mix_ratio < 1.0 {
        return Err(Error::contract("previous cohort is empty"));
    }
    if original.dim() != previous.dim() {
        return Err(Error::contract("original and previous cohorts differ in dimension"));
    }
    let d = original.dim();
    let mut features = Vec::with_capacity(n * d);
    let mut origins = Vec::with_capacity(n);
    for _ in 0..n {
        let from_original = rng.random::<f64>() < mix_ratio;
        let origin = if from_original {
            let i = rng.random_range(0..original.len());
            features.extend_from_slice(original.row(i));
            RowOrigin::Original(i)
        } else {
            let i = rng.random_range(0..previous.len());
            features.extend_from_slice(previous.row(i));
            RowOrigin::Previous(i)
        };
        origins.push(origin);
    }
    Ok((Cohort::new(d, features)?, origins))
}

/// Random disjoint split into `(train, test)`; the test part is frozen.
pub fn train_test_split<R: Rng + ?Sized>(
    pool: &Cohort,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Cohort, FrozenCohort)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config("test_fraction", format!("must lie in (0, 1), got {test_fraction}")));
    }
    let n = pool.len();
    let n_test = libm::round(n as f64 * test_fraction) as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::config(
            "test_fraction",
            format!("pool of {n} rows is too small to split at {test_fraction}"),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let (test_idx, train_idx) = idx.split_at(n_test);
    let mut test_idx = test_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((pool.select(&train_idx), FrozenCohort::new(pool.select(&test_idx))))
}

/// Families of recourse cost weights for the synthetic population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostProfile {
    /// Every weight 1.
    Unit,
    /// U[0.5, 1.5].
    Uniform,
    /// Inverse-gamma with shape 3 and scale 2, clipped to [0.05, 10].
    InverseGamma,
    /// 0.1 + |ln U| for U ~ U(0, 1], clipped to 10.
    Logarithm,
}

impl core::str::FromStr for CostProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(CostProfile::Unit),
            "uniform" => Ok(CostProfile::Uniform),
            "inverse_gamma" => Ok(CostProfile::InverseGamma),
            "logarithm" => Ok(CostProfile::Logarithm),
            other => Err(Error::config("cost_profile", format!("unknown profile `{other}`"))),
        }
    }
}

pub fn cost_weight_profile<R: Rng + ?Sized>(kind: CostProfile, d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::config("dim", "need at least one feature"));
    }
    let weights = match kind {
        CostProfile::Unit => alloc::vec![1.0; d],
        CostProfile::Uniform => (0..d).map(|_| rng.random_range(0.5..=1.5)).collect(),
        CostProfile::InverseGamma => {
            let gamma = Gamma::new(3.0, 1.0).expect("valid gamma parameters");
            (0..d)
                .map(|_| {
                    let g: f64 = gamma.sample(rng);
                    (2.0 / g).clamp(0.05, 10.0)
                })
                .collect()
        }
        CostProfile::Logarithm => (0..d)
            .map(|_| {
                // 1 - U lies in (0, 1].
                let u = 1.0 - rng.random::<f64>();
                (0.1 + libm::fabs(libm::log(u))).min(10.0)
            })
            .collect(),
    };
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn synthetic_has_requested_shape() {
        let mut rng = stream(7, 0, Purpose::Population);
        let (schema, cohort) = generate_synthetic(&mut rng, 1000, 20, 17).unwrap();
        assert_eq!(cohort.len(), 1000);
        assert_eq!(cohort.dim(), 20);
        assert_eq!(schema.n_actionable(), 17);
        assert!(schema.actionable()[..17].iter().all(|a| *a));
        assert!(!schema.actionable()[17..].iter().any(|a| *a));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(&mut stream(7, 0, Purpose::Population), 1000, 20, 17).unwrap();
        let b = generate_synthetic(&mut stream(7, 0, Purpose::Population), 1000, 20, 17).unwrap();
        assert_eq!(a.1, b.1);
        let bits_a: Vec<u64> = a.1.features().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.1.features().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn synthetic_class_balance_within_binomial_bound() {
        // 3 sigma of Binomial(1000, 0.5) is 3 * sqrt(250) = 47.4.
        let (_, c) = generate_synthetic(&mut stream(7, 0, Purpose::Population), 1000, 20, 17).unwrap();
        let pos = c.labels().unwrap().iter().filter(|l| **l).count() as f64;
        assert!((pos - 500.0).abs() <= 3.0 * libm::sqrt(250.0), "positives = {pos}");
    }

    #[test]
    fn synthetic_rejects_bad_dimensions() {
        let mut rng = stream(1, 0, Purpose::Population);
        assert!(matches!(generate_synthetic(&mut rng, 10, 5, 0), Err(Error::Config { .. })));
        assert!(matches!(generate_synthetic(&mut rng, 10, 5, 6), Err(Error::Config { .. })));
        assert!(matches!(generate_synthetic(&mut rng, 1, 5, 2), Err(Error::Config { .. })));
    }

    fn tagged_pools() -> (Cohort, Cohort) {
        // Original rows carry positive values, previous rows negative ones.
        let orig: Vec<f64> = (0..50).map(|i| i as f64 + 1.0).collect();
        let prev: Vec<f64> = (0..30).map(|i| -(i as f64) - 1.0).collect();
        (Cohort::new(1, orig).unwrap(), Cohort::new(1, prev).unwrap())
    }

    #[test]
    fn sample_round_boundaries() {
        let (orig, prev) = tagged_pools();
        let mut rng = stream(3, 1, Purpose::Sampling);
        let all_orig = sample_round(&orig, &prev, 1.0, 200, &mut rng).unwrap();
        assert!(all_orig.features().iter().all(|v| *v > 0.0));
        let all_prev = sample_round(&orig, &prev, 0.0, 200, &mut rng).unwrap();
        assert!(all_prev.features().iter().all(|v| *v < 0.0));
        assert!(all_prev.labels().is_none());
        assert!(all_prev.recoursed().iter().all(|r| !r));
    }

    #[test]
    fn sample_round_mixture_fraction() {
        let (orig, prev) = tagged_pools();
        let mut rng = stream(3, 1, Purpose::Sampling);
        let c = sample_round(&orig, &prev, 0.5, 10_000, &mut rng).unwrap();
        let frac = c.features().iter().filter(|v| **v > 0.0).count() as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "fraction from original = {frac}");
    }

    #[test]
    fn sample_round_rows_are_copies() {
        let (orig, prev) = tagged_pools();
        let mut rng = stream(5, 2, Purpose::Sampling);
        let (c, origins) = sample_round_traced(&orig, &prev, 0.3, 500, &mut rng).unwrap();
        for (i, o) in origins.iter().enumerate() {
            let src = match *o {
                RowOrigin::Original(j) => orig.row(j),
                RowOrigin::Previous(j) => prev.row(j),
            };
            assert_eq!(c.row(i), src);
        }
    }

    #[test]
    fn sample_round_rejects_zero_size() {
        let (orig, prev) = tagged_pools();
        let mut rng = stream(3, 1, Purpose::Sampling);
        assert!(matches!(sample_round(&orig, &prev, 0.5, 0, &mut rng), Err(Error::Config { .. })));
    }

    #[test]
    fn split_sizes_partition_and_determinism() {
        let pool = Cohort::new(1, (0..1000).map(|i| i as f64).collect()).unwrap();
        let (train, test) = train_test_split(&pool, 0.2, &mut stream(9, 0, Purpose::Split)).unwrap();
        assert_eq!((train.len(), test.len()), (800, 200));
        let mut all: Vec<f64> = train.features().iter().chain(test.features()).copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, pool.features());
        let (train2, test2) = train_test_split(&pool, 0.2, &mut stream(9, 0, Purpose::Split)).unwrap();
        assert_eq!(train, train2);
        assert_eq!(*test, *test2);
        assert!(train_test_split(&pool, 1.0, &mut stream(9, 0, Purpose::Split)).is_err());
        assert!(train_test_split(&pool, 0.0, &mut stream(9, 0, Purpose::Split)).is_err());
    }

    #[test]
    fn uniform_profile_range() {
        let mut rng = stream(2, 0, Purpose::CostWeights);
        let w = cost_weight_profile(CostProfile::Uniform, 10_000, &mut rng).unwrap();
        let (lo, hi) = w.iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        assert!(lo >= 0.5 && hi <= 1.5, "range [{lo}, {hi}]");
    }

    #[test]
    fn inverse_gamma_has_heavier_tail_than_uniform() {
        let mut rng = stream(2, 0, Purpose::CostWeights);
        let n = 100_000;
        let ig = cost_weight_profile(CostProfile::InverseGamma, n, &mut rng).unwrap();
        let un = cost_weight_profile(CostProfile::Uniform, n, &mut rng).unwrap();
        let moments = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
            (m, var)
        };
        let (m_ig, var_ig) = moments(&ig);
        let (m_un, var_un) = moments(&un);
        // Both families have mean close to 1; the inverse-gamma variance
        // (1 before clipping) dwarfs the uniform's 1/12.
        assert!((m_ig - 1.0).abs() < 0.05 && (m_un - 1.0).abs() < 0.01);
        assert!(var_ig > 5.0 * var_un, "var_ig={var_ig} var_un={var_un}");
        let max_ig = ig.iter().cloned().fold(0.0, f64::max);
        assert!(max_ig > 1.5);
    }

    #[test]
    fn profiles_are_positive_over_many_seeds() {
        for seed in 0..10_000u64 {
            let mut rng = stream(seed, 0, Purpose::CostWeights);
            for kind in [CostProfile::Uniform, CostProfile::InverseGamma, CostProfile::Logarithm] {
                let w = cost_weight_profile(kind, 4, &mut rng).unwrap();
                assert!(w.iter().all(|c| *c > 0.0));
            }
        }
    }

    #[test]
    fn unknown_profile_is_config_error() {
        assert!(matches!("gaussian".parse::<CostProfile>(), Err(Error::Config { .. })));
        assert_eq!("inverse_gamma".parse::<CostProfile>().unwrap(), CostProfile::InverseGamma);
    }

    #[test]
    fn schema_validation() {
        let names = alloc::vec!["a".into(), "b".into()];
        assert!(FeatureSchema::new(names.clone(), alloc::vec![true, false], alloc::vec![1.0, 0.0], 0.0).is_err());
        assert!(FeatureSchema::new(names.clone(), alloc::vec![true], alloc::vec![1.0, 1.0], 0.0).is_err());
        assert!(FeatureSchema::new(names.clone(), alloc::vec![true, true], alloc::vec![1.0, 1.0], -1.0).is_err());
        assert!(FeatureSchema::new(names, alloc::vec![true, true], alloc::vec![1.0, 1.0], 0.0).is_ok());
    }

    #[test]
    fn recourse_only_on_rejected_rows() {
        let mut c = Cohort::new(1, alloc::vec![0.0, 1.0]).unwrap();
        c.set_scores(alloc::vec![0.2, 0.8]).unwrap();
        assert!(c.apply_recourse(0, &[0.5]).is_ok());
        assert!(c.apply_recourse(1, &[2.0]).is_err());
        assert_eq!(c.recoursed(), &[true, false]);
    }
}
