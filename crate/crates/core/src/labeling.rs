//! Turning scores into at most `k` acceptances: classic top-k and the
//! density-weighted fair variant.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    TopK,
    FairTopK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelDecision {
    pub labels: Vec<bool>,
    /// Rows kept for training.
    pub train_mask: Vec<bool>,
    pub policy: Policy,
    /// Set when every selection weight vanished and candidates were drawn
    /// uniformly instead.
    pub uniform_fallback: bool,
}

impl LabelDecision {
    pub fn accepted(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    pub fn accepted_indices(&self) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, l)| **l).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Scott,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    pub bandwidth: Bandwidth,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig { bandwidth: Bandwidth::Scott }
    }
}

pub const MIN_BANDWIDTH: f64 = 1e-6;

/// Accept the `k` highest scores; ties go to the lower row index.
pub fn top_k_label(scores: &[f64], k: usize) -> LabelDecision {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut labels = vec![false; scores.len()];
    for &i in order.iter().take(k) {
        labels[i] = true;
    }
    LabelDecision { train_mask: vec![true; scores.len()], labels, policy: Policy::TopK, uniform_fallback: false }
}

/// Per-dimension bandwidths for a Gaussian product kernel.
pub fn bandwidths(points: &Cohort, cfg: &KdeConfig) -> Result<Vec<f64>> {
    let n = points.len();
    let d = points.dim();
    if n == 0 {
        return Err(Error::contract("density estimate over an empty point set"));
    }
    match cfg.bandwidth {
        Bandwidth::Fixed(h) => {
            if !(h > 0.0) {
                return Err(Error::config("labeling.bandwidth", "fixed bandwidth must be positive"));
            }
            Ok(vec![h; d])
        }
        Bandwidth::Scott => {
            let factor = libm::pow(n as f64, -1.0 / (d as f64 + 4.0));
            let mut mean = vec![0.0; d];
            for row in points.rows() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for row in points.rows() {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
            Ok(var.iter().map(|s| (factor * libm::sqrt(s / denom)).max(MIN_BANDWIDTH)).collect())
        }
    }
}

/// Log of the Gaussian product-kernel density at `query`.
pub fn kde_log_density_with(points: &Cohort, query: &[f64], bw: &[f64]) -> f64 {
    let d = points.dim();
    let log_norm: f64 =
        -0.5 * d as f64 * libm::log(2.0 * core::f64::consts::PI) - bw.iter().map(|h| libm::log(*h)).sum::<f64>();
    let exponents: Vec<f64> = points
        .rows()
        .map(|p| {
            -0.5 * p
                .iter()
                .zip(query)
                .zip(bw)
                .map(|((a, b), h)| {
                    let z = (a - b) / h;
                    z * z
                })
                .sum::<f64>()
        })
        .collect();
    log_norm + log_sum_exp(&exponents) - libm::log(points.len() as f64)
}

pub fn kde_log_density(points: &Cohort, query: &[f64], cfg: &KdeConfig) -> Result<f64> {
    if query.len() != points.dim() {
        return Err(Error::contract("query dimension does not match the point set"));
    }
    let bw = bandwidths(points, cfg)?;
    Ok(kde_log_density_with(points, query, &bw))
}

/// Gaussian KDE at `query`, floored at the smallest positive double.
pub fn kde_density(points: &Cohort, query: &[f64], cfg: &KdeConfig) -> Result<f64> {
    kde_log_density(points, query, cfg).map(|l| libm::exp(l).max(f64::MIN_POSITIVE))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + libm::log(values.iter().map(|v| libm::exp(v - max)).sum::<f64>())
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

/// Sequential weighted sampling without replacement from log-weights:
/// each draw picks a remaining item with probability proportional to its
/// weight. Returns `None` if all weights vanish.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(
    log_weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Option<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..log_weights.len()).collect();
    let mut picked = Vec::with_capacity(count.min(remaining.len()));
    while picked.len() < count && !remaining.is_empty() {
        let max = remaining.iter().map(|&i| log_weights[i]).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        let w: Vec<f64> = remaining.iter().map(|&i| libm::exp(log_weights[i] - max)).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut chosen = w.len() - 1;
        for (j, wj) in w.iter().enumerate() {
            if u < *wj {
                chosen = j;
                break;
            }
            u -= wj;
        }
        picked.push(remaining.remove(chosen));
    }
    Some(picked)
}

/// Fair top-k: among rows scoring at least 0.5, draw `k` with probability
/// proportional to `1 / density(x) + kappa * score`, density estimated on
/// the candidate pool. Unselected rows scoring above 0.5 are dropped from
/// training.
pub fn fair_top_k_label<R: Rng + ?Sized>(
    features: &Cohort,
    scores: &[f64],
    k: usize,
    kappa: f64,
    kde: &KdeConfig,
    rng: &mut R,
) -> Result<LabelDecision> {
    if scores.len() != features.len() {
        return Err(Error::contract("score count does not match cohort size"));
    }
    if !(kappa >= 0.0) {
        return Err(Error::config("labeling.kappa", "must be nonnegative"));
    }
    let n = scores.len();
    let candidates: Vec<usize> = (0..n).filter(|&i| scores[i] >= 0.5).collect();
    let mut labels = vec![false; n];
    let mut uniform_fallback = false;
    if candidates.len() <= k {
        for &i in &candidates {
            labels[i] = true;
        }
    } else if k > 0 {
        let pool = features.select(&candidates);
        let bw = bandwidths(&pool, kde)?;
        let log_weights: Vec<f64> = candidates
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let inv_density = -kde_log_density_with(&pool, pool.row(j), &bw);
                let bonus = kappa * scores[i];
                let log_bonus = if bonus > 0.0 { libm::log(bonus) } else { f64::NEG_INFINITY };
                log_add_exp(inv_density, log_bonus)
            })
            .collect();
        let picked = match weighted_sample_without_replacement(&log_weights, k, rng) {
            Some(p) => p,
            None => {
                uniform_fallback = true;
                weighted_sample_without_replacement(&vec![0.0; candidates.len()], k, rng)
                    .expect("uniform weights are positive")
            }
        };
        for j in picked {
            labels[candidates[j]] = true;
        }
    }
    let train_mask = (0..n).map(|i| labels[i] || scores[i] <= 0.5).collect();
    Ok(LabelDecision { labels, train_mask, policy: Policy::FairTopK, uniform_fallback })
}

/// Rows of `cohort` kept for training, labeled by `decision`.
pub fn apply_train_mask(cohort: &Cohort, decision: &LabelDecision) -> Result<Cohort> {
    if decision.labels.len() != cohort.len() || decision.train_mask.len() != cohort.len() {
        return Err(Error::contract("decision was computed for a different cohort"));
    }
    let mut labeled = cohort.clone();
    labeled.set_labels(decision.labels.clone())?;
    let keep: Vec<usize> = (0..cohort.len()).filter(|&i| decision.train_mask[i]).collect();
    Ok(labeled.select(&keep))
}
