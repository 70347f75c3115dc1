//! Per-round evaluation metrics.

use alloc::vec::Vec;

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::models::ScoreModel;

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Short-term balanced accuracy; absent in round 1.
    pub stba: Option<f64>,
    /// Some window cohort had a single label class.
    pub stba_degenerate: bool,
    /// Mean test-set logit of the model trained this round.
    pub higher_standard: f64,
    pub tar: f64,
    /// The `max(1, rejected)` guard was needed (no rejected test users).
    pub tar_guarded: bool,
    pub ftr: Option<f64>,
    pub avg_recourse_cost: Option<f64>,
    pub jsd: f64,
    pub tau_eff: f64,
    pub accepted: usize,
    pub saturated: bool,
    pub recoursed: usize,
    pub train_size: usize,
}

impl RoundRecord {
    /// Range checks that every record must satisfy.
    pub fn check(&self, k: usize) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if let Some(s) = self.stba {
            if !unit(s) {
                return Err(Error::contract("stba outside [0, 1]"));
            }
        }
        if let Some(f) = self.ftr {
            if !unit(f) {
                return Err(Error::contract("ftr outside [0, 1]"));
            }
        }
        if !(self.tar >= 0.0) || !unit(self.jsd) {
            return Err(Error::contract("tar or jsd out of range"));
        }
        if matches!(self.avg_recourse_cost, Some(c) if !(c >= 0.0)) {
            return Err(Error::contract("negative recourse cost"));
        }
        if self.saturated != (self.accepted == k) || self.accepted > k {
            return Err(Error::contract("saturation flag disagrees with the accepted count"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedAccuracy {
    pub value: f64,
    /// Only one class was present in the truths.
    pub degenerate: bool,
}

/// Mean of recall and specificity. With one class absent, returns the rate
/// of the class that is present and flags the result.
pub fn balanced_accuracy(predictions: &[bool], truths: &[bool]) -> Result<BalancedAccuracy> {
    if predictions.len() != truths.len() {
        return Err(Error::contract("prediction and truth counts differ"));
    }
    if truths.is_empty() {
        return Err(Error::contract("balanced accuracy of an empty set"));
    }
    let (mut tp, mut fn_, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (p, t) in predictions.iter().zip(truths) {
        match (*p, *t) {
            (true, true) => tp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
        }
    }
    let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    let specificity = (tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64);
    Ok(match (recall, specificity) {
        (Some(r), Some(s)) => BalancedAccuracy { value: 0.5 * (r + s), degenerate: false },
        (Some(r), None) => BalancedAccuracy { value: r, degenerate: true },
        (None, Some(s)) => BalancedAccuracy { value: s, degenerate: true },
        (None, None) => unreachable!("nonempty truths contain some class"),
    })
}

/// Balanced accuracy of `model` (threshold 0.5) against a labeled cohort.
pub fn model_balanced_accuracy(model: &ScoreModel, cohort: &Cohort) -> Result<BalancedAccuracy> {
    let labels = cohort.labels().ok_or_else(|| Error::contract("cohort is unlabeled"))?;
    let predictions: Vec<bool> = cohort.rows().map(|x| model.logit(x) >= 0.0).collect();
    balanced_accuracy(&predictions, labels)
}

/// Mean of `b[j - 1]` (the round-t model evaluated on round j) over
/// `j` in `[max(1, t - r), t - 1]`. Absent when the window is empty.
pub fn stba(b: &[f64], t: usize, r: usize) -> Option<f64> {
    if t <= 1 || r == 0 {
        return None;
    }
    let first = t.saturating_sub(r).max(1);
    let window = &b[first - 1..t - 1];
    Some(window.iter().sum::<f64>() / window.len() as f64)
}

/// Mean pre-sigmoid output over the test set; lower means stricter.
pub fn higher_standard(model: &ScoreModel, test_set: &Cohort) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    if test_set.dim() != model.dim() {
        return Err(Error::contract("test set dimension does not match model"));
    }
    Ok(test_set.rows().map(|x| model.logit(x)).sum::<f64>() / test_set.len() as f64)
}

/// `accepted / max(1, rejected)` over the test set, and whether the guard bound.
pub fn tar(model: &ScoreModel, test_set: &Cohort) -> Result<(f64, bool)> {
    if test_set.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    let accepted = test_set.rows().filter(|x| model.logit(x) >= 0.0).count();
    let rejected = test_set.len() - accepted;
    Ok((accepted as f64 / rejected.max(1) as f64, rejected == 0))
}

/// Fraction of recoursed users that the next model still rejects.
pub fn ftr<'a>(recoursed: impl IntoIterator<Item = &'a [f64]>, next_model: &ScoreModel) -> Option<f64> {
    let (mut total, mut failed) = (0usize, 0usize);
    for x in recoursed {
        total += 1;
        if next_model.logit(x) < 0.0 {
            failed += 1;
        }
    }
    (total > 0).then(|| failed as f64 / total as f64)
}

pub fn avg_recourse_cost(costs: &[f64]) -> Option<f64> {
    (!costs.is_empty()).then(|| costs.iter().sum::<f64>() / costs.len() as f64)
}

/// Sample mean and standard error (sample standard deviation over sqrt(n)).
pub fn mean_stderr(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Some((mean, libm::sqrt(var / n as f64)))
}
