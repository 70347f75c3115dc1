//! Numerical checks of the analytic claims about recourse and model drift.
//!
//! Covers the closed-form recourse action for logistic models, the sign
//! conditions of the replacement term `F`, and small retraining experiments
//! for the failed-recourse, limited-resource and threshold-shift arguments.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{generate_synthetic, Cohort, FeatureSchema};
use crate::error::{Error, Result};
use crate::labeling::top_k_label;
use crate::metrics::higher_standard;
use crate::models::{self, AdamConfig, ScoreModel, TrainOptions};
use crate::recourse::{closed_form_recourse_with_target, recourse_action, recourse_objective, RecourseConfig};
use crate::rng::{stream, Purpose};

/// Inputs of the replacement term: a recourse user moving from `x_i` to
/// `xhat_i` on one feature, displacing an accepted user with value `u_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FInstance {
    pub x_i: f64,
    pub xhat_i: f64,
    pub hx: f64,
    pub hxhat: f64,
    pub u_i: f64,
}

impl FInstance {
    pub fn alpha(&self) -> f64 {
        self.hxhat - self.hx
    }

    pub fn beta(&self) -> f64 {
        (1.0 - self.hxhat) / (1.0 - self.hx)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.x_i
            && self.x_i < self.xhat_i
            && self.hx < self.hxhat
            && (0.0..0.5).contains(&self.hx)
            && (0.5..=1.0).contains(&self.hxhat)
            && self.u_i.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("instance outside the constraint set: {self:?}")))
        }
    }
}

/// `u_i - x_i h(x) - xhat_i + xhat_i h(xhat)`.
pub fn f_value(inst: &FInstance) -> Result<f64> {
    inst.validate()?;
    Ok(inst.u_i - inst.x_i * inst.hx - inst.xhat_i + inst.xhat_i * inst.hxhat)
}

/// Sign each condition predicts when its antecedent holds.
pub const CONDITION_SIGNS: [f64; 4] = [1.0, 1.0, -1.0, -1.0];

const BOUNDARY: f64 = 1e-9;

/// Antecedents of the four sign conditions, and `F` itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionCheck {
    pub f: f64,
    /// `Some(holds)` per condition, `None` when the instance lies within
    /// `1e-9` of that condition's boundary.
    pub antecedent: [Option<bool>; 4],
}

impl ConditionCheck {
    /// Whether condition `c` applies here and `F` has the wrong sign.
    pub fn violated(&self, c: usize) -> bool {
        self.antecedent[c] == Some(true) && self.f * CONDITION_SIGNS[c] <= 0.0
    }
}

pub fn f_condition_check(inst: &FInstance) -> Result<ConditionCheck> {
    let f = f_value(inst)?;
    let (x, xh, u) = (inst.x_i, inst.xhat_i, inst.u_i);
    let ratio = x / xh;
    let beta = inst.beta();
    // Each antecedent is a conjunction of `margin > 0` tests; a margin
    // within the boundary band makes the verdict ambiguous.
    let decide = |margins: &[f64]| -> Option<bool> {
        if margins.iter().any(|m| m.abs() < BOUNDARY) {
            None
        } else {
            Some(margins.iter().all(|m| *m > 0.0))
        }
    };
    let c1 = if inst.hx > 0.0 { decide(&[u - (1.0 - inst.alpha()) * xh]) } else { Some(false) };
    let c2 = decide(&[u - x, xh - u, ratio - beta]);
    let c3 = decide(&[x - u, beta - ratio]);
    let c4 = decide(&[0.5 * x - u]);
    Ok(ConditionCheck { f, antecedent: [c1, c2, c3, c4] })
}

/// Uniform draw from the constraint set with feature values in `[0, scale]`.
pub fn sample_f_instance<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> FInstance {
    loop {
        let x_i = rng.random_range(0.0..scale);
        let xhat_i = rng.random_range(0.0..scale);
        if x_i >= xhat_i {
            continue;
        }
        let inst = FInstance {
            x_i,
            xhat_i,
            hx: rng.random_range(0.0..0.5),
            hxhat: rng.random_range(0.5..=1.0),
            u_i: rng.random_range(0.0..scale),
        };
        if inst.validate().is_ok() {
            return inst;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConditionTally {
    /// Samples whose antecedent held.
    pub tested: usize,
    pub violations: usize,
    /// Samples dropped for lying on the condition boundary or at `F = 0`.
    pub discarded: usize,
}

impl ConditionTally {
    pub fn violation_rate(&self) -> f64 {
        if self.tested == 0 {
            0.0
        } else {
            self.violations as f64 / self.tested as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSweep {
    pub samples: usize,
    pub tallies: [ConditionTally; 4],
}

/// Monte-Carlo tally of sign violations per condition.
pub fn condition_sweep(samples: usize, seed: u64) -> ConditionSweep {
    let mut rng = stream(seed, 0, Purpose::Theory);
    let mut tallies = [ConditionTally::default(); 4];
    for _ in 0..samples {
        let inst = sample_f_instance(&mut rng, 2.0);
        let check = f_condition_check(&inst).expect("sampler respects the constraints");
        for (c, tally) in tallies.iter_mut().enumerate() {
            match check.antecedent[c] {
                None => tally.discarded += 1,
                Some(false) => {}
                Some(true) if check.f.abs() < BOUNDARY => tally.discarded += 1,
                Some(true) => {
                    tally.tested += 1;
                    if check.violated(c) {
                        tally.violations += 1;
                    }
                }
            }
        }
    }
    ConditionSweep { samples, tallies }
}

/// An instance satisfying condition 4's antecedent with `F > 0`.
pub const CONDITION4_COUNTEREXAMPLE: FInstance = FInstance { x_i: 1.0, xhat_i: 1.01, hx: 0.0, hxhat: 0.99, u_i: 0.49 };

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSweep {
    pub instances: usize,
    /// Largest sup-norm gap between the gradient solver and the fixed point.
    pub max_gap: f64,
}

/// Solver settings tight enough to resolve the stationary point to 1e-4.
pub fn precise_recourse_config(lambda: f64, quality: f64) -> RecourseConfig {
    RecourseConfig { lambda, quality, step_size: 0.05, max_iters: 200_000, tolerance: 1e-15 }
}

/// Compares the gradient solver with the closed-form fixed point on random
/// rejected users of random logistic models.
pub fn fixed_point_sweep(instances: usize, seed: u64) -> Result<FixedPointSweep> {
    let mut rng = stream(seed, 1, Purpose::Theory);
    let mut max_gap: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let d = rng.random_range(2..=5usize);
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = rng.random_range(-3.0..-1.0);
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
        let actionable: Vec<bool> = (0..d).map(|i| i == 0 || rng.random_bool(0.8)).collect();
        let lambda = rng.random_range(0.05..1.0);
        let quality = if rng.random_bool(0.5) { 1.0 } else { 0.9 };
        let model = ScoreModel::logistic_with(&w, b);
        if model.score(&x) >= 0.5 {
            continue;
        }
        let names = (0..d).map(|i| format!("f{i}")).collect();
        let schema = FeatureSchema::new(names, actionable, c, 0.0)?;
        let out = recourse_action(&model, &x, &schema, &precise_recourse_config(lambda, quality))?;
        let a = closed_form_recourse_with_target(&model, &x, &schema, lambda, quality)?;
        for i in 0..d {
            max_gap = max_gap.max(libm::fabs(out.new_features[i] - x[i] - a[i]));
        }
        done += 1;
    }
    Ok(FixedPointSweep { instances, max_gap })
}

/// One-dimensional instance `w = 1, b = 0, c = 1, lambda = 0.1, x = -2`,
/// target score 1: the gradient solver's action and the minimizer of a
/// dense grid over `[0, 5]` with spacing `1e-5`.
pub fn one_dimensional_grid_check() -> Result<(f64, f64)> {
    let model = ScoreModel::logistic_with(&[1.0], 0.0);
    let schema = FeatureSchema::new(vec!["f0".into()], vec![true], vec![1.0], 0.0)?;
    let cfg = precise_recourse_config(0.1, 1.0);
    let x = [-2.0];
    let solver = recourse_action(&model, &x, &schema, &cfg)?.new_features[0] - x[0];
    let (mut best, mut best_val) = (0.0, f64::INFINITY);
    for j in 0..=500_000 {
        let a = j as f64 * 1e-5;
        let val = recourse_objective(&model, &x, &[x[0] + a], &schema, &cfg);
        if val < best_val {
            best_val = val;
            best = a;
        }
    }
    Ok((solver, best))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    /// A rejected user acts but keeps label 0.
    FailedRecourse,
    /// An accepted user loses the label to a tighter budget.
    LimitedResource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationCheck {
    pub kind: Perturbation,
    pub seed: u64,
    pub mean_logit_before: f64,
    pub mean_logit_after: f64,
}

impl PerturbationCheck {
    pub fn decreased(&self) -> bool {
        self.mean_logit_after < self.mean_logit_before
    }
}

const SPOT_DIM: usize = 2;
const SPOT_USERS: usize = 40;
const SPOT_TEST: usize = 200;

/// Trains to near the optimum: a coarse ADAM phase, then a fine one so the
/// perturbation effect dominates optimizer noise.
fn fit(start: &ScoreModel, data: &Cohort) -> Result<ScoreModel> {
    let mut model = start.clone();
    for (learning_rate, epochs) in [(0.05, 2000), (0.005, 2000)] {
        let opts = TrainOptions { epochs, adam: AdamConfig::with_learning_rate(learning_rate) };
        model = models::train(&model, data, None, &opts)?.0;
    }
    Ok(model)
}

/// Fits a logistic model to a small labeled instance, applies the
/// perturbation, retrains from the fitted parameters and
/// compares mean test logits.
pub fn perturbation_spot_check(kind: Perturbation, seed: u64) -> Result<PerturbationCheck> {
    let mut rng = stream(seed, 2, Purpose::Theory);
    let (_, test) = generate_synthetic(&mut rng, SPOT_TEST, SPOT_DIM, SPOT_DIM)?;
    let (schema, data, h) = fitted_instance(&mut rng, SPOT_USERS)?;
    let scores = h.scores(&data);
    let labels = data.labels().expect("generated cohorts are labeled");

    let mut features = data.features().to_vec();
    let mut new_labels = labels.to_vec();
    match kind {
        Perturbation::FailedRecourse => {
            let i = argmax_where(&scores, |i| !labels[i] && scores[i] < 0.5)
                .ok_or_else(|| Error::contract("no rejected negative user"))?;
            let out = recourse_action(&h, data.row(i), &schema, &RecourseConfig::default())?;
            features[i * SPOT_DIM..(i + 1) * SPOT_DIM].copy_from_slice(&out.new_features);
        }
        Perturbation::LimitedResource => {
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            // The marginal accepted user loses the label first.
            let i = argmax_where(&neg, |i| labels[i] && scores[i] >= 0.5)
                .ok_or_else(|| Error::contract("no accepted positive user"))?;
            new_labels[i] = false;
        }
    }
    let perturbed = Cohort::labeled(SPOT_DIM, features, new_labels)?;
    let h2 = fit(&h, &perturbed)?;
    Ok(PerturbationCheck {
        kind,
        seed,
        mean_logit_before: higher_standard(&h, &test)?,
        mean_logit_after: higher_standard(&h2, &test)?,
    })
}

const FIT_GRADIENT_TOL: f64 = 1e-3;
const FIT_ATTEMPTS: usize = 50;

/// Draws instances until the fit is a stationary point of the loss. Linearly
/// separable draws have no finite optimum and are redrawn.
fn fitted_instance<R: Rng + ?Sized>(rng: &mut R, users: usize) -> Result<(FeatureSchema, Cohort, ScoreModel)> {
    for _ in 0..FIT_ATTEMPTS {
        let (schema, data) = generate_synthetic(rng, users, SPOT_DIM, SPOT_DIM)?;
        let h = fit(&ScoreModel::logistic(SPOT_DIM), &data)?;
        let grad = h.grad_params(&data, data.labels().expect("generated cohorts are labeled"))?;
        if grad.iter().all(|g| libm::fabs(*g) < FIT_GRADIENT_TOL) {
            return Ok((schema, data, h));
        }
    }
    Err(Error::contract("no instance with a finite optimum was drawn"))
}

fn argmax_where(values: &[f64], keep: impl Fn(usize) -> bool) -> Option<usize> {
    (0..values.len()).filter(|&i| keep(i)).max_by(|&a, &b| values[a].total_cmp(&values[b]))
}

/// Outcome of the bias-shift scan on one responded dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdShiftCheck {
    pub seed: u64,
    /// Some recourse user is among the top-k of the responded dataset.
    pub recourse_in_top_k: bool,
    /// Accuracy of the deployed model against the top-k labels.
    pub accuracy: f64,
    /// Best accuracy over strictly stricter bias shifts.
    pub best_shifted_accuracy: f64,
    pub best_shift: f64,
}

impl ThresholdShiftCheck {
    /// A stricter model does at least as well whenever a recourse user
    /// made the top-k.
    pub fn holds(&self) -> bool {
        !self.recourse_in_top_k || self.best_shifted_accuracy >= self.accuracy
    }
}

const SHIFT_USERS: usize = 50;

/// Fits a model on a 50-user instance, lets half of the rejected users act,
/// labels the responded set by top-k and scans every stricter threshold.
pub fn threshold_shift_check(seed: u64) -> Result<ThresholdShiftCheck> {
    let mut rng = stream(seed, 3, Purpose::Theory);
    let (schema, data, h) = fitted_instance(&mut rng, SHIFT_USERS)?;
    let mut responded = Cohort::new(SPOT_DIM, data.features().to_vec())?;
    responded.set_scores(h.scores(&data))?;
    for i in 0..SHIFT_USERS {
        if h.score(data.row(i)) < 0.5 && rng.random_bool(0.5) {
            let out = recourse_action(&h, data.row(i), &schema, &RecourseConfig::default())?;
            responded.apply_recourse(i, &out.new_features)?;
        }
    }
    let logits = h.logits(&responded);
    let scores = h.scores(&responded);
    let labels = top_k_label(&scores, SHIFT_USERS / 2).labels;
    let recourse_in_top_k = (0..SHIFT_USERS).any(|i| labels[i] && responded.recoursed()[i]);

    let accuracy_at = |shift: f64| {
        let hits = logits.iter().zip(&labels).filter(|(z, y)| (**z - shift >= 0.0) == **y).count();
        hits as f64 / SHIFT_USERS as f64
    };
    let accuracy = accuracy_at(0.0);
    // Decisions only change where the shifted threshold crosses a logit, so
    // the shifts just past each positive logit cover every distinct outcome.
    let mut best_shift = f64::NAN;
    let mut best_shifted_accuracy = f64::NEG_INFINITY;
    for &z in logits.iter().filter(|z| **z > 0.0) {
        for shift in [z, libm::nextafter(z, f64::INFINITY)] {
            let acc = accuracy_at(shift);
            if acc > best_shifted_accuracy {
                best_shifted_accuracy = acc;
                best_shift = shift;
            }
        }
    }
    Ok(ThresholdShiftCheck { seed, recourse_in_top_k, accuracy, best_shifted_accuracy, best_shift })
}
