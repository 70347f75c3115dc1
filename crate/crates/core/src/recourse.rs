//! Recourse actions for rejected users.
//!
//! A user at `x` moves to `x'` minimizing
//! `BCE(h(x'), p) + lambda * sum_{i actionable} c_i (x'_i - x_i)^2`
//! by gradient descent over the actionable coordinates. For logistic models
//! the stationary point satisfies `a_i = (p - h(x + a)) / (2 lambda) * w_i / c_i`,
//! which [`closed_form_recourse`] solves independently.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::models::{sigmoid, ScoreModel, SCORE_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecourseConfig {
    pub lambda: f64,
    /// Target score `p` the user aims for, in (0.5, 1].
    pub quality: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for RecourseConfig {
    fn default() -> Self {
        RecourseConfig { lambda: 0.1, quality: 0.9, step_size: 0.05, max_iters: 200, tolerance: 1e-6 }
    }
}

impl RecourseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("recourse.lambda", format!("must be positive, got {}", self.lambda)));
        }
        if !(self.quality > 0.5 && self.quality <= 1.0) {
            return Err(Error::config("recourse.quality", format!("must lie in (0.5, 1], got {}", self.quality)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("recourse.step_size", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("recourse.max_iters", "must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("recourse.tolerance", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecourseOutcome {
    pub new_features: Vec<f64>,
    pub cost: f64,
    pub achieved_score: f64,
    /// The solver stopped on its target or stationarity rule rather than
    /// running out of iterations.
    pub converged: bool,
    pub iterations: usize,
}

/// Weighted squared distance over actionable coordinates plus `c_0`.
pub fn recourse_cost(x: &[f64], x_new: &[f64], schema: &FeatureSchema) -> f64 {
    let mut cost = schema.cost_offset();
    for i in 0..schema.dim() {
        if schema.is_actionable(i) {
            let diff = x_new[i] - x[i];
            cost += schema.cost_weights()[i] * diff * diff;
        }
    }
    cost
}

fn soft_bce(score: f64, target: f64) -> f64 {
    let h = score.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    -(target * libm::log(h) + (1.0 - target) * libm::log(1.0 - h))
}

/// Objective value `BCE(h(x'), p) + lambda * cost(x, x')`.
pub fn recourse_objective(
    model: &ScoreModel,
    x: &[f64],
    x_new: &[f64],
    schema: &FeatureSchema,
    cfg: &RecourseConfig,
) -> f64 {
    soft_bce(model.score(x_new), cfg.quality) + cfg.lambda * recourse_cost(x, x_new, schema)
}

/// Gradient descent on the recourse objective for one rejected user.
pub fn recourse_action(
    model: &ScoreModel,
    x: &[f64],
    schema: &FeatureSchema,
    cfg: &RecourseConfig,
) -> Result<RecourseOutcome> {
    let d = schema.dim();
    if x.len() != d || model.dim() != d {
        return Err(Error::contract(format!("user has {} features, schema {d}, model {}", x.len(), model.dim())));
    }
    let start_score = model.score(x);
    if start_score >= 0.5 {
        return Err(Error::contract(format!("user already accepted with score {start_score}")));
    }
    let mut current = x.to_vec();
    if schema.n_actionable() == 0 {
        return Ok(RecourseOutcome {
            cost: recourse_cost(x, &current, schema),
            new_features: current,
            achieved_score: start_score,
            converged: false,
            iterations: 0,
        });
    }
    let p = cfg.quality;
    let target = p * (1.0 - cfg.tolerance);
    let weights = schema.cost_weights();
    let mut logit_grad = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut trial = current.clone();
    let mut objective = recourse_objective(model, x, &current, schema, cfg);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_iters {
        iterations = it;
        let h = model.score(&current);
        model.logit_grad_input(&current, &mut logit_grad);
        // d BCE(h, p) / d logit = h - p.
        let mut grad_sq = 0.0;
        for i in 0..d {
            grad[i] = if schema.is_actionable(i) {
                (h - p) * logit_grad[i] + 2.0 * cfg.lambda * weights[i] * (current[i] - x[i])
            } else {
                0.0
            };
            grad_sq += grad[i] * grad[i];
        }
        if !grad_sq.is_finite() {
            return Err(Error::Solver { iteration: it, score: h, objective });
        }
        // Backtracking from the configured step until the Armijo condition holds.
        let mut step = cfg.step_size;
        let mut next = objective;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            for i in 0..d {
                trial[i] = current[i] - step * grad[i];
            }
            next = recourse_objective(model, x, &trial, schema, cfg);
            if next <= objective - ARMIJO * step * grad_sq {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !next.is_finite() || trial.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver { iteration: it, score: model.score(&trial), objective: next });
        }
        if !accepted {
            // No descent step exists at machine precision: stationary.
            converged = true;
            break;
        }
        current.copy_from_slice(&trial);
        let improvement = objective - next;
        objective = next;
        if model.score(&current) >= target || improvement < cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(RecourseOutcome {
        cost: recourse_cost(x, &current, schema),
        achieved_score: model.score(&current),
        new_features: current,
        converged,
        iterations,
    })
}

const MAX_HALVINGS: usize = 40;
const ARMIJO: f64 = 1e-4;

const ORACLE_MAX_ITERS: usize = 10_000;
const ORACLE_TOL: f64 = 1e-8;

/// Closed-form stationary action for a logistic model with target score 1.
pub fn closed_form_recourse(model: &ScoreModel, x: &[f64], schema: &FeatureSchema, lambda: f64) -> Result<Vec<f64>> {
    closed_form_recourse_with_target(model, x, schema, lambda, 1.0)
}

/// Solves `a_i = (p - h(x + a)) / (2 lambda) * w_i / c_i` on the actionable
/// coordinates.
///
/// The action is `s * v` with `v_i = w_i / c_i`, so the system reduces to the
/// scalar fixed point `s = (p - h(x + s v)) / (2 lambda)`. Iterates are
/// damped by `1 / (1 + |g'(s)|)` and kept inside a shrinking bracket around
/// the root.
pub fn closed_form_recourse_with_target(
    model: &ScoreModel,
    x: &[f64],
    schema: &FeatureSchema,
    lambda: f64,
    target: f64,
) -> Result<Vec<f64>> {
    let w = model.logistic_weights().ok_or_else(|| Error::contract("the closed-form action needs a logistic model"))?;
    if !(lambda > 0.0) {
        return Err(Error::contract("lambda must be positive"));
    }
    let d = schema.dim();
    if x.len() != d || w.len() != d {
        return Err(Error::contract("dimension mismatch"));
    }
    let v: Vec<f64> =
        (0..d).map(|i| if schema.is_actionable(i) { w[i] / schema.cost_weights()[i] } else { 0.0 }).collect();
    let base = model.logit(x);
    let wv: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
    let g = |s: f64| (target - sigmoid(base + s * wv)) / (2.0 * lambda);
    // f(s) = s - g(s) is strictly increasing; g(0) bounds the root.
    let g0 = g(0.0);
    let (mut lo, mut hi) = if g0 >= 0.0 { (0.0, g0) } else { (g0, 0.0) };
    let mut s = 0.5 * (lo + hi);
    let mut residual = f64::INFINITY;
    for it in 0..ORACLE_MAX_ITERS {
        let gs = g(s);
        residual = s - gs;
        if residual.abs() < ORACLE_TOL * (1.0 + s.abs()) && it > 0 {
            return Ok(v.iter().map(|vi| s * vi).collect());
        }
        if residual > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let h = sigmoid(base + s * wv);
        let slope = h * (1.0 - h) * wv / (2.0 * lambda);
        let mut next = s - residual / (1.0 + slope);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        s = next;
    }
    Err(Error::Oracle { iterations: ORACLE_MAX_ITERS, residual: residual.abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;

    fn schema(c: &[f64], actionable: &[bool]) -> FeatureSchema {
        let names = (0..c.len()).map(|i| alloc::format!("f{i}")).collect::<Vec<String>>();
        FeatureSchema::new(names, actionable.to_vec(), c.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn cost_examples() {
        let s = schema(&[1.0, 0.5], &[true, true]);
        assert_eq!(recourse_cost(&[0.0, 0.0], &[0.0, 0.0], &s), 0.0);
        assert_eq!(recourse_cost(&[0.0, 0.0], &[1.0, 2.0], &s), 3.0);
        let partial = schema(&[1.0, 0.5], &[true, false]);
        assert_eq!(
            recourse_cost(&[0.0, 0.0], &[1.0, 2.0], &partial),
            recourse_cost(&[0.0, 0.0], &[1.0, -7.0], &partial)
        );
    }

    #[test]
    fn one_dimensional_stationary_point() {
        // a = 5 (1 - h(-2 + a)) has its root near 2.22.
        let model = ScoreModel::logistic_with(&[1.0], 0.0);
        let s = schema(&[1.0], &[true]);
        let cfg = RecourseConfig { lambda: 0.1, quality: 1.0, step_size: 0.05, max_iters: 100_000, tolerance: 1e-14 };
        let out = recourse_action(&model, &[-2.0], &s, &cfg).unwrap();
        let a = out.new_features[0] + 2.0;
        assert!((a - 2.22).abs() < 0.01, "a = {a}");
        let oracle = closed_form_recourse(&model, &[-2.0], &s, 0.1).unwrap();
        assert!((oracle[0] - 2.22).abs() < 0.01);
        assert!((oracle[0] - a).abs() < 1e-4);
    }

    #[test]
    fn immutable_schema_freezes_user() {
        let model = ScoreModel::logistic_with(&[1.0, 1.0], -1.0);
        let s = schema(&[1.0, 1.0], &[false, false]);
        let out = recourse_action(&model, &[0.0, 0.0], &s, &RecourseConfig::default()).unwrap();
        assert_eq!(out.new_features, vec![0.0, 0.0]);
        assert_eq!(out.cost, 0.0);
        assert!(!out.converged);
    }

    #[test]
    fn large_lambda_shrinks_action() {
        let model = ScoreModel::logistic_with(&[1.0, 0.5], -1.0);
        let s = schema(&[1.0, 1.0], &[true, true]);
        let mut prev = f64::INFINITY;
        for lambda in [0.1, 1.0, 10.0, 1000.0] {
            let cfg =
                RecourseConfig { lambda, step_size: 0.4 / lambda.max(1.0), max_iters: 10_000, ..Default::default() };
            let out = recourse_action(&model, &[0.0, 0.0], &s, &cfg).unwrap();
            let norm = out.new_features.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < prev);
            prev = norm;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn accepted_user_is_rejected() {
        let model = ScoreModel::logistic_with(&[1.0], 0.0);
        let s = schema(&[1.0], &[true]);
        assert!(matches!(recourse_action(&model, &[1.0], &s, &RecourseConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn closed_form_proportionality() {
        let model = ScoreModel::logistic_with(&[2.0, 1.0], -3.0);
        let s = schema(&[1.0, 1.0], &[true, true]);
        let a = closed_form_recourse(&model, &[0.0, 0.0], &s, 0.1).unwrap();
        assert!((a[0] / a[1] - 2.0).abs() < 1e-6);
        let model = ScoreModel::logistic_with(&[0.7, -0.4, 1.3], -2.0);
        let c = [0.6, 1.4, 2.0];
        let s = schema(&c, &[true, true, true]);
        let a = closed_form_recourse(&model, &[0.1, 0.2, -0.5], &s, 0.3).unwrap();
        let w = [0.7, -0.4, 1.3];
        let ratios: Vec<f64> = (0..3).map(|i| a[i] * c[i] / w[i]).collect();
        let spread = ratios.iter().cloned().fold(f64::MIN, f64::max) - ratios.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-6);
    }

    #[test]
    fn closed_form_needs_logistic() {
        let mut rng = crate::rng::stream(1, 0, crate::rng::Purpose::Init);
        let mlp = ScoreModel::mlp(2, 3, &mut rng);
        let s = schema(&[1.0, 1.0], &[true, true]);
        assert!(closed_form_recourse(&mlp, &[0.0, 0.0], &s, 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RecourseConfig::default().validate().is_ok());
        assert!(RecourseConfig { quality: 0.5, ..Default::default() }.validate().is_err());
        assert!(RecourseConfig { lambda: 0.0, ..Default::default() }.validate().is_err());
        assert!(RecourseConfig { max_iters: 0, ..Default::default() }.validate().is_err());
    }
}
