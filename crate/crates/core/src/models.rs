//! Score models `h: R^d -> [0, 1]`, BCE loss, ADAM and full-batch training.
//!
//! Parameters live in one flat vector so the continual-learning penalty can
//! address them uniformly. Layouts:
//!
//! * logistic: `[w_0 .. w_{d-1}, b]`
//! * mlp: `[W1 (hidden x d, row-major), b1 (hidden), w2 (hidden), b2]`

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::update::QuadraticPenalty;

pub const SCORE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    kind: ModelKind,
    dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Number of parameters of a model with the given shape.
pub fn param_count(kind: ModelKind, dim: usize, hidden: usize) -> usize {
    match kind {
        ModelKind::Logistic => dim + 1,
        ModelKind::Mlp => hidden * dim + 2 * hidden + 1,
    }
}

impl ScoreModel {
    /// Logistic model with all parameters zero.
    pub fn logistic(dim: usize) -> Self {
        ScoreModel { kind: ModelKind::Logistic, dim, hidden: 0, params: vec![0.0; dim + 1] }
    }

    pub fn logistic_with(weights: &[f64], bias: f64) -> Self {
        let mut params = weights.to_vec();
        params.push(bias);
        ScoreModel { kind: ModelKind::Logistic, dim: weights.len(), hidden: 0, params }
    }

    /// One-hidden-layer ReLU network, every parameter drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn mlp<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let in_bound = 1.0 / libm::sqrt(dim as f64);
        let out_bound = 1.0 / libm::sqrt(hidden as f64);
        let mut params = Vec::with_capacity(param_count(ModelKind::Mlp, dim, hidden));
        for _ in 0..hidden * dim + hidden {
            params.push(rng.random_range(-in_bound..=in_bound));
        }
        for _ in 0..hidden + 1 {
            params.push(rng.random_range(-out_bound..=out_bound));
        }
        ScoreModel { kind: ModelKind::Mlp, dim, hidden, params }
    }

    pub fn from_parts(kind: ModelKind, dim: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        let hidden = if kind == ModelKind::Logistic { 0 } else { hidden };
        if dim == 0 || (kind == ModelKind::Mlp && hidden == 0) {
            return Err(Error::contract("model dimensions must be positive"));
        }
        let expected = param_count(kind, dim, hidden);
        if params.len() != expected {
            return Err(Error::contract(format!(
                "{kind:?} model with d={dim}, hidden={hidden} needs {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(ScoreModel { kind, dim, hidden, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameter blocks by name, in layout order.
    pub fn named_params(&self) -> Vec<(&'static str, &[f64])> {
        let p = &self.params;
        match self.kind {
            ModelKind::Logistic => vec![("w", &p[..self.dim]), ("b", &p[self.dim..])],
            ModelKind::Mlp => {
                let (h, d) = (self.hidden, self.dim);
                vec![
                    ("w1", &p[..h * d]),
                    ("b1", &p[h * d..h * d + h]),
                    ("w2", &p[h * d + h..h * d + 2 * h]),
                    ("b2", &p[h * d + 2 * h..]),
                ]
            }
        }
    }

    /// Logistic weights (excluding the bias). `None` for an MLP.
    pub fn logistic_weights(&self) -> Option<&[f64]> {
        (self.kind == ModelKind::Logistic).then(|| &self.params[..self.dim])
    }

    pub fn bias_index(&self) -> usize {
        self.params.len() - 1
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::contract(format!("input of length {} for a {}-dimensional model", x.len(), self.dim)));
        }
        Ok(())
    }

    pub fn predict_logit(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.logit(x))
    }

    pub fn predict_score(&self, x: &[f64]) -> Result<f64> {
        self.predict_logit(x).map(sigmoid)
    }

    /// Unchecked forward pass; `x` must have length `dim`.
    pub fn logit(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match self.kind {
            ModelKind::Logistic => dot(&self.params[..self.dim], x) + self.params[self.dim],
            ModelKind::Mlp => {
                let (h, d) = (self.hidden, self.dim);
                let p = &self.params;
                let mut out = p[h * d + 2 * h];
                for j in 0..h {
                    let z = dot(&p[j * d..(j + 1) * d], x) + p[h * d + j];
                    if z > 0.0 {
                        out += p[h * d + h + j] * z;
                    }
                }
                out
            }
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn scores(&self, cohort: &Cohort) -> Vec<f64> {
        cohort.rows().map(|x| self.score(x)).collect()
    }

    pub fn logits(&self, cohort: &Cohort) -> Vec<f64> {
        cohort.rows().map(|x| self.logit(x)).collect()
    }

    /// Gradient of the logit with respect to the input, written to `out`.
    pub fn logit_grad_input(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            ModelKind::Logistic => out.copy_from_slice(&self.params[..self.dim]),
            ModelKind::Mlp => {
                let (h, d) = (self.hidden, self.dim);
                let p = &self.params;
                out.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..h {
                    let row = &p[j * d..(j + 1) * d];
                    let z = dot(row, x) + p[h * d + j];
                    if z > 0.0 {
                        let w2 = p[h * d + h + j];
                        for (o, r) in out.iter_mut().zip(row) {
                            *o += w2 * r;
                        }
                    }
                }
            }
        }
    }

    /// Exact gradient of the score `h(x)` with respect to `x`.
    pub fn grad_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut g = vec![0.0; self.dim];
        self.logit_grad_input(x, &mut g);
        let s = self.score(x);
        let scale = s * (1.0 - s);
        g.iter_mut().for_each(|v| *v *= scale);
        Ok(g)
    }

    /// Accumulates `coef * d logit(x) / d theta` into `out`.
    fn accumulate_logit_grad_params(&self, x: &[f64], coef: f64, out: &mut [f64]) {
        match self.kind {
            ModelKind::Logistic => {
                for (o, xi) in out[..self.dim].iter_mut().zip(x) {
                    *o += coef * xi;
                }
                out[self.dim] += coef;
            }
            ModelKind::Mlp => {
                let (h, d) = (self.hidden, self.dim);
                let p = &self.params;
                for j in 0..h {
                    let z = dot(&p[j * d..(j + 1) * d], x) + p[h * d + j];
                    if z > 0.0 {
                        let w2 = p[h * d + h + j];
                        for (o, xi) in out[j * d..(j + 1) * d].iter_mut().zip(x) {
                            *o += coef * w2 * xi;
                        }
                        out[h * d + j] += coef * w2;
                        out[h * d + h + j] += coef * z;
                    }
                }
                out[h * d + 2 * h] += coef;
            }
        }
    }

    /// Mean BCE over `rows` and its parameter gradient (written to `grad`).
    pub fn loss_and_grad(&self, data: &Cohort, labels: &[bool], grad: &mut [f64]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::contract("empty training batch"));
        }
        if labels.len() != data.len() {
            return Err(Error::contract("label count does not match batch size"));
        }
        if data.dim() != self.dim {
            return Err(Error::contract("batch dimension does not match model"));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let inv_n = 1.0 / data.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in data.rows().zip(labels) {
            let s = self.score(x);
            let target = if y { 1.0 } else { 0.0 };
            loss += bce_term(s, target);
            self.accumulate_logit_grad_params(x, (s - target) * inv_n, grad);
        }
        Ok(loss * inv_n)
    }

    /// Gradient of the mean BCE over the batch with respect to the parameters.
    pub fn grad_params(&self, data: &Cohort, labels: &[bool]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.params.len()];
        self.loss_and_grad(data, labels, &mut g)?;
        Ok(g)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bce_term(score: f64, target: f64) -> f64 {
    let h = score.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    -(target * libm::log(h) + (1.0 - target) * libm::log(1.0 - h))
}

/// Mean binary cross-entropy; scores are clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    if scores.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let total: f64 = scores.iter().zip(labels).map(|(s, y)| bce_term(*s, if *y { 1.0 } else { 0.0 })).sum();
    Ok(total / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Logistic => Self::with_learning_rate(1e-2),
            ModelKind::Mlp => Self::with_learning_rate(1e-3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        OptimizerState { first_moment: vec![0.0; n_params], second_moment: vec![0.0; n_params], step_count: 0, config }
    }

    /// One bias-corrected ADAM update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.first_moment.len());
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - libm::pow(beta1, t);
        let bc2 = 1.0 - libm::pow(beta2, t);
        for (((p, g), m), v) in
            params.iter_mut().zip(grad).zip(self.first_moment.iter_mut()).zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub adam: AdamConfig,
}

/// One optimizer step: the unregularized loss gradient at the start of the
/// step and the resulting parameter change.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub grad: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub start: Vec<f64>,
    pub steps: Vec<TraceStep>,
    /// Total (regularized) loss before each step.
    pub losses: Vec<f64>,
}

impl TrainTrace {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Full-batch ADAM on mean BCE plus an optional quadratic anchor penalty,
/// warm-started from `model`'s current parameters.
pub fn train(
    model: &ScoreModel,
    data: &Cohort,
    penalty: Option<&QuadraticPenalty>,
    opts: &TrainOptions,
) -> Result<(ScoreModel, TrainTrace)> {
    let labels = data.labels().ok_or_else(|| Error::contract("training cohort is unlabeled"))?;
    let mut current = model.clone();
    let mut trace = TrainTrace { start: model.params.clone(), steps: Vec::new(), losses: Vec::new() };
    if opts.epochs == 0 {
        return Ok((current, trace));
    }
    if let Some(p) = penalty {
        p.check_len(current.params.len())?;
    }
    let n = current.params.len();
    let mut state = OptimizerState::new(n, opts.adam);
    let mut base_grad = vec![0.0; n];
    let mut total_grad = vec![0.0; n];
    trace.steps.reserve(opts.epochs);
    for _ in 0..opts.epochs {
        let mut loss = current.loss_and_grad(data, labels, &mut base_grad)?;
        total_grad.copy_from_slice(&base_grad);
        if let Some(p) = penalty {
            loss += p.value(&current.params);
            p.add_gradient(&current.params, &mut total_grad);
        }
        let before = current.params.clone();
        state.step(&mut current.params, &total_grad);
        if current.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("training produced non-finite parameters"));
        }
        let delta = current.params.iter().zip(&before).map(|(a, b)| a - b).collect();
        trace.losses.push(loss);
        trace.steps.push(TraceStep { grad: base_grad.clone(), delta });
    }
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn toy_mlp() -> ScoreModel {
        ScoreModel::mlp(3, 4, &mut stream(11, 0, Purpose::Init))
    }

    #[test]
    fn logistic_logit_arithmetic() {
        let m = ScoreModel::logistic(2);
        assert_eq!(m.predict_logit(&[3.0, -4.0]).unwrap(), 0.0);
        let m = ScoreModel::logistic_with(&[1.0, -1.0], 0.5);
        assert_eq!(m.predict_logit(&[2.0, 1.0]).unwrap(), 1.5);
        assert!(matches!(m.predict_logit(&[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn mlp_with_zero_head_returns_head_bias() {
        let mut m = toy_mlp();
        let (h, d) = (4, 3);
        for j in 0..h {
            m.params_mut()[h * d + h + j] = 0.0;
        }
        m.params_mut()[h * d + 2 * h] = -0.7;
        for x in [[0.0, 0.0, 0.0], [1.0, -2.0, 3.0], [5.0, 5.0, -5.0]] {
            assert_eq!(m.predict_logit(&x).unwrap(), -0.7);
        }
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(2.0) - 0.8808).abs() < 5e-5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        let m = ScoreModel::logistic_with(&[0.3], -0.1);
        for x in [-2.0, 0.0, 0.3333, 1.0, 4.0] {
            let s = m.predict_score(&[x]).unwrap();
            let z = m.predict_logit(&[x]).unwrap();
            assert_eq!(s, sigmoid(z));
            assert_eq!(s >= 0.5, z >= 0.0);
        }
    }

    #[test]
    fn logistic_input_gradient_closed_form() {
        let w = [0.4, -1.2, 2.0];
        let m = ScoreModel::logistic_with(&w, 0.3);
        let x = [0.1, 0.2, -0.3];
        let h = m.score(&x);
        let g = m.grad_input(&x).unwrap();
        for (gi, wi) in g.iter().zip(w) {
            assert!((gi - h * (1.0 - h) * wi).abs() < 1e-15);
        }
        let zero = ScoreModel::logistic(3);
        assert!(zero.grad_input(&x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bias_gradient_single_sample() {
        // h = 0.5 and y = 1 give dL/db = h - y = -0.5.
        let m = ScoreModel::logistic(2);
        let data = Cohort::labeled(2, vec![1.0, 2.0], vec![true]).unwrap();
        let g = m.grad_params(&data, &[true]).unwrap();
        assert!((g[2] + 0.5).abs() < 1e-15);
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_predictions_have_vanishing_gradient() {
        let m = ScoreModel::logistic_with(&[40.0], 0.0);
        let data = Cohort::labeled(1, vec![1.0, -1.0], vec![true, false]).unwrap();
        let g = m.grad_params(&data, data.labels().unwrap()).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-15);
    }

    #[test]
    fn empty_batch_is_contract_error() {
        let m = ScoreModel::logistic(2);
        let data = Cohort::new(2, vec![]).unwrap();
        assert!(matches!(m.grad_params(&data, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(&[0.5], &[true]).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
        let opt = bce_loss(&[1.0, 0.0], &[true, false]).unwrap();
        assert!(opt <= 1.1e-7);
        let a = bce_loss(&[0.2, 0.9, 0.6], &[false, true, false]).unwrap();
        let b = bce_loss(&[0.6, 0.2, 0.9], &[false, false, true]).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(bce_loss(&[0.5], &[true, false]).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut st = OptimizerState::new(3, AdamConfig::with_learning_rate(0.1));
        let mut p = [1.0, -2.0, 3.0];
        st.step(&mut p, &[0.0; 3]);
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr_sign() {
        let lr = 0.01;
        let mut st = OptimizerState::new(2, AdamConfig::with_learning_rate(lr));
        let mut p = [0.0, 0.0];
        let g = [3.0, -0.2];
        let mut last = p;
        for _ in 0..5000 {
            last = p;
            st.step(&mut p, &g);
        }
        assert!(((p[0] - last[0]) + lr).abs() < 1e-6);
        assert!(((p[1] - last[1]) - lr).abs() < 1e-6);
    }

    #[test]
    fn adam_is_pure() {
        let st = OptimizerState::new(2, AdamConfig::with_learning_rate(0.05));
        let (mut a, mut b) = (st.clone(), st);
        let (mut pa, mut pb) = ([0.5, 0.1], [0.5, 0.1]);
        for g in [[1.0, -1.0], [0.3, 0.2]] {
            a.step(&mut pa, &g);
            b.step(&mut pb, &g);
        }
        assert_eq!(pa, pb);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_return_model_unchanged() {
        let m = ScoreModel::logistic_with(&[1.0], 0.2);
        let data = Cohort::labeled(1, vec![1.0], vec![true]).unwrap();
        let opts = TrainOptions { epochs: 0, adam: AdamConfig::with_learning_rate(0.1) };
        let (m2, trace) = train(&m, &data, None, &opts).unwrap();
        assert_eq!(m, m2);
        assert!(trace.is_empty());
    }

    #[test]
    fn from_parts_checks_length() {
        assert!(ScoreModel::from_parts(ModelKind::Logistic, 3, 0, vec![0.0; 4]).is_ok());
        assert!(ScoreModel::from_parts(ModelKind::Logistic, 3, 0, vec![0.0; 3]).is_err());
        assert!(ScoreModel::from_parts(ModelKind::Mlp, 3, 4, vec![0.0; 4 * 3 + 9]).is_ok());
    }
}
