//! Model-update strategies: plain BCE, range-limited Synaptic Intelligence,
//! and the JSD-adaptive variant (DCL).

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TrainTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Static,
    Continual,
    Dcl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateConfig {
    pub strategy: StrategyKind,
    pub tau: f64,
    pub range: usize,
    pub epsilon: f64,
    pub jsd_floor: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig { strategy: StrategyKind::Static, tau: 1e-5, range: 5, epsilon: 1e-3, jsd_floor: 1e-3 }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::config("update.tau", "must be finite and nonnegative"));
        }
        if self.range == 0 {
            return Err(Error::config("update.range", "must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("update.epsilon", "must be positive"));
        }
        if !(self.jsd_floor > 0.0 && self.jsd_floor <= 1.0) {
            return Err(Error::config("update.jsd_floor", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Importance and displacement recorded for one finished task (round).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task: usize,
    /// Path-integral importance per parameter.
    pub omega: Vec<f64>,
    /// Net parameter change over the task.
    pub delta: Vec<f64>,
}

/// `tau_eff * sum_k strength_k (anchor_k - theta_k)^2`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPenalty {
    pub anchor: Vec<f64>,
    pub strength: Vec<f64>,
    pub tau_eff: f64,
}

impl QuadraticPenalty {
    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.anchor.len() != n || self.strength.len() != n {
            return Err(Error::contract(format!(
                "penalty over {} / {} parameters applied to a model with {n}",
                self.anchor.len(),
                self.strength.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let s: f64 = theta.iter().zip(&self.anchor).zip(&self.strength).map(|((t, a), o)| o * (a - t) * (a - t)).sum();
        self.tau_eff * s
    }

    pub fn add_gradient(&self, theta: &[f64], grad: &mut [f64]) {
        for (((g, t), a), o) in grad.iter_mut().zip(theta).zip(&self.anchor).zip(&self.strength) {
            *g += 2.0 * self.tau_eff * o * (t - a);
        }
    }
}

/// Surrogate loss `base + tau_eff * sum_k Omega_k (anchor_k - theta_k)^2`.
pub fn regularized_loss(base_loss: f64, theta: &[f64], anchor: &[f64], omega: &[f64], tau_eff: f64) -> Result<f64> {
    if theta.len() != anchor.len() || theta.len() != omega.len() {
        return Err(Error::contract("parameter, anchor and strength vectors differ in length"));
    }
    let penalty = QuadraticPenalty { anchor: anchor.to_vec(), strength: omega.to_vec(), tau_eff };
    Ok(base_loss + penalty.value(theta))
}

/// Per-parameter path integral `sum_steps max(0, -g_k * dtheta_k)`.
pub fn si_accumulate(trace: &TrainTrace) -> Vec<f64> {
    let n = trace.start.len();
    let mut omega = vec![0.0; n];
    for step in &trace.steps {
        for ((o, g), d) in omega.iter_mut().zip(&step.grad).zip(&step.delta) {
            *o += (-g * d).max(0.0);
        }
    }
    omega
}

/// Cubic window weights for `m` retained tasks under range `r`, oldest
/// first, normalized to sum to one. The newest task sits at position `r`
/// with raw weight 1; position `j` has raw weight `(j / r)^3`.
pub fn cubic_weights(m: usize, r: usize) -> Vec<f64> {
    let m = m.min(r);
    let raw: Vec<f64> = (r - m + 1..=r)
        .map(|j| {
            let f = j as f64 / r as f64;
            f * f * f
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Per-parameter strength `Omega_k = sum_u w_u omega^u_k / ((Delta^u_k)^2 + eps)`
/// over the last `r` tasks in `history` (oldest first).
pub fn omega_regularizer(history: &[TaskRecord], n_params: usize, r: usize, epsilon: f64) -> Vec<f64> {
    let mut strength = vec![0.0; n_params];
    if history.is_empty() || r == 0 {
        return strength;
    }
    let window = &history[history.len().saturating_sub(r)..];
    let weights = cubic_weights(window.len(), r);
    for (task, w) in window.iter().zip(weights) {
        for ((s, o), d) in strength.iter_mut().zip(&task.omega).zip(&task.delta) {
            *s += w * o / (d * d + epsilon);
        }
    }
    strength
}

pub fn dcl_tau(tau: f64, jsd_prev: f64, jsd_floor: f64) -> f64 {
    tau / jsd_prev.max(jsd_floor)
}

/// Strategy state carried across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStrategy {
    pub config: UpdateConfig,
    history: VecDeque<TaskRecord>,
}

impl UpdateStrategy {
    pub fn new(config: UpdateConfig) -> Self {
        UpdateStrategy { config, history: VecDeque::new() }
    }

    pub fn history(&self) -> impl Iterator<Item = &TaskRecord> {
        self.history.iter()
    }

    /// Effective penalty scale for the coming task.
    pub fn tau_eff(&self, jsd_prev: f64) -> f64 {
        match self.config.strategy {
            StrategyKind::Static => 0.0,
            StrategyKind::Continual => self.config.tau,
            StrategyKind::Dcl => dcl_tau(self.config.tau, jsd_prev, self.config.jsd_floor),
        }
    }

    /// Penalty anchored at `anchor` (the parameters the task starts from).
    /// `None` for the static strategy.
    pub fn penalty(&self, anchor: &[f64], jsd_prev: f64) -> Option<QuadraticPenalty> {
        if self.config.strategy == StrategyKind::Static {
            return None;
        }
        let tasks: Vec<TaskRecord> = self.history.iter().cloned().collect();
        let strength = omega_regularizer(&tasks, anchor.len(), self.config.range, self.config.epsilon);
        Some(QuadraticPenalty { anchor: anchor.to_vec(), strength, tau_eff: self.tau_eff(jsd_prev) })
    }

    /// Records a finished task, evicting tasks that fell out of the range.
    pub fn record_task(&mut self, task: usize, trace: &TrainTrace, end_params: &[f64]) {
        if self.config.strategy == StrategyKind::Static {
            return;
        }
        let omega = si_accumulate(trace);
        let delta = if trace.start.is_empty() {
            vec![0.0; end_params.len()]
        } else {
            end_params.iter().zip(&trace.start).map(|(a, b)| a - b).collect()
        };
        self.history.push_back(TaskRecord { task, omega, delta });
        while self.history.len() > self.config.range {
            self.history.pop_front();
        }
    }
}

pub const HISTOGRAM_BINS: usize = 20;

/// Equal-width histogram of values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub masses: Vec<f64>,
}

impl Histogram {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let bins = HISTOGRAM_BINS;
        let mut counts = vec![0usize; bins];
        let mut n = 0usize;
        for v in values {
            let v = v.clamp(0.0, 1.0);
            let i = ((v * bins as f64) as usize).min(bins - 1);
            counts[i] += 1;
            n += 1;
        }
        let masses = if n == 0 { vec![0.0; bins] } else { counts.iter().map(|c| *c as f64 / n as f64).collect() };
        let bin_edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        Histogram { bin_edges, masses }
    }

    pub fn from_masses(masses: Vec<f64>) -> Self {
        let bins = masses.len();
        Histogram { bin_edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(), masses }
    }

    pub fn is_empty(&self) -> bool {
        self.masses.iter().all(|m| *m == 0.0)
    }
}

/// Base-2 Jensen-Shannon divergence. When exactly one side is empty the
/// two distributions share no mass and the divergence is 1.
pub fn jsd(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.masses.len() != q.masses.len() || p.bin_edges != q.bin_edges {
        return Err(Error::contract("histograms have different bin edges"));
    }
    match (p.is_empty(), q.is_empty()) {
        (true, true) => return Err(Error::EmptyHistograms),
        (true, false) | (false, true) => return Ok(1.0),
        _ => {}
    }
    let half_kl = |a: f64, m: f64| if a > 0.0 { a * libm::log2(a / m) } else { 0.0 };
    let mut total = 0.0;
    for (a, b) in p.masses.iter().zip(&q.masses) {
        let m = 0.5 * (a + b);
        total += half_kl(*a, m) + half_kl(*b, m);
    }
    Ok((0.5 * total).clamp(0.0, 1.0))
}

/// Divergence between the score distributions of positively and negatively
/// labeled rows.
pub fn label_score_jsd(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = Histogram::from_values(scores.iter().zip(labels).filter(|(_, l)| **l).map(|(s, _)| *s));
    let neg = Histogram::from_values(scores.iter().zip(labels).filter(|(_, l)| !**l).map(|(s, _)| *s));
    jsd(&pos, &neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TraceStep;

    fn trace(start: Vec<f64>, steps: &[(&[f64], &[f64])]) -> TrainTrace {
        TrainTrace {
            start,
            steps: steps.iter().map(|(g, d)| TraceStep { grad: g.to_vec(), delta: d.to_vec() }).collect(),
            losses: vec![],
        }
    }

    #[test]
    fn si_zero_gradient() {
        let t = trace(vec![0.0, 0.0], &[(&[0.0, 0.0], &[0.3, -0.1]), (&[0.0, 0.0], &[0.2, 0.2])]);
        assert_eq!(si_accumulate(&t), vec![0.0, 0.0]);
        assert_eq!(si_accumulate(&TrainTrace::default()), Vec::<f64>::new());
    }

    #[test]
    fn si_single_step() {
        let t = trace(vec![0.0], &[(&[-2.0], &[0.1])]);
        assert!((si_accumulate(&t)[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn si_additive_under_step_splitting() {
        let whole = trace(vec![0.0, 0.0], &[(&[-1.5, 0.4], &[0.2, -0.6])]);
        let halves = trace(vec![0.0, 0.0], &[(&[-1.5, 0.4], &[0.1, -0.3]), (&[-1.5, 0.4], &[0.1, -0.3])]);
        let (a, b) = (si_accumulate(&whole), si_accumulate(&halves));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn cubic_window_weights() {
        assert_eq!(cubic_weights(1, 1), vec![1.0]);
        let w = cubic_weights(2, 2);
        assert!((w[0] / w[1] - 0.125).abs() < 1e-15);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // A partially filled window keeps the newest tasks' positions.
        let w = cubic_weights(2, 5);
        assert!((w[0] / w[1] - (4.0f64 / 5.0).powi(3)).abs() < 1e-12);
    }

    #[test]
    fn omega_uses_only_window() {
        let rec = |task, o: f64| TaskRecord { task, omega: vec![o], delta: vec![0.0] };
        let history = [rec(1, 100.0), rec(2, 1.0)];
        let s = omega_regularizer(&history, 1, 1, 1.0);
        assert_eq!(s, vec![1.0]);
        let zeros = [rec(1, 0.0), rec(2, 0.0)];
        assert_eq!(omega_regularizer(&zeros, 1, 2, 1e-3), vec![0.0]);
        assert_eq!(omega_regularizer(&[], 3, 2, 1e-3), vec![0.0; 3]);
    }

    #[test]
    fn omega_equal_tasks_cubic_ratio() {
        let rec = |task| TaskRecord { task, omega: vec![1.0], delta: vec![0.5] };
        let s = omega_regularizer(&[rec(1), rec(2)], 1, 2, 1e-3);
        // Weights 1/9 and 8/9 of the same per-task strength.
        let per_task = 1.0 / (0.25 + 1e-3);
        assert!((s[0] - per_task).abs() < 1e-12);
    }

    #[test]
    fn history_window_evicts_old_tasks() {
        let mut st =
            UpdateStrategy::new(UpdateConfig { strategy: StrategyKind::Continual, range: 3, ..Default::default() });
        let t = trace(vec![0.0], &[(&[-1.0], &[0.1])]);
        for task in 1..=7 {
            st.record_task(task, &t, &[0.1]);
            assert!(st.history().all(|r| r.task + 3 > task));
        }
        assert_eq!(st.history().count(), 3);
        let mut stat = UpdateStrategy::new(UpdateConfig::default());
        stat.record_task(1, &t, &[0.1]);
        assert_eq!(stat.history().count(), 0);
        assert!(stat.penalty(&[0.0], 0.5).is_none());
    }

    #[test]
    fn jsd_reference_values() {
        let a = Histogram::from_masses(vec![1.0, 0.0]);
        let b = Histogram::from_masses(vec![0.5, 0.5]);
        let c = Histogram::from_masses(vec![0.0, 1.0]);
        assert_eq!(jsd(&a, &a).unwrap(), 0.0);
        assert!((jsd(&a, &c).unwrap() - 1.0).abs() < 1e-15);
        // KL(p||m) with m = [0.75, 0.25]: log2(4/3); KL(q||m): 0.5 log2(2/3) + 0.5 log2(2).
        let expected = 0.5 * ((4.0f64 / 3.0).log2() + 0.5 * (2.0f64 / 3.0).log2() + 0.5);
        assert!((jsd(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((jsd(&a, &b).unwrap() - 0.3113).abs() < 1e-4);
        let empty = Histogram::from_masses(vec![0.0, 0.0]);
        assert_eq!(jsd(&empty, &empty), Err(Error::EmptyHistograms));
        assert_eq!(jsd(&empty, &a).unwrap(), 1.0);
    }

    #[test]
    fn histogram_masses_sum_to_one() {
        let h = Histogram::from_values([0.0, 0.05, 0.5, 0.99, 1.0, 0.37]);
        assert_eq!(h.bin_edges.len(), 21);
        assert_eq!(h.masses.len(), 20);
        assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h.masses[19], 2.0 / 6.0);
    }

    #[test]
    fn dcl_tau_values() {
        assert!((dcl_tau(1e-5, 0.5, 1e-3) - 2e-5).abs() < 1e-20);
        assert_eq!(dcl_tau(1e-5, 1.0, 1e-3), 1e-5);
        assert!((dcl_tau(1e-5, 0.0, 1e-3) - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn regularized_loss_cases() {
        let theta = [0.3, -0.2];
        assert_eq!(regularized_loss(1.5, &theta, &theta, &[2.0, 3.0], 0.7).unwrap(), 1.5);
        assert_eq!(regularized_loss(1.5, &theta, &[0.0, 0.0], &[2.0, 3.0], 0.0).unwrap(), 1.5);
        let v = regularized_loss(0.0, &theta, &[0.0, 0.0], &[2.0, 3.0], 0.5).unwrap();
        assert!((v - 0.5 * (2.0 * 0.09 + 3.0 * 0.04)).abs() < 1e-15);
    }
}
