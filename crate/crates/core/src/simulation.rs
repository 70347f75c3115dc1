//! The round loop: sample, recourse, label, retrain, measure.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    cost_weight_profile, generate_synthetic, sample_round, train_test_split, Cohort, CostProfile, FeatureSchema,
    FrozenCohort, PopulationSource, SourceKind,
};
use crate::error::{Error, Result};
use crate::labeling::{apply_train_mask, fair_top_k_label, top_k_label, Bandwidth, KdeConfig, Policy};
use crate::metrics::{self, RoundRecord};
use crate::models::{self, AdamConfig, ModelKind, ScoreModel, TrainOptions};
use crate::recourse::{recourse_action, RecourseConfig};
use crate::rng::{stream, Purpose};
use crate::update::{label_score_jsd, UpdateConfig, UpdateStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_width: usize,
    /// Defaults to 1e-2 for logistic and 1e-3 for mlp.
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub bootstrap_epochs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Logistic,
            hidden_width: 16,
            learning_rate: None,
            epochs: 100,
            bootstrap_epochs: 500,
        }
    }
}

impl ModelConfig {
    pub fn adam(&self) -> AdamConfig {
        match self.learning_rate {
            Some(lr) => AdamConfig::with_learning_rate(lr),
            None => AdamConfig::default_for(self.kind),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelingConfig {
    pub policy: Policy,
    pub kappa: f64,
    pub bandwidth: Bandwidth,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig { policy: Policy::TopK, kappa: 1e-4, bandwidth: Bandwidth::Scott }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDecl {
    pub name: String,
    pub actionable: bool,
    pub cost_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "default_pool_size")]
        pool_size: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_n_actionable")]
        n_actionable: usize,
        #[serde(default = "default_cost_profile")]
        cost_profile: CostProfile,
    },
    Csv {
        path: String,
        label_column: String,
        features: Vec<FeatureDecl>,
        #[serde(default)]
        cost_offset: f64,
    },
}

fn default_pool_size() -> usize {
    2500
}
fn default_dim() -> usize {
    20
}
fn default_n_actionable() -> usize {
    17
}
fn default_cost_profile() -> CostProfile {
    CostProfile::Uniform
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            pool_size: default_pool_size(),
            dim: default_dim(),
            n_actionable: default_n_actionable(),
            cost_profile: default_cost_profile(),
        }
    }
}

impl DatasetSpec {
    /// Schema declared by a CSV dataset section.
    pub fn csv_schema(&self) -> Option<Result<FeatureSchema>> {
        match self {
            DatasetSpec::Csv { features, cost_offset, .. } => Some(FeatureSchema::new(
                features.iter().map(|f| f.name.clone()).collect(),
                features.iter().map(|f| f.actionable).collect(),
                features.iter().map(|f| f.cost_weight).collect(),
                *cost_offset,
            )),
            DatasetSpec::Synthetic { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub seed: u64,
    /// Users per round.
    pub n: usize,
    /// `k = round(k_fraction * n)`.
    pub k_fraction: f64,
    pub rounds: usize,
    /// Probability that a sampled user comes from the original pool.
    pub mix_ratio: f64,
    /// Probability that a rejected user takes a recourse action.
    pub recourse_ratio: f64,
    /// Keep the final iterate of users whose solver did not converge.
    pub submit_partial: bool,
    /// Window `r` of the short-term balanced accuracy.
    pub stba_range: usize,
    pub test_fraction: f64,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub recourse: RecourseConfig,
    pub labeling: LabelingConfig,
    pub update: UpdateConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            seed: 7,
            n: 1000,
            k_fraction: 0.5,
            rounds: 70,
            mix_ratio: 0.5,
            recourse_ratio: 0.5,
            submit_partial: true,
            stba_range: 5,
            test_fraction: 0.2,
            dataset: DatasetSpec::default(),
            model: ModelConfig::default(),
            recourse: RecourseConfig::default(),
            labeling: LabelingConfig::default(),
            update: UpdateConfig::default(),
        }
    }
}

impl SimulationConfig {
    pub fn k(&self) -> usize {
        libm::round(self.k_fraction * self.n as f64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.n == 0 {
            return Err(Error::config("n", "cohort size must be positive"));
        }
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(Error::config("k_fraction", format!("must lie in (0, 1], got {}", self.k_fraction)));
        }
        if self.k() == 0 {
            return Err(Error::config("k_fraction", "resource budget k rounds to zero"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "need at least one round"));
        }
        if !unit(self.mix_ratio) {
            return Err(Error::config("mix_ratio", format!("must lie in [0, 1], got {}", self.mix_ratio)));
        }
        if !unit(self.recourse_ratio) {
            return Err(Error::config("recourse_ratio", format!("must lie in [0, 1], got {}", self.recourse_ratio)));
        }
        if self.stba_range == 0 {
            return Err(Error::config("stba_range", "must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie in (0, 1)"));
        }
        if self.model.kind == ModelKind::Mlp && self.model.hidden_width == 0 {
            return Err(Error::config("model.hidden_width", "must be positive"));
        }
        if matches!(self.model.learning_rate, Some(lr) if !(lr > 0.0)) {
            return Err(Error::config("model.learning_rate", "must be positive"));
        }
        if !(self.labeling.kappa >= 0.0) {
            return Err(Error::config("labeling.kappa", "must be nonnegative"));
        }
        if matches!(self.labeling.bandwidth, Bandwidth::Fixed(h) if !(h > 0.0)) {
            return Err(Error::config("labeling.bandwidth", "fixed bandwidth must be positive"));
        }
        if let DatasetSpec::Synthetic { pool_size, dim, n_actionable, .. } = self.dataset {
            if dim == 0 || n_actionable == 0 || n_actionable > dim {
                return Err(Error::config("dataset.n_actionable", "need 0 < n_actionable <= dim"));
            }
            if pool_size < 2 {
                return Err(Error::config("dataset.pool_size", "need at least 2 users"));
            }
        }
        self.recourse.validate()?;
        self.update.validate()?;
        Ok(())
    }

    fn train_options(&self, epochs: usize) -> TrainOptions {
        TrainOptions { epochs, adam: self.model.adam() }
    }
}

impl PopulationSource {
    /// Synthetic population for `seed`: pool, cost weights, then the split.
    pub fn synthetic(spec: &DatasetSpec, test_fraction: f64, seed: u64) -> Result<Self> {
        let DatasetSpec::Synthetic { pool_size, dim, n_actionable, cost_profile } = *spec else {
            return Err(Error::config("dataset.kind", "not a synthetic dataset"));
        };
        let (schema, pool) =
            generate_synthetic(&mut stream(seed, 0, Purpose::Population), pool_size, dim, n_actionable)?;
        let weights = cost_weight_profile(cost_profile, dim, &mut stream(seed, 0, Purpose::CostWeights))?;
        let schema = schema.with_cost_weights(weights)?;
        Self::from_pool(SourceKind::Synthetic, seed, schema, pool, test_fraction)
    }

    /// Splits a labeled pool into the original population and a frozen test set.
    pub fn from_pool(
        kind: SourceKind,
        seed: u64,
        schema: FeatureSchema,
        pool: Cohort,
        test_fraction: f64,
    ) -> Result<Self> {
        if pool.labels().is_none() {
            return Err(Error::Data("population pool has no labels".into()));
        }
        if pool.dim() != schema.dim() {
            return Err(Error::Schema(format!("pool has {} features, schema {}", pool.dim(), schema.dim())));
        }
        let (original_pool, test_set) = train_test_split(&pool, test_fraction, &mut stream(seed, 0, Purpose::Split))?;
        Ok(PopulationSource { kind, seed, schema, original_pool, test_set })
    }
}

/// Everything produced by one round, enough to recompute its metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundArchive {
    pub round: usize,
    /// Post-recourse cohort with deployed-model scores, labels and recourse flags.
    pub cohort: Cohort,
    pub train_mask: Vec<bool>,
    /// Costs of the applied recourse actions, in row order.
    pub recourse_costs: Vec<f64>,
    /// Users whose solver failed and were left unmodified.
    pub solver_failures: usize,
    pub tau_eff: f64,
    /// Model trained at the end of this round.
    pub model: ScoreModel,
}

impl RoundArchive {
    pub fn training_cohort(&self) -> Cohort {
        let keep: Vec<usize> = (0..self.cohort.len()).filter(|&i| self.train_mask[i]).collect();
        self.cohort.select(&keep)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArchive {
    pub config: SimulationConfig,
    pub schema: FeatureSchema,
    pub test_set: FrozenCohort,
    pub bootstrap_model: ScoreModel,
    pub bootstrap_jsd: f64,
    pub rounds: Vec<RoundArchive>,
    pub records: Vec<RoundRecord>,
}

impl RunArchive {
    pub fn k(&self) -> usize {
        self.config.k()
    }

    /// Metrics of round `t` (1-based), computed from stored data only.
    pub fn compute_record(&self, t: usize) -> Result<RoundRecord> {
        if t == 0 || t > self.rounds.len() {
            return Err(Error::contract(format!("round {t} is not archived")));
        }
        let r = &self.rounds[t - 1];
        let model = &r.model;
        let higher_standard = metrics::higher_standard(model, &self.test_set)?;
        let (tar, tar_guarded) = metrics::tar(model, &self.test_set)?;

        let range = self.config.stba_range;
        let first = t.saturating_sub(range).max(1);
        let mut b = alloc::vec![0.0; t.saturating_sub(1)];
        let mut stba_degenerate = false;
        for j in first..t {
            let ba = metrics::model_balanced_accuracy(model, &self.rounds[j - 1].training_cohort())?;
            stba_degenerate |= ba.degenerate;
            b[j - 1] = ba.value;
        }
        let stba = metrics::stba(&b, t, range);

        let cohort = &r.cohort;
        let recoursed_rows = (0..cohort.len()).filter(|&i| cohort.recoursed()[i]).map(|i| cohort.row(i));
        let ftr = metrics::ftr(recoursed_rows, model);
        let avg_recourse_cost = metrics::avg_recourse_cost(&r.recourse_costs);

        let training = r.training_cohort();
        let jsd = label_score_jsd(
            training.scores().ok_or_else(|| Error::contract("archived cohort has no scores"))?,
            training.labels().ok_or_else(|| Error::contract("archived cohort has no labels"))?,
        )
        .unwrap_or(0.0);
        let labels = cohort.labels().ok_or_else(|| Error::contract("archived cohort has no labels"))?;
        let accepted = labels.iter().filter(|l| **l).count();
        let record = RoundRecord {
            round: t,
            stba,
            stba_degenerate,
            higher_standard,
            tar,
            tar_guarded,
            ftr,
            avg_recourse_cost,
            jsd,
            tau_eff: r.tau_eff,
            accepted,
            saturated: accepted == self.k(),
            recoursed: cohort.recoursed().iter().filter(|f| **f).count(),
            train_size: training.len(),
        };
        record.check(self.k())?;
        Ok(record)
    }

    /// Recomputes every round's metrics from the stored cohorts and models.
    pub fn replay_records(&self) -> Result<Vec<RoundRecord>> {
        (1..=self.rounds.len()).map(|t| self.compute_record(t)).collect()
    }
}

/// A run in progress.
#[derive(Debug, Clone)]
pub struct Simulation {
    source: PopulationSource,
    model: ScoreModel,
    strategy: UpdateStrategy,
    previous: Cohort,
    jsd_prev: f64,
    archive: RunArchive,
}

/// Archive of the rounds completed before `error` aborted the run; `None`
/// when the run failed before its first round.
#[derive(Debug, Clone)]
pub struct PartialRun {
    pub error: Error,
    pub archive: Option<Box<RunArchive>>,
}

impl Simulation {
    /// Trains the initial model on the original pool's ground-truth labels.
    pub fn bootstrap(config: SimulationConfig, source: PopulationSource) -> Result<Self> {
        config.validate()?;
        if source.original_pool.len() < 2 {
            return Err(Error::config("dataset", "original pool is too small"));
        }
        let dim = source.schema.dim();
        let initial = match config.model.kind {
            ModelKind::Logistic => ScoreModel::logistic(dim),
            ModelKind::Mlp => {
                ScoreModel::mlp(dim, config.model.hidden_width, &mut stream(config.seed, 0, Purpose::Init))
            }
        };
        let (model, _) =
            models::train(&initial, &source.original_pool, None, &config.train_options(config.model.bootstrap_epochs))?;
        let scores = model.scores(&source.original_pool);
        let labels = source.original_pool.labels().expect("checked when the source was built");
        let bootstrap_jsd = label_score_jsd(&scores, labels).unwrap_or(0.0);
        let strategy = UpdateStrategy::new(config.update);
        let archive = RunArchive {
            config,
            schema: source.schema.clone(),
            test_set: source.test_set.clone(),
            bootstrap_model: model.clone(),
            bootstrap_jsd,
            rounds: Vec::new(),
            records: Vec::new(),
        };
        let mut previous = source.original_pool.clone();
        previous.clear_labels();
        Ok(Simulation { source, model, strategy, previous, jsd_prev: bootstrap_jsd, archive })
    }

    pub fn model(&self) -> &ScoreModel {
        &self.model
    }

    pub fn archive(&self) -> &RunArchive {
        &self.archive
    }

    pub fn into_archive(self) -> RunArchive {
        self.archive
    }

    pub fn rounds_done(&self) -> usize {
        self.archive.rounds.len()
    }

    /// Runs the next round and returns its metrics.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let cfg = &self.archive.config;
        let seed = cfg.seed;
        let t = self.rounds_done() + 1;
        let k = cfg.k();

        // Sample the cohort.
        let mut cohort = sample_round(
            &self.source.original_pool,
            &self.previous,
            cfg.mix_ratio,
            cfg.n,
            &mut stream(seed, t as u64, Purpose::Sampling),
        )?;
        cohort.round = t;
        cohort.set_scores(self.model.scores(&cohort))?;

        // Rejected users act with probability recourse_ratio. One uniform draw
        // per row keeps the stream aligned across model trajectories.
        let mut select_rng = stream(seed, t as u64, Purpose::RecourseSelection);
        let draws: Vec<f64> = (0..cohort.len()).map(|_| select_rng.random::<f64>()).collect();
        let mut recourse_costs = Vec::new();
        let mut solver_failures = 0;
        for i in 0..cohort.len() {
            let rejected = cohort.scores().expect("scored above")[i] < 0.5;
            if !rejected || draws[i] >= cfg.recourse_ratio {
                continue;
            }
            let outcome = match recourse_action(&self.model, cohort.row(i), &self.source.schema, &cfg.recourse) {
                Ok(o) => o,
                Err(Error::Solver { .. }) => {
                    solver_failures += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !outcome.converged && !cfg.submit_partial {
                continue;
            }
            cohort.apply_recourse(i, &outcome.new_features)?;
            recourse_costs.push(outcome.cost);
        }

        // Label under the resource budget, scored by the deployed model.
        let scores = self.model.scores(&cohort);
        let decision = match cfg.labeling.policy {
            Policy::TopK => top_k_label(&scores, k),
            Policy::FairTopK => fair_top_k_label(
                &cohort,
                &scores,
                k,
                cfg.labeling.kappa,
                &KdeConfig { bandwidth: cfg.labeling.bandwidth },
                &mut stream(seed, t as u64, Purpose::Labeling),
            )?,
        };
        cohort.set_scores(scores)?;
        let training = apply_train_mask(&cohort, &decision)?;
        cohort.set_labels(decision.labels.clone())?;

        // Warm-started update.
        let penalty = self.strategy.penalty(self.model.params(), self.jsd_prev);
        let tau_eff = penalty.as_ref().map_or(0.0, |p| p.tau_eff);
        let (next, trace) =
            models::train(&self.model, &training, penalty.as_ref(), &cfg.train_options(cfg.model.epochs))?;
        self.strategy.record_task(t, &trace, next.params());

        self.archive.rounds.push(RoundArchive {
            round: t,
            cohort: cohort.clone(),
            train_mask: decision.train_mask,
            recourse_costs,
            solver_failures,
            tau_eff,
            model: next.clone(),
        });
        let record = self.archive.compute_record(t)?;
        self.archive.records.push(record.clone());

        self.jsd_prev = record.jsd;
        self.model = next;
        cohort.clear_labels();
        self.previous = cohort;
        Ok(record)
    }

    pub fn run_to_end(mut self) -> core::result::Result<RunArchive, PartialRun> {
        while self.rounds_done() < self.archive.config.rounds {
            if let Err(error) = self.run_round() {
                return Err(PartialRun { error, archive: Some(Box::new(self.archive)) });
            }
        }
        Ok(self.archive)
    }
}

/// Bootstraps and runs every configured round.
pub fn run_simulation(
    config: SimulationConfig,
    source: PopulationSource,
) -> core::result::Result<RunArchive, PartialRun> {
    Simulation::bootstrap(config, source).map_err(|error| PartialRun { error, archive: None })?.run_to_end()
}

/// Runs a synthetic-population simulation end to end.
pub fn run_synthetic(config: SimulationConfig) -> core::result::Result<RunArchive, PartialRun> {
    let source = PopulationSource::synthetic(&config.dataset, config.test_fraction, config.seed)
        .map_err(|error| PartialRun { error, archive: None })?;
    run_simulation(config, source)
}
