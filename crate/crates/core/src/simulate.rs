//! The weekly select → inspect → score → retrain loop.
//!
//! Per test week `t`:
//!
//! 1. budget `k_t = ⌊r_t·|B_t|⌋`, at least 1 on a non-empty batch;
//! 2. risk profiles, scaler and model are refit from scratch on the inspected
//!    history `X_t`;
//! 3. the validation window is the part of `X_t` dated within the
//!    `valid_length` days before the week starts;
//! 4. the strategy selects `B_t^S`, whose labels become visible;
//! 5. metrics are computed against every label in `B_t` (the oracle view);
//! 6. `X_{t+1} = X_t ∪ B_t^S`.
//!
//! Seeds for week `t` come from [`derive_seed`] with roles train, select and
//! tiebreak.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeaturePipeline, FeatureVector, FEATURE_DIM};
use crate::ingest::{slice_windows, InspectionLabel, LabeledDeclaration, LeakageAudit};
use crate::metrics::{MetricsError, WeeklyReport};
use crate::model::{self, revenue_capture_at, ModelError, ModelSnapshot, Prediction, TrainConfig};
use crate::seed::{derive_seed, rng_from_seed, SeedRole};
use crate::selection::{
    self, FirstPick, SelectionContext, SelectionError, SelectionRngs, StrategySpec,
    ValidationSignal,
};

/// Weekly decrement of the fast linear decay plan.
pub const DECAY_STEP: f64 = 0.10;
// Rates are rounded to this many decimals so that 1.0 − 0.1·t lands on exact
// tenths, and budgets are floored with the same slack.
const RATE_DECIMALS: f64 = 1e12;
const BUDGET_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid inspection plan: {0}")]
    Plan(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanPolicy {
    FastLinearDecay,
    Constant,
}

impl FromStr for PlanPolicy {
    type Err = SimulationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fast_linear_decay" => Ok(PlanPolicy::FastLinearDecay),
            "constant" => Ok(PlanPolicy::Constant),
            other => Err(SimulationError::Plan(format!("unknown policy '{other}'"))),
        }
    }
}

impl fmt::Display for PlanPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanPolicy::FastLinearDecay => "fast_linear_decay",
            PlanPolicy::Constant => "constant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionPlan {
    pub policy: PlanPolicy,
    pub initial_rate: f64,
    pub final_rate: f64,
    pub schedule: Vec<f64>,
}

impl InspectionPlan {
    pub fn rate(&self, week: usize) -> f64 {
        self.schedule
            .get(week)
            .copied()
            .unwrap_or(self.final_rate)
    }

    /// First week running at the final rate.
    pub fn decay_end_week(&self) -> usize {
        self.schedule
            .iter()
            .position(|&r| r <= self.final_rate)
            .unwrap_or(self.schedule.len())
    }
}

fn round_rate(r: f64) -> f64 {
    (r * RATE_DECIMALS).round() / RATE_DECIMALS
}

/// Fast linear decay: `r_t = max(r, r0 − 0.1·t)`. Constant: `r_t = r`.
pub fn make_plan(
    policy: PlanPolicy,
    initial_rate: f64,
    final_rate: f64,
    num_weeks: usize,
) -> Result<InspectionPlan, SimulationError> {
    if !(final_rate > 0.0 && final_rate <= initial_rate && initial_rate <= 1.0) {
        return Err(SimulationError::Plan(format!(
            "need 0 < final ({final_rate}) ≤ initial ({initial_rate}) ≤ 1"
        )));
    }
    let schedule = (0..num_weeks)
        .map(|t| match policy {
            PlanPolicy::FastLinearDecay => {
                round_rate((initial_rate - DECAY_STEP * t as f64).max(final_rate))
            }
            PlanPolicy::Constant => final_rate,
        })
        .collect();
    Ok(InspectionPlan {
        policy,
        initial_rate,
        final_rate,
        schedule,
    })
}

/// `⌊rate·n⌋`, at least 1 when the batch is non-empty, never above `n`.
pub fn weekly_budget(rate: f64, batch_size: usize) -> usize {
    if batch_size == 0 {
        return 0;
    }
    let k = (rate * batch_size as f64 + BUDGET_SLACK).floor() as usize;
    k.clamp(1, batch_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub policy: PlanPolicy,
    pub initial_rate: f64,
    pub final_rate: f64,
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self {
            policy: PlanPolicy::FastLinearDecay,
            initial_rate: 1.0,
            final_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Start of the initial, fully inspected history.
    pub train_from: NaiveDate,
    /// First day of the first test week; history ends the day before.
    pub test_from: NaiveDate,
    pub test_length: u32,
    pub valid_length: u32,
    pub plan: PlanSpec,
    pub strategy: StrategySpec,
    pub train: TrainConfig,
    pub num_weeks: usize,
    pub seed: u64,
    pub risk_percentile: f64,
    #[serde(skip)]
    pub first_pick: FirstPick,
    /// Week from which headline averages are taken; defaults to the end of
    /// the decay.
    pub headline_from_week: Option<usize>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            train_from: NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date"),
            test_from: NaiveDate::from_ymd_opt(2013, 2, 1).expect("valid date"),
            test_length: 7,
            valid_length: 28,
            plan: PlanSpec::default(),
            strategy: StrategySpec::default(),
            train: TrainConfig::default(),
            num_weeks: 100,
            seed: 0,
            risk_percentile: 0.9,
            first_pick: FirstPick::Uniform,
            headline_from_week: None,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::Config(m.to_string()));
        if self.train_from >= self.test_from {
            return bad("train_from must precede test_from");
        }
        if self.num_weeks == 0 {
            return bad("num_weeks must be ≥ 1");
        }
        if self.test_length == 0 || self.valid_length == 0 {
            return bad("test_length and valid_length must be ≥ 1 day");
        }
        if !(self.risk_percentile > 0.0 && self.risk_percentile < 1.0) {
            return bad("risk_percentile must lie in (0,1)");
        }
        self.strategy.validate()?;
        self.train.validate()?;
        self.inspection_plan()?;
        Ok(())
    }

    pub fn inspection_plan(&self) -> Result<InspectionPlan, SimulationError> {
        make_plan(
            self.plan.policy,
            self.plan.initial_rate,
            self.plan.final_rate,
            self.num_weeks,
        )
    }
}

/// A fitted model as seen by the simulator.
pub trait SelectionModel {
    fn predict_batch(
        &self,
        items: &[&LabeledDeclaration],
        features: &[FeatureVector],
    ) -> Result<Vec<Prediction>, SimulationError>;

    fn is_fallback(&self) -> bool {
        false
    }
}

pub trait ModelTrainer {
    type Model: SelectionModel;

    fn fit(
        &self,
        features: &[FeatureVector],
        labels: &[InspectionLabel],
        cfg: &TrainConfig,
    ) -> Result<Self::Model, SimulationError>;
}

impl SelectionModel for ModelSnapshot {
    fn predict_batch(
        &self,
        _items: &[&LabeledDeclaration],
        features: &[FeatureVector],
    ) -> Result<Vec<Prediction>, SimulationError> {
        Ok(features
            .iter()
            .map(|f| self.predict(f))
            .collect::<Result<_, _>>()?)
    }

    fn is_fallback(&self) -> bool {
        self.meta.fallback
    }
}

/// Trains the reference dual-head model. An empty history yields a
/// constant 0.5 model.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceTrainer;

impl ModelTrainer for ReferenceTrainer {
    type Model = ModelSnapshot;

    fn fit(
        &self,
        features: &[FeatureVector],
        labels: &[InspectionLabel],
        cfg: &TrainConfig,
    ) -> Result<ModelSnapshot, SimulationError> {
        if features.is_empty() {
            return Ok(ModelSnapshot::constant(FEATURE_DIM, cfg, 0.5, 0.0, 0));
        }
        Ok(model::train(features, labels, cfg)?)
    }
}

/// Validation Rev@n% from precomputed scores on the validation window.
struct WindowSignal {
    scores: Vec<f64>,
    revenues: Vec<f64>,
}

impl ValidationSignal for WindowSignal {
    fn revenue_at(&self, fraction: f64) -> Option<model::ValidationRevenue> {
        if self.scores.is_empty() {
            return None;
        }
        let (value, zero_total) = revenue_capture_at(&self.scores, &self.revenues, fraction);
        Some(model::ValidationRevenue { value, zero_total })
    }
}

#[derive(Debug)]
pub struct SimulationOutcome<M> {
    pub reports: Vec<WeeklyReport>,
    /// Non-metric reads of hidden labels; zero unless something leaks.
    pub hidden_label_reads: u64,
    /// Items selected more than once across weeks.
    pub ledger_violations: usize,
    /// Inspected item ids in inspection order, initial history excluded.
    pub inspected_ids: Vec<usize>,
    pub initial_history_size: usize,
    pub plan: InspectionPlan,
    pub provenance_totals: BTreeMap<String, usize>,
    pub last_model: Option<M>,
}

/// Mutable state carried across weeks.
pub struct SimulationState {
    /// X_t: every item whose label is visible.
    pub training: Vec<LabeledDeclaration>,
    pub week: usize,
    inspected: HashSet<usize>,
    ledger: Vec<usize>,
    ledger_violations: usize,
    provenance_totals: BTreeMap<String, usize>,
}

impl SimulationState {
    fn new(history: Vec<LabeledDeclaration>) -> Self {
        let inspected = history.iter().map(|i| i.item_id).collect();
        Self {
            training: history,
            week: 0,
            inspected,
            ledger: Vec::new(),
            ledger_violations: 0,
            provenance_totals: BTreeMap::new(),
        }
    }

    fn admit(&mut self, mut item: LabeledDeclaration) {
        if !self.inspected.insert(item.item_id) {
            self.ledger_violations += 1;
        }
        self.ledger.push(item.item_id);
        item.reveal();
        self.training.push(item);
    }
}

pub struct Simulator<T: ModelTrainer> {
    pub config: SimulationConfig,
    pub trainer: T,
}

impl Simulator<ReferenceTrainer> {
    pub fn new(config: SimulationConfig) -> Self {
        Self {
            config,
            trainer: ReferenceTrainer,
        }
    }
}

/// Runs the reference simulation over a labeled stream.
pub fn run(
    cfg: &SimulationConfig,
    items: Vec<LabeledDeclaration>,
) -> Result<SimulationOutcome<ModelSnapshot>, SimulationError> {
    Simulator::new(cfg.clone()).run(items)
}

impl<T: ModelTrainer> Simulator<T> {
    pub fn with_trainer(config: SimulationConfig, trainer: T) -> Self {
        Self { config, trainer }
    }

    pub fn run(
        &self,
        items: Vec<LabeledDeclaration>,
    ) -> Result<SimulationOutcome<T::Model>, SimulationError> {
        let cfg = &self.config;
        cfg.validate()?;
        let plan = cfg.inspection_plan()?;

        let (mut history, stream): (Vec<_>, Vec<_>) = items
            .into_iter()
            .filter(|it| it.declaration.sgd_date >= cfg.train_from)
            .partition(|it| it.declaration.sgd_date < cfg.test_from);
        history.iter_mut().for_each(LabeledDeclaration::reveal);
        let initial_history_size = history.len();
        let batches = slice_windows(stream, cfg.test_from, cfg.num_weeks, cfg.test_length)?;

        let audit = LeakageAudit::new();
        let mut state = SimulationState::new(history);
        let mut reports = Vec::with_capacity(batches.len());
        let mut last_model = None;
        let prov_names = cfg.strategy.provenance_names();

        for batch in batches {
            let t = batch.week_index;
            state.week = t;
            let rate = plan.rate(t);
            let n = batch.items.len();
            let k = weekly_budget(rate, n);
            let train_size = state.training.len();
            let start = batch.start_date.format("%Y-%m-%d").to_string();
            let end = batch.end_date.format("%Y-%m-%d").to_string();

            if n == 0 {
                let mut report = WeeklyReport::score(t, start, end, rate, 0, &[], &[])?;
                report.train_size = train_size;
                report.provenance = prov_names.iter().map(|s| (s.to_string(), 0)).collect();
                reports.push(report);
                continue;
            }

            // Fit features and model on the visible history only.
            let records: Vec<_> = state
                .training
                .iter()
                .map(|it| it.training_record(&audit))
                .collect();
            let pipeline = FeaturePipeline::fit(&records, cfg.risk_percentile);
            let train_x: Vec<FeatureVector> =
                records.iter().map(|r| pipeline.encode(r.declaration)).collect();
            let train_y: Vec<InspectionLabel> = records.iter().map(|r| *r.label).collect();
            let train_cfg = TrainConfig {
                seed: derive_seed(cfg.seed, t, SeedRole::Train),
                ..cfg.train.clone()
            };
            let fitted = self.trainer.fit(&train_x, &train_y, &train_cfg)?;

            let valid_from = batch.start_date - Duration::days(i64::from(cfg.valid_length));
            let val_idx: Vec<usize> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| {
                    let d = r.declaration.sgd_date;
                    d >= valid_from && d < batch.start_date
                })
                .map(|(i, _)| i)
                .collect();
            let val_items: Vec<&LabeledDeclaration> =
                val_idx.iter().map(|&i| &state.training[i]).collect();
            let val_x: Vec<FeatureVector> = val_idx.iter().map(|&i| train_x[i].clone()).collect();
            let signal = WindowSignal {
                scores: fitted
                    .predict_batch(&val_items, &val_x)?
                    .into_iter()
                    .map(|p| p.fraud_score)
                    .collect(),
                revenues: val_idx.iter().map(|&i| train_y[i].revenue).collect(),
            };
            drop(records);

            let batch_refs: Vec<&LabeledDeclaration> = batch.items.iter().collect();
            let batch_x: Vec<FeatureVector> = batch
                .items
                .iter()
                .map(|it| pipeline.encode(&it.declaration))
                .collect();
            let predictions = fitted.predict_batch(&batch_refs, &batch_x)?;

            let select_seed = derive_seed(cfg.seed, t, SeedRole::Select);
            let mut select_rng = rng_from_seed(select_seed);
            let mut tie_rng = rng_from_seed(derive_seed(cfg.seed, t, SeedRole::Tiebreak));
            let ctx = SelectionContext {
                predictions: &predictions,
                validation: &signal,
                inspection_rate: rate,
                first_pick: cfg.first_pick,
            };
            let result = selection::select(
                &cfg.strategy,
                &ctx,
                k,
                &mut SelectionRngs {
                    select: &mut select_rng,
                    tiebreak: &mut tie_rng,
                    seed: select_seed,
                },
            )?;

            let oracle: Vec<InspectionLabel> =
                batch.items.iter().map(|it| *it.oracle_label()).collect();
            let mut report =
                WeeklyReport::score(t, start, end, rate, k, &result.chosen, &oracle)?;
            report.train_size = train_size;
            report.validation_size = val_idx.len();
            report.provenance = prov_names
                .iter()
                .map(|s| (s.to_string(), result.count_by(s)))
                .collect();
            report.gate_branch = result.gate_branch.map(|g| g.as_str().to_string());
            report.model_fallback = fitted.is_fallback();
            for (name, c) in &report.provenance {
                *state.provenance_totals.entry(name.clone()).or_default() += c;
            }
            reports.push(report);

            let mut chosen = result.chosen.clone();
            chosen.sort_unstable();
            let mut slots: Vec<Option<LabeledDeclaration>> =
                batch.items.into_iter().map(Some).collect();
            for i in chosen {
                if let Some(item) = slots[i].take() {
                    state.admit(item);
                }
            }
            last_model = Some(fitted);
        }

        Ok(SimulationOutcome {
            reports,
            hidden_label_reads: audit.hidden_reads(),
            ledger_violations: state.ledger_violations,
            inspected_ids: state.ledger,
            initial_history_size,
            plan,
            provenance_totals: state.provenance_totals,
            last_model,
        })
    }
}

/// Whole-run and post-decay means of the normalized metrics over non-empty
/// weeks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    pub weeks: usize,
    pub mean_norm_pre: f64,
    pub mean_norm_rev: f64,
    pub post_decay_from: usize,
    pub post_decay_weeks: usize,
    pub post_decay_norm_pre: f64,
    pub post_decay_norm_rev: f64,
}

pub fn summarize(reports: &[WeeklyReport], post_decay_from: usize) -> RunSummary {
    use crate::metrics::mean;
    let active: Vec<&WeeklyReport> = reports.iter().filter(|r| r.batch_size > 0).collect();
    let post: Vec<&WeeklyReport> = active
        .iter()
        .copied()
        .filter(|r| r.week_index >= post_decay_from)
        .collect();
    RunSummary {
        weeks: active.len(),
        mean_norm_pre: mean(active.iter().map(|r| r.norm_pre_at_n)),
        mean_norm_rev: mean(active.iter().map(|r| r.norm_rev_at_n)),
        post_decay_from,
        post_decay_weeks: post.len(),
        post_decay_norm_pre: mean(post.iter().map(|r| r.norm_pre_at_n)),
        post_decay_norm_rev: mean(post.iter().map(|r| r.norm_rev_at_n)),
    }
}

impl<M> SimulationOutcome<M> {
    pub fn summary(&self, headline_from_week: Option<usize>) -> RunSummary {
        summarize(
            &self.reports,
            headline_from_week.unwrap_or_else(|| self.plan.decay_end_week()),
        )
    }
}
