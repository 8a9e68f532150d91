//! Selection strategies.
//!
//! Every strategy works on the model's predictions for the week's batch and
//! returns indices into that batch:
//!
//! * `DATE` (exploit): top-k fraud scores, ties broken by a seeded permutation;
//! * `random`: uniform k-subset;
//! * `badge`: k-means++ seeding over unscaled gradient embeddings;
//! * `bATE`: k-means++ seeding over embeddings rescaled by uncertainty and
//!   log predicted revenue;
//! * `gATE`: bATE when the validation Rev@n% clears θ, random otherwise;
//! * `hybrid`: children run in order on a shrinking pool; child `i` gets
//!   `⌊pᵢ·k⌋` items and the last child takes the remainder.

mod embedding;
mod kmeanspp;

pub use embedding::{
    gradient_embedding, pseudo_label, scale_factor, scaled_embedding, uncertainty_scale,
    GradientEmbedding, REVENUE_EPSILON,
};
pub use kmeanspp::{kmeanspp_select, FirstPick};

use std::fmt;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Prediction, ValidationRevenue};
use crate::seed::SimRng;

pub const DEFAULT_THETA: f64 = 0.3;
const WEIGHT_TOLERANCE: f64 = 1e-9;
// Absorbs representation error in p·k before flooring (0.57·100 = 56.999…).
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("budget {k} exceeds pool of {pool}")]
    BudgetExceedsPool { k: usize, pool: usize },
    #[error("index {index} outside pool of {pool}")]
    IndexOutOfRange { index: usize, pool: usize },
    #[error("invalid strategy: {0}")]
    InvalidSpec(String),
}

/// Selection strategy tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StrategySpec {
    Random,
    Exploit,
    Badge,
    Bate,
    Gate {
        theta: f64,
        /// Rev@n% fraction; `None` uses the week's inspection rate.
        fraction: Option<f64>,
    },
    Hybrid {
        children: Vec<WeightedChild>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedChild {
    pub strategy: StrategySpec,
    pub weight: f64,
}

impl Default for StrategySpec {
    fn default() -> Self {
        StrategySpec::Hybrid {
            children: vec![
                WeightedChild {
                    strategy: StrategySpec::Exploit,
                    weight: 0.9,
                },
                WeightedChild {
                    strategy: StrategySpec::gate(),
                    weight: 0.1,
                },
            ],
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl StrategySpec {
    pub fn gate() -> Self {
        StrategySpec::Gate {
            theta: DEFAULT_THETA,
            fraction: None,
        }
    }

    /// Name used on the command line and in provenance columns.
    pub fn name(&self) -> &'static str {
        match self {
            StrategySpec::Random => "random",
            StrategySpec::Exploit => "DATE",
            StrategySpec::Badge => "badge",
            StrategySpec::Bate => "bATE",
            StrategySpec::Gate { .. } => "gATE",
            StrategySpec::Hybrid { .. } => "hybrid",
        }
    }

    /// Leaf strategy from its command-line name (case-insensitive).
    pub fn leaf_from_name(name: &str, theta: f64) -> Result<Self, SelectionError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(StrategySpec::Random),
            "date" | "exploit" => Ok(StrategySpec::Exploit),
            "badge" => Ok(StrategySpec::Badge),
            "bate" => Ok(StrategySpec::Bate),
            "gate" => Ok(StrategySpec::Gate {
                theta,
                fraction: None,
            }),
            other => Err(SelectionError::InvalidSpec(format!(
                "unknown strategy '{other}'"
            ))),
        }
    }

    /// Builds a spec from `--sampling`, `--subsamplings A/B` and
    /// `--weights p1/p2`.
    pub fn parse(
        sampling: &str,
        subsamplings: Option<&str>,
        weights: Option<&str>,
        theta: f64,
    ) -> Result<Self, SelectionError> {
        if !sampling.trim().eq_ignore_ascii_case("hybrid") {
            return Self::leaf_from_name(sampling, theta);
        }
        let subs = subsamplings.ok_or_else(|| {
            SelectionError::InvalidSpec("hybrid sampling needs --subsamplings".into())
        })?;
        let weights = weights
            .ok_or_else(|| SelectionError::InvalidSpec("hybrid sampling needs --weights".into()))?;
        let names: Vec<&str> = subs.split('/').collect();
        let ws: Vec<f64> = weights
            .split('/')
            .map(|w| {
                w.trim()
                    .parse::<f64>()
                    .map_err(|_| SelectionError::InvalidSpec(format!("bad weight '{w}'")))
            })
            .collect::<Result<_, _>>()?;
        if names.len() != ws.len() {
            return Err(SelectionError::InvalidSpec(format!(
                "{} subsamplings but {} weights",
                names.len(),
                ws.len()
            )));
        }
        let children = names
            .iter()
            .zip(ws)
            .map(|(n, w)| {
                Ok(WeightedChild {
                    strategy: Self::leaf_from_name(n, theta)?,
                    weight: w,
                })
            })
            .collect::<Result<Vec<_>, SelectionError>>()?;
        let spec = StrategySpec::Hybrid { children };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        match self {
            StrategySpec::Gate { theta, fraction } => {
                if !theta.is_finite() {
                    return Err(SelectionError::InvalidSpec("theta must be finite".into()));
                }
                if let Some(n) = fraction {
                    if !(*n > 0.0 && *n <= 1.0) {
                        return Err(SelectionError::InvalidSpec(
                            "gate fraction must lie in (0,1]".into(),
                        ));
                    }
                }
                Ok(())
            }
            StrategySpec::Hybrid { children } => {
                if children.is_empty() {
                    return Err(SelectionError::InvalidSpec("hybrid without children".into()));
                }
                if children.iter().any(|c| !(c.weight >= 0.0)) {
                    return Err(SelectionError::InvalidSpec("weights must be ≥ 0".into()));
                }
                let sum: f64 = children.iter().map(|c| c.weight).sum();
                if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
                    return Err(SelectionError::InvalidSpec(format!(
                        "weights sum to {sum}, expected 1"
                    )));
                }
                children.iter().try_for_each(|c| c.strategy.validate())
            }
            _ => Ok(()),
        }
    }

    /// Names of the provenance buckets this spec can emit.
    pub fn provenance_names(&self) -> Vec<&'static str> {
        match self {
            StrategySpec::Hybrid { children } => {
                let mut out: Vec<&'static str> = Vec::new();
                for c in children {
                    if !out.contains(&c.strategy.name()) {
                        out.push(c.strategy.name());
                    }
                }
                out
            }
            other => vec![other.name()],
        }
    }
}

/// Which arm the gatekeeper took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateBranch {
    Bate,
    Random,
    /// Random because the validation window was empty or carried no revenue.
    RandomNoSignal,
}

impl GateBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            GateBranch::Bate => "bATE",
            GateBranch::Random => "random",
            GateBranch::RandomNoSignal => "random(no-validation)",
        }
    }
}

/// Supplies validation Rev@n% to the gatekeeper. `None` means no validation
/// data was available.
pub trait ValidationSignal {
    fn revenue_at(&self, fraction: f64) -> Option<ValidationRevenue>;
}

/// A fixed validation outcome, whatever the fraction.
#[derive(Debug, Clone, Copy)]
pub struct FixedValidation(pub Option<ValidationRevenue>);

impl ValidationSignal for FixedValidation {
    fn revenue_at(&self, _fraction: f64) -> Option<ValidationRevenue> {
        self.0
    }
}

pub struct SelectionContext<'a> {
    pub predictions: &'a [Prediction],
    pub validation: &'a dyn ValidationSignal,
    /// Default Rev@n% fraction for the gatekeeper, normally the week's rate.
    pub inspection_rate: f64,
    pub first_pick: FirstPick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub chosen: Vec<usize>,
    /// Child strategy name per chosen index.
    pub provenance: Vec<&'static str>,
    pub gate_branch: Option<GateBranch>,
    pub seed: u64,
}

impl SelectionResult {
    pub fn count_by(&self, name: &str) -> usize {
        self.provenance.iter().filter(|p| **p == name).count()
    }
}

/// Random streams a selection may consume.
pub struct SelectionRngs<'a> {
    pub select: &'a mut SimRng,
    pub tiebreak: &'a mut SimRng,
    pub seed: u64,
}

pub fn select_exploit(scores: &[f64], pool: &[usize], k: usize, tiebreak: &mut SimRng) -> Vec<usize> {
    let k = k.min(pool.len());
    let mut keyed: Vec<(usize, usize)> = pool.iter().copied().zip(0..).collect();
    // Random rank per candidate; sort by score then by that rank.
    let mut ranks: Vec<usize> = (0..pool.len()).collect();
    ranks.shuffle(tiebreak);
    for (slot, r) in keyed.iter_mut().zip(ranks) {
        slot.1 = r;
    }
    keyed.sort_by(|a, b| scores[b.0].total_cmp(&scores[a.0]).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(i, _)| i).collect()
}

pub fn select_random(pool: &[usize], k: usize, rng: &mut SimRng) -> Vec<usize> {
    let k = k.min(pool.len());
    sample(rng, pool.len(), k)
        .into_iter()
        .map(|j| pool[j])
        .collect()
}

fn kmeans_over(
    embeddings: Vec<Vec<f64>>,
    pool: &[usize],
    k: usize,
    first: FirstPick,
    rng: &mut SimRng,
) -> Result<Vec<usize>, SelectionError> {
    let k = k.min(pool.len());
    let first = match first {
        FirstPick::Index(i) => FirstPick::Index(
            pool.iter()
                .position(|&p| p == i)
                .ok_or(SelectionError::IndexOutOfRange {
                    index: i,
                    pool: pool.len(),
                })?,
        ),
        other => other,
    };
    Ok(kmeanspp_select(&embeddings, k, first, rng)?
        .into_iter()
        .map(|j| pool[j])
        .collect())
}

pub fn select_badge(
    predictions: &[Prediction],
    pool: &[usize],
    k: usize,
    first: FirstPick,
    rng: &mut SimRng,
) -> Result<Vec<usize>, SelectionError> {
    let emb = pool
        .iter()
        .map(|&i| gradient_embedding(&predictions[i]).0)
        .collect();
    kmeans_over(emb, pool, k, first, rng)
}

pub fn select_bate(
    predictions: &[Prediction],
    pool: &[usize],
    k: usize,
    first: FirstPick,
    rng: &mut SimRng,
) -> Result<Vec<usize>, SelectionError> {
    let emb = pool
        .iter()
        .map(|&i| scaled_embedding(&predictions[i]).0)
        .collect();
    kmeans_over(emb, pool, k, first, rng)
}

/// Gatekeeper decision for a given validation outcome.
pub fn gate_branch(validation: Option<ValidationRevenue>, theta: f64) -> GateBranch {
    match validation {
        Some(v) if !v.zero_total => {
            if v.value > theta {
                GateBranch::Bate
            } else {
                GateBranch::Random
            }
        }
        _ => GateBranch::RandomNoSignal,
    }
}

fn floor_share(weight: f64, k: usize) -> usize {
    (weight * k as f64 + FLOOR_SLACK).floor() as usize
}

struct Picked {
    indices: Vec<usize>,
    gate: Option<GateBranch>,
}

fn select_in_pool(
    spec: &StrategySpec,
    ctx: &SelectionContext<'_>,
    pool: &[usize],
    k: usize,
    rngs: &mut SelectionRngs<'_>,
) -> Result<(Vec<usize>, Vec<&'static str>, Option<GateBranch>), SelectionError> {
    let leaf = |spec: &StrategySpec,
                pool: &[usize],
                k: usize,
                rngs: &mut SelectionRngs<'_>|
     -> Result<Picked, SelectionError> {
        let scores: Vec<f64>;
        Ok(match spec {
            StrategySpec::Random => Picked {
                indices: select_random(pool, k, rngs.select),
                gate: None,
            },
            StrategySpec::Exploit => {
                scores = ctx.predictions.iter().map(|p| p.fraud_score).collect();
                Picked {
                    indices: select_exploit(&scores, pool, k, rngs.tiebreak),
                    gate: None,
                }
            }
            StrategySpec::Badge => Picked {
                indices: select_badge(ctx.predictions, pool, k, ctx.first_pick, rngs.select)?,
                gate: None,
            },
            StrategySpec::Bate => Picked {
                indices: select_bate(ctx.predictions, pool, k, ctx.first_pick, rngs.select)?,
                gate: None,
            },
            StrategySpec::Gate { theta, fraction } => {
                let n = fraction.unwrap_or(ctx.inspection_rate);
                let branch = gate_branch(ctx.validation.revenue_at(n), *theta);
                let indices = match branch {
                    GateBranch::Bate => {
                        select_bate(ctx.predictions, pool, k, ctx.first_pick, rngs.select)?
                    }
                    _ => select_random(pool, k, rngs.select),
                };
                Picked {
                    indices,
                    gate: Some(branch),
                }
            }
            StrategySpec::Hybrid { .. } => unreachable!("handled by caller"),
        })
    };

    match spec {
        StrategySpec::Hybrid { children } => {
            let mut remaining: Vec<usize> = pool.to_vec();
            let mut chosen = Vec::with_capacity(k);
            let mut provenance = Vec::with_capacity(k);
            let mut gate = None;
            let mut allotted = 0usize;
            for (ci, child) in children.iter().enumerate() {
                let share = if ci + 1 == children.len() {
                    k - allotted
                } else {
                    floor_share(child.weight, k).min(k - allotted)
                };
                allotted += share;
                let take = share.min(remaining.len());
                if take == 0 {
                    continue;
                }
                let (picked, prov, g) = match &child.strategy {
                    StrategySpec::Hybrid { .. } => {
                        select_in_pool(&child.strategy, ctx, &remaining, take, rngs)?
                    }
                    leaf_spec => {
                        let p = leaf(leaf_spec, &remaining, take, rngs)?;
                        let n = p.indices.len();
                        (p.indices, vec![leaf_spec.name(); n], p.gate)
                    }
                };
                gate = gate.or(g);
                let picked_set: std::collections::HashSet<usize> =
                    picked.iter().copied().collect();
                remaining.retain(|i| !picked_set.contains(i));
                chosen.extend(picked);
                provenance.extend(prov);
            }
            Ok((chosen, provenance, gate))
        }
        leaf_spec => {
            let p = leaf(leaf_spec, pool, k, rngs)?;
            let n = p.indices.len();
            Ok((p.indices, vec![leaf_spec.name(); n], p.gate))
        }
    }
}

/// Runs `spec` on the whole batch with budget `k` (clamped to the batch size).
pub fn select(
    spec: &StrategySpec,
    ctx: &SelectionContext<'_>,
    k: usize,
    rngs: &mut SelectionRngs<'_>,
) -> Result<SelectionResult, SelectionError> {
    let n = ctx.predictions.len();
    let pool: Vec<usize> = (0..n).collect();
    let (chosen, provenance, gate_branch) = select_in_pool(spec, ctx, &pool, k.min(n), rngs)?;
    Ok(SelectionResult {
        chosen,
        provenance,
        gate_branch,
        seed: rngs.seed,
    })
}
