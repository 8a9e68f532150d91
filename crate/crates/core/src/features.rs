//! Numeric encoding of declarations.
//!
//! Categorical entities are reduced to binary risk indicators (risk
//! profiling): each entity's historical fraud rate is ranked and entities at or
//! above the configured percentile are flagged. Numeric fields are augmented
//! with five cross features and standardized.
//!
//! Vector layout (dimension [`FEATURE_DIM`]):
//!
//! | idx | feature        | transform               |
//! |-----|----------------|-------------------------|
//! | 0   | quantity       | standardize             |
//! | 1   | gross.weight   | standardize             |
//! | 2   | fob.value      | log1p, standardize      |
//! | 3   | cif.value      | log1p, standardize      |
//! | 4   | total.taxes    | log1p, standardize      |
//! | 5   | unit.value     | log1p, standardize      |
//! | 6   | value/kg       | log1p, standardize      |
//! | 7   | tax.ratio      | standardize             |
//! | 8   | unit.tax       | log1p, standardize      |
//! | 9   | face.ratio     | standardize             |
//! | 10  | importer risk  | {0,1}                   |
//! | 11  | declarant risk | {0,1}                   |
//! | 12  | tariff risk    | {0,1}                   |
//! | 13  | country risk   | {0,1}                   |
//! | 14  | office risk    | {0,1}                   |

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ingest::{Declaration, TrainingRecord};

pub const NUMERIC_DIM: usize = 10;
pub const RISK_DIM: usize = 5;
pub const FEATURE_DIM: usize = NUMERIC_DIM + RISK_DIM;

/// Which numeric slots get `log1p` before standardization.
const LOG_SLOTS: [bool; NUMERIC_DIM] = [
    false, false, true, true, true, true, true, false, true, false,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Importer,
    Declarant,
    TariffCode,
    Country,
    Office,
}

impl EntityKind {
    pub const ALL: [EntityKind; RISK_DIM] = [
        EntityKind::Importer,
        EntityKind::Declarant,
        EntityKind::TariffCode,
        EntityKind::Country,
        EntityKind::Office,
    ];

    pub fn key<'a>(&self, d: &'a Declaration) -> &'a str {
        match self {
            EntityKind::Importer => &d.importer_id,
            EntityKind::Declarant => &d.declarant_id,
            EntityKind::TariffCode => &d.tariff_code,
            EntityKind::Country => &d.country,
            EntityKind::Office => &d.office_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    pub entity_kind: EntityKind,
    pub fraud_rate: HashMap<String, f64>,
    /// Fraud rate at the configured percentile; 0 when the profile is empty.
    pub cutoff: f64,
}

impl RiskProfile {
    fn empty(kind: EntityKind) -> Self {
        Self {
            entity_kind: kind,
            fraud_rate: HashMap::new(),
            cutoff: 0.0,
        }
    }

    /// 1 when the entity's fraud rate is positive and at or above the cutoff.
    /// Unseen entities and entities with no recorded fraud get 0.
    pub fn indicator(&self, id: &str) -> f64 {
        match self.fraud_rate.get(id) {
            Some(&rate) if rate > 0.0 && rate >= self.cutoff => 1.0,
            _ => 0.0,
        }
    }

    pub fn is_high_risk(&self, id: &str) -> bool {
        self.indicator(id) == 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfiles {
    pub profiles: Vec<RiskProfile>,
}

impl RiskProfiles {
    pub fn empty() -> Self {
        Self {
            profiles: EntityKind::ALL.iter().map(|&k| RiskProfile::empty(k)).collect(),
        }
    }

    pub fn get(&self, kind: EntityKind) -> &RiskProfile {
        self.profiles
            .iter()
            .find(|p| p.entity_kind == kind)
            .expect("one profile per entity kind")
    }

    pub fn indicators(&self, d: &Declaration) -> [f64; RISK_DIM] {
        let mut out = [0.0; RISK_DIM];
        for (slot, kind) in out.iter_mut().zip(EntityKind::ALL) {
            *slot = self.get(kind).indicator(kind.key(d));
        }
        out
    }
}

/// Linear-interpolation percentile of `values` (sorted ascending in place).
fn percentile_linear(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}

/// Builds one profile per entity kind from inspected history. Ranking uses
/// fraud rates (frauds / inspections per entity).
pub fn build_risk_profiles(history: &[TrainingRecord<'_>], percentile: f64) -> RiskProfiles {
    assert!(
        percentile > 0.0 && percentile < 1.0,
        "percentile must lie in (0,1)"
    );
    let profiles = EntityKind::ALL
        .iter()
        .map(|&kind| {
            let mut counts: HashMap<&str, (u32, u32)> = HashMap::new();
            for rec in history {
                let e = counts.entry(kind.key(rec.declaration)).or_default();
                e.0 += 1;
                if rec.label.illicit {
                    e.1 += 1;
                }
            }
            let fraud_rate: HashMap<String, f64> = counts
                .into_iter()
                .map(|(id, (n, f))| (id.to_string(), f64::from(f) / f64::from(n)))
                .collect();
            let mut rates: Vec<f64> = fraud_rate.values().copied().collect();
            let cutoff = percentile_linear(&mut rates, percentile);
            RiskProfile {
                entity_kind: kind,
                fraud_rate,
                cutoff,
            }
        })
        .collect();
    RiskProfiles { profiles }
}

/// Raw cross features, before any transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossFeatures {
    pub unit_value: f64,
    pub value_per_kg: f64,
    pub tax_ratio: f64,
    pub unit_tax: f64,
    pub face_ratio: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn cross_features(d: &Declaration) -> CrossFeatures {
    CrossFeatures {
        unit_value: ratio(d.cif_value, d.quantity),
        value_per_kg: ratio(d.cif_value, d.gross_weight),
        tax_ratio: ratio(d.total_taxes, d.cif_value),
        unit_tax: ratio(d.total_taxes, d.quantity),
        face_ratio: ratio(d.fob_value, d.cif_value),
    }
}

/// Numeric block after the log1p transform, before standardization.
pub fn numeric_block(d: &Declaration) -> [f64; NUMERIC_DIM] {
    let c = cross_features(d);
    let mut raw = [
        d.quantity,
        d.gross_weight,
        d.fob_value,
        d.cif_value,
        d.total_taxes,
        c.unit_value,
        c.value_per_kg,
        c.tax_ratio,
        c.unit_tax,
        c.face_ratio,
    ];
    for (v, &log) in raw.iter_mut().zip(LOG_SLOTS.iter()) {
        if log {
            *v = v.ln_1p();
        }
    }
    raw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: [f64; NUMERIC_DIM],
    pub std: [f64; NUMERIC_DIM],
}

impl Scaler {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUMERIC_DIM],
            std: [1.0; NUMERIC_DIM],
        }
    }

    /// Population mean/std per dimension. Zero-variance dimensions get std 1.
    pub fn fit(rows: &[[f64; NUMERIC_DIM]]) -> Self {
        if rows.is_empty() {
            return Self::identity();
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; NUMERIC_DIM];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; NUMERIC_DIM];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std = [1.0; NUMERIC_DIM];
        for (s, v) in std.iter_mut().zip(&var) {
            let sd = (v / n).sqrt();
            if sd > 0.0 && sd.is_finite() {
                *s = sd;
            }
        }
        Self { mean, std }
    }

    pub fn transform(&self, raw: &[f64; NUMERIC_DIM]) -> [f64; NUMERIC_DIM] {
        let mut out = [0.0; NUMERIC_DIM];
        for i in 0..NUMERIC_DIM {
            out[i] = (raw[i] - self.mean[i]) / self.std[i];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn encode(d: &Declaration, profiles: &RiskProfiles, scaler: &Scaler) -> FeatureVector {
    let numeric = scaler.transform(&numeric_block(d));
    let risk = profiles.indicators(d);
    let mut values = Vec::with_capacity(FEATURE_DIM);
    values.extend_from_slice(&numeric);
    values.extend_from_slice(&risk);
    FeatureVector(values)
}

/// Profiles and scaler fit together on one inspected history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub profiles: RiskProfiles,
    pub scaler: Scaler,
}

impl FeaturePipeline {
    pub fn fit(history: &[TrainingRecord<'_>], percentile: f64) -> Self {
        let profiles = build_risk_profiles(history, percentile);
        let rows: Vec<_> = history.iter().map(|r| numeric_block(r.declaration)).collect();
        Self {
            profiles,
            scaler: Scaler::fit(&rows),
        }
    }

    pub fn encode(&self, d: &Declaration) -> FeatureVector {
        encode(d, &self.profiles, &self.scaler)
    }
}
