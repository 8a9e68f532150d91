//! Parametric generator for labeled import streams with injected drift.
//!
//! The generative story is deliberately simple and learnable:
//!
//! * every tariff code has a latent fair price per kg, a unit weight, a duty
//!   rate, a risk level and a dominant source country;
//! * every importer has an activity weight, a small basket of tariff codes and
//!   a latent dishonesty trait;
//! * an item is under-invoiced (declared CIF below the fair value) with a
//!   probability driven by importer dishonesty, tariff risk and country risk;
//! * the item is illicit with probability
//!   `sigmoid(a·under_invoicing + b·dishonesty + c·tariff_risk + d·country_risk + β)`,
//!   where `β` is solved by bisection so the expected illicit rate over the
//!   whole stream equals `base_illicit_rate`;
//! * raised revenue on an illicit item is `duty_rate · (fair − declared)`,
//!   floored at [`MIN_REVENUE`].
//!
//! Drift events fire at the start of their week: `CountryRemap` moves a
//! fraction of tariff codes to a new dominant source country, and
//! `ImporterResample` redraws the dishonesty trait of a fraction of importers.

use std::collections::BTreeSet;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Declaration, InspectionLabel, LabeledDeclaration};
use crate::seed::{rng_from_seed, splitmix64, SimRng};

pub const MIN_REVENUE: f64 = 1.0;

const CODES_PER_IMPORTER: usize = 3;
const DOMINANT_COUNTRY_SHARE: f64 = 0.75;

// Fraud logit weights.
const W_UNDERINVOICE: f64 = 5.0;
const W_DISHONESTY: f64 = 1.5;
const W_VALUE: f64 = 0.5;
// Share of importers drawn from the dishonest group.
const DISHONEST_SHARE: f64 = 0.12;
const W_TARIFF_RISK: f64 = 0.6;
const W_COUNTRY_RISK: f64 = 0.6;

const COUNTRIES: [&str; 40] = [
    "USA", "CHN", "IND", "DEU", "FRA", "GBR", "JPN", "KOR", "BRA", "ZAF", "NGA", "KEN", "EGY",
    "TUR", "ARE", "SAU", "ITA", "ESP", "NLD", "BEL", "CAN", "MEX", "ARG", "CHL", "IDN", "MYS",
    "THA", "VNM", "PAK", "BGD", "GHA", "CIV", "SEN", "CMR", "TZA", "UGA", "ETH", "MAR", "TUN",
    "AUS",
];

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("invalid generator config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DriftShift {
    /// Reassign the dominant source country of this fraction of tariff codes.
    CountryRemap { fraction: f64 },
    /// Redraw the dishonesty trait of this fraction of importers.
    ImporterResample { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub week: usize,
    pub shift: DriftShift,
}

impl FromStr for DriftEvent {
    type Err = GeneratorError;

    /// `week:remap:fraction` or `week:resample:fraction`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeneratorError::Config(format!("bad drift event '{s}'"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let [week, kind, fraction] = parts.as_slice() else {
            return Err(bad());
        };
        let week: usize = week.parse().map_err(|_| bad())?;
        let fraction: f64 = fraction.parse().map_err(|_| bad())?;
        let shift = match *kind {
            "remap" => DriftShift::CountryRemap { fraction },
            "resample" => DriftShift::ImporterResample { fraction },
            _ => return Err(bad()),
        };
        Ok(DriftEvent { week, shift })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_items: usize,
    pub num_weeks: usize,
    pub num_importers: usize,
    pub num_declarants: usize,
    pub num_tariff_codes: usize,
    pub num_offices: usize,
    pub base_illicit_rate: f64,
    pub drift_schedule: Vec<DriftEvent>,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_items: 100_000,
            num_weeks: 52,
            num_importers: 8_000,
            num_declarants: 800,
            num_tariff_codes: 1_000,
            num_offices: 30,
            base_illicit_rate: 0.076,
            drift_schedule: Vec::new(),
            seed: 7,
            start_date: NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date"),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let err = |m: &str| Err(GeneratorError::Config(m.to_string()));
        if !(self.base_illicit_rate > 0.0 && self.base_illicit_rate < 1.0) {
            return err("base_illicit_rate must lie in (0,1)");
        }
        if self.num_weeks == 0 {
            return err("num_weeks must be at least 1");
        }
        if self.num_items < self.num_weeks {
            return err("num_items must be at least num_weeks");
        }
        if self.num_importers == 0
            || self.num_declarants == 0
            || self.num_tariff_codes == 0
            || self.num_offices == 0
        {
            return err("entity counts must be positive");
        }
        if self.num_tariff_codes > 8_000_000 {
            return err("num_tariff_codes too large for 10-digit codes");
        }
        for ev in &self.drift_schedule {
            if ev.week >= self.num_weeks {
                return err("drift week outside [0, num_weeks)");
            }
            let f = match ev.shift {
                DriftShift::CountryRemap { fraction } => fraction,
                DriftShift::ImporterResample { fraction } => fraction,
            };
            if !(0.0..=1.0).contains(&f) {
                return err("drift fraction must lie in [0,1]");
            }
        }
        Ok(())
    }

    /// Parses a flat `key=value` file. Blank lines and `#` comments are
    /// skipped; unspecified keys keep their defaults. `drift` takes a
    /// comma-separated list of `week:remap|resample:fraction` events.
    pub fn from_kv_str(text: &str) -> Result<Self, GeneratorError> {
        let mut cfg = Self::default();
        cfg.apply_kv_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` lines on top of the current values.
    pub fn apply_kv_str(&mut self, text: &str) -> Result<(), GeneratorError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                GeneratorError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), GeneratorError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, GeneratorError> {
            v.parse()
                .map_err(|_| GeneratorError::Config(format!("bad value for {key}: '{v}'")))
        }
        match key {
            "num_items" => self.num_items = num(key, value)?,
            "num_weeks" => self.num_weeks = num(key, value)?,
            "num_importers" => self.num_importers = num(key, value)?,
            "num_declarants" => self.num_declarants = num(key, value)?,
            "num_tariff_codes" => self.num_tariff_codes = num(key, value)?,
            "num_offices" => self.num_offices = num(key, value)?,
            "base_illicit_rate" => self.base_illicit_rate = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "start_date" => {
                self.start_date = NaiveDate::parse_from_str(value, "%Y-%m-%d")
                    .map_err(|_| GeneratorError::Config(format!("bad start_date '{value}'")))?
            }
            "drift" => {
                self.drift_schedule = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(DriftEvent::from_str)
                    .collect::<Result<_, _>>()?
            }
            other => return Err(GeneratorError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

/// Planned item count per week: `num_items / num_weeks` each, with the
/// remainder handed out one by one to the earliest weeks.
pub fn emission_log(config: &GeneratorConfig) -> Vec<usize> {
    if config.num_weeks == 0 {
        return Vec::new();
    }
    let base = config.num_items / config.num_weeks;
    let rem = config.num_items % config.num_weeks;
    (0..config.num_weeks)
        .map(|w| base + usize::from(w < rem))
        .collect()
}

struct TariffCode {
    code: String,
    price_per_kg: f64,
    unit_weight: f64,
    duty_rate: f64,
    risk: f64,
    dominant_country: usize,
}

struct Importer {
    id: String,
    declarant: usize,
    codes: [usize; CODES_PER_IMPORTER],
    dishonesty: f64,
}

struct World {
    codes: Vec<TariffCode>,
    country_risk: Vec<f64>,
    importers: Vec<Importer>,
    activity: WeightedIndex<f64>,
}

fn normal(rng: &mut SimRng) -> f64 {
    rng.sample(StandardNormal)
}

fn draw_dishonesty(rng: &mut SimRng) -> f64 {
    if rng.random::<f64>() < DISHONEST_SHARE {
        2.0 + 0.5 * normal(rng)
    } else {
        -0.3 + 0.5 * normal(rng)
    }
}

impl World {
    fn build(cfg: &GeneratorConfig, rng: &mut SimRng) -> Self {
        const DUTY_RATES: [f64; 6] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30];
        let codes: Vec<TariffCode> = (0..cfg.num_tariff_codes)
            .map(|i| TariffCode {
                code: format!("{:010}", 1_000_000_000u64 + i as u64 * 1_117),
                price_per_kg: (3.0 + 0.5 * normal(rng)).exp(),
                unit_weight: (1.5 + normal(rng)).exp(),
                duty_rate: DUTY_RATES[rng.random_range(0..DUTY_RATES.len())],
                risk: normal(rng),
                dominant_country: rng.random_range(0..COUNTRIES.len()),
            })
            .collect();
        let country_risk: Vec<f64> = (0..COUNTRIES.len()).map(|_| normal(rng)).collect();
        // Code popularity is skewed so some codes are common.
        let code_pop = WeightedIndex::new(
            (0..cfg.num_tariff_codes).map(|_| (0.8 * normal(rng)).exp()),
        )
        .expect("positive weights");
        let mut activity_w = Vec::with_capacity(cfg.num_importers);
        let importers: Vec<Importer> = (0..cfg.num_importers)
            .map(|i| {
                activity_w.push((1.5 * normal(rng)).exp());
                let mut codes = [0usize; CODES_PER_IMPORTER];
                for c in codes.iter_mut() {
                    *c = code_pop.sample(rng);
                }
                Importer {
                    id: format!("IMP{i:06}"),
                    declarant: rng.random_range(0..cfg.num_declarants),
                    codes,
                    dishonesty: draw_dishonesty(rng),
                }
            })
            .collect();
        Self {
            codes,
            country_risk,
            importers,
            activity: WeightedIndex::new(activity_w).expect("positive weights"),
        }
    }

    fn apply(&mut self, shift: DriftShift, rng: &mut SimRng) {
        match shift {
            DriftShift::CountryRemap { fraction } => {
                let n = (fraction * self.codes.len() as f64).floor() as usize;
                for idx in sample(rng, self.codes.len(), n).into_vec() {
                    self.codes[idx].dominant_country = rng.random_range(0..COUNTRIES.len());
                }
            }
            DriftShift::ImporterResample { fraction } => {
                let n = (fraction * self.importers.len() as f64).floor() as usize;
                for idx in sample(rng, self.importers.len(), n).into_vec() {
                    self.importers[idx].dishonesty = draw_dishonesty(rng);
                }
            }
        }
    }
}

struct Draft {
    declaration: Declaration,
    fair_cif: f64,
    duty_rate: f64,
    logit: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intercept that makes the mean illicit probability equal `target`.
fn calibrate_intercept(logits: &[f64], target: f64) -> f64 {
    let mean_p = |b: f64| logits.iter().map(|l| sigmoid(l + b)).sum::<f64>() / logits.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generates the full labeled stream, ordered by date. Labels are hidden.
pub fn generate(config: &GeneratorConfig) -> Result<Vec<LabeledDeclaration>, GeneratorError> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let mut world = World::build(config, &mut rng);
    let plan = emission_log(config);

    let mut drafts: Vec<Draft> = Vec::with_capacity(config.num_items);
    for (week, &count) in plan.iter().enumerate() {
        for (i, ev) in config.drift_schedule.iter().enumerate() {
            if ev.week == week {
                let mut drift_rng =
                    rng_from_seed(splitmix64(config.seed ^ splitmix64(0xd81f_7000 + i as u64)));
                world.apply(ev.shift, &mut drift_rng);
            }
        }
        let week_start = config.start_date + Duration::days(7 * week as i64);
        let mut week_drafts: Vec<(i64, Draft)> = (0..count)
            .map(|_| {
                let day = rng.random_range(0..7i64);
                (day, draft_item(&world, config, &mut rng, week_start + Duration::days(day)))
            })
            .collect();
        week_drafts.sort_by_key(|(day, _)| *day);
        drafts.extend(week_drafts.into_iter().map(|(_, d)| d));
    }

    let logits: Vec<f64> = drafts.iter().map(|d| d.logit).collect();
    let intercept = calibrate_intercept(&logits, config.base_illicit_rate);

    let mut label_rng = rng_from_seed(splitmix64(config.seed ^ 0x1abe_1000));
    let items = drafts
        .into_iter()
        .enumerate()
        .map(|(i, mut d)| {
            let illicit = label_rng.random::<f64>() < sigmoid(d.logit + intercept);
            let revenue = if illicit {
                (d.duty_rate * (d.fair_cif - d.declaration.cif_value)).max(MIN_REVENUE)
            } else {
                0.0
            };
            d.declaration.sgd_id = format!("SGD{i:07}");
            LabeledDeclaration::new(i, d.declaration, InspectionLabel { illicit, revenue })
        })
        .collect();
    Ok(items)
}

fn draft_item(world: &World, cfg: &GeneratorConfig, rng: &mut SimRng, date: NaiveDate) -> Draft {
    let importer = &world.importers[world.activity.sample(rng)];
    let code_idx = importer.codes[rng.random_range(0..CODES_PER_IMPORTER)];
    let code = &world.codes[code_idx];
    let country = if rng.random::<f64>() < DOMINANT_COUNTRY_SHARE {
        code.dominant_country
    } else {
        rng.random_range(0..COUNTRIES.len())
    };
    let office = rng.random_range(0..cfg.num_offices);

    let quantity = (1.0 + 1.0 * normal(rng)).exp().floor().max(1.0);
    let gross_weight = quantity * code.unit_weight * (0.1 * normal(rng)).exp();
    let fair_cif = gross_weight * code.price_per_kg * (0.15 * normal(rng)).exp();

    let propensity = sigmoid(
        1.2 * importer.dishonesty + 0.6 * code.risk + 0.6 * world.country_risk[country] - 1.5,
    );
    let under_invoicing = if rng.random::<f64>() < propensity {
        rng.random_range(0.2..0.7)
    } else {
        rng.random_range(0.0..0.05)
    };
    let cif_value = fair_cif * (1.0 - under_invoicing);
    let fob_value = cif_value * rng.random_range(0.80..0.95);
    let total_taxes = code.duty_rate * cif_value;

    let logit = W_UNDERINVOICE * under_invoicing
        + W_DISHONESTY * importer.dishonesty
        + W_TARIFF_RISK * code.risk
        + W_COUNTRY_RISK * world.country_risk[country]
        + W_VALUE * fair_cif.ln();

    Draft {
        declaration: Declaration {
            sgd_id: String::new(),
            sgd_date: date,
            importer_id: importer.id.clone(),
            declarant_id: format!("DEC{:05}", importer.declarant),
            country: COUNTRIES[country].to_string(),
            office_id: format!("OFFICE{office:02}"),
            tariff_code: code.code.clone(),
            quantity,
            gross_weight,
            fob_value,
            cif_value,
            total_taxes,
        },
        fair_cif,
        duty_rate: code.duty_rate,
        logit,
    }
}

/// Distinct importer ids in a generated stream.
pub fn distinct_importers(items: &[LabeledDeclaration]) -> usize {
    items
        .iter()
        .map(|i| i.declaration.importer_id.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}
