//! Precision@n% and Revenue@n%, their oracle-normalized forms, and moving
//! averages.
//!
//! Normalization is per week: each raw value is divided by what an oracle
//! that knows every label could have achieved with the same budget on the
//! same batch.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::InspectionLabel;

/// Slack allowed when comparing a raw value against its oracle bound.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("raw metric {raw} exceeds oracle bound {oracle}")]
    ExceedsOracle { raw: f64, oracle: f64 },
    #[error("moving-average window must be ≥ 1")]
    EmptyWindow,
}

#[derive(Debug, Error)]
pub enum PlotError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A metric value plus a flag for degenerate inputs (empty selection, zero
/// total revenue, zero oracle) where the value was defined as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub flagged: bool,
}

impl Metric {
    fn ok(value: f64) -> Self {
        Self {
            value,
            flagged: false,
        }
    }

    fn degenerate() -> Self {
        Self {
            value: 0.0,
            flagged: true,
        }
    }
}

pub fn precision_at(selected: &[usize], batch: &[InspectionLabel]) -> Metric {
    if selected.is_empty() {
        return Metric::degenerate();
    }
    let hits = selected.iter().filter(|&&i| batch[i].illicit).count();
    Metric::ok(hits as f64 / selected.len() as f64)
}

pub fn revenue_at(selected: &[usize], batch: &[InspectionLabel]) -> Metric {
    let total: f64 = batch.iter().map(|l| l.revenue).sum();
    if total <= 0.0 || selected.is_empty() {
        return Metric::degenerate();
    }
    let got: f64 = selected.iter().map(|&i| batch[i].revenue).sum();
    Metric::ok(got / total)
}

pub fn oracle_precision_at(batch: &[InspectionLabel], k: usize) -> Metric {
    if k == 0 {
        return Metric::degenerate();
    }
    let frauds = batch.iter().filter(|l| l.illicit).count();
    Metric::ok(frauds.min(k) as f64 / k as f64)
}

pub fn oracle_revenue_at(batch: &[InspectionLabel], k: usize) -> Metric {
    let total: f64 = batch.iter().map(|l| l.revenue).sum();
    if total <= 0.0 || k == 0 {
        return Metric::degenerate();
    }
    Metric::ok(top_k_revenue(batch, k) / total)
}

fn top_k_revenue(batch: &[InspectionLabel], k: usize) -> f64 {
    let mut revs: Vec<f64> = batch.iter().map(|l| l.revenue).collect();
    revs.sort_by(|a, b| b.total_cmp(a));
    revs.iter().take(k).sum()
}

/// `raw / oracle`; a zero oracle yields a flagged 0. `raw` may exceed
/// `oracle` by [`ORACLE_TOLERANCE`], relative to the larger of 1 and `oracle`.
pub fn normalize(raw: f64, oracle: f64) -> Result<Metric, MetricsError> {
    if raw > oracle + ORACLE_TOLERANCE * oracle.abs().max(1.0) {
        return Err(MetricsError::ExceedsOracle { raw, oracle });
    }
    if oracle <= 0.0 {
        return Ok(Metric::degenerate());
    }
    Ok(Metric::ok((raw / oracle).min(1.0)))
}

/// Element `t` is the mean of `series[t+1-window ..= t]`, using whatever
/// prefix exists near the start.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>, MetricsError> {
    if window == 0 {
        return Err(MetricsError::EmptyWindow);
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for t in 0..series.len() {
        sum += series[t];
        if t >= window {
            sum -= series[t - window];
        }
        let len = (t + 1).min(window);
        out.push(sum / len as f64);
    }
    Ok(out)
}

/// One row of the weekly results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyReport {
    pub week_index: usize,
    pub start_date: String,
    pub end_date: String,
    pub batch_size: usize,
    pub inspection_rate: f64,
    pub budget: usize,
    pub inspected: usize,
    pub frauds_caught: usize,
    pub frauds_in_batch: usize,
    /// |X_t| before this week's labels were added.
    pub train_size: usize,
    pub validation_size: usize,
    pub pre_at_n: f64,
    pub rev_at_n: f64,
    pub norm_pre_at_n: f64,
    pub norm_rev_at_n: f64,
    pub oracle_pre: f64,
    pub oracle_rev: f64,
    /// Set when a metric hit a degenerate case (no fraud, no revenue, empty batch).
    pub flagged: bool,
    /// `(strategy name, count)` in spec order.
    pub provenance: Vec<(String, usize)>,
    pub gate_branch: Option<String>,
    pub model_fallback: bool,
}

impl WeeklyReport {
    /// Scores one week. `selected` indexes into `batch`.
    #[allow(clippy::too_many_arguments)]
    pub fn score(
        week_index: usize,
        start_date: String,
        end_date: String,
        inspection_rate: f64,
        budget: usize,
        selected: &[usize],
        batch: &[InspectionLabel],
    ) -> Result<Self, MetricsError> {
        let pre = precision_at(selected, batch);
        let rev = revenue_at(selected, batch);
        let k = selected.len();
        let o_pre = oracle_precision_at(batch, k);
        let o_rev = oracle_revenue_at(batch, k);
        // Normalize from counts and sums so that e.g. 18 of 20 is exactly 0.9.
        let hits = selected.iter().filter(|&&i| batch[i].illicit).count();
        let frauds = batch.iter().filter(|l| l.illicit).count();
        let n_pre = normalize(hits as f64, frauds.min(k) as f64)?;
        let got: f64 = selected.iter().map(|&i| batch[i].revenue).sum();
        let n_rev = normalize(got, top_k_revenue(batch, k))?;
        Ok(Self {
            week_index,
            start_date,
            end_date,
            batch_size: batch.len(),
            inspection_rate,
            budget,
            inspected: selected.len(),
            frauds_caught: hits,
            frauds_in_batch: frauds,
            train_size: 0,
            validation_size: 0,
            pre_at_n: pre.value,
            rev_at_n: rev.value,
            norm_pre_at_n: n_pre.value,
            norm_rev_at_n: n_rev.value,
            oracle_pre: o_pre.value,
            oracle_rev: o_rev.value,
            flagged: pre.flagged
                || rev.flagged
                || o_pre.flagged
                || o_rev.flagged
                || n_pre.flagged
                || n_rev.flagged,
            provenance: Vec::new(),
            gate_branch: None,
            model_fallback: false,
        })
    }
}

/// Writes the weekly results table. Provenance columns are named
/// `n_<strategy>` after the first report's buckets.
pub fn write_reports<W: Write>(reports: &[WeeklyReport], sink: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let prov_names: Vec<String> = reports
        .first()
        .map(|r| r.provenance.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_default();
    let mut header: Vec<String> = [
        "week_index",
        "start_date",
        "end_date",
        "batch_size",
        "inspection_rate",
        "budget",
        "inspected",
        "frauds_caught",
        "frauds_in_batch",
        "train_size",
        "validation_size",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(prov_names.iter().map(|n| format!("n_{n}")));
    header.extend(
        [
            "pre_at_n",
            "rev_at_n",
            "norm_pre_at_n",
            "norm_rev_at_n",
            "oracle_pre",
            "oracle_rev",
            "gate_branch",
            "flagged",
            "model_fallback",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.week_index.to_string(),
            r.start_date.clone(),
            r.end_date.clone(),
            r.batch_size.to_string(),
            r.inspection_rate.to_string(),
            r.budget.to_string(),
            r.inspected.to_string(),
            r.frauds_caught.to_string(),
            r.frauds_in_batch.to_string(),
            r.train_size.to_string(),
            r.validation_size.to_string(),
        ];
        for name in &prov_names {
            let c = r
                .provenance
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, c)| *c)
                .unwrap_or(0);
            row.push(c.to_string());
        }
        row.extend([
            r.pre_at_n.to_string(),
            r.rev_at_n.to_string(),
            r.norm_pre_at_n.to_string(),
            r.norm_rev_at_n.to_string(),
            r.oracle_pre.to_string(),
            r.oracle_rev.to_string(),
            r.gate_branch.clone().unwrap_or_default(),
            u8::from(r.flagged).to_string(),
            u8::from(r.model_fallback).to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    Precision,
    Revenue,
}

impl PlotMetric {
    pub fn name(&self) -> &'static str {
        match self {
            PlotMetric::Precision => "precision",
            PlotMetric::Revenue => "revenue",
        }
    }
}

/// Plot data for one metric: `week_index,raw,normalized,moving_average`, the
/// moving average taken over the normalized series.
pub fn write_plot_data<W: Write>(
    reports: &[WeeklyReport],
    metric: PlotMetric,
    window: usize,
    sink: W,
) -> Result<(), PlotError> {
    let (raw, norm): (Vec<f64>, Vec<f64>) = reports
        .iter()
        .map(|r| match metric {
            PlotMetric::Precision => (r.pre_at_n, r.norm_pre_at_n),
            PlotMetric::Revenue => (r.rev_at_n, r.norm_rev_at_n),
        })
        .unzip();
    let ma = moving_average(&norm, window)?;
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["week_index", "raw", "normalized", "moving_average"])?;
    for (i, r) in reports.iter().enumerate() {
        w.write_record([
            r.week_index.to_string(),
            raw[i].to_string(),
            norm[i].to_string(),
            ma[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean of `values`, 0 for an empty slice.
pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}
