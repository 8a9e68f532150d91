//! Reference dual-head model.
//!
//! `x → z = relu(W₁x + b₁)` is the transaction embedding. On top of it sit a
//! fraud head `ŷcls = σ(w_f·z + b_f)` and a revenue head
//! `ŷrev = softplus(w_r·z + b_r)`. Training minimizes
//!
//! ```text
//! BCE(ŷcls, ycls) + λ · (log1p(ŷrev) − log1p(yrev))²
//! ```
//!
//! averaged over mini-batches, with Adam updates. Every weekly retrain starts
//! from a fresh seeded initialization.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::ingest::InspectionLabel;
use crate::seed::rng_from_seed;

pub const SNAPSHOT_FORMAT: &str = "customs-select/model";
pub const SNAPSHOT_VERSION: u32 = 1;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const PRIOR_CLAMP: (f64, f64) = (0.01, 0.99);
// Shuffle stream must differ from the init stream for the same seed.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension {got} does not match model input dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("fraction {0} outside (0,1]")]
    InvalidFraction(f64),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("unsupported snapshot format '{format}' v{version}")]
    UnsupportedSnapshot { format: String, version: u32 },
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// λ, weight of the revenue loss.
    pub revenue_weight: f64,
    /// Embedding width H.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 512,
            learning_rate: 1e-3,
            revenue_weight: 1.0,
            hidden: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::InvalidConfig("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.hidden < 2 {
            return Err(ModelError::InvalidConfig("hidden width must be ≥ 2".into()));
        }
        if !(self.revenue_weight >= 0.0) {
            return Err(ModelError::InvalidConfig("revenue weight must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub seed: u64,
    /// Full-training-set loss after each epoch.
    pub loss_trace: Vec<f64>,
    /// Set when the snapshot is the constant-prior fallback.
    pub fallback: bool,
    pub train_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub hidden: usize,
    /// `hidden × input_dim`, row-major.
    pub encoder_weights: Vec<f64>,
    pub encoder_bias: Vec<f64>,
    pub fraud_weights: Vec<f64>,
    pub fraud_bias: f64,
    pub revenue_weights: Vec<f64>,
    pub revenue_bias: f64,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub fraud_score: f64,
    /// `W·z + b`; kept so that `1 − ŷ` stays accurate near saturation.
    pub fraud_logit: f64,
    pub revenue_pred: f64,
    pub embedding: Vec<f64>,
}

impl Prediction {
    /// Builds a prediction from a score alone, recovering the logit.
    pub fn from_score(fraud_score: f64, revenue_pred: f64, embedding: Vec<f64>) -> Self {
        Self {
            fraud_score,
            fraud_logit: fraud_score.ln() - (-fraud_score).ln_1p(),
            revenue_pred,
            embedding,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
    h: usize,
}

impl Layout {
    fn w1(&self) -> std::ops::Range<usize> {
        0..self.h * self.d
    }
    fn b1(&self) -> std::ops::Range<usize> {
        let s = self.h * self.d;
        s..s + self.h
    }
    fn wf(&self) -> std::ops::Range<usize> {
        let s = self.h * self.d + self.h;
        s..s + self.h
    }
    fn bf(&self) -> usize {
        self.h * self.d + 2 * self.h
    }
    fn wr(&self) -> std::ops::Range<usize> {
        let s = self.bf() + 1;
        s..s + self.h
    }
    fn br(&self) -> usize {
        self.bf() + 1 + self.h
    }
    fn len(&self) -> usize {
        self.br() + 1
    }
}

/// One training target: class and log1p revenue.
#[derive(Debug, Clone, Copy)]
struct Target {
    class: f64,
    log_revenue: f64,
}

/// Mean loss over `rows`; accumulates the mean gradient into `grad` if given.
fn loss_and_grad(
    params: &[f64],
    layout: Layout,
    rows: &[(&[f64], Target)],
    lambda: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let Layout { d, h } = layout;
    let w1 = &params[layout.w1()];
    let b1 = &params[layout.b1()];
    let wf = &params[layout.wf()];
    let bf = params[layout.bf()];
    let wr = &params[layout.wr()];
    let br = params[layout.br()];
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let inv_n = 1.0 / rows.len() as f64;
    let mut pre = vec![0.0; h];
    let mut z = vec![0.0; h];
    let mut total = 0.0;
    for (x, t) in rows {
        for j in 0..h {
            pre[j] = b1[j] + dot(&w1[j * d..(j + 1) * d], x);
            z[j] = pre[j].max(0.0);
        }
        let fl = bf + dot(wf, &z);
        let rl = br + dot(wr, &z);
        let s = softplus(rl);
        let resid = s.ln_1p() - t.log_revenue;
        total += softplus(fl) - t.class * fl + lambda * resid * resid;

        if let Some(g) = grad.as_deref_mut() {
            let d_fl = (sigmoid(fl) - t.class) * inv_n;
            let d_rl = lambda * 2.0 * resid / (1.0 + s) * sigmoid(rl) * inv_n;
            g[layout.bf()] += d_fl;
            g[layout.br()] += d_rl;
            let (wf_r, wr_r, b1_r) = (layout.wf(), layout.wr(), layout.b1());
            for j in 0..h {
                g[wf_r.start + j] += d_fl * z[j];
                g[wr_r.start + j] += d_rl * z[j];
                if pre[j] > 0.0 {
                    let dz = d_fl * wf[j] + d_rl * wr[j];
                    g[b1_r.start + j] += dz;
                    let row = &mut g[j * d..(j + 1) * d];
                    for (gw, xi) in row.iter_mut().zip(x.iter()) {
                        *gw += dz * xi;
                    }
                }
            }
        }
    }
    total * inv_n
}

fn init_params(layout: Layout, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let mut p = vec![0.0; layout.len()];
    let a1 = (6.0 / layout.d as f64).sqrt();
    for v in &mut p[layout.w1()] {
        *v = rng.random_range(-a1..a1);
    }
    let a2 = 1.0 / (layout.h as f64).sqrt();
    for v in &mut p[layout.wf()] {
        *v = rng.random_range(-a2..a2);
    }
    for v in &mut p[layout.wr()] {
        *v = rng.random_range(-a2..a2);
    }
    p
}

impl ModelSnapshot {
    #[cfg(test)]
    fn layout(&self) -> Layout {
        Layout {
            d: self.input_dim,
            h: self.hidden,
        }
    }

    fn from_flat(layout: Layout, p: &[f64], meta: TrainingMeta) -> Self {
        Self {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            input_dim: layout.d,
            hidden: layout.h,
            encoder_weights: p[layout.w1()].to_vec(),
            encoder_bias: p[layout.b1()].to_vec(),
            fraud_weights: p[layout.wf()].to_vec(),
            fraud_bias: p[layout.bf()],
            revenue_weights: p[layout.wr()].to_vec(),
            revenue_bias: p[layout.br()],
            meta,
        }
    }

    #[cfg(test)]
    fn to_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.layout().len());
        p.extend_from_slice(&self.encoder_weights);
        p.extend_from_slice(&self.encoder_bias);
        p.extend_from_slice(&self.fraud_weights);
        p.push(self.fraud_bias);
        p.extend_from_slice(&self.revenue_weights);
        p.push(self.revenue_bias);
        p
    }

    /// Seeded random encoder with constant heads: the fraud head outputs
    /// `prior` (clamped to [0.01, 0.99]) and the revenue head `mean_log_revenue`
    /// on the log1p scale, whatever the input.
    pub fn constant(
        input_dim: usize,
        cfg: &TrainConfig,
        prior: f64,
        mean_log_revenue: f64,
        train_size: usize,
    ) -> Self {
        let layout = Layout {
            d: input_dim,
            h: cfg.hidden,
        };
        let mut p = init_params(layout, cfg.seed);
        p[layout.wf()].iter_mut().for_each(|v| *v = 0.0);
        p[layout.wr()].iter_mut().for_each(|v| *v = 0.0);
        p[layout.bf()] = logit(prior.clamp(PRIOR_CLAMP.0, PRIOR_CLAMP.1));
        p[layout.br()] = if mean_log_revenue > 0.0 {
            inverse_softplus(mean_log_revenue.exp_m1())
        } else {
            -30.0
        };
        Self::from_flat(
            layout,
            &p,
            TrainingMeta {
                epochs: 0,
                seed: cfg.seed,
                loss_trace: Vec::new(),
                fallback: true,
                train_size,
            },
        )
    }

    pub fn embed(&self, f: &FeatureVector) -> Result<Vec<f64>, ModelError> {
        if f.dim() != self.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim,
                got: f.dim(),
            });
        }
        let x = f.as_slice();
        Ok((0..self.hidden)
            .map(|j| {
                let row = &self.encoder_weights[j * self.input_dim..(j + 1) * self.input_dim];
                (self.encoder_bias[j] + dot(row, x)).max(0.0)
            })
            .collect())
    }

    pub fn fraud_logit(&self, embedding: &[f64]) -> f64 {
        self.fraud_bias + dot(&self.fraud_weights, embedding)
    }

    pub fn predict(&self, f: &FeatureVector) -> Result<Prediction, ModelError> {
        let z = self.embed(f)?;
        let fraud_logit = self.fraud_logit(&z);
        let revenue_pred = softplus(self.revenue_bias + dot(&self.revenue_weights, &z));
        Ok(Prediction {
            fraud_score: sigmoid(fraud_logit),
            fraud_logit,
            revenue_pred,
            embedding: z,
        })
    }

    pub fn save_json<W: Write>(&self, w: W) -> Result<(), ModelError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn load_json<R: Read>(r: R) -> Result<Self, ModelError> {
        let snap: ModelSnapshot = serde_json::from_reader(r)?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(ModelError::UnsupportedSnapshot {
                format: snap.format,
                version: snap.version,
            });
        }
        Ok(snap)
    }

    /// `epoch,loss` rows.
    pub fn write_loss_trace<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss")?;
        for (i, l) in self.meta.loss_trace.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, l)?;
        }
        Ok(())
    }
}

fn targets(labels: &[InspectionLabel]) -> Vec<Target> {
    labels
        .iter()
        .map(|l| Target {
            class: if l.illicit { 1.0 } else { 0.0 },
            log_revenue: l.revenue.ln_1p(),
        })
        .collect()
}

/// Trains from scratch. Single-class data yields [`ModelSnapshot::constant`]
/// with `meta.fallback` set.
pub fn train(
    features: &[FeatureVector],
    labels: &[InspectionLabel],
    cfg: &TrainConfig,
) -> Result<ModelSnapshot, ModelError> {
    cfg.validate()?;
    assert_eq!(features.len(), labels.len(), "one label per feature row");
    let Some(first) = features.first() else {
        return Err(ModelError::EmptyTrainingSet);
    };
    let d = first.dim();
    if let Some(bad) = features.iter().find(|f| f.dim() != d) {
        return Err(ModelError::DimensionMismatch {
            expected: d,
            got: bad.dim(),
        });
    }
    let targets = targets(labels);
    let n = targets.len();
    let positives = targets.iter().filter(|t| t.class == 1.0).count();
    if positives == 0 || positives == n {
        let mean_log_rev = targets.iter().map(|t| t.log_revenue).sum::<f64>() / n as f64;
        return Ok(ModelSnapshot::constant(
            d,
            cfg,
            positives as f64 / n as f64,
            mean_log_rev,
            n,
        ));
    }

    let layout = Layout { d, h: cfg.hidden };
    let mut params = init_params(layout, cfg.seed);
    let mut grad = vec![0.0; layout.len()];
    let mut m = vec![0.0; layout.len()];
    let mut v = vec![0.0; layout.len()];
    let mut rng = rng_from_seed(cfg.seed ^ SHUFFLE_STREAM);
    let rows: Vec<(&[f64], Target)> = features
        .iter()
        .zip(&targets)
        .map(|(f, t)| (f.as_slice(), *t))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch: Vec<(&[f64], Target)> = Vec::with_capacity(cfg.batch_size);
    let mut step = 0i32;
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| rows[i]));
            loss_and_grad(&params, layout, &batch, cfg.revenue_weight, Some(&mut grad));
            step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(step);
            let c2 = 1.0 - ADAM_BETA2.powi(step);
            for i in 0..params.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                params[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
        loss_trace.push(loss_and_grad(&params, layout, &rows, cfg.revenue_weight, None));
    }

    Ok(ModelSnapshot::from_flat(
        layout,
        &params,
        TrainingMeta {
            epochs: cfg.epochs,
            seed: cfg.seed,
            loss_trace,
            fallback: false,
            train_size: n,
        },
    ))
}


/// Revenue captured by the top `⌊n·len⌋` (at least one) items ranked by
/// `scores`, as a share of total revenue. Ties keep input order. Returns
/// `(share, zero_total)`; the share is 0 when total revenue is 0.
pub fn revenue_capture_at(scores: &[f64], revenues: &[f64], n: f64) -> (f64, bool) {
    let total: f64 = revenues.iter().sum();
    if total <= 0.0 {
        return (0.0, true);
    }
    let k = ((n * scores.len() as f64).floor() as usize).clamp(1, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let captured: f64 = order[..k].iter().map(|&i| revenues[i]).sum();
    (captured / total, false)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRevenue {
    pub value: f64,
    /// Validation set carried no revenue at all.
    pub zero_total: bool,
}

/// Rev@n% of the model on a labeled validation set.
pub fn validation_revenue(
    m: &ModelSnapshot,
    val: &[(FeatureVector, InspectionLabel)],
    n: f64,
) -> Result<ValidationRevenue, ModelError> {
    if val.is_empty() {
        return Err(ModelError::EmptyValidation);
    }
    if !(n > 0.0 && n <= 1.0) {
        return Err(ModelError::InvalidFraction(n));
    }
    let scores = val
        .iter()
        .map(|(f, _)| m.predict(f).map(|p| p.fraud_score))
        .collect::<Result<Vec<_>, _>>()?;
    let revenues: Vec<f64> = val.iter().map(|(_, l)| l.revenue).collect();
    let (value, zero_total) = revenue_capture_at(&scores, &revenues, n);
    Ok(ValidationRevenue { value, zero_total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn zero_snapshot(d: usize, h: usize) -> ModelSnapshot {
        let layout = Layout { d, h };
        ModelSnapshot::from_flat(
            layout,
            &vec![0.0; layout.len()],
            TrainingMeta {
                epochs: 0,
                seed: 0,
                loss_trace: vec![],
                fallback: false,
                train_size: 0,
            },
        )
    }

    fn random_snapshot(d: usize, h: usize, seed: u64) -> ModelSnapshot {
        let layout = Layout { d, h };
        let mut rng = rng_from_seed(seed);
        let p: Vec<f64> = (0..layout.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut s = zero_snapshot(d, h);
        s = ModelSnapshot::from_flat(layout, &p, s.meta);
        s
    }

    #[test]
    fn zero_model_scores_one_half() {
        let m = zero_snapshot(4, 3);
        let p = m.predict(&FeatureVector(vec![1.0, -2.0, 3.0, 0.5])).unwrap();
        assert_eq!(p.fraud_score, 0.5);
        assert!(p.revenue_pred >= 0.0);
    }

    #[test]
    fn large_logit_saturates() {
        let mut m = zero_snapshot(2, 2);
        m.fraud_bias = 50.0;
        let p = m.predict(&FeatureVector(vec![0.0, 0.0])).unwrap();
        assert!((1.0 - p.fraud_score).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = zero_snapshot(3, 2);
        assert!(matches!(
            m.predict(&FeatureVector(vec![0.0; 4])),
            Err(ModelError::DimensionMismatch {
                expected: 3,
                got: 4
            })
        ));
    }

    #[test]
    fn single_class_data_falls_back_to_prior() {
        let xs = vec![FeatureVector(vec![1.0, 2.0]); 5];
        let ys = vec![InspectionLabel::LICIT; 5];
        let m = train(&xs, &ys, &TrainConfig::default()).unwrap();
        assert!(m.meta.fallback);
        let p = m.predict(&xs[0]).unwrap();
        assert!((p.fraud_score - 0.01).abs() < 1e-12);
        assert!(p.revenue_pred < 1e-9);

        let ys = vec![
            InspectionLabel {
                illicit: true,
                revenue: 10.0
            };
            5
        ];
        let m = train(&xs, &ys, &TrainConfig::default()).unwrap();
        let p = m.predict(&xs[0]).unwrap();
        assert!((p.fraud_score - 0.99).abs() < 1e-12);
        assert!((p.revenue_pred - 10.0).abs() < 1e-9);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(
            train(&[], &[], &TrainConfig::default()),
            Err(ModelError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let xs = vec![FeatureVector(vec![1.0])];
        let ys = vec![InspectionLabel::LICIT];
        for cfg in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { hidden: 1, ..Default::default() },
        ] {
            assert!(matches!(train(&xs, &ys, &cfg), Err(ModelError::InvalidConfig(_))));
        }
    }

    fn flat_target(rng: &mut crate::seed::SimRng) -> Target {
        let class = if rng.random::<bool>() { 1.0 } else { 0.0 };
        let log_revenue = if class == 1.0 { rng.random_range(0.0..5.0) } else { 0.0 };
        Target { class, log_revenue }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = rng_from_seed(11);
        for case in 0..40 {
            let layout = Layout { d: 4, h: 3 };
            let params: Vec<f64> = (0..layout.len())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let xs: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let rows: Vec<(&[f64], Target)> = xs
                .iter()
                .map(|x| (x.as_slice(), flat_target(&mut rng)))
                .collect();
            let lambda = 0.7;
            let mut grad = vec![0.0; layout.len()];
            loss_and_grad(&params, layout, &rows, lambda, Some(&mut grad));
            let h = 1e-6;
            for i in 0..params.len() {
                let mut p = params.clone();
                p[i] += h;
                let up = loss_and_grad(&p, layout, &rows, lambda, None);
                p[i] -= 2.0 * h;
                let down = loss_and_grad(&p, layout, &rows, lambda, None);
                let numeric = (up - down) / (2.0 * h);
                let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
                let rel = (grad[i] - numeric).abs() / denom;
                // Central differences at h = 1e-6 carry ~1e-10 absolute noise.
                assert!(rel < 1e-4 || (grad[i] - numeric).abs() < 1e-9, "case {case} param {i}: analytic {} numeric {numeric}", grad[i]);
            }
        }
    }

    #[test]
    fn flat_parameters_round_trip() {
        let m = random_snapshot(5, 3, 9);
        let back = ModelSnapshot::from_flat(m.layout(), &m.to_flat(), m.meta.clone());
        assert_eq!(back, m);
    }

    #[test]
    fn snapshot_json_round_trip() {
        let m = random_snapshot(5, 3, 4);
        let mut buf = Vec::new();
        m.save_json(&mut buf).unwrap();
        let back = ModelSnapshot::load_json(buf.as_slice()).unwrap();
        assert_eq!(m, back);

        let mut bad = m.clone();
        bad.version = 99;
        let mut buf = Vec::new();
        bad.save_json(&mut buf).unwrap();
        assert!(matches!(
            ModelSnapshot::load_json(buf.as_slice()),
            Err(ModelError::UnsupportedSnapshot { .. })
        ));
    }

    #[test]
    fn rev_at_n_examples() {
        // Perfect ranking of a single fraud.
        let mut scores = vec![0.1; 10];
        let mut revs = vec![0.0; 10];
        scores[4] = 0.9;
        revs[4] = 100.0;
        assert_eq!(revenue_capture_at(&scores, &revs, 0.1), (1.0, false));
        // The fraud ranked last.
        scores[4] = 0.0;
        assert_eq!(revenue_capture_at(&scores, &revs, 0.1), (0.0, false));
        // 20 items, frauds 10 and 30; top two holds the 30 and a licit item.
        let mut scores = vec![0.0; 20];
        let mut revs = vec![0.0; 20];
        revs[3] = 10.0;
        revs[7] = 30.0;
        scores[7] = 0.9;
        scores[12] = 0.8;
        scores[3] = 0.1;
        assert_eq!(revenue_capture_at(&scores, &revs, 0.1), (0.75, false));
        assert_eq!(revenue_capture_at(&scores, &[0.0; 20], 0.1), (0.0, true));
    }

    #[test]
    fn validation_revenue_contract() {
        let m = zero_snapshot(2, 2);
        assert!(matches!(
            validation_revenue(&m, &[], 0.1),
            Err(ModelError::EmptyValidation)
        ));
        let val = vec![(FeatureVector(vec![0.0, 0.0]), InspectionLabel::LICIT)];
        assert!(matches!(
            validation_revenue(&m, &val, 0.0),
            Err(ModelError::InvalidFraction(_))
        ));
        let r = validation_revenue(&m, &val, 1.0).unwrap();
        assert!(r.zero_total);
        assert_eq!(r.value, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn predictions_are_well_formed(seed in any::<u64>(), x in proptest::collection::vec(-10.0f64..10.0, 6)) {
            let m = random_snapshot(6, 4, seed);
            let p = m.predict(&FeatureVector(x)).unwrap();
            prop_assert!((0.0..=1.0).contains(&p.fraud_score));
            prop_assert!(p.revenue_pred >= 0.0);
            prop_assert!(p.embedding.iter().all(|z| z.is_finite() && *z >= 0.0));
            prop_assert!((p.fraud_score - sigmoid(m.fraud_logit(&p.embedding))).abs() < 1e-12);
        }
    }
}
