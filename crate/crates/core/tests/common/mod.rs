#![allow(dead_code)]

use customs_select::features::{FeaturePipeline, FeatureVector};
use customs_select::ingest::{slice_weeks, LabeledDeclaration, LeakageAudit, WeeklyBatch};
use customs_select::synthgen::GeneratorConfig;

pub fn small_generator(num_weeks: usize, per_week: usize, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        num_items: num_weeks * per_week,
        num_weeks,
        num_importers: 3_000,
        num_declarants: 300,
        num_tariff_codes: 400,
        seed,
        ..GeneratorConfig::default()
    }
}

pub fn weeks_of(items: Vec<LabeledDeclaration>, cfg: &GeneratorConfig) -> Vec<WeeklyBatch> {
    slice_weeks(items, cfg.start_date, cfg.num_weeks).expect("valid slicing")
}

pub fn revealed(batches: &[WeeklyBatch]) -> Vec<LabeledDeclaration> {
    batches
        .iter()
        .flat_map(|b| b.items.iter().cloned())
        .map(|mut it| {
            it.reveal();
            it
        })
        .collect()
}

/// Area under the ROC curve by the rank-sum formula, ties sharing ranks.
pub fn auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Plain logistic regression fitted by full-batch gradient descent.
pub struct Probe {
    w: Vec<f64>,
    b: f64,
}

impl Probe {
    pub fn fit(x: &[FeatureVector], y: &[bool], iters: usize, lr: f64) -> Self {
        let d = x[0].dim();
        let n = x.len() as f64;
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..iters {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (xi, &yi) in x.iter().zip(y) {
                let z: f64 = xi.as_slice().iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
                let err = 1.0 / (1.0 + (-z).exp()) - f64::from(u8::from(yi));
                for (g, v) in gw.iter_mut().zip(xi.as_slice()) {
                    *g += err * v;
                }
                gb += err;
            }
            for (wi, g) in w.iter_mut().zip(gw) {
                *wi -= lr * g / n;
            }
            b -= lr * gb / n;
        }
        Self { w, b }
    }

    pub fn score(&self, x: &FeatureVector) -> f64 {
        x.as_slice().iter().zip(&self.w).map(|(a, c)| a * c).sum::<f64>() + self.b
    }
}

/// Fits features and a probe on `train`, returning both.
pub fn fit_probe(train: &[LabeledDeclaration]) -> (FeaturePipeline, Probe) {
    let audit = LeakageAudit::new();
    let records: Vec<_> = train.iter().map(|it| it.training_record(&audit)).collect();
    let pipeline = FeaturePipeline::fit(&records, 0.9);
    let x: Vec<FeatureVector> = records.iter().map(|r| pipeline.encode(r.declaration)).collect();
    let y: Vec<bool> = records.iter().map(|r| r.label.illicit).collect();
    let probe = Probe::fit(&x, &y, 400, 0.5);
    (pipeline, probe)
}

pub fn probe_auc(pipeline: &FeaturePipeline, probe: &Probe, items: &[LabeledDeclaration]) -> f64 {
    let scores: Vec<f64> = items
        .iter()
        .map(|it| probe.score(&pipeline.encode(&it.declaration)))
        .collect();
    let labels: Vec<bool> = items.iter().map(|it| it.oracle_label().illicit).collect();
    auc(&scores, &labels)
}

pub mod oracles {
    use customs_select::model::{ModelSnapshot, TrainConfig};
    use customs_select::seed::SimRng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub fn random_snapshot(d: usize, h: usize, rng: &mut SimRng) -> ModelSnapshot {
        let mut m = ModelSnapshot::constant(d, &TrainConfig { hidden: h, ..TrainConfig::default() }, 0.5, 0.0, 0);
        let mut n = || rng.sample::<f64, _>(StandardNormal);
        m.encoder_weights.iter_mut().for_each(|v| *v = n());
        m.encoder_bias.iter_mut().for_each(|v| *v = 0.5 * n());
        m.fraud_weights.iter_mut().for_each(|v| *v = n());
        m.fraud_bias = n();
        m.revenue_weights.iter_mut().for_each(|v| *v = n());
        m.revenue_bias = n();
        m
    }

    /// Cross-entropy of a two-class softmax layer with rows `a0`, `a1`
    /// (biases `c0`, `c1`) against class `target`.
    fn softmax_ce(z: &[f64], a: [&[f64]; 2], c: [f64; 2], target: usize) -> f64 {
        let u: Vec<f64> = (0..2)
            .map(|k| a[k].iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + c[k])
            .collect();
        // log(1 + e^(u_other − u_target)), kept accurate for confident items.
        let d = u[1 - target] - u[target];
        if d > 0.0 {
            d + (-d).exp().ln_1p()
        } else {
            d.exp().ln_1p()
        }
    }

    /// Central-difference gradient of the pseudo-label loss with respect to
    /// both class rows of the softmax layer equivalent to a sigmoid head
    /// `(w, b)`: rows `∓w/2`, biases `∓b/2`.
    pub fn finite_difference_embedding(z: &[f64], w: &[f64], b: f64, h: f64) -> Vec<f64> {
        let a1: Vec<f64> = w.iter().map(|v| v / 2.0).collect();
        let a0: Vec<f64> = w.iter().map(|v| -v / 2.0).collect();
        let c = [-b / 2.0, b / 2.0];
        let logit: f64 = w.iter().zip(z).map(|(x, y)| x * y).sum::<f64>() + b;
        let p1 = 1.0 / (1.0 + (-logit).exp());
        let target = usize::from(p1 >= 0.5);
        let mut out = Vec::with_capacity(2 * z.len());
        for class in 0..2 {
            for j in 0..z.len() {
                let mut rows = [a0.clone(), a1.clone()];
                rows[class][j] += h;
                let up = softmax_ce(z, [&rows[0], &rows[1]], c, target);
                rows[class][j] -= 2.0 * h;
                let down = softmax_ce(z, [&rows[0], &rows[1]], c, target);
                out.push((up - down) / (2.0 * h));
            }
        }
        out
    }

    pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale == 0.0 { diff } else { diff / scale }
    }
}
