//! Gradient embeddings and the uncertainty/revenue rescaling used by bATE.

use crate::model::{sigmoid, Prediction};

/// ε inside `ln(ŷrev + ε)`. With ε = 1 the revenue scale is never negative.
pub const REVENUE_EPSILON: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEmbedding(pub Vec<f64>);

impl GradientEmbedding {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.0.iter_mut().for_each(|v| *v *= s);
        self
    }
}

/// Pseudo label `1(ŷ ≥ 0.5)`.
pub fn pseudo_label(fraud_score: f64) -> usize {
    usize::from(fraud_score >= 0.5)
}

/// Gradient of the pseudo-label cross-entropy with respect to the two class
/// rows of the final layer: `[g⁰, g¹]` with `gᶜ = (pᶜ − 1(ĉ = c))·z`.
///
/// Both blocks have magnitude `p` of the class not predicted, taken from the
/// logit so it does not round to zero for confident items.
pub fn gradient_embedding(p: &Prediction) -> GradientEmbedding {
    let c_hat = pseudo_label(p.fraud_score);
    let other = if c_hat == 1 {
        sigmoid(-p.fraud_logit)
    } else {
        sigmoid(p.fraud_logit)
    };
    let coefs = if c_hat == 1 { [other, -other] } else { [-other, other] };
    let mut out = Vec::with_capacity(2 * p.embedding.len());
    for coef in coefs {
        out.extend(p.embedding.iter().map(|z| coef * z));
    }
    GradientEmbedding(out)
}

/// `−1.8·|ŷ − 0.5| + 1`, which spans [0.1, 1] over ŷ ∈ [0, 1].
pub fn uncertainty_scale(fraud_score: f64) -> f64 {
    -1.8 * (fraud_score - 0.5).abs() + 1.0
}

/// `S = unc · ln(ŷrev + ε)`.
pub fn scale_factor(uncertainty: f64, revenue_pred: f64) -> f64 {
    uncertainty * (revenue_pred + REVENUE_EPSILON).ln()
}

pub fn scaled_embedding(p: &Prediction) -> GradientEmbedding {
    let s = scale_factor(uncertainty_scale(p.fraud_score), p.revenue_pred);
    gradient_embedding(p).scaled(s)
}
