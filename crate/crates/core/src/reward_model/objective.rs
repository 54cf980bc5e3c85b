use crate::dataset::Label;
use crate::error::{Result, SpwError};
use crate::weighting::WeightedSegment;

use super::{ForwardCache, RewardModel};

/// Two weighted segments and the preference between them.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub seg0: WeightedSegment,
    pub seg1: WeightedSegment,
    pub label: Label,
}

impl LabeledPair {
    pub fn swapped(&self) -> Self {
        LabeledPair {
            seg0: self.seg1.clone(),
            seg1: self.seg0.clone(),
            label: self.label.flipped(),
        }
    }
}

/// `1 / (1 + e^{-x})`. Negative inputs go through `1 - σ(-x)` so that
/// `logistic(x) + logistic(-x) == 1` holds exactly.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        1.0 - 1.0 / (1.0 + x.exp())
    }
}

/// `ln σ(x)` without overflow or cancellation.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_segment(model: &RewardModel, ws: &WeightedSegment) -> Result<()> {
    if ws.weights.len() != ws.segment.len() {
        return Err(SpwError::LengthMismatch {
            what: "weights",
            expected: ws.segment.len(),
            actual: ws.weights.len(),
        });
    }
    if let Some(t) = ws.segment.transitions.iter().find(|t| t.dim() != model.input_dim()) {
        return Err(SpwError::DimensionMismatch {
            expected: model.input_dim(),
            actual: t.dim(),
            line: None,
        });
    }
    Ok(())
}

/// `Σ_t w_t r̂(s_t, a_t)`.
pub fn weighted_return(model: &RewardModel, ws: &WeightedSegment) -> Result<f64> {
    check_segment(model, ws)?;
    Ok(weighted_return_unchecked(model, ws))
}

fn weighted_return_unchecked(model: &RewardModel, ws: &WeightedSegment) -> f64 {
    ws.segment
        .transitions
        .iter()
        .zip(&ws.weights)
        .map(|(t, w)| w * model.forward(t).output)
        .sum()
}

/// `P[σ⁰ ≻ σ¹] = logistic(R₀ − R₁)`.
pub fn preference_probability(
    model: &RewardModel,
    ws0: &WeightedSegment,
    ws1: &WeightedSegment,
) -> Result<f64> {
    Ok(logistic(weighted_return(model, ws0)? - weighted_return(model, ws1)?))
}

/// Cross-entropy of one pair given its margin `R₀ − R₁`.
pub fn pair_loss(margin: f64, label: Label) -> f64 {
    let l = label.value();
    -((1.0 - l) * log_sigmoid(margin) + l * log_sigmoid(-margin))
}

/// Mean cross-entropy over the batch.
pub fn ce_loss(model: &RewardModel, batch: &[LabeledPair]) -> Result<f64> {
    if batch.is_empty() {
        return Err(SpwError::EmptyInput("preference batch"));
    }
    let mut total = 0.0;
    for p in batch {
        let margin = weighted_return(model, &p.seg0)? - weighted_return(model, &p.seg1)?;
        total += pair_loss(margin, p.label);
    }
    Ok(total / batch.len() as f64)
}

/// Exact gradient of [`ce_loss`] with respect to the flat parameter vector.
pub fn grad_ce(model: &RewardModel, batch: &[LabeledPair]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(SpwError::EmptyInput("preference batch"));
    }
    for p in batch {
        check_segment(model, &p.seg0)?;
        check_segment(model, &p.seg1)?;
    }
    let scale = 1.0 / batch.len() as f64;
    let grads = crate::exec::map(batch, |p| {
        let mut g = vec![0.0; model.params().len()];
        pair_gradient(model, p, None, scale, &mut g);
        g
    });
    Ok(sum_in_order(grads, model.params().len()))
}

pub(crate) fn sum_in_order(grads: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for g in grads {
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    total
}

struct SegmentPass {
    caches: Vec<ForwardCache>,
    weighted: f64,
}

fn segment_pass(model: &RewardModel, ws: &WeightedSegment) -> SegmentPass {
    let caches: Vec<ForwardCache> = ws.segment.transitions.iter().map(|t| model.forward(t)).collect();
    let weighted = caches
        .iter()
        .zip(&ws.weights)
        .map(|(c, w)| w * c.output)
        .sum();
    SegmentPass { caches, weighted }
}

/// Redistribution term for one segment: `Σ_t (r̂_t − w_t R)² / H` with
/// `R = Σ_t r̂_t` held constant. Returns the loss and `∂loss/∂r̂_t`.
pub(crate) fn redistribution(rewards: &[f64], weights: &[f64]) -> (f64, Vec<f64>) {
    let h = rewards.len() as f64;
    let total: f64 = rewards.iter().sum();
    let mut loss = 0.0;
    let grads = rewards
        .iter()
        .zip(weights)
        .map(|(r, w)| {
            let e = r - w * total;
            loss += e * e;
            2.0 * e / h
        })
        .collect();
    (loss / h, grads)
}

/// Optional redistribution term: `λ` and the per-segment target weights.
pub(crate) struct RdTerm<'a> {
    pub lambda: f64,
    pub weights0: &'a [f64],
    pub weights1: &'a [f64],
}

/// Adds `scale · ∂(pair objective)/∂ψ` into `grad` and returns the pair
/// objective (cross-entropy plus `λ · mean(rd₀, rd₁)` when `rd` is given)
/// together with the margin `R₀ − R₁`.
pub(crate) fn pair_gradient(
    model: &RewardModel,
    pair: &LabeledPair,
    rd: Option<&RdTerm<'_>>,
    scale: f64,
    grad: &mut [f64],
) -> (f64, f64) {
    let a = segment_pass(model, &pair.seg0);
    let b = segment_pass(model, &pair.seg1);
    let margin = a.weighted - b.weighted;
    let mut loss = pair_loss(margin, pair.label);
    // ∂CE/∂margin = σ(margin) − (1 − l)
    let d_margin = logistic(margin) - (1.0 - pair.label.value());
    let mut d0: Vec<f64> = pair.seg0.weights.iter().map(|w| d_margin * w).collect();
    let mut d1: Vec<f64> = pair.seg1.weights.iter().map(|w| -d_margin * w).collect();
    if let Some(rd) = rd {
        for (pass, weights, d) in [(&a, rd.weights0, &mut d0), (&b, rd.weights1, &mut d1)] {
            let rewards: Vec<f64> = pass.caches.iter().map(|c| c.output).collect();
            let (l, g) = redistribution(&rewards, weights);
            loss += 0.5 * rd.lambda * l;
            for (dv, gv) in d.iter_mut().zip(g) {
                *dv += 0.5 * rd.lambda * gv;
            }
        }
    }
    for (pass, d) in [(&a, &d0), (&b, &d1)] {
        for (cache, dv) in pass.caches.iter().zip(d.iter()) {
            if *dv != 0.0 {
                model.backward(cache, scale * dv, grad);
            }
        }
    }
    (loss, margin)
}

/// Objective of one pair without gradients.
pub(crate) fn pair_objective(model: &RewardModel, pair: &LabeledPair, rd: Option<&RdTerm<'_>>) -> (f64, f64) {
    let r0: Vec<f64> = pair.seg0.segment.transitions.iter().map(|t| model.forward(t).output).collect();
    let r1: Vec<f64> = pair.seg1.segment.transitions.iter().map(|t| model.forward(t).output).collect();
    let dot = |r: &[f64], w: &[f64]| r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let margin = dot(&r0, &pair.seg0.weights) - dot(&r1, &pair.seg1.weights);
    let mut loss = pair_loss(margin, pair.label);
    if let Some(rd) = rd {
        loss += 0.5 * rd.lambda * (redistribution(&r0, rd.weights0).0 + redistribution(&r1, rd.weights1).0);
    }
    (loss, margin)
}
