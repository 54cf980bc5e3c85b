//! Reward-quality metrics: histogram divergence, per-segment credit
//! profiles, ranking accuracy and correlations with ground truth.

use serde::{Deserialize, Serialize};

use crate::dataset::{PreferencePair, Segment};
use crate::error::{Result, SpwError};
use crate::reward_model::objective::weighted_return;
use crate::reward_model::train::ranking_credit;
use crate::reward_model::{prepare_pairs, LabeledPair, RewardModel, WeightMode};
use crate::search::NearestNeighborIndex;
use crate::weighting::Temperature;

pub const DEFAULT_BINS: usize = 20;
pub const KL_SMOOTHING: f64 = 1e-6;

/// Probability mass of min-max normalized values over `B` equal bins of
/// `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardHistogram {
    pub bin_edges: Vec<f64>,
    pub probabilities: Vec<f64>,
}

pub fn reward_histogram(rewards: &[f64], bins: usize) -> Result<RewardHistogram> {
    if rewards.is_empty() {
        return Err(SpwError::EmptyInput("rewards"));
    }
    if bins == 0 {
        return Err(SpwError::Config("histogram needs at least one bin".into()));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(SpwError::Config(format!("non-finite reward {bad}")));
    }
    let normalized = min_max(rewards, 0.0);
    let mut counts = vec![0usize; bins];
    for x in normalized {
        let b = ((x * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = rewards.len() as f64;
    Ok(RewardHistogram {
        bin_edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        probabilities: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// `(x − min) / (max − min)`, or `constant` everywhere for a flat input.
fn min_max(xs: &[f64], constant: f64) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![constant; xs.len()]
    }
}

/// `KL(p ‖ q)` after adding [`KL_SMOOTHING`] to every bin of both
/// histograms and renormalizing.
pub fn kl_divergence(p: &RewardHistogram, q: &RewardHistogram) -> Result<f64> {
    if p.bin_edges != q.bin_edges || p.probabilities.len() != q.probabilities.len() {
        return Err(SpwError::MismatchedBins);
    }
    let smooth = |h: &RewardHistogram| -> Vec<f64> {
        let total: f64 = h.probabilities.iter().map(|x| x + KL_SMOOTHING).sum();
        h.probabilities.iter().map(|x| (x + KL_SMOOTHING) / total).collect()
    };
    let (ps, qs) = (smooth(p), smooth(q));
    Ok(ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum())
}

/// Per-step rewards of one segment scaled to `[0, 1]`; flat profiles map to
/// 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditProfile(pub Vec<f64>);

impl CreditProfile {
    pub fn from_rewards(rewards: &[f64]) -> Self {
        CreditProfile(min_max(rewards, 0.5))
    }
}

pub fn credit_profile(model: &RewardModel, segment: &Segment) -> Result<CreditProfile> {
    Ok(CreditProfile::from_rewards(&model.predict_batch(&segment.transitions)?))
}

/// Fraction of non-tied pairs whose weighted returns rank the segments as
/// labelled; a zero margin counts half.
pub fn preference_accuracy(
    model: &RewardModel,
    heldout: &[PreferencePair],
    index: Option<&NearestNeighborIndex>,
    tau: Temperature,
    weight_mode: WeightMode,
) -> Result<f64> {
    let prepared = prepare_pairs(heldout, index, tau, weight_mode, false)?;
    let mut credit = 0.0;
    let mut counted = 0usize;
    for p in &prepared {
        let margin = bt_margin(model, &p.pair)?;
        if let Some(c) = ranking_credit(margin, p.pair.label) {
            credit += c;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(SpwError::EmptyInput("held-out pairs without ties"));
    }
    Ok(credit / counted as f64)
}

/// `Δ = R₀ − R₁` under the pair's weights.
pub fn bt_margin(model: &RewardModel, pair: &LabeledPair) -> Result<f64> {
    Ok(weighted_return(model, &pair.seg0)? - weighted_return(model, &pair.seg1)?)
}

/// Pearson's r and Spearman's ρ (average ranks for ties).
pub fn pearson_spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(SpwError::LengthMismatch {
            what: "ground-truth rewards",
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(SpwError::EmptyInput("correlation needs at least two points"));
    }
    let r = pearson(x, y)?;
    let rho = pearson(&ranks(x), &ranks(y))?;
    Ok((r, rho))
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(SpwError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
