//! Comparison methods built on the shared reward trainer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ExpertTransitionSet, Label, PreferencePair, Segment, Transition};
use crate::error::{Result, SpwError};
use crate::exec;
use crate::reward_model::objective::redistribution;
use crate::reward_model::train::uniform_for;
use crate::reward_model::{
    prepare_pairs, train_prepared, LabeledPair, PreparedPair, RewardModel, TrainConfig, TrainingLog,
    WeightMode,
};
use crate::rng::seeded;
use crate::search::{build_index, Metric, NearestNeighborIndex};
use crate::weighting::{weight_segment, Temperature, WeightedSegment};

/// Unweighted Bradley–Terry training: every step weighs `1/H`.
pub fn mr_train(
    model: RewardModel,
    pairs: &[PreferencePair],
    config: &TrainConfig,
) -> Result<(RewardModel, TrainingLog)> {
    let config = TrainConfig {
        weight_mode: WeightMode::Uniform,
        ..config.clone()
    };
    let prepared = prepare_pairs(
        pairs,
        None,
        Temperature::Infinite,
        WeightMode::Uniform,
        config.legacy_sum_scale,
    )?;
    train_prepared(model, &prepared, &config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeaboConfig {
    pub beta: f64,
    pub amplitude: f64,
}

impl Default for SeaboConfig {
    fn default() -> Self {
        SeaboConfig {
            beta: 1.0,
            amplitude: 1.0,
        }
    }
}

impl SeaboConfig {
    pub fn new(beta: f64, amplitude: f64) -> Result<Self> {
        let cfg = SeaboConfig { beta, amplitude };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) || !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(SpwError::Config(format!(
                "distance reward needs positive beta and amplitude, got {} and {}",
                self.beta, self.amplitude
            )));
        }
        Ok(())
    }
}

/// Demonstration-only reward `amplitude · exp(−β d)`, where `d` is the
/// distance to the nearest expert transition.
pub fn seabo_reward(index: &NearestNeighborIndex, t: &Transition, cfg: SeaboConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(cfg.amplitude * (-cfg.beta * index.nearest_distance(t)?).exp())
}

/// `k` pairs, each an expert segment preferred over a behaviour segment,
/// both drawn uniformly with replacement.
pub fn drex_augment(
    expert_segments: &[Segment],
    behavior_segments: &[Segment],
    k: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    if expert_segments.is_empty() {
        return Err(SpwError::EmptyInput("expert segments"));
    }
    if behavior_segments.is_empty() {
        return Err(SpwError::EmptyInput("behavior segments"));
    }
    let mut rng = seeded(seed);
    Ok((0..k)
        .map(|_| {
            let e = &expert_segments[rng.gen_range(0..expert_segments.len())];
            let b = &behavior_segments[rng.gen_range(0..behavior_segments.len())];
            PreferencePair {
                seg0: e.clone(),
                seg1: b.clone(),
                label: Label::First,
            }
        })
        .collect())
}

/// `Σ_t (r̂_t − w_t R)² / H` with `R = Σ_t r̂_t`.
pub fn rd_loss(model: &RewardModel, ws: &WeightedSegment) -> Result<f64> {
    if ws.weights.len() != ws.segment.len() {
        return Err(SpwError::LengthMismatch {
            what: "weights",
            expected: ws.segment.len(),
            actual: ws.weights.len(),
        });
    }
    if ws.is_empty() {
        return Err(SpwError::EmptyInput("segment"));
    }
    let rewards = model.predict_batch(&ws.segment.transitions)?;
    Ok(redistribution(&rewards, &ws.weights).0)
}

/// Pairs for the redistribution variant: uniform weights in the preference
/// term, distance weights as redistribution targets.
pub fn rd_prepare(
    pairs: &[PreferencePair],
    index: Option<&NearestNeighborIndex>,
    tau: Temperature,
    legacy_sum_scale: bool,
) -> Result<Vec<PreparedPair>> {
    let targets = |seg: &Segment| -> Result<Vec<f64>> {
        match (tau, index) {
            (Temperature::Infinite, _) => Ok(uniform_for(seg, false)),
            (_, Some(idx)) => Ok(weight_segment(idx, seg.clone(), tau)?.weights),
            (_, None) => Err(SpwError::Config("redistribution targets need a nearest-neighbour index".into())),
        }
    };
    exec::try_map(pairs, |p| {
        Ok(PreparedPair {
            pair: LabeledPair {
                seg0: WeightedSegment {
                    weights: uniform_for(&p.seg0, legacy_sum_scale),
                    ..WeightedSegment::uniform(p.seg0.clone())
                },
                seg1: WeightedSegment {
                    weights: uniform_for(&p.seg1, legacy_sum_scale),
                    ..WeightedSegment::uniform(p.seg1.clone())
                },
                label: p.label,
            },
            rd_weights: Some((targets(&p.seg0)?, targets(&p.seg1)?)),
        })
    })
}

/// Trains with cross-entropy plus `rd_lambda` times the redistribution term.
pub fn rd_train(
    model: RewardModel,
    pairs: &[PreferencePair],
    expert: &ExpertTransitionSet,
    tau: Temperature,
    config: &TrainConfig,
) -> Result<(RewardModel, TrainingLog)> {
    let index = match tau {
        Temperature::Finite(_) => Some(build_index(expert, Metric::Euclidean)?),
        Temperature::Infinite => None,
    };
    let prepared = rd_prepare(pairs, index.as_ref(), tau, config.legacy_sum_scale)?;
    train_prepared(model, &prepared, config)
}
