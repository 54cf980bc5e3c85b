use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ExpertTransitionSet, Label, PreferencePair, Segment};
use crate::error::{Result, SpwError};
use crate::exec;
use crate::rng::seeded;
use crate::search::{build_index, Metric, NearestNeighborIndex};
use crate::weighting::{uniform_weights, weight_segment, Temperature, WeightedSegment};

use super::objective::{pair_gradient, pair_objective, sum_in_order, LabeledPair, RdTerm};
use super::{InputNorm, RewardModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Softmax weights from nearest-expert distances.
    Spw,
    /// `1/H` on every step.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub weight_mode: WeightMode,
    /// Multiply every weight vector by `H`, turning the uniform path into the
    /// raw per-step sum.
    pub legacy_sum_scale: bool,
    /// Weight of the redistribution term for pairs that carry targets.
    pub rd_lambda: f64,
    /// Fit a z-score input normalization on the training transitions.
    pub fit_input_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            optimizer: Optimizer::default(),
            weight_mode: WeightMode::Spw,
            legacy_sum_scale: false,
            rd_lambda: 1.0,
            fit_input_norm: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SpwError::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(SpwError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// A labelled pair with precomputed weights and, for the redistribution
/// variant, the redistribution targets' weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub pair: LabeledPair,
    pub rd_weights: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Fraction of non-tied pairs ranked correctly; `None` if all are ties.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub weight_mode: WeightMode,
    pub temperature: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rd_lambda: Option<f64>,
    pub pairs: usize,
    /// Entry 0 evaluates the untrained model; entry `e` averages each pair's
    /// objective as seen by its minibatch during epoch `e`, before that
    /// batch's update.
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn initial_loss(&self) -> f64 {
        self.epochs[0].loss
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().unwrap().loss
    }
}

fn scaled(mut w: Vec<f64>, legacy: bool) -> Vec<f64> {
    if legacy {
        let h = w.len() as f64;
        w.iter_mut().for_each(|x| *x *= h);
    }
    w
}

fn weigh(
    index: Option<&NearestNeighborIndex>,
    seg: &Segment,
    tau: Temperature,
    mode: WeightMode,
    legacy: bool,
) -> Result<WeightedSegment> {
    let ws = match (mode, index) {
        (WeightMode::Uniform, _) | (WeightMode::Spw, None) => WeightedSegment::uniform(seg.clone()),
        (WeightMode::Spw, Some(idx)) => weight_segment(idx, seg.clone(), tau)?,
    };
    Ok(WeightedSegment {
        weights: scaled(ws.weights, legacy),
        ..ws
    })
}

/// Precomputes weighted segments for every pair. `index` is required for
/// [`WeightMode::Spw`] with a finite temperature.
pub fn prepare_pairs(
    pairs: &[PreferencePair],
    index: Option<&NearestNeighborIndex>,
    tau: Temperature,
    mode: WeightMode,
    legacy_sum_scale: bool,
) -> Result<Vec<PreparedPair>> {
    if mode == WeightMode::Spw && index.is_none() && tau != Temperature::Infinite {
        return Err(SpwError::Config("weighted mode needs a nearest-neighbour index".into()));
    }
    exec::try_map(pairs, |p| {
        Ok(PreparedPair {
            pair: LabeledPair {
                seg0: weigh(index, &p.seg0, tau, mode, legacy_sum_scale)?,
                seg1: weigh(index, &p.seg1, tau, mode, legacy_sum_scale)?,
                label: p.label,
            },
            rd_weights: None,
        })
    })
}

/// Trains on raw preference pairs, weighting each segment by its distance to
/// the expert transitions (or uniformly).
pub fn train_reward(
    model: RewardModel,
    pairs: &[PreferencePair],
    expert: &ExpertTransitionSet,
    tau: Temperature,
    config: &TrainConfig,
) -> Result<(RewardModel, TrainingLog)> {
    if pairs.is_empty() {
        return Err(SpwError::EmptyInput("preference pairs"));
    }
    let index = match (config.weight_mode, tau) {
        (WeightMode::Spw, Temperature::Finite(_)) => Some(build_index(expert, Metric::Euclidean)?),
        _ => None,
    };
    let prepared = prepare_pairs(
        pairs,
        index.as_ref(),
        tau,
        config.weight_mode,
        config.legacy_sum_scale,
    )?;
    train_prepared(model, &prepared, config)
}

/// Minibatch optimisation over prepared pairs. Deterministic given
/// `config.seed`.
pub fn train_prepared(
    mut model: RewardModel,
    prepared: &[PreparedPair],
    config: &TrainConfig,
) -> Result<(RewardModel, TrainingLog)> {
    config.validate()?;
    if prepared.is_empty() {
        return Err(SpwError::EmptyInput("preference pairs"));
    }
    for p in prepared {
        for ws in [&p.pair.seg0, &p.pair.seg1] {
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
        }
    }
    if config.fit_input_norm {
        let dim = model.input_dim();
        let all = prepared.iter().flat_map(|p| {
            p.pair
                .seg0
                .segment
                .transitions
                .iter()
                .chain(&p.pair.seg1.segment.transitions)
        });
        model.set_input_norm(Some(InputNorm::fit(all, dim)));
    }

    let uses_rd = prepared.iter().any(|p| p.rd_weights.is_some());
    let first = &prepared[0].pair.seg0;
    let mut log = TrainingLog {
        weight_mode: if first.temperature == Temperature::Infinite {
            WeightMode::Uniform
        } else {
            WeightMode::Spw
        },
        temperature: first.temperature.to_string(),
        rd_lambda: uses_rd.then_some(config.rd_lambda),
        pairs: prepared.len(),
        epochs: Vec::with_capacity(config.epochs + 1),
    };
    log.epochs.push(evaluate(&model, prepared, config.rd_lambda));

    let n_params = model.params().len();
    let mut opt = OptimizerState::new(config.optimizer, n_params);
    let mut rng = seeded(config.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut tally = Tally::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / chunk.len() as f64;
            let current = &model;
            let parts = exec::map(chunk, |&i| {
                let p = &prepared[i];
                let rd = rd_term(p, config.rd_lambda);
                let mut g = vec![0.0; n_params];
                let (loss, margin) = pair_gradient(current, &p.pair, rd.as_ref(), scale, &mut g);
                (loss, margin, p.pair.label, g)
            });
            let mut batch_loss = 0.0;
            let mut grads = Vec::with_capacity(parts.len());
            for (l, margin, label, g) in parts {
                batch_loss += l;
                tally.add(l, margin, label);
                grads.push(g);
            }
            let batch_loss = batch_loss * scale;
            if !batch_loss.is_finite() {
                return Err(SpwError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            let grad = sum_in_order(grads, n_params);
            opt.step(model.params_mut(), &grad, config.learning_rate);
        }
        log.epochs.push(tally.record(epoch));
    }
    Ok((model, log))
}

fn rd_term(p: &PreparedPair, lambda: f64) -> Option<RdTerm<'_>> {
    p.rd_weights.as_ref().map(|(w0, w1)| RdTerm {
        lambda,
        weights0: w0,
        weights1: w1,
    })
}

/// Running loss and ranking credit over one pass.
#[derive(Default)]
struct Tally {
    loss: f64,
    pairs: usize,
    credit: f64,
    ranked: usize,
}

impl Tally {
    fn add(&mut self, loss: f64, margin: f64, label: Label) {
        self.loss += loss;
        self.pairs += 1;
        if let Some(c) = ranking_credit(margin, label) {
            self.credit += c;
            self.ranked += 1;
        }
    }

    fn record(&self, epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            loss: self.loss / self.pairs as f64,
            accuracy: (self.ranked > 0).then(|| self.credit / self.ranked as f64),
        }
    }
}

fn evaluate(model: &RewardModel, prepared: &[PreparedPair], lambda: f64) -> EpochRecord {
    let results = exec::map(prepared, |p| {
        let rd = rd_term(p, lambda);
        let (loss, margin) = pair_objective(model, &p.pair, rd.as_ref());
        (loss, margin, p.pair.label)
    });
    let mut tally = Tally::default();
    for (l, margin, label) in results {
        tally.add(l, margin, label);
    }
    tally.record(0)
}

/// 1 for a correct ranking, 0 for a wrong one, 0.5 for a zero margin;
/// `None` for tied labels.
pub(crate) fn ranking_credit(margin: f64, label: Label) -> Option<f64> {
    match label {
        Label::Tie => None,
        _ if margin == 0.0 => Some(0.5),
        Label::First => Some(if margin > 0.0 { 1.0 } else { 0.0 }),
        Label::Second => Some(if margin < 0.0 { 1.0 } else { 0.0 }),
    }
}

struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, n: usize) -> Self {
        let (m, v) = match kind {
            Optimizer::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
            Optimizer::Sgd => (Vec::new(), Vec::new()),
        };
        OptimizerState { kind, m, v, t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}

/// Uniform weights for a segment, honouring the legacy sum scale.
pub(crate) fn uniform_for(seg: &Segment, legacy: bool) -> Vec<f64> {
    scaled(uniform_weights(seg.len()), legacy)
}
