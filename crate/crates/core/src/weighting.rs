//! Temperature softmax over negative nearest-expert distances.

use std::fmt;
use std::str::FromStr;

use crate::dataset::Segment;
use crate::error::{Result, SpwError};
use crate::search::{DistanceProfile, NearestNeighborIndex};

pub const DEFAULT_TAU: f64 = 0.7;

/// Softmax temperature. `Infinite` yields exactly uniform weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    Finite(f64),
    Infinite,
}

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau == f64::INFINITY {
            Ok(Temperature::Infinite)
        } else if tau > 0.0 && tau.is_finite() {
            Ok(Temperature::Finite(tau))
        } else {
            Err(SpwError::InvalidTemperature(tau))
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Temperature::Finite(t) => t,
            Temperature::Infinite => f64::INFINITY,
        }
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::Finite(DEFAULT_TAU)
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Temperature::Finite(t) => write!(f, "{t}"),
            Temperature::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Temperature {
    type Err = SpwError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "Infinity" | "∞" => Ok(Temperature::Infinite),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| SpwError::Config(format!("bad temperature `{other}`")))?;
                Temperature::new(v)
            }
        }
    }
}

/// Segment together with its per-step importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSegment {
    pub segment: Segment,
    pub weights: Vec<f64>,
    pub temperature: Temperature,
}

impl WeightedSegment {
    /// Uniform `1/H` weights, i.e. the unweighted baseline.
    pub fn uniform(segment: Segment) -> Self {
        let weights = uniform_weights(segment.len());
        WeightedSegment {
            segment,
            weights,
            temperature: Temperature::Infinite,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn uniform_weights(h: usize) -> Vec<f64> {
    vec![1.0 / h as f64; h]
}

/// `w_t ∝ exp(-d_t / τ)`, shifted by the minimum distance so the largest
/// exponent is exactly zero.
pub fn extract_weights(distances: &DistanceProfile, tau: Temperature) -> Result<Vec<f64>> {
    let d = distances.as_slice();
    if d.is_empty() {
        return Err(SpwError::EmptyInput("distance profile"));
    }
    let tau = match tau {
        Temperature::Infinite => return Ok(uniform_weights(d.len())),
        Temperature::Finite(t) if t > 0.0 && t.is_finite() => t,
        Temperature::Finite(t) => return Err(SpwError::InvalidTemperature(t)),
    };
    if let Some(&bad) = d.iter().find(|v| !v.is_finite()) {
        return Err(SpwError::Config(format!("non-finite distance {bad}")));
    }
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = d.iter().map(|&x| (-(x - min) / tau).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

pub fn weight_segment(
    index: &NearestNeighborIndex,
    segment: Segment,
    tau: Temperature,
) -> Result<WeightedSegment> {
    let weights = match tau {
        // Skip the search entirely; the result would be discarded.
        Temperature::Infinite => uniform_weights(segment.len()),
        _ => extract_weights(&index.segment_distances(&segment)?, tau)?,
    };
    if segment.is_empty() {
        return Err(SpwError::EmptyInput("segment"));
    }
    Ok(WeightedSegment {
        segment,
        weights,
        temperature: tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ExpertTransitionSet, Transition};
    use crate::search::{build_index, Metric};

    fn prof(v: &[f64]) -> DistanceProfile {
        DistanceProfile(v.to_vec())
    }

    #[test]
    fn infinite_temperature_is_uniform() {
        let w = extract_weights(&prof(&[0.0, 3.0, 1e6, 2.0]), Temperature::Infinite).unwrap();
        assert_eq!(w, vec![0.25; 4]);
    }

    #[test]
    fn two_step_closed_form() {
        let w = extract_weights(&prof(&[0.0, 2f64.ln()]), Temperature::Finite(1.0)).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equal_distances_give_uniform_weights() {
        for tau in [1e-3, 0.7, 5.0, 1e3] {
            let w = extract_weights(&prof(&[4.2; 5]), Temperature::Finite(tau)).unwrap();
            assert!(w.iter().all(|&x| x == 0.2));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(extract_weights(&prof(&[1.0]), Temperature::Finite(0.0)).is_err());
        assert!(extract_weights(&prof(&[1.0]), Temperature::Finite(-1.0)).is_err());
        assert!(extract_weights(&prof(&[]), Temperature::Finite(1.0)).is_err());
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(f64::NAN).is_err());
    }

    #[test]
    fn parses_temperatures() {
        assert_eq!("inf".parse::<Temperature>().unwrap(), Temperature::Infinite);
        assert_eq!("0.7".parse::<Temperature>().unwrap(), Temperature::Finite(0.7));
        assert!("-2".parse::<Temperature>().is_err());
    }

    #[test]
    fn mass_concentrates_on_the_expert_step() {
        let expert = ExpertTransitionSet::from_transitions(vec![Transition::new(
            vec![0.0, 0.0],
            vec![0.0],
        )])
        .unwrap();
        let idx = build_index(&expert, Metric::Euclidean).unwrap();
        let seg = Segment {
            transitions: vec![
                Transition::new(vec![50.0, 0.0], vec![0.0]),
                Transition::new(vec![0.0, 0.0], vec![0.0]),
                Transition::new(vec![0.0, 60.0], vec![0.0]),
            ],
            gt_rewards: None,
        };
        let ws = weight_segment(&idx, seg.clone(), Temperature::Finite(0.7)).unwrap();
        assert!(ws.weights[1] > 1.0 - 1e-12);
        assert!((ws.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(ws.temperature, Temperature::Finite(0.7));

        let flat = Segment {
            transitions: vec![Transition::new(vec![3.0, 4.0], vec![0.0]); 4],
            gt_rewards: None,
        };
        let ws = weight_segment(&idx, flat, Temperature::Finite(0.7)).unwrap();
        assert_eq!(ws.weights, vec![0.25; 4]);
    }
}
