use proptest::prelude::*;

use spw::dataset::{
    label_preference, load_preferences, load_trajectories, save_preferences, save_trajectories, Label, Segment,
    Source, Trajectory, Transition,
};
use spw::reward_model::{ce_loss, grad_ce, Activation, LabeledPair, OutputSquash, RewardModel};
use spw::search::{DistanceProfile, NearestNeighborIndex};
use spw::weighting::{extract_weights, Temperature, WeightedSegment};

fn temperature() -> impl Strategy<Value = Temperature> {
    prop_oneof![
        4 => (-3.0f64..3.0).prop_map(|e| Temperature::Finite(10f64.powf(e))),
        1 => Just(Temperature::Infinite),
    ]
}

/// Distances on a 2⁻¹⁰ grid, so adding a grid-aligned shift is exact.
fn dyadic(max: f64) -> impl Strategy<Value = f64> {
    (0..=(max * 1024.0) as u64).prop_map(|k| k as f64 / 1024.0)
}

fn segment(h: usize, dim: usize) -> impl Strategy<Value = Segment> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim), h).prop_map(move |rows| {
        let gt = rows.iter().map(|r| r[0]).collect();
        Segment {
            transitions: rows
                .into_iter()
                .map(|r| Transition::new(r[..dim / 2].to_vec(), r[dim / 2..].to_vec()))
                .collect(),
            gt_rewards: Some(gt),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weights_form_an_ordered_simplex(
        d in prop::collection::vec(dyadic(1e6), 1..200),
        shift in dyadic(1e6),
        tau in temperature(),
    ) {
        let w = extract_weights(&DistanceProfile(d.clone()), tau).unwrap();
        prop_assert_eq!(w.len(), d.len());
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let shifted: Vec<f64> = d.iter().map(|x| x + shift).collect();
        let ws = extract_weights(&DistanceProfile(shifted), tau).unwrap();
        for (a, b) in w.iter().zip(&ws) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for i in 0..d.len() {
            for j in 0..d.len() {
                if d[i] < d[j] {
                    prop_assert!(w[i] >= w[j]);
                    if w[j] >= f64::MIN_POSITIVE && tau != Temperature::Infinite {
                        prop_assert!(w[i] > w[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn kd_tree_matches_linear_scan(
        points in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..300),
        queries in prop::collection::vec(prop::collection::vec(-12.0f64..12.0, 3), 1..20),
    ) {
        let index = NearestNeighborIndex::from_points(3, points.clone()).unwrap();
        for q in &queries {
            let brute = points
                .iter()
                .map(|p| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            prop_assert_eq!(index.nearest_distance_raw(q).unwrap(), brute);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences(
        seed in 0u64..1000,
        seg0 in segment(3, 4),
        seg1 in segment(3, 4),
        raw in prop::collection::vec(0.01f64..1.0, 3),
        label in prop_oneof![Just(Label::First), Just(Label::Tie), Just(Label::Second)],
        coord in 0usize..49,
    ) {
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let pair = LabeledPair {
            seg0: WeightedSegment { weights: weights.clone(), ..WeightedSegment::uniform(seg0) },
            seg1: WeightedSegment::uniform(seg1),
            label,
        };
        let batch = [pair];
        let model = RewardModel::init(2, 2, &[8], Activation::Tanh, OutputSquash::Tanh, seed).unwrap();
        let g = grad_ce(&model, &batch).unwrap()[coord];
        let h = 1e-5;
        let at = |delta: f64| {
            let mut m = model.clone();
            m.params_mut()[coord] += delta;
            ce_loss(&m, &batch).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        prop_assert!((g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()).max(1e-6), "{} vs {}", g, fd);
    }

    #[test]
    fn labels_follow_ground_truth(a in segment(5, 2), b in segment(5, 2), eps in 0.0f64..0.5) {
        let ga: f64 = a.gt_rewards.as_ref().unwrap().iter().sum();
        let gb: f64 = b.gt_rewards.as_ref().unwrap().iter().sum();
        let p = label_preference(a, b, eps).unwrap();
        let expected = if (ga - gb).abs() <= eps {
            Label::Tie
        } else if ga > gb {
            Label::First
        } else {
            Label::Second
        };
        prop_assert_eq!(p.label, expected);
    }

    #[test]
    fn files_round_trip_exactly(segs in prop::collection::vec(segment(4, 2), 2..8)) {
        let dir = tempfile::tempdir().unwrap();
        let trajs: Vec<Trajectory> = segs
            .iter()
            .map(|s| Trajectory {
                transitions: s.transitions.clone(),
                gt_rewards: s.gt_rewards.clone(),
                source: Source::Behavior,
            })
            .collect();
        let tp = dir.path().join("t.jsonl");
        save_trajectories(&tp, &trajs, Some("first\nsecond")).unwrap();
        prop_assert_eq!(load_trajectories(&tp).unwrap(), trajs);

        let pairs: Vec<_> = segs
            .windows(2)
            .map(|w| label_preference(w[0].clone(), w[1].clone(), 0.0).unwrap())
            .collect();
        let pp = dir.path().join("p.jsonl");
        save_preferences(&pp, &pairs, None).unwrap();
        prop_assert_eq!(load_preferences(&pp).unwrap(), pairs);
    }
}
