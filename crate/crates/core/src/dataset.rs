//! Trajectories, segments and preference pairs, their JSON-lines encoding,
//! window sampling and ground-truth preference labelling.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpwError};
use crate::policy::SyntheticTask;
use crate::rng::seeded;

/// One `(state, action)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

impl Transition {
    pub fn new(state: Vec<f64>, action: Vec<f64>) -> Self {
        Transition { state, action }
    }

    /// Length of the concatenated `state ‖ action` vector.
    pub fn dim(&self) -> usize {
        self.state.len() + self.action.len()
    }

    /// Iterates `state ‖ action` without allocating.
    pub fn features(&self) -> impl Iterator<Item = f64> + '_ {
        self.state.iter().chain(self.action.iter()).copied()
    }

    pub fn concat(&self) -> Vec<f64> {
        self.features().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Expert,
    Behavior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub gt_rewards: Option<Vec<f64>>,
    pub source: Source,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn gt_return(&self) -> Option<f64> {
        self.gt_rewards.as_ref().map(|r| r.iter().sum())
    }
}

/// Fixed-length contiguous slice of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub transitions: Vec<Transition>,
    pub gt_rewards: Option<Vec<f64>>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn gt_return(&self) -> Option<f64> {
        self.gt_rewards.as_ref().map(|r| r.iter().sum())
    }
}

/// Preference label: which segment of a pair is preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    /// `seg0` preferred (l = 0).
    First,
    /// Indifferent (l = 0.5).
    Tie,
    /// `seg1` preferred (l = 1).
    Second,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::First => 0.0,
            Label::Tie => 0.5,
            Label::Second => 1.0,
        }
    }

    pub fn from_value(l: f64) -> Result<Self> {
        if l == 0.0 {
            Ok(Label::First)
        } else if l == 0.5 {
            Ok(Label::Tie)
        } else if l == 1.0 {
            Ok(Label::Second)
        } else {
            Err(SpwError::InvalidLabel(l))
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::First => Label::Second,
            Label::Tie => Label::Tie,
            Label::Second => Label::First,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub seg0: Segment,
    pub seg1: Segment,
    pub label: Label,
}

impl PreferencePair {
    /// The same comparison with the segments swapped.
    pub fn swapped(&self) -> Self {
        PreferencePair {
            seg0: self.seg1.clone(),
            seg1: self.seg0.clone(),
            label: self.label.flipped(),
        }
    }
}

/// All expert transitions pooled in trajectory order, duplicates kept.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTransitionSet {
    transitions: Vec<Transition>,
}

impl ExpertTransitionSet {
    pub fn from_transitions(transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(SpwError::EmptyExpertSet);
        }
        Ok(ExpertTransitionSet { transitions })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn count(&self) -> usize {
        self.transitions.len()
    }

    pub fn dim(&self) -> usize {
        self.transitions[0].dim()
    }
}

/// Pools the transitions of expert demonstrations.
pub fn build_expert_transition_set(demos: &[Trajectory]) -> Result<ExpertTransitionSet> {
    if demos.is_empty() {
        return Err(SpwError::EmptyExpertSet);
    }
    if demos.iter().any(|d| d.source != Source::Expert) {
        return Err(SpwError::Config(
            "expert transition set built from a non-expert trajectory".into(),
        ));
    }
    let transitions = demos
        .iter()
        .flat_map(|d| d.transitions.iter().cloned())
        .collect();
    ExpertTransitionSet::from_transitions(transitions)
}

/// Draws `k` windows of length `horizon`, uniformly over every valid
/// `(trajectory, start)` pair. Trajectories shorter than `horizon` contribute
/// no windows.
pub fn sample_segments(
    trajectories: &[Trajectory],
    horizon: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Segment>> {
    let mut rng = seeded(seed);
    sample_segments_with(trajectories, horizon, k, &mut rng)
}

pub(crate) fn sample_segments_with(
    trajectories: &[Trajectory],
    horizon: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Segment>> {
    if horizon == 0 {
        return Err(SpwError::Config("segment length must be at least 1".into()));
    }
    let windows: Vec<usize> = trajectories
        .iter()
        .map(|t| (t.len() + 1).saturating_sub(horizon))
        .collect();
    let total: usize = windows.iter().sum();
    if total == 0 {
        return Err(SpwError::NoValidWindow { horizon });
    }
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut pick = rng.gen_range(0..total);
        let mut which = 0;
        while pick >= windows[which] {
            pick -= windows[which];
            which += 1;
        }
        out.push(window(&trajectories[which], pick, horizon));
    }
    Ok(out)
}

fn window(traj: &Trajectory, start: usize, horizon: usize) -> Segment {
    let end = start + horizon;
    Segment {
        transitions: traj.transitions[start..end].to_vec(),
        gt_rewards: traj.gt_rewards.as_ref().map(|r| r[start..end].to_vec()),
    }
}

/// Labels a pair by comparing ground-truth segment returns.
pub fn label_preference(seg0: Segment, seg1: Segment, tie_epsilon: f64) -> Result<PreferencePair> {
    let g0 = seg0.gt_return().ok_or(SpwError::UnlabeledSegment)?;
    let g1 = seg1.gt_return().ok_or(SpwError::UnlabeledSegment)?;
    if seg0.len() != seg1.len() {
        return Err(SpwError::LengthMismatch {
            what: "seg1",
            expected: seg0.len(),
            actual: seg1.len(),
        });
    }
    let label = if g0 - g1 > tie_epsilon {
        Label::First
    } else if g1 - g0 > tie_epsilon {
        Label::Second
    } else {
        Label::Tie
    };
    Ok(PreferencePair { seg0, seg1, label })
}

/// Samples `k` independent segment pairs and labels them from ground truth.
pub fn sample_preference_pairs(
    trajectories: &[Trajectory],
    horizon: usize,
    k: usize,
    tie_epsilon: f64,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    let mut segs = sample_segments(trajectories, horizon, 2 * k, seed)?.into_iter();
    let mut pairs = Vec::with_capacity(k);
    while let (Some(a), Some(b)) = (segs.next(), segs.next()) {
        pairs.push(label_preference(a, b, tie_epsilon)?);
    }
    Ok(pairs)
}

/// Rolls out `n_expert` demonstrations of the task's scripted controller and
/// `n_behavior` trajectories of a noisy controller that replaces the scripted
/// action by a uniformly random one with probability `noise`.
pub fn generate_synthetic_mdp_data(
    task: &SyntheticTask,
    n_expert: usize,
    n_behavior: usize,
    noise: f64,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    task.validate()?;
    if !(0.0..=1.0).contains(&noise) {
        return Err(SpwError::Config(format!("noise {noise} outside [0, 1]")));
    }
    let mut rng = seeded(seed);
    let experts = (0..n_expert)
        .map(|_| {
            let start = task.sample_start(&mut rng);
            task.rollout(start, |s, _| task.expert_action(s), &mut rng, Source::Expert)
        })
        .collect();
    let behavior = (0..n_behavior)
        .map(|_| {
            let start = task.sample_start(&mut rng);
            task.rollout(
                start,
                |s, r| {
                    if noise > 0.0 && r.gen::<f64>() < noise {
                        task.random_action(r)
                    } else {
                        task.expert_action(s)
                    }
                },
                &mut rng,
                Source::Behavior,
            )
        })
        .collect();
    Ok((experts, behavior))
}

// ---------------------------------------------------------------------------
// JSON-lines encoding

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    source: Source,
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rewards: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rewards: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PreferenceRecord {
    seg0: SegmentRecord,
    seg1: SegmentRecord,
    label: f64,
}

/// Tracks `(n, m)` across records and reports the offending line.
struct DimCheck {
    dims: Option<(usize, usize)>,
}

impl DimCheck {
    fn check(
        &mut self,
        states: &[Vec<f64>],
        actions: &[Vec<f64>],
        rewards: Option<&Vec<f64>>,
        path: &Path,
        line: usize,
    ) -> Result<Vec<Transition>> {
        if states.is_empty() {
            return Err(parse_err(path, line, "record has no transitions"));
        }
        if states.len() != actions.len() {
            return Err(parse_err(
                path,
                line,
                format!("{} states but {} actions", states.len(), actions.len()),
            ));
        }
        if let Some(r) = rewards {
            if r.len() != states.len() {
                return Err(parse_err(
                    path,
                    line,
                    format!("{} rewards for {} transitions", r.len(), states.len()),
                ));
            }
        }
        let (n, m) = *self
            .dims
            .get_or_insert((states[0].len(), actions[0].len()));
        let mut out = Vec::with_capacity(states.len());
        for (s, a) in states.iter().zip(actions) {
            if s.len() != n {
                return Err(SpwError::DimensionMismatch {
                    expected: n,
                    actual: s.len(),
                    line: Some(line),
                });
            }
            if a.len() != m {
                return Err(SpwError::DimensionMismatch {
                    expected: m,
                    actual: a.len(),
                    line: Some(line),
                });
            }
            if s.iter().chain(a).any(|v| !v.is_finite()) {
                return Err(parse_err(path, line, "non-finite value"));
            }
            out.push(Transition::new(s.clone(), a.clone()));
        }
        Ok(out)
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> SpwError {
    SpwError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn split_columns(transitions: &[Transition]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    transitions
        .iter()
        .map(|t| (t.state.clone(), t.action.clone()))
        .unzip()
}

/// Iterates `(line_number, line)` over data lines, skipping blanks and `#`
/// comment lines.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| SpwError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SpwError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

pub fn load_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let mut dims = DimCheck { dims: None };
    let mut out = Vec::new();
    for (line_no, line) in data_lines(path)? {
        let rec: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        let transitions = dims.check(
            &rec.states,
            &rec.actions,
            rec.rewards.as_ref(),
            path,
            line_no,
        )?;
        out.push(Trajectory {
            transitions,
            gt_rewards: rec.rewards,
            source: rec.source,
        });
    }
    Ok(out)
}

/// Writes trajectories as JSON lines. Each line of `header`, if given, is
/// written first as a `#` comment line.
pub fn save_trajectories(
    path: impl AsRef<Path>,
    trajectories: &[Trajectory],
    header: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    write_lines(path, header, trajectories.iter().map(|t| {
        let (states, actions) = split_columns(&t.transitions);
        serde_json::to_string(&TrajectoryRecord {
            source: t.source,
            states,
            actions,
            rewards: t.gt_rewards.clone(),
        })
    }))
}

pub fn load_preferences(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>> {
    let path = path.as_ref();
    let mut dims = DimCheck { dims: None };
    let mut out = Vec::new();
    for (line_no, line) in data_lines(path)? {
        let rec: PreferenceRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        let mut segment = |r: SegmentRecord| -> Result<Segment> {
            let transitions =
                dims.check(&r.states, &r.actions, r.rewards.as_ref(), path, line_no)?;
            Ok(Segment {
                transitions,
                gt_rewards: r.rewards,
            })
        };
        let seg0 = segment(rec.seg0)?;
        let seg1 = segment(rec.seg1)?;
        if seg0.len() != seg1.len() {
            return Err(parse_err(path, line_no, "segments differ in length"));
        }
        let label =
            Label::from_value(rec.label).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        out.push(PreferencePair { seg0, seg1, label });
    }
    Ok(out)
}

pub fn save_preferences(
    path: impl AsRef<Path>,
    pairs: &[PreferencePair],
    header: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let seg = |s: &Segment| {
        let (states, actions) = split_columns(&s.transitions);
        SegmentRecord {
            states,
            actions,
            rewards: s.gt_rewards.clone(),
        }
    };
    write_lines(path, header, pairs.iter().map(|p| {
        serde_json::to_string(&PreferenceRecord {
            seg0: seg(&p.seg0),
            seg1: seg(&p.seg1),
            label: p.label.value(),
        })
    }))
}

fn write_lines(
    path: &Path,
    header: Option<&str>,
    lines: impl Iterator<Item = serde_json::Result<String>>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| SpwError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| SpwError::io(path, e);
    for line in header.into_iter().flat_map(str::lines) {
        writeln!(w, "# {line}").map_err(io)?;
    }
    for line in lines {
        let line = line.map_err(|e| SpwError::Checkpoint(e.to_string()))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(len: usize, source: Source, offset: f64) -> Trajectory {
        Trajectory {
            transitions: (0..len)
                .map(|i| Transition::new(vec![offset + i as f64, 0.5], vec![1.0]))
                .collect(),
            gt_rewards: Some((0..len).map(|i| i as f64 * 0.1 + offset).collect()),
            source,
        }
    }

    fn seg(rewards: &[f64]) -> Segment {
        Segment {
            transitions: rewards
                .iter()
                .map(|_| Transition::new(vec![0.0], vec![0.0]))
                .collect(),
            gt_rewards: Some(rewards.to_vec()),
        }
    }

    #[test]
    fn empty_file_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_trajectories(&p).unwrap().is_empty());
    }

    #[test]
    fn single_trajectory_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        std::fs::write(
            &p,
            r#"{"source":"expert","states":[[0,1],[1,1],[2,1]],"actions":[[0.5],[0.5],[-1]]}"#,
        )
        .unwrap();
        let t = load_trajectories(&p).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].len(), 3);
        assert_eq!(t[0].source, Source::Expert);
        assert!(t[0].gt_rewards.is_none());
    }

    #[test]
    fn action_dimension_change_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        std::fs::write(
            &p,
            "{\"source\":\"behavior\",\"states\":[[0,1]],\"actions\":[[1]]}\n\
             {\"source\":\"behavior\",\"states\":[[0,1]],\"actions\":[[1,2]]}\n",
        )
        .unwrap();
        match load_trajectories(&p) {
            Err(SpwError::DimensionMismatch {
                expected: 1,
                actual: 2,
                line: Some(2),
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        std::fs::write(&p, "# header\n{\"source\":\"expert\"\n").unwrap();
        match load_trajectories(&p) {
            Err(SpwError::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn expert_set_counts() {
        let one = build_expert_transition_set(&[traj(5, Source::Expert, 0.0)]).unwrap();
        assert_eq!(one.count(), 5);
        let two = build_expert_transition_set(&[
            traj(3, Source::Expert, 0.0),
            traj(4, Source::Expert, 0.0),
        ])
        .unwrap();
        assert_eq!(two.count(), 7);
        assert!(matches!(
            build_expert_transition_set(&[]),
            Err(SpwError::EmptyExpertSet)
        ));
    }

    #[test]
    fn unique_window_is_returned() {
        let t = traj(7, Source::Behavior, 0.0);
        let s = sample_segments(std::slice::from_ref(&t), 7, 1, 3).unwrap();
        assert_eq!(s[0].transitions, t.transitions);
        assert_eq!(s[0].gt_rewards, t.gt_rewards);
    }

    #[test]
    fn sampling_is_deterministic_and_shaped() {
        let ts: Vec<_> = (0..10)
            .map(|i| traj(50, Source::Behavior, i as f64 * 100.0))
            .collect();
        let a = sample_segments(&ts, 10, 100, 11).unwrap();
        let b = sample_segments(&ts, 10, 100, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(a.iter().all(|s| s.len() == 10));
    }

    #[test]
    fn too_long_window_errors() {
        let ts = vec![traj(3, Source::Behavior, 0.0)];
        assert!(matches!(
            sample_segments(&ts, 4, 1, 0),
            Err(SpwError::NoValidWindow { horizon: 4 })
        ));
    }

    #[test]
    fn labels_follow_returns() {
        assert_eq!(
            label_preference(seg(&[1.0, 2.0]), seg(&[2.0, 1.0]), 0.0)
                .unwrap()
                .label,
            Label::Tie
        );
        assert_eq!(
            label_preference(seg(&[1.0, 1.0]), seg(&[0.0, 0.0]), 0.0)
                .unwrap()
                .label,
            Label::First
        );
        assert_eq!(
            label_preference(seg(&[0.05]), seg(&[0.0]), 0.1)
                .unwrap()
                .label,
            Label::Tie
        );
        let mut unlabeled = seg(&[1.0]);
        unlabeled.gt_rewards = None;
        assert!(matches!(
            label_preference(unlabeled, seg(&[1.0]), 0.0),
            Err(SpwError::UnlabeledSegment)
        ));
    }

    #[test]
    fn preferences_round_trip() {
        let ts = vec![traj(30, Source::Behavior, 0.3)];
        let pairs = sample_preference_pairs(&ts, 5, 20, 0.0, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        save_preferences(&p, &pairs, Some("provenance")).unwrap();
        assert_eq!(load_preferences(&p).unwrap(), pairs);
    }

    #[test]
    fn synthetic_generation() {
        use std::collections::BTreeMap;
        let task = crate::policy::make_task("grid-nav", &BTreeMap::new()).unwrap();
        let (e, b) = generate_synthetic_mdp_data(&task, 1, 4, 0.5, 3).unwrap();
        assert_eq!((e.len(), b.len()), (1, 4));
        assert!(e.iter().all(|t| t.source == Source::Expert && t.gt_rewards.is_some()));
        assert_eq!(generate_synthetic_mdp_data(&task, 1, 4, 0.5, 3).unwrap(), (e, b));
        assert!(generate_synthetic_mdp_data(&task, 1, 1, 1.5, 3).is_err());

        // Without noise the behaviour controller is the expert controller.
        let (e, b) = generate_synthetic_mdp_data(&task, 30, 30, 0.0, 5).unwrap();
        let mean = |ts: &[Trajectory]| ts.iter().map(|t| t.gt_return().unwrap()).sum::<f64>() / 30.0;
        assert!((mean(&e) - mean(&b)).abs() < 5.0);
        for t in &b {
            for tr in &t.transitions {
                assert_eq!(tr.action, task.expert_action(&tr.state));
            }
        }
    }

    #[test]
    fn trajectories_round_trip() {
        use std::collections::BTreeMap;
        let task = crate::policy::make_task("point-goal", &BTreeMap::new()).unwrap();
        let (e, b) = generate_synthetic_mdp_data(&task, 2, 3, 0.4, 8).unwrap();
        let all: Vec<Trajectory> = e.into_iter().chain(b).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        save_trajectories(&p, &all, Some("spw test")).unwrap();
        assert_eq!(load_trajectories(&p).unwrap(), all);
    }

    #[test]
    fn bad_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        std::fs::write(
            &p,
            r#"{"seg0":{"states":[[0]],"actions":[[0]]},"seg1":{"states":[[1]],"actions":[[0]]},"label":0.25}"#,
        )
        .unwrap();
        assert!(matches!(
            load_preferences(&p),
            Err(SpwError::Parse { line: 1, .. })
        ));
    }
}
