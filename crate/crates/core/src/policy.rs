//! Synthetic tasks with known rewards and tabular policy extraction.
//!
//! Two built-in tasks: `grid-nav`, a deterministic gridworld with one-hot
//! actions, and `point-goal`, a 2-D point mass with continuous actions that
//! is discretized into cells and a fixed action set for planning. In both the
//! goal is absorbing and the ground-truth reward is 1 for every transition
//! that ends in the goal, so a successful trajectory's reward profile jumps
//! from 0 to 1 at the step that reaches the goal.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Trajectory, Transition};
use crate::error::{Result, SpwError};
use crate::exec;
use crate::reward_model::RewardModel;
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridNav {
    pub size: usize,
    pub goal: [usize; 2],
    /// State units per cell; cell `(i, j)` has state `(i · cell, j · cell)`.
    pub cell: f64,
}

impl GridNav {
    fn coords(&self, state: &[f64]) -> (i64, i64) {
        let c = |v: f64| ((v / self.cell).round() as i64).clamp(0, self.size as i64 - 1);
        (c(state[0]), c(state[1]))
    }

    fn state(&self, x: i64, y: i64) -> Vec<f64> {
        vec![x as f64 * self.cell, y as f64 * self.cell]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointGoal {
    /// The arena is `[0, extent]²`.
    pub extent: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    /// Displacement per step at full command; actions are commands in the
    /// unit disc.
    pub step: f64,
    /// Planning grid is `bins × bins` cells.
    pub bins: usize,
    /// Number of planning actions, evenly spaced directions at full step.
    pub directions: usize,
    /// Coefficient of a dense `-distance / extent` shaping term (0 = sparse).
    pub shaping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskKind {
    GridNav(GridNav),
    PointGoal(PointGoal),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub name: String,
    pub kind: TaskKind,
    pub gamma: f64,
    pub horizon: usize,
}

pub const TASK_NAMES: [&str; 2] = ["grid-nav", "point-goal"];

fn param<T: std::str::FromStr>(params: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| SpwError::Config(format!("task parameter {key}: cannot parse `{v}`"))),
    }
}

/// Builds a named task, applying parameter overrides.
pub fn make_task(name: &str, params: &BTreeMap<String, String>) -> Result<SyntheticTask> {
    let known = [
        "size", "cell", "goal_x", "goal_y", "gamma", "horizon", "extent", "goal_radius", "step", "bins",
        "directions", "shaping",
    ];
    if let Some(k) = params.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(SpwError::Config(format!("unknown task parameter `{k}`")));
    }
    let task = match name {
        "grid-nav" => {
            let size: usize = param(params, "size", 15)?;
            let goal = [
                param(params, "goal_x", size.saturating_sub(1))?,
                param(params, "goal_y", size.saturating_sub(1))?,
            ];
            SyntheticTask {
                name: name.to_string(),
                kind: TaskKind::GridNav(GridNav {
                    size,
                    goal,
                    cell: param(params, "cell", 1.0 / size.saturating_sub(1).max(1) as f64)?,
                }),
                gamma: param(params, "gamma", 0.95)?,
                horizon: param(params, "horizon", 60)?,
            }
        }
        "point-goal" => {
            let extent: f64 = param(params, "extent", 1.0)?;
            SyntheticTask {
                name: name.to_string(),
                kind: TaskKind::PointGoal(PointGoal {
                    extent,
                    goal: [
                        param(params, "goal_x", extent)?,
                        param(params, "goal_y", extent)?,
                    ],
                    goal_radius: param(params, "goal_radius", 0.08 * extent)?,
                    step: param(params, "step", 0.06 * extent)?,
                    bins: param(params, "bins", 50)?,
                    directions: param(params, "directions", 8)?,
                    shaping: param(params, "shaping", 0.0)?,
                }),
                gamma: param(params, "gamma", 0.95)?,
                horizon: param(params, "horizon", 60)?,
            }
        }
        other => return Err(SpwError::UnknownTask(other.to_string())),
    };
    task.validate()?;
    Ok(task)
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(SpwError::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.horizon == 0 {
            return Err(SpwError::Config("horizon must be positive".into()));
        }
        match &self.kind {
            TaskKind::GridNav(g) => {
                if g.size < 2 || g.goal[0] >= g.size || g.goal[1] >= g.size {
                    return Err(SpwError::Config("grid goal must lie inside a grid of size ≥ 2".into()));
                }
                if !(g.cell > 0.0 && g.cell.is_finite()) {
                    return Err(SpwError::Config("grid cell size must be positive".into()));
                }
            }
            TaskKind::PointGoal(p) => {
                let inside = p.goal.iter().all(|&c| (0.0..=p.extent).contains(&c));
                if !(p.extent > 0.0 && p.goal_radius > 0.0 && p.step > 0.0 && inside) {
                    return Err(SpwError::Config("point-goal geometry is invalid".into()));
                }
                if p.bins < 2 || p.directions < 2 {
                    return Err(SpwError::Config("point-goal discretization too coarse".into()));
                }
                if !(0..self.n_states()).any(|i| self.is_goal_index(i)) {
                    return Err(SpwError::Config("goal region contains no planning cell".into()));
                }
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        2
    }

    pub fn action_dim(&self) -> usize {
        match &self.kind {
            TaskKind::GridNav(_) => 4,
            TaskKind::PointGoal(_) => 2,
        }
    }

    pub fn in_goal(&self, state: &[f64]) -> bool {
        match &self.kind {
            TaskKind::GridNav(g) => {
                g.coords(state) == (g.goal[0] as i64, g.goal[1] as i64)
            }
            TaskKind::PointGoal(p) => {
                let dx = state[0] - p.goal[0];
                let dy = state[1] - p.goal[1];
                (dx * dx + dy * dy).sqrt() <= p.goal_radius
            }
        }
    }

    /// Start state from `p₀`: uniform over non-goal states.
    pub fn sample_start(&self, rng: &mut impl Rng) -> Vec<f64> {
        loop {
            let s = match &self.kind {
                TaskKind::GridNav(g) => {
                    let x = rng.gen_range(0..g.size) as i64;
                    let y = rng.gen_range(0..g.size) as i64;
                    g.state(x, y)
                }
                TaskKind::PointGoal(p) => vec![
                    rng.gen_range(0.0..p.extent),
                    rng.gen_range(0.0..p.extent),
                ],
            };
            if !self.in_goal(&s) {
                return s;
            }
        }
    }

    /// Deterministic dynamics; the goal is absorbing.
    pub fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        if self.in_goal(state) {
            return state.to_vec();
        }
        match &self.kind {
            TaskKind::GridNav(g) => {
                let (dx, dy) = grid_delta(argmax(action));
                let (x, y) = g.coords(state);
                let clamp = |v: i64| v.clamp(0, g.size as i64 - 1);
                g.state(clamp(x + dx), clamp(y + dy))
            }
            TaskKind::PointGoal(p) => {
                let norm = (action[0] * action[0] + action[1] * action[1]).sqrt();
                let k = p.step / norm.max(1.0);
                vec![
                    (state[0] + k * action[0]).clamp(0.0, p.extent),
                    (state[1] + k * action[1]).clamp(0.0, p.extent),
                ]
            }
        }
    }

    /// 1 when the transition ends in the goal, plus optional shaping.
    pub fn gt_reward(&self, state: &[f64], action: &[f64]) -> f64 {
        let next = self.step(state, action);
        let bonus = if self.in_goal(&next) { 1.0 } else { 0.0 };
        match &self.kind {
            TaskKind::PointGoal(p) if p.shaping != 0.0 => {
                let d = ((next[0] - p.goal[0]).powi(2) + (next[1] - p.goal[1]).powi(2)).sqrt();
                bonus - p.shaping * d / p.extent
            }
            _ => bonus,
        }
    }

    /// Scripted optimal controller used to produce expert demonstrations.
    pub fn expert_action(&self, state: &[f64]) -> Vec<f64> {
        match &self.kind {
            TaskKind::GridNav(g) => {
                let (x, y) = g.coords(state);
                let (gx, gy) = (g.goal[0] as i64, g.goal[1] as i64);
                let a = (0..4)
                    .find(|&a| {
                        let (dx, dy) = grid_delta(a);
                        (x + dx - gx).abs() + (y + dy - gy).abs() < (x - gx).abs() + (y - gy).abs()
                    })
                    .unwrap_or(0);
                one_hot(a, 4)
            }
            TaskKind::PointGoal(p) => {
                let (dx, dy) = (p.goal[0] - state[0], p.goal[1] - state[1]);
                let dist = (dx * dx + dy * dy).sqrt();
                if dist == 0.0 {
                    return vec![0.0, 0.0];
                }
                let k = (dist / p.step).min(1.0) / dist;
                vec![k * dx, k * dy]
            }
        }
    }

    pub fn random_action(&self, rng: &mut impl Rng) -> Vec<f64> {
        match &self.kind {
            TaskKind::GridNav(_) => one_hot(rng.gen_range(0..4), 4),
            TaskKind::PointGoal(_) => {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                vec![angle.cos(), angle.sin()]
            }
        }
    }

    /// Rolls out `horizon` steps from `start`, recording ground-truth rewards.
    pub fn rollout<R: Rng>(
        &self,
        start: Vec<f64>,
        mut policy: impl FnMut(&[f64], &mut R) -> Vec<f64>,
        rng: &mut R,
        source: crate::dataset::Source,
    ) -> Trajectory {
        let mut state = start;
        let mut transitions = Vec::with_capacity(self.horizon);
        let mut rewards = Vec::with_capacity(self.horizon);
        for _ in 0..self.horizon {
            let action = policy(&state, rng);
            rewards.push(self.gt_reward(&state, &action));
            let next = self.step(&state, &action);
            transitions.push(Transition::new(state, action));
            state = next;
        }
        Trajectory {
            transitions,
            gt_rewards: Some(rewards),
            source,
        }
    }

    // ---- discretized planning MDP -------------------------------------

    pub fn n_states(&self) -> usize {
        match &self.kind {
            TaskKind::GridNav(g) => g.size * g.size,
            TaskKind::PointGoal(p) => p.bins * p.bins,
        }
    }

    pub fn n_actions(&self) -> usize {
        match &self.kind {
            TaskKind::GridNav(_) => 4,
            TaskKind::PointGoal(p) => p.directions,
        }
    }

    /// Representative state of a planning cell (its center).
    pub fn state_of(&self, index: usize) -> Vec<f64> {
        match &self.kind {
            TaskKind::GridNav(g) => g.state((index % g.size) as i64, (index / g.size) as i64),
            TaskKind::PointGoal(p) => {
                let cell = p.extent / p.bins as f64;
                vec![
                    ((index % p.bins) as f64 + 0.5) * cell,
                    ((index / p.bins) as f64 + 0.5) * cell,
                ]
            }
        }
    }

    pub fn index_of(&self, state: &[f64]) -> usize {
        match &self.kind {
            TaskKind::GridNav(g) => {
                let (x, y) = g.coords(state);
                y as usize * g.size + x as usize
            }
            TaskKind::PointGoal(p) => {
                let c = |v: f64| ((v / p.extent * p.bins as f64).floor().max(0.0) as usize).min(p.bins - 1);
                c(state[1]) * p.bins + c(state[0])
            }
        }
    }

    /// Representative action vector of planning action `a`.
    pub fn action_vec(&self, a: usize) -> Vec<f64> {
        match &self.kind {
            TaskKind::GridNav(_) => one_hot(a, 4),
            TaskKind::PointGoal(p) => {
                let angle = std::f64::consts::TAU * a as f64 / p.directions as f64;
                vec![angle.cos(), angle.sin()]
            }
        }
    }

    /// A planning cell is a goal cell when it lies entirely inside the goal
    /// region, so any continuous state in it is a goal state.
    pub fn is_goal_index(&self, index: usize) -> bool {
        match &self.kind {
            TaskKind::GridNav(_) => self.in_goal(&self.state_of(index)),
            TaskKind::PointGoal(p) => {
                let c = self.state_of(index);
                let half = 0.5 * p.extent / p.bins as f64;
                let far = |v: f64, g: f64| (v - g).abs() + half;
                far(c[0], p.goal[0]).hypot(far(c[1], p.goal[1])) <= p.goal_radius
            }
        }
    }

    pub fn next_index(&self, index: usize, a: usize) -> usize {
        if self.is_goal_index(index) {
            return index;
        }
        self.index_of(&self.step(&self.state_of(index), &self.action_vec(a)))
    }

    /// Ground-truth reward of the planning MDP: 1 on entering a goal cell.
    fn planning_gt_reward(&self, index: usize, a: usize) -> f64 {
        let next = self.next_index(index, a);
        let bonus = if self.is_goal_index(next) { 1.0 } else { 0.0 };
        match &self.kind {
            TaskKind::PointGoal(p) if p.shaping != 0.0 => {
                let s = self.state_of(next);
                let d = ((s[0] - p.goal[0]).powi(2) + (s[1] - p.goal[1]).powi(2)).sqrt();
                bonus - p.shaping * d / p.extent
            }
            _ => bonus,
        }
    }
}

fn grid_delta(a: usize) -> (i64, i64) {
    match a {
        0 => (1, 0),
        1 => (-1, 0),
        2 => (0, 1),
        _ => (0, -1),
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Which reward the planner maximizes.
pub enum RewardSource<'a> {
    GroundTruth,
    Model(&'a RewardModel),
    /// Any per-transition reward, e.g. a demonstration-only baseline.
    Custom(&'a (dyn Fn(&Transition) -> Result<f64> + Sync)),
}

/// Greedy action per planning cell, with an optional chance of acting
/// uniformly at random instead.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub actions: Vec<usize>,
    pub n_actions: usize,
    pub epsilon: f64,
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm change of each sweep.
    pub residuals: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform_random(task: &SyntheticTask) -> Self {
        TabularPolicy {
            actions: vec![0; task.n_states()],
            n_actions: task.n_actions(),
            epsilon: 1.0,
            values: Vec::new(),
            iterations: 0,
            residuals: Vec::new(),
        }
    }

    pub fn act(&self, index: usize, rng: &mut impl Rng) -> usize {
        if self.epsilon > 0.0 && rng.gen::<f64>() < self.epsilon {
            rng.gen_range(0..self.n_actions)
        } else {
            self.actions[index]
        }
    }
}

/// `R[s][a]` over the planning MDP, flattened row-major.
pub fn reward_table(task: &SyntheticTask, source: &RewardSource<'_>) -> Result<Vec<f64>> {
    let n_a = task.n_actions();
    let cells = task.n_states() * n_a;
    match source {
        RewardSource::GroundTruth => Ok((0..cells).map(|k| task.planning_gt_reward(k / n_a, k % n_a)).collect()),
        RewardSource::Model(model) => exec::map_range(cells, |k| {
            model.predict_reward(&Transition::new(task.state_of(k / n_a), task.action_vec(k % n_a)))
        })
        .into_iter()
        .collect(),
        RewardSource::Custom(f) => exec::map_range(cells, |k| {
            f(&Transition::new(task.state_of(k / n_a), task.action_vec(k % n_a)))
        })
        .into_iter()
        .collect(),
    }
}

pub const MAX_VALUE_ITERATIONS: usize = 100_000;

/// Value iteration to sup-norm change `< tol`, then greedy extraction with
/// ties going to the lowest action index.
pub fn value_iteration(task: &SyntheticTask, source: &RewardSource<'_>, tol: f64) -> Result<TabularPolicy> {
    if !(tol > 0.0) {
        return Err(SpwError::Config("tolerance must be positive".into()));
    }
    let rewards = reward_table(task, source)?;
    value_iteration_table(task, &rewards, tol, MAX_VALUE_ITERATIONS)
}

pub fn value_iteration_table(
    task: &SyntheticTask,
    rewards: &[f64],
    tol: f64,
    max_iterations: usize,
) -> Result<TabularPolicy> {
    let (n_s, n_a) = (task.n_states(), task.n_actions());
    let next: Vec<usize> = (0..n_s * n_a).map(|k| task.next_index(k / n_a, k % n_a)).collect();
    let mut values = vec![0.0; n_s];
    let mut residuals = Vec::new();
    let q = |values: &[f64], s: usize, a: usize| rewards[s * n_a + a] + task.gamma * values[next[s * n_a + a]];
    loop {
        let new: Vec<f64> = (0..n_s)
            .map(|s| (0..n_a).map(|a| q(&values, s, a)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let residual = new
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = new;
        residuals.push(residual);
        if residual < tol {
            break;
        }
        if residuals.len() >= max_iterations {
            return Err(SpwError::NoConvergence {
                iterations: residuals.len(),
                residual,
            });
        }
    }
    let actions = (0..n_s)
        .map(|s| {
            let mut best = 0;
            for a in 1..n_a {
                if q(&values, s, a) > q(&values, s, best) {
                    best = a;
                }
            }
            best
        })
        .collect();
    Ok(TabularPolicy {
        actions,
        n_actions: n_a,
        epsilon: 0.0,
        values,
        iterations: residuals.len(),
        residuals,
    })
}

/// Runs one episode of a tabular policy in the task's own dynamics; true if
/// the goal is reached within the horizon.
pub fn run_episode(policy: &TabularPolicy, task: &SyntheticTask, start: Vec<f64>, rng: &mut impl Rng) -> bool {
    let mut state = start;
    for _ in 0..task.horizon {
        if task.in_goal(&state) {
            return true;
        }
        let a = policy.act(task.index_of(&state), rng);
        state = task.step(&state, &task.action_vec(a));
    }
    task.in_goal(&state)
}

/// Fraction of `episodes` rollouts that reach the goal. Episode `i` draws its
/// start and actions from seed `seed + i`, so the result does not depend on
/// scheduling.
pub fn success_rate(policy: &TabularPolicy, task: &SyntheticTask, episodes: usize, seed: u64) -> f64 {
    if episodes == 0 {
        return 0.0;
    }
    let wins = exec::map_range(episodes, |i| {
        let mut rng = seeded(seed.wrapping_add(i as u64));
        let start = task.sample_start(&mut rng);
        run_episode(policy, task, start, &mut rng)
    });
    wins.iter().filter(|&&w| w).count() as f64 / episodes as f64
}

/// Trajectories with rewards replaced by a model's predictions; the original
/// rewards are kept alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct Relabeled {
    pub trajectories: Vec<Trajectory>,
    pub original_rewards: Vec<Option<Vec<f64>>>,
}

pub fn relabel_dataset(trajectories: &[Trajectory], model: &RewardModel) -> Result<Relabeled> {
    let relabeled = exec::try_map(trajectories, |t| {
        Ok(Trajectory {
            transitions: t.transitions.clone(),
            gt_rewards: Some(model.predict_batch(&t.transitions)?),
            source: t.source,
        })
    })?;
    Ok(Relabeled {
        trajectories: relabeled,
        original_rewards: trajectories.iter().map(|t| t.gt_rewards.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Source;
    use crate::reward_model::{Activation, OutputSquash};

    fn task(name: &str) -> SyntheticTask {
        make_task(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn unknown_task_and_params() {
        assert!(matches!(make_task("maze", &BTreeMap::new()), Err(SpwError::UnknownTask(_))));
        let mut p = BTreeMap::new();
        p.insert("colour".to_string(), "red".to_string());
        assert!(make_task("grid-nav", &p).is_err());
        let mut p = BTreeMap::new();
        p.insert("gamma".to_string(), "1.0".to_string());
        assert!(make_task("grid-nav", &p).is_err());
    }

    #[test]
    fn expert_reaches_goal_from_every_cell() {
        let t = task("grid-nav");
        let TaskKind::GridNav(g) = &t.kind else { unreachable!() };
        for s in 0..t.n_states() {
            let mut state = t.state_of(s);
            let mut steps = 0;
            while !t.in_goal(&state) {
                state = t.step(&state, &t.expert_action(&state));
                steps += 1;
                assert!(steps <= 2 * g.size);
            }
        }
    }

    #[test]
    fn point_expert_reaches_goal() {
        let t = task("point-goal");
        let mut rng = seeded(3);
        for _ in 0..50 {
            let start = t.sample_start(&mut rng);
            let traj = t.rollout(start, |s, _| t.expert_action(s), &mut rng, Source::Expert);
            assert!(t.in_goal(&t.step(
                &traj.transitions.last().unwrap().state,
                &traj.transitions.last().unwrap().action
            )));
        }
    }

    #[test]
    fn starts_are_seeded() {
        let t = task("point-goal");
        let a: Vec<_> = (0..5).map(|_| t.sample_start(&mut seeded(4))).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert!(!t.in_goal(&a[0]));
    }

    #[test]
    fn gt_value_iteration_solves_grid_from_every_start() {
        let t = task("grid-nav");
        let pi = value_iteration(&t, &RewardSource::GroundTruth, 1e-10).unwrap();
        assert!(*pi.residuals.last().unwrap() < 1e-10);
        for w in pi.residuals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        let mut rng = seeded(0);
        for s in 0..t.n_states() {
            assert!(run_episode(&pi, &t, t.state_of(s), &mut rng));
        }
        assert_eq!(success_rate(&pi, &t, 200, 1), 1.0);
    }

    #[test]
    fn gt_value_iteration_solves_point_goal() {
        let t = task("point-goal");
        let pi = value_iteration(&t, &RewardSource::GroundTruth, 1e-10).unwrap();
        assert_eq!(success_rate(&pi, &t, 300, 2), 1.0);
    }

    #[test]
    fn myopic_planner_is_greedy_on_immediate_reward() {
        let mut t = task("grid-nav");
        t.gamma = 0.0;
        let n_a = t.n_actions();
        let rewards: Vec<f64> = (0..t.n_states() * n_a).map(|k| ((k * 7919) % 13) as f64).collect();
        let pi = value_iteration_table(&t, &rewards, 1e-12, 100).unwrap();
        for s in 0..t.n_states() {
            let row = &rewards[s * n_a..(s + 1) * n_a];
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(pi.actions[s], row.iter().position(|&r| r == best).unwrap());
        }
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let t = task("grid-nav");
        let r = value_iteration_table(&t, &vec![1.0; t.n_states() * 4], 1e-12, 3);
        assert!(matches!(r, Err(SpwError::NoConvergence { iterations: 3, .. })));
    }

    #[test]
    fn random_policy_rate_is_seeded() {
        let t = task("grid-nav");
        let pi = TabularPolicy::uniform_random(&t);
        let a = success_rate(&pi, &t, 200, 9);
        assert_eq!(a, success_rate(&pi, &t, 200, 9));
        assert!(a < 0.5);
    }

    #[test]
    fn expert_beats_random_in_expectation() {
        let t = task("grid-nav");
        let (mut expert, mut random) = (0.0, 0.0);
        for i in 0..100 {
            let mut rng = seeded(1000 + i);
            let start = t.sample_start(&mut rng);
            expert += t
                .rollout(start.clone(), |s, _| t.expert_action(s), &mut rng, Source::Expert)
                .gt_return()
                .unwrap();
            random += t
                .rollout(start, |_, r| t.random_action(r), &mut rng, Source::Behavior)
                .gt_return()
                .unwrap();
        }
        assert!(expert > random);
    }

    #[test]
    fn relabeling_keeps_content() {
        let t = task("grid-nav");
        let mut rng = seeded(1);
        let trajs: Vec<_> = (0..3)
            .map(|_| {
                let s = t.sample_start(&mut rng);
                t.rollout(s, |_, r| t.random_action(r), &mut rng, Source::Behavior)
            })
            .collect();
        let mut m = RewardModel::init(2, 4, &[4], Activation::Tanh, OutputSquash::None, 0).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let last = m.params().len() - 1;
        m.params_mut()[last] = 0.25;
        let r = relabel_dataset(&trajs, &m).unwrap();
        for (a, b) in r.trajectories.iter().zip(&trajs) {
            assert_eq!(a.transitions, b.transitions);
            assert!(a.gt_rewards.as_ref().unwrap().iter().all(|&x| x == 0.25));
        }
        assert_eq!(r.original_rewards[0], trajs[0].gt_rewards);
        let again = relabel_dataset(&r.trajectories, &m).unwrap();
        assert_eq!(again.trajectories, r.trajectories);
        let wrong = RewardModel::init(2, 2, &[4], Activation::Tanh, OutputSquash::None, 0).unwrap();
        assert!(relabel_dataset(&trajs, &wrong).is_err());
    }
}
