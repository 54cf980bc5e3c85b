//! Exact nearest-neighbour distance to the expert transitions.
//!
//! The index is a static k-d tree over concatenated `state ‖ action` vectors:
//! median split on the widest-spread dimension, leaves of at most
//! [`LEAF_SIZE`] points. Queries return only the distance, so which of several
//! equidistant neighbours is found does not matter.
//!
//! Both the tree and [`brute_force_distance`] compute squared distances with
//! the same kernel and summation order, and the tree only prunes subtrees
//! whose every point is provably no closer than the current best. The two
//! therefore agree bit for bit.

use crate::dataset::{ExpertTransitionSet, Segment, Transition};
use crate::error::{Result, SpwError};
use crate::exec;

pub const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
}

/// Per-dimension affine map applied to stored points and queries alike.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// z-score statistics of the expert transitions. Constant dimensions keep
    /// unit scale.
    pub fn fit(expert: &ExpertTransitionSet) -> Self {
        let dim = expert.dim();
        let n = expert.count() as f64;
        let mut mean = vec![0.0; dim];
        for t in expert.transitions() {
            for (m, v) in mean.iter_mut().zip(t.features()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for t in expert.transitions() {
            for ((s, v), m) in var.iter_mut().zip(t.features()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardization { mean, scale }
    }

    fn apply(&self, v: &mut [f64]) {
        for ((x, m), s) in v.iter_mut().zip(&self.mean).zip(&self.scale) {
            *x = (*x - m) / s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IndexOptions {
    pub metric: Metric,
    /// z-score every dimension with expert statistics before measuring.
    pub standardize: bool,
}

/// Nearest-expert distances for each step of a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile(pub Vec<f64>);

impl DistanceProfile {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable exact nearest-neighbour index over expert transitions.
#[derive(Debug, Clone)]
pub struct NearestNeighborIndex {
    dim: usize,
    /// Row-major points, permuted into tree order.
    points: Vec<f64>,
    nodes: Vec<Node>,
    metric: Metric,
    standardization: Option<Standardization>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

impl NearestNeighborIndex {
    pub fn build(expert: &ExpertTransitionSet, options: IndexOptions) -> Result<Self> {
        if expert.count() == 0 {
            return Err(SpwError::EmptyExpertSet);
        }
        let dim = expert.dim();
        let standardization = options.standardize.then(|| Standardization::fit(expert));
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(expert.count());
        for t in expert.transitions() {
            if t.dim() != dim {
                return Err(SpwError::DimensionMismatch {
                    expected: dim,
                    actual: t.dim(),
                    line: None,
                });
            }
            let mut row = t.concat();
            if let Some(s) = &standardization {
                s.apply(&mut row);
            }
            rows.push(row);
        }
        Ok(Self::from_rows(dim, rows, options.metric, standardization))
    }

    /// Builds directly from raw vectors (already in query space).
    pub fn from_points(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(SpwError::EmptyExpertSet);
        }
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(SpwError::DimensionMismatch {
                expected: dim,
                actual: r.len(),
                line: None,
            });
        }
        Ok(Self::from_rows(dim, rows, Metric::Euclidean, None))
    }

    fn from_rows(
        dim: usize,
        rows: Vec<Vec<f64>>,
        metric: Metric,
        standardization: Option<Standardization>,
    ) -> Self {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut nodes = Vec::new();
        build_node(&rows, &mut order, 0, &mut nodes);
        let mut points = Vec::with_capacity(rows.len() * dim);
        for &i in &order {
            points.extend_from_slice(&rows[i]);
        }
        NearestNeighborIndex {
            dim,
            points,
            nodes,
            metric,
            standardization,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Stored points in query space (standardized if enabled), tree order.
    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    fn prepare(&self, t: &Transition) -> Result<Vec<f64>> {
        if t.dim() != self.dim {
            return Err(SpwError::DimensionMismatch {
                expected: self.dim,
                actual: t.dim(),
                line: None,
            });
        }
        let mut q = t.concat();
        if let Some(s) = &self.standardization {
            s.apply(&mut q);
        }
        Ok(q)
    }

    pub fn nearest_distance(&self, query: &Transition) -> Result<f64> {
        let q = self.prepare(query)?;
        Ok(self.nearest_sq(&q).sqrt())
    }

    /// Distance from a raw query vector (already in query space).
    pub fn nearest_distance_raw(&self, query: &[f64]) -> Result<f64> {
        if query.len() != self.dim {
            return Err(SpwError::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
                line: None,
            });
        }
        Ok(self.nearest_sq(query).sqrt())
    }

    pub fn segment_distances(&self, segment: &Segment) -> Result<DistanceProfile> {
        segment
            .transitions
            .iter()
            .map(|t| self.nearest_distance(t))
            .collect::<Result<Vec<_>>>()
            .map(DistanceProfile)
    }

    /// Batch queries, evaluated in parallel when enabled.
    pub fn nearest_distances(&self, queries: &[Transition]) -> Result<Vec<f64>> {
        exec::try_map(queries, |q| self.nearest_distance(q))
    }

    fn nearest_sq(&self, q: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: &[f64], best: &mut f64) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for p in self.points[start * self.dim..end * self.dim].chunks_exact(self.dim) {
                    let d = sq_dist(q, p);
                    if d < *best {
                        *best = d;
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // Every point in `far` is at least |diff| away along `dim`.
                if diff * diff < *best {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build_node(rows: &[Vec<f64>], order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let dim = widest_dimension(rows, order);
    let lo = order.iter().map(|&i| rows[i][dim]).fold(f64::INFINITY, f64::min);
    let hi = order.iter().map(|&i| rows[i][dim]).fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        // All points identical along every dimension.
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    // Stable sort keeps the build deterministic for equal keys.
    order.sort_by(|&a, &b| rows[a][dim].total_cmp(&rows[b][dim]));
    let mid = order.len() / 2;
    let value = rows[order[mid]][dim];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = order.split_at_mut(mid);
    let left = build_node(rows, l, offset, nodes);
    let right = build_node(rows, r, offset + mid, nodes);
    nodes[id] = Node::Split {
        dim,
        value,
        left,
        right,
    };
    id
}

fn widest_dimension(rows: &[Vec<f64>], order: &[usize]) -> usize {
    let dim = rows[order[0]].len();
    let mut best = (0, f64::NEG_INFINITY);
    for d in 0..dim {
        let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(rows[i][d]), hi.max(rows[i][d]))
        });
        if hi - lo > best.1 {
            best = (d, hi - lo);
        }
    }
    best.0
}

pub fn build_index(expert: &ExpertTransitionSet, metric: Metric) -> Result<NearestNeighborIndex> {
    NearestNeighborIndex::build(
        expert,
        IndexOptions {
            metric,
            standardize: false,
        },
    )
}

/// Linear-scan reference for [`NearestNeighborIndex::nearest_distance`].
pub fn brute_force_distance(
    expert: &ExpertTransitionSet,
    query: &Transition,
    metric: Metric,
) -> Result<f64> {
    let Metric::Euclidean = metric;
    if expert.count() == 0 {
        return Err(SpwError::EmptyExpertSet);
    }
    if query.dim() != expert.dim() {
        return Err(SpwError::DimensionMismatch {
            expected: expert.dim(),
            actual: query.dim(),
            line: None,
        });
    }
    let q = query.concat();
    let best = expert
        .transitions()
        .iter()
        .map(|t| sq_dist(&q, &t.concat()))
        .fold(f64::INFINITY, f64::min);
    Ok(best.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn set(points: &[(Vec<f64>, Vec<f64>)]) -> ExpertTransitionSet {
        ExpertTransitionSet::from_transitions(
            points
                .iter()
                .map(|(s, a)| Transition::new(s.clone(), a.clone()))
                .collect(),
        )
        .unwrap()
    }

    fn random_set(n: usize, n_state: usize, n_action: usize, seed: u64) -> ExpertTransitionSet {
        let mut rng = seeded(seed);
        ExpertTransitionSet::from_transitions(
            (0..n)
                .map(|_| {
                    Transition::new(
                        (0..n_state).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        (0..n_action).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_point_index() {
        let s = set(&[(vec![0.0], vec![0.0])]);
        let idx = build_index(&s, Metric::Euclidean).unwrap();
        assert_eq!(idx.len(), 1);
        let q = Transition::new(vec![3.0], vec![4.0]);
        assert_eq!(idx.nearest_distance(&q).unwrap(), 5.0);
        assert_eq!(brute_force_distance(&s, &q, Metric::Euclidean).unwrap(), 5.0);
    }

    #[test]
    fn stored_point_has_zero_distance() {
        let s = random_set(500, 3, 2, 1);
        let idx = build_index(&s, Metric::Euclidean).unwrap();
        for t in s.transitions().iter().step_by(7) {
            assert_eq!(idx.nearest_distance(t).unwrap(), 0.0);
        }
    }

    #[test]
    fn duplicates_are_counted() {
        let p = (vec![1.0, 2.0], vec![0.0]);
        let s = set(&[p.clone(), p.clone(), p.clone()]);
        assert_eq!(build_index(&s, Metric::Euclidean).unwrap().len(), 3);
        // Many duplicates force the degenerate-leaf path.
        let many = set(&vec![p; 100]);
        let idx = build_index(&many, Metric::Euclidean).unwrap();
        assert_eq!(idx.len(), 100);
        assert_eq!(
            idx.nearest_distance(&Transition::new(vec![1.0, 2.0], vec![0.0]))
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn matches_brute_force_small() {
        let s = random_set(2000, 4, 2, 7);
        let idx = build_index(&s, Metric::Euclidean).unwrap();
        let queries = random_set(200, 4, 2, 8);
        for q in queries.transitions() {
            let a = idx.nearest_distance(q).unwrap();
            let b = brute_force_distance(&s, q, Metric::Euclidean).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn segment_profile_matches_per_step() {
        let s = random_set(300, 2, 1, 3);
        let idx = build_index(&s, Metric::Euclidean).unwrap();
        let seg = Segment {
            transitions: random_set(12, 2, 1, 4).transitions().to_vec(),
            gt_rewards: None,
        };
        let prof = idx.segment_distances(&seg).unwrap();
        assert_eq!(prof.len(), 12);
        for (d, t) in prof.as_slice().iter().zip(&seg.transitions) {
            assert_eq!(*d, brute_force_distance(&s, t, Metric::Euclidean).unwrap());
        }
        let inside = Segment {
            transitions: s.transitions()[..5].to_vec(),
            gt_rewards: None,
        };
        assert!(idx
            .segment_distances(&inside)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&d| d == 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let s = random_set(10, 2, 1, 0);
        let idx = build_index(&s, Metric::Euclidean).unwrap();
        let q = Transition::new(vec![0.0], vec![0.0]);
        assert!(matches!(
            idx.nearest_distance(&q),
            Err(SpwError::DimensionMismatch { expected: 3, actual: 2, .. })
        ));
        assert!(brute_force_distance(&s, &q, Metric::Euclidean).is_err());
    }

    #[test]
    fn standardized_index_matches_transformed_brute_force() {
        let mut rng = seeded(5);
        let s = ExpertTransitionSet::from_transitions(
            (0..400)
                .map(|_| {
                    Transition::new(
                        vec![rng.gen_range(0.0..100.0), rng.gen_range(0.0..0.01)],
                        vec![1.0],
                    )
                })
                .collect(),
        )
        .unwrap();
        let idx = NearestNeighborIndex::build(
            &s,
            IndexOptions {
                metric: Metric::Euclidean,
                standardize: true,
            },
        )
        .unwrap();
        let st = Standardization::fit(&s);
        assert_eq!(st.scale[2], 1.0);
        let q = Transition::new(vec![50.0, 0.005], vec![1.0]);
        let mut qv = q.concat();
        st.apply(&mut qv);
        let brute = s
            .transitions()
            .iter()
            .map(|t| {
                let mut p = t.concat();
                st.apply(&mut p);
                sq_dist(&qv, &p)
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        assert_eq!(idx.nearest_distance(&q).unwrap(), brute);
    }
}
