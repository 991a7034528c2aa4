//! Agent sets and the directed, classed edges the attention layer reads.
//!
//! Edge classes are zero-based here: a graph with `C` classes uses labels
//! `0..C`.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub type AgentId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub index: usize,
    pub class: usize,
}

/// Time-varying agent set plus its directed edge set.
///
/// Invariants, checked at construction: every agent has its self-edge, all
/// classes are below `num_classes`, and no `(src, dst)` pair repeats.
/// Out-edges are stored sorted by destination.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGraph {
    agent_ids: Vec<AgentId>,
    num_classes: usize,
    offsets: Vec<usize>,
    targets: Vec<Neighbor>,
}

impl AgentGraph {
    pub fn new(
        agent_ids: Vec<AgentId>,
        edges: impl IntoIterator<Item = Edge>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidGraph("at least one edge class is required".into()));
        }
        let n = agent_ids.len();
        let mut edges: Vec<Edge> = edges.into_iter().collect();
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) references an agent outside 0..{n}",
                    e.src, e.dst
                )));
            }
            if e.class >= num_classes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) has class {} but only {num_classes} classes exist",
                    e.src, e.dst, e.class
                )));
            }
        }
        edges.sort_unstable_by_key(|e| (e.src, e.dst));
        if let Some(w) = edges.windows(2).find(|w| (w[0].src, w[0].dst) == (w[1].src, w[1].dst)) {
            return Err(Error::InvalidGraph(format!(
                "duplicate edge ({}, {})",
                w[0].src, w[0].dst
            )));
        }
        let mut offsets = vec![0; n + 1];
        for e in &edges {
            offsets[e.src + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets: Vec<Neighbor> = edges
            .iter()
            .map(|e| Neighbor {
                index: e.dst,
                class: e.class,
            })
            .collect();
        let graph = Self {
            agent_ids,
            num_classes,
            offsets,
            targets,
        };
        for i in 0..n {
            if !graph.out_edges(i).iter().any(|nb| nb.index == i) {
                return Err(Error::InvalidGraph(format!("agent {i} lacks its self-edge")));
            }
        }
        Ok(graph)
    }

    /// Graph whose only edges are self-edges of class `self_class`.
    pub fn self_loops(agent_ids: Vec<AgentId>, self_class: usize, num_classes: usize) -> Result<Self> {
        let edges: Vec<Edge> = (0..agent_ids.len())
            .map(|i| Edge {
                src: i,
                dst: i,
                class: self_class,
            })
            .collect();
        Self::new(agent_ids, edges, num_classes)
    }

    /// Complete directed graph (self-edges included) with classes from `class_of(src, dst)`.
    pub fn complete(
        agent_ids: Vec<AgentId>,
        num_classes: usize,
        class_of: impl Fn(usize, usize) -> usize,
    ) -> Result<Self> {
        let n = agent_ids.len();
        let edges: Vec<Edge> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| Edge {
                src: i,
                dst: j,
                class: class_of(i, j),
            })
            .collect();
        Self::new(agent_ids, edges, num_classes)
    }

    pub fn len(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agent_ids.is_empty()
    }

    pub fn agent_ids(&self) -> &[AgentId] {
        &self.agent_ids
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    /// Out-edges of `i`, ascending by destination.
    pub fn neighbors(&self, i: usize) -> Result<&[Neighbor]> {
        if i >= self.len() {
            return Err(Error::AgentIndex {
                index: i,
                len: self.len(),
            });
        }
        Ok(self.out_edges(i))
    }

    #[inline]
    pub(crate) fn out_edges(&self, i: usize) -> &[Neighbor] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Position of `i`'s first out-edge in the flat edge order.
    #[inline]
    pub(crate) fn edge_offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.len()).flat_map(move |i| {
            self.out_edges(i).iter().map(move |nb| Edge {
                src: i,
                dst: nb.index,
                class: nb.class,
            })
        })
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        src < self.len() && self.out_edges(src).iter().any(|nb| nb.index == dst)
    }

    pub fn class_of(&self, src: usize, dst: usize) -> Option<usize> {
        if src >= self.len() {
            return None;
        }
        self.out_edges(src)
            .iter()
            .find(|nb| nb.index == dst)
            .map(|nb| nb.class)
    }

    /// Relabels agents so that old agent `i` becomes agent `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::shape("permutation length differs from agent count"));
        }
        let mut ids = vec![0; self.len()];
        for (old, &new) in perm.iter().enumerate() {
            ids[new] = self.agent_ids[old];
        }
        let edges: Vec<Edge> = self
            .edges()
            .map(|e| Edge {
                src: perm[e.src],
                dst: perm[e.dst],
                class: e.class,
            })
            .collect();
        Self::new(ids, edges, self.num_classes)
    }

    /// Appends `pad_to - len` pad agents that carry only a self-edge.
    pub fn padded(&self, pad_to: usize) -> Result<Self> {
        if pad_to < self.len() {
            return Err(Error::shape("pad size below agent count"));
        }
        let mut ids = self.agent_ids.clone();
        let first_pad = self.len();
        ids.extend((first_pad..pad_to).map(|k| AgentId::MAX - k as u64));
        let edges: Vec<Edge> = self
            .edges()
            .chain((first_pad..pad_to).map(|k| Edge {
                src: k,
                dst: k,
                class: 0,
            }))
            .collect();
        Self::new(ids, edges, self.num_classes)
    }

    /// Dense adjacency with `class + 1` for present edges and 0 otherwise.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![vec![0; self.len()]; self.len()];
        for e in self.edges() {
            adj[e.src][e.dst] = e.class + 1;
        }
        adj
    }
}

/// Removes each non-self edge independently with probability `rate`.
pub fn apply_edge_dropout(graph: &AgentGraph, rate: f64, rng: &mut Rng) -> AgentGraph {
    let rate = rate.clamp(0.0, 1.0);
    if rate == 0.0 {
        return graph.clone();
    }
    let kept: Vec<Edge> = graph
        .edges()
        .filter(|e| e.src == e.dst || rng.uniform() >= rate)
        .collect();
    AgentGraph::new(graph.agent_ids.clone(), kept, graph.num_classes)
        .expect("dropping non-self edges preserves graph invariants")
}

/// Per-agent observations stacked row-wise, with a validity mask for padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    obs: Matrix,
    valid: Vec<bool>,
}

impl ObservationBatch {
    /// All rows valid.
    pub fn new(obs: Matrix) -> Self {
        let valid = vec![true; obs.rows()];
        Self { obs, valid }
    }

    pub fn with_mask(obs: Matrix, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != obs.rows() {
            return Err(Error::shape("mask length differs from observation rows"));
        }
        for (i, &v) in valid.iter().enumerate() {
            if !v && obs.row(i).iter().any(|&x| x != 0.0) {
                return Err(Error::shape(format!("pad row {i} is not all-zero")));
            }
        }
        Ok(Self { obs, valid })
    }

    pub fn empty(obs_dim: usize) -> Self {
        Self::new(Matrix::zeros(0, obs_dim))
    }

    pub fn obs(&self) -> &Matrix {
        &self.obs
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn rows(&self) -> usize {
        self.obs.rows()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.cols()
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Appends zero rows with a false mask up to `pad_to` rows.
    pub fn padded(&self, pad_to: usize) -> Result<Self> {
        if pad_to < self.rows() {
            return Err(Error::shape("pad size below row count"));
        }
        let mut data = self.obs.data().to_vec();
        data.resize(pad_to * self.obs_dim(), 0.0);
        let mut valid = self.valid.clone();
        valid.resize(pad_to, false);
        Ok(Self {
            obs: Matrix::from_vec(pad_to, self.obs_dim(), data)?,
            valid,
        })
    }

    /// Row `i` moves to row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.rows() {
            return Err(Error::shape("permutation length differs from row count"));
        }
        let mut obs = Matrix::zeros(self.rows(), self.obs_dim());
        let mut valid = vec![false; self.rows()];
        for (old, &new) in perm.iter().enumerate() {
            obs.row_mut(new).copy_from_slice(self.obs.row(old));
            valid[new] = self.valid[old];
        }
        Ok(Self { obs, valid })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn ids(n: usize) -> Vec<AgentId> {
        (0..n as u64).collect()
    }

    fn random_graph(n: usize, classes: usize, density: f64, rng: &mut Rng) -> AgentGraph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j || rng.bernoulli(density) {
                    edges.push(Edge {
                        src: i,
                        dst: j,
                        class: (rng.next_u64() % classes as u64) as usize,
                    });
                }
            }
        }
        AgentGraph::new(ids(n), edges, classes).unwrap()
    }

    #[test]
    fn rejects_missing_self_edge() {
        let e = [Edge { src: 0, dst: 1, class: 0 }, Edge { src: 1, dst: 1, class: 0 }];
        assert!(AgentGraph::new(ids(2), e, 1).is_err());
    }

    #[test]
    fn rejects_duplicates_and_bad_classes() {
        let dup = [Edge { src: 0, dst: 0, class: 0 }, Edge { src: 0, dst: 0, class: 1 }];
        assert!(AgentGraph::new(ids(1), dup, 2).is_err());
        let bad = [Edge { src: 0, dst: 0, class: 2 }];
        assert!(AgentGraph::new(ids(1), bad, 2).is_err());
    }

    #[test]
    fn self_only_graph_lists_itself() {
        let g = AgentGraph::self_loops(ids(3), 1, 3).unwrap();
        for i in 0..3 {
            assert_eq!(g.neighbors(i).unwrap(), &[Neighbor { index: i, class: 1 }]);
        }
    }

    #[test]
    fn complete_graph_has_all_neighbors_in_order() {
        let g = AgentGraph::complete(ids(3), 1, |_, _| 0).unwrap();
        for i in 0..3 {
            let js: Vec<usize> = g.neighbors(i).unwrap().iter().map(|n| n.index).collect();
            assert_eq!(js, vec![0, 1, 2]);
        }
    }

    #[test]
    fn invalid_index() {
        let g = AgentGraph::self_loops(ids(2), 0, 1).unwrap();
        assert!(matches!(g.neighbors(2), Err(Error::AgentIndex { index: 2, len: 2 })));
    }

    #[test]
    fn neighbors_match_adjacency_oracle() {
        let mut rng = Rng::new(21);
        for _ in 0..50 {
            let n = 1 + (rng.next_u64() % 9) as usize;
            let g = random_graph(n, 4, 0.4, &mut rng);
            let adj = g.adjacency();
            for (i, row) in adj.iter().enumerate() {
                let expected: Vec<Neighbor> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(j, &c)| Neighbor { index: j, class: c - 1 })
                    .collect();
                assert_eq!(g.neighbors(i).unwrap(), expected.as_slice());
            }
        }
    }

    #[test]
    fn dropout_extremes() {
        let g = AgentGraph::complete(ids(4), 2, |i, j| usize::from(i != j)).unwrap();
        let mut rng = Rng::new(0);
        assert_eq!(apply_edge_dropout(&g, 0.0, &mut rng), g);
        let only_self = apply_edge_dropout(&g, 1.0, &mut rng);
        assert_eq!(only_self.num_edges(), 4);
        assert!(only_self.edges().all(|e| e.src == e.dst));
    }

    #[test]
    fn dropout_retention_rate_half() {
        // 10 non-self edges on top of the 5 self-edges
        let edges: Vec<Edge> = (0..5)
            .map(|i| Edge { src: i, dst: i, class: 0 })
            .chain((0..5).flat_map(|i| {
                [Edge { src: i, dst: (i + 1) % 5, class: 0 }, Edge { src: i, dst: (i + 2) % 5, class: 0 }]
            }))
            .collect();
        let g = AgentGraph::new(ids(5), edges, 1).unwrap();
        assert_eq!(g.num_edges(), 15);
        let mut rng = Rng::new(1234);
        let trials = 10_000;
        let mut kept = 0usize;
        for _ in 0..trials {
            kept += apply_edge_dropout(&g, 0.5, &mut rng).num_edges() - 5;
        }
        let retention = kept as f64 / (10 * trials) as f64;
        assert!((retention - 0.5).abs() < 0.02, "retention {retention}");
    }

    #[test]
    fn dropout_is_deterministic_given_rng() {
        let g = AgentGraph::complete(ids(6), 1, |_, _| 0).unwrap();
        let a = apply_edge_dropout(&g, 0.3, &mut Rng::new(5));
        let b = apply_edge_dropout(&g, 0.3, &mut Rng::new(5));
        assert_eq!(a, b);
    }

    #[test]
    fn padding_rows_are_zero_and_masked() {
        let obs = ObservationBatch::new(Matrix::from_rows(&[[1.0, 2.0]]).unwrap());
        let p = obs.padded(3).unwrap();
        assert_eq!(p.valid(), &[true, false, false]);
        assert_eq!(p.obs().row(2), &[0.0, 0.0]);
        assert!(obs.padded(0).is_err());
        let bad = ObservationBatch::with_mask(Matrix::from_rows(&[[1.0]]).unwrap(), vec![false]);
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn self_edges_survive_any_rate(rate in 0.0f64..=1.0, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let g = random_graph(6, 3, 0.7, &mut rng);
            let d = apply_edge_dropout(&g, rate, &mut rng);
            for i in 0..6 {
                prop_assert!(d.has_edge(i, i));
                prop_assert_eq!(d.class_of(i, i), g.class_of(i, i));
            }
        }

        #[test]
        fn neighbors_stable_under_permutation(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let n = 7;
            let g = random_graph(n, 3, 0.5, &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let p = g.permuted(&perm).unwrap();
            for i in 0..n {
                let mut mapped: Vec<(usize, usize)> = g.neighbors(i).unwrap()
                    .iter().map(|nb| (perm[nb.index], nb.class)).collect();
                mapped.sort_unstable();
                let got: Vec<(usize, usize)> = p.neighbors(perm[i]).unwrap()
                    .iter().map(|nb| (nb.index, nb.class)).collect();
                prop_assert_eq!(mapped, got);
            }
        }
    }
}
