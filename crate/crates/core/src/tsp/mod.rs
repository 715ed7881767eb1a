//! Symmetric TSP on weighted graphs: instances, partial-path states, exact and
//! greedy solvers, the MST bound, and node features for the graph network.

mod graph_io;
mod solvers;

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::GraphStructure;
use crate::search::SearchSpace;
use crate::seed::rng_from_seed;
use crate::tensor::Tensor;

pub use graph_io::{format_graph, format_graphs, format_tour, parse_graph, parse_graphs, parse_tour, GraphParseError};
pub use solvers::{greedy_tour, held_karp_solve, mst_heuristic, SolveError, Tour, HELD_KARP_MAX_NODES};

/// Node counts are limited by the `u64` visited mask.
pub const MAX_NODES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node count {0} outside 1..={MAX_NODES}")]
    NodeCount(usize),
    #[error("edge ({0}, {1}) references a missing node")]
    OutOfRange(usize, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) weight {2} outside [0, 1]")]
    Weight(usize, usize, f64),
    #[error("duplicate edge ({0}, {1})")]
    Duplicate(usize, usize),
}

/// Undirected graph with weights in `[0, 1]`, stored as a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    weights: Vec<Option<f64>>,
}

impl WeightedGraph {
    pub fn empty(n: usize) -> Result<Self, GraphError> {
        if n == 0 || n > MAX_NODES {
            return Err(GraphError::NodeCount(n));
        }
        Ok(WeightedGraph {
            n,
            weights: vec![None; n * n],
        })
    }

    pub fn add_edge(&mut self, u: usize, v: usize, w: f64) -> Result<(), GraphError> {
        if u >= self.n || v >= self.n {
            return Err(GraphError::OutOfRange(u, v));
        }
        if u == v {
            return Err(GraphError::SelfLoop(u));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(GraphError::Weight(u, v, w));
        }
        if self.has_edge(u, v) {
            return Err(GraphError::Duplicate(u, v));
        }
        self.weights[u * self.n + v] = Some(w);
        self.weights[v * self.n + u] = Some(w);
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        self.weights[u * self.n + v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.weight(u, v).is_some()
    }

    /// Neighbors of `u` in increasing index order.
    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n).filter_map(move |v| self.weight(u, v).map(|w| (v, w)))
    }

    /// Each undirected edge once, as `(u, v, w)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |u| (u + 1..self.n).filter_map(move |v| self.weight(u, v).map(|w| (u, v, w))))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn structure(&self) -> Arc<GraphStructure> {
        Arc::new(GraphStructure {
            neighbors: (0..self.n).map(|u| self.neighbors(u).collect()).collect(),
        })
    }

    /// Same graph with node `i` renamed to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> WeightedGraph {
        let mut out = WeightedGraph::empty(self.n).expect("same size");
        for (u, v, w) in self.edges() {
            out.add_edge(perm[u], perm[v], w).expect("permutation of a valid graph");
        }
        out
    }

    /// Cost of the closed cycle through `tour` (each node once), or `None` if
    /// it is not a Hamiltonian cycle of this graph.
    pub fn cycle_cost(&self, tour: &[usize]) -> Option<f64> {
        if tour.len() != self.n {
            return None;
        }
        let mut seen = vec![false; self.n];
        for &v in tour {
            if v >= self.n || std::mem::replace(&mut seen[v], true) {
                return None;
            }
        }
        let mut weights = Vec::with_capacity(tour.len());
        for i in 0..tour.len() {
            weights.push(self.weight(tour[i], tour[(i + 1) % tour.len()])?);
        }
        // Summed in sorted order so a cycle's cost does not depend on its
        // direction or starting node.
        weights.sort_by(f64::total_cmp);
        Some(weights.iter().sum())
    }
}

/// Complete graph on `n` nodes with i.i.d. uniform `[0, 1]` weights.
pub fn generate_complete_graph(n: usize, seed: u64) -> WeightedGraph {
    let mut rng = rng_from_seed(seed);
    let mut g = WeightedGraph::empty(n).expect("node count in range");
    for u in 0..n {
        for v in u + 1..n {
            g.add_edge(u, v, rng.gen::<f64>()).expect("fresh edge");
        }
    }
    g
}

/// Base cycle `0-1-…-(n-1)-0` plus `2n` distinct random chords, all with
/// uniform `[0, 1]` weights. When fewer than `2n` non-cycle pairs exist, every
/// one of them becomes a chord.
pub fn generate_chord_graph(n: usize, seed: u64) -> WeightedGraph {
    assert!(n >= 4, "chord graphs need at least 4 nodes");
    let mut rng = rng_from_seed(seed);
    let mut g = WeightedGraph::empty(n).expect("node count in range");
    for u in 0..n {
        g.add_edge(u, (u + 1) % n, rng.gen::<f64>()).expect("cycle edge");
    }
    let available = n * (n - 1) / 2 - n;
    let target = (2 * n).min(available);
    let mut placed = 0;
    while placed < target {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v || g.has_edge(u, v) {
            continue;
        }
        g.add_edge(u, v, rng.gen::<f64>()).expect("checked above");
        placed += 1;
    }
    g
}

/// Partial Hamiltonian path: visited set, current endpoint, fixed start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TspState {
    visited: u64,
    pub current: usize,
    pub start: usize,
}

impl TspState {
    pub fn new(start: usize) -> Self {
        TspState {
            visited: 1 << start,
            current: start,
            start,
        }
    }

    /// Rebuilds a state, checking that the start and current nodes are
    /// visited and every index is below `n`.
    pub fn from_parts(visited: u64, current: usize, start: usize, n: usize) -> Option<Self> {
        let in_range = n <= MAX_NODES && current < n && start < n && (n == 64 || visited >> n == 0);
        let s = TspState { visited, current, start };
        (in_range && s.is_visited(current) && s.is_visited(start)).then_some(s)
    }

    pub fn visited_mask(&self) -> u64 {
        self.visited
    }

    pub fn is_visited(&self, v: usize) -> bool {
        self.visited & (1 << v) != 0
    }

    pub fn visited_count(&self) -> usize {
        self.visited.count_ones() as usize
    }

    pub fn all_visited(&self, n: usize) -> bool {
        self.visited_count() == n
    }

    /// All nodes visited and the cycle closed back at the start.
    pub fn is_complete(&self, n: usize) -> bool {
        self.all_visited(n) && self.current == self.start && n > 1
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum StepError {
    #[error("node {0} does not exist")]
    OutOfRange(usize),
    #[error("no edge from {from} to {to}")]
    NoEdge { from: usize, to: usize },
    #[error("node {0} already visited")]
    Revisit(usize),
}

/// Moves to `next`. Returning to the start is legal only once every node has
/// been visited.
pub fn tsp_step(graph: &WeightedGraph, state: &TspState, next: usize) -> Result<TspState, StepError> {
    let n = graph.node_count();
    if next >= n {
        return Err(StepError::OutOfRange(next));
    }
    let closing = next == state.start && state.all_visited(n) && state.current != state.start;
    if state.is_visited(next) && !closing {
        return Err(StepError::Revisit(next));
    }
    if !graph.has_edge(state.current, next) {
        return Err(StepError::NoEdge {
            from: state.current,
            to: next,
        });
    }
    Ok(TspState {
        visited: state.visited | (1 << next),
        current: next,
        start: state.start,
    })
}

/// Legal next nodes in increasing index order.
pub fn legal_moves(graph: &WeightedGraph, state: &TspState) -> Vec<usize> {
    let n = graph.node_count();
    if state.is_complete(n) {
        return Vec::new();
    }
    if state.all_visited(n) {
        return if graph.has_edge(state.current, state.start) {
            vec![state.start]
        } else {
            Vec::new()
        };
    }
    graph
        .neighbors(state.current)
        .map(|(v, _)| v)
        .filter(|&v| !state.is_visited(v))
        .collect()
}

/// Incomplete state with no legal move.
pub fn is_dead_end(graph: &WeightedGraph, state: &TspState) -> bool {
    !state.is_complete(graph.node_count()) && legal_moves(graph, state).is_empty()
}

/// Per-node binary features `(visited, is_current, is_terminal)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeFeatures {
    pub rows: Vec<[bool; 3]>,
}

impl NodeFeatures {
    /// `[n, width]` tensor; columns past the third are zero.
    pub fn to_tensor(&self, width: usize) -> Tensor {
        assert!(width >= 3, "feature width must be at least 3");
        let mut values = vec![0.0; self.rows.len() * width];
        for (i, row) in self.rows.iter().enumerate() {
            for (j, &bit) in row.iter().enumerate() {
                values[i * width + j] = f64::from(u8::from(bit));
            }
        }
        Tensor::new(vec![self.rows.len(), width], values).expect("shape matches")
    }
}

pub fn encode_node_features(graph: &WeightedGraph, state: &TspState) -> NodeFeatures {
    NodeFeatures {
        rows: (0..graph.node_count())
            .map(|v| [state.is_visited(v), v == state.current, v == state.start])
            .collect(),
    }
}

/// Tour construction as a search problem; actions are next nodes and edge
/// weights are step costs.
pub struct TspSpace<'a> {
    pub graph: &'a WeightedGraph,
}

impl SearchSpace for TspSpace<'_> {
    type State = TspState;
    type Action = usize;

    fn successors(&self, state: &TspState) -> Vec<(usize, TspState, f64)> {
        legal_moves(self.graph, state)
            .into_iter()
            .map(|v| {
                let next = tsp_step(self.graph, state, v).expect("legal move");
                (v, next, self.graph.weight(state.current, v).expect("edge exists"))
            })
            .collect()
    }

    fn is_goal(&self, state: &TspState) -> bool {
        state.is_complete(self.graph.node_count())
    }
}

/// Visit order of a solved search plan (start first, closing step dropped).
pub fn plan_to_tour(start: usize, plan: &[usize]) -> Vec<usize> {
    let mut tour = vec![start];
    tour.extend(plan.iter().copied().filter(|&v| v != start));
    tour
}
