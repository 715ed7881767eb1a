use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{TspState, WeightedGraph};

/// Largest instance the bitmask dynamic program accepts.
pub const HELD_KARP_MAX_NODES: usize = 18;

/// Hamiltonian cycle as a visit order starting at the start node; the closing
/// edge back to `nodes[0]` is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub nodes: Vec<usize>,
    pub cost: f64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolveError {
    #[error("exact solving supports 3..={HELD_KARP_MAX_NODES} nodes, got {0}")]
    Size(usize),
    #[error("start node {0} out of range")]
    Start(usize),
    #[error("graph has no Hamiltonian cycle")]
    Infeasible,
    #[error("dead end after visiting {visited} nodes")]
    DeadEnd { visited: usize },
}

/// Exact minimum-cost Hamiltonian cycle through `start`.
pub fn held_karp_solve(graph: &WeightedGraph, start: usize) -> Result<Tour, SolveError> {
    let n = graph.node_count();
    if !(3..=HELD_KARP_MAX_NODES).contains(&n) {
        return Err(SolveError::Size(n));
    }
    if start >= n {
        return Err(SolveError::Start(start));
    }
    let others: Vec<usize> = (0..n).filter(|&v| v != start).collect();
    let m = others.len();
    let full = (1usize << m) - 1;
    let w = |a: usize, b: usize| graph.weight(a, b).unwrap_or(f64::INFINITY);
    // cost[mask * m + k]: cheapest path from start through `mask`, ending at others[k]
    let mut cost = vec![f64::INFINITY; (full + 1) * m];
    let mut parent = vec![u8::MAX; (full + 1) * m];
    for k in 0..m {
        cost[(1 << k) * m + k] = w(start, others[k]);
    }
    for mask in 1..=full {
        for k in 0..m {
            if mask & (1 << k) == 0 {
                continue;
            }
            let base = cost[mask * m + k];
            if base == f64::INFINITY {
                continue;
            }
            for j in 0..m {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let next = mask | (1 << j);
                let c = base + w(others[k], others[j]);
                if c < cost[next * m + j] {
                    cost[next * m + j] = c;
                    parent[next * m + j] = k as u8;
                }
            }
        }
    }
    let mut best = f64::INFINITY;
    let mut last = usize::MAX;
    for k in 0..m {
        let c = cost[full * m + k] + w(others[k], start);
        if c < best {
            best = c;
            last = k;
        }
    }
    if best == f64::INFINITY {
        return Err(SolveError::Infeasible);
    }
    let mut reversed = Vec::with_capacity(m);
    let (mut mask, mut k) = (full, last);
    loop {
        reversed.push(others[k]);
        let p = parent[mask * m + k];
        mask &= !(1 << k);
        if mask == 0 {
            break;
        }
        k = p as usize;
    }
    let mut nodes = vec![start];
    nodes.extend(reversed.into_iter().rev());
    let cost = graph.cycle_cost(&nodes).expect("reconstructed tour is Hamiltonian");
    Ok(Tour { nodes, cost })
}

/// Nearest-unvisited-neighbor construction; ties go to the lower index.
pub fn greedy_tour(graph: &WeightedGraph, start: usize) -> Result<Tour, SolveError> {
    let n = graph.node_count();
    if start >= n {
        return Err(SolveError::Start(start));
    }
    let mut state = TspState::new(start);
    let mut nodes = vec![start];
    while !state.all_visited(n) {
        let next = graph
            .neighbors(state.current)
            .filter(|&(v, _)| !state.is_visited(v))
            .fold(None, |best: Option<(usize, f64)>, (v, w)| match best {
                Some((_, bw)) if bw <= w => best,
                _ => Some((v, w)),
            });
        let Some((v, _)) = next else {
            return Err(SolveError::DeadEnd { visited: nodes.len() });
        };
        state = super::tsp_step(graph, &state, v).expect("unvisited neighbor");
        nodes.push(v);
    }
    match graph.cycle_cost(&nodes) {
        Some(cost) => Ok(Tour { nodes, cost }),
        None => Err(SolveError::DeadEnd { visited: n }),
    }
}

/// Minimum spanning tree weight over the unvisited nodes plus the current and
/// start nodes. `+inf` when those nodes are not connected.
pub fn mst_heuristic(graph: &WeightedGraph, state: &TspState) -> f64 {
    let n = graph.node_count();
    let nodes: Vec<usize> = (0..n)
        .filter(|&v| !state.is_visited(v) || v == state.current || v == state.start)
        .collect();
    if state.is_complete(n) {
        return 0.0;
    }
    // Prim's algorithm on the induced subgraph.
    let k = nodes.len();
    let mut in_tree = vec![false; k];
    let mut dist = vec![f64::INFINITY; k];
    dist[0] = 0.0;
    let mut total = 0.0;
    for _ in 0..k {
        let mut pick = usize::MAX;
        for i in 0..k {
            if !in_tree[i] && (pick == usize::MAX || dist[i] < dist[pick]) {
                pick = i;
            }
        }
        if dist[pick] == f64::INFINITY {
            return f64::INFINITY;
        }
        in_tree[pick] = true;
        total += dist[pick];
        for i in 0..k {
            if !in_tree[i] {
                if let Some(w) = graph.weight(nodes[pick], nodes[i]) {
                    dist[i] = dist[i].min(w);
                }
            }
        }
    }
    total
}
