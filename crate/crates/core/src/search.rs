//! Best-first search (A* and greedy) with node-expansion accounting.
//!
//! Ties on the priority are broken by larger path cost `g`, then by insertion
//! order. Duplicate states are detected with a closed set keyed on the state
//! itself, so state types must have canonical `Eq`/`Hash`.

use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

pub const DEFAULT_BUDGET: usize = 200_000;

pub trait SearchSpace {
    type State: Clone + Eq + Hash;
    type Action: Clone;

    /// `(action, next state, step cost)` for every applicable action.
    fn successors(&self, state: &Self::State) -> Vec<(Self::Action, Self::State, f64)>;

    fn is_goal(&self, state: &Self::State) -> bool;
}

/// Estimated cost-to-go. `f64::INFINITY` prunes the state.
pub trait Heuristic<S, A> {
    fn estimate(&mut self, state: &S) -> f64;

    /// Estimates for all children of one expansion. Heuristics whose value
    /// depends on the parent (for example a policy's move probabilities)
    /// override this.
    fn estimate_children(&mut self, _parent: &S, children: &[(A, S, f64)]) -> Vec<f64> {
        children.iter().map(|(_, s, _)| self.estimate(s)).collect()
    }
}

impl<S, A, F: FnMut(&S) -> f64> Heuristic<S, A> for F {
    fn estimate(&mut self, state: &S) -> f64 {
        self(state)
    }
}

/// The blind heuristic `h ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Blind;

impl<S, A> Heuristic<S, A> for Blind {
    fn estimate(&mut self, _state: &S) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Solved,
    Exhausted,
    BudgetExceeded,
}

impl SearchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchStatus::Solved => "solved",
            SearchStatus::Exhausted => "exhausted",
            SearchStatus::BudgetExceeded => "budget_exceeded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult<A> {
    pub plan: Vec<A>,
    pub cost: f64,
    pub nodes_explored: usize,
    pub status: SearchStatus,
}

impl<A> SearchResult<A> {
    pub fn is_solved(&self) -> bool {
        self.status == SearchStatus::Solved
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Priority {
    /// f = g + h
    AStar,
    /// f = h
    Greedy,
}

struct OpenEntry {
    f: f64,
    g: f64,
    seq: usize,
    node: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    // BinaryHeap is a max-heap: the "greatest" entry is expanded first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct SearchNode<S, A> {
    state: S,
    parent: Option<(usize, A)>,
    g: f64,
}

pub fn astar<P, H>(space: &P, start: P::State, heuristic: &mut H, budget: usize) -> SearchResult<P::Action>
where
    P: SearchSpace,
    H: Heuristic<P::State, P::Action> + ?Sized,
{
    best_first(space, start, heuristic, budget, Priority::AStar)
}

pub fn greedy_best_first<P, H>(
    space: &P,
    start: P::State,
    heuristic: &mut H,
    budget: usize,
) -> SearchResult<P::Action>
where
    P: SearchSpace,
    H: Heuristic<P::State, P::Action> + ?Sized,
{
    best_first(space, start, heuristic, budget, Priority::Greedy)
}

fn best_first<P, H>(
    space: &P,
    start: P::State,
    heuristic: &mut H,
    budget: usize,
    priority: Priority,
) -> SearchResult<P::Action>
where
    P: SearchSpace,
    H: Heuristic<P::State, P::Action> + ?Sized,
{
    let key = |g: f64, h: f64| match priority {
        Priority::AStar => g + h,
        Priority::Greedy => h,
    };
    let mut nodes: Vec<SearchNode<P::State, P::Action>> = Vec::new();
    let mut open = BinaryHeap::new();
    // Best g seen per state, plus whether it has been expanded.
    let mut seen: HashMap<P::State, (f64, bool)> = HashMap::new();
    let mut seq = 0usize;
    let mut explored = 0usize;

    let h0 = heuristic.estimate(&start);
    if h0.is_finite() {
        seen.insert(start.clone(), (0.0, false));
        nodes.push(SearchNode {
            state: start,
            parent: None,
            g: 0.0,
        });
        open.push(OpenEntry {
            f: key(0.0, h0),
            g: 0.0,
            seq,
            node: 0,
        });
        seq += 1;
    }

    while let Some(entry) = open.pop() {
        let idx = entry.node;
        let g = nodes[idx].g;
        {
            let slot = seen.get_mut(&nodes[idx].state).expect("queued states are recorded");
            if slot.1 || slot.0 < g {
                continue;
            }
            slot.1 = true;
        }
        explored += 1;
        if space.is_goal(&nodes[idx].state) {
            let mut plan = Vec::new();
            let mut cur = idx;
            while let Some((parent, action)) = &nodes[cur].parent {
                plan.push(action.clone());
                cur = *parent;
            }
            plan.reverse();
            return SearchResult {
                plan,
                cost: g,
                nodes_explored: explored,
                status: SearchStatus::Solved,
            };
        }
        if explored >= budget {
            return SearchResult {
                plan: Vec::new(),
                cost: 0.0,
                nodes_explored: explored,
                status: SearchStatus::BudgetExceeded,
            };
        }
        let children = space.successors(&nodes[idx].state);
        let hs = heuristic.estimate_children(&nodes[idx].state, &children);
        for ((action, child, step), h) in children.into_iter().zip(hs) {
            if !h.is_finite() {
                continue;
            }
            let child_g = g + step;
            match seen.entry(child.clone()) {
                Entry::Occupied(mut e) => {
                    let (best, closed) = *e.get();
                    if closed || best <= child_g {
                        continue;
                    }
                    e.insert((child_g, false));
                }
                Entry::Vacant(e) => {
                    e.insert((child_g, false));
                }
            }
            nodes.push(SearchNode {
                state: child,
                parent: Some((idx, action)),
                g: child_g,
            });
            open.push(OpenEntry {
                f: key(child_g, h),
                g: child_g,
                seq,
                node: nodes.len() - 1,
            });
            seq += 1;
        }
    }
    SearchResult {
        plan: Vec::new(),
        cost: 0.0,
        nodes_explored: explored,
        status: SearchStatus::Exhausted,
    }
}
