//! Expert trajectories and the supervised samples derived from them.

mod file;

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, rng_from_seed};
use crate::sokoban::{expert_solve, Action, Observation, SokobanProblem, SokobanState};
use crate::tsp::{encode_node_features, held_karp_solve, tsp_step, NodeFeatures, SolveError, TspState, WeightedGraph};

pub use file::{load_dataset, read_dataset, save_dataset, write_dataset, DatasetError, FORMAT_VERSION};

/// Collection aborts when more than this fraction of instances is unsolved.
pub const MAX_FAILURE_RATE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollectError {
    #[error("expert failed on {failed} of {total} instances")]
    FailureRate { failed: usize, total: usize },
    #[error("no instances given")]
    Empty,
}

/// An expert run `s_0, a_0, s_1, …, s_g`; its length `T` is the number of states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub problem: Arc<SokobanProblem>,
    pub states: Vec<SokobanState>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    /// Replays `actions` from the initial state; `None` unless the replay ends
    /// in a goal state.
    pub fn from_plan(problem: Arc<SokobanProblem>, actions: Vec<Action>) -> Option<Self> {
        let mut states = vec![problem.initial.clone()];
        for &a in &actions {
            let next = problem.apply_action(states.last().expect("non-empty"), a);
            states.push(next);
        }
        problem
            .is_goal(states.last().expect("non-empty"))
            .then_some(Trajectory { problem, states, actions })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn observation(&self, i: usize) -> Observation {
        self.problem.render_observation(&self.states[i], true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collection<T> {
    pub trajectories: Vec<T>,
    pub unsolved: usize,
}

/// One verified expert trajectory per solved problem.
pub fn collect_trajectories(problems: &[SokobanProblem], budget: usize) -> Result<Collection<Trajectory>, CollectError> {
    if problems.is_empty() {
        return Err(CollectError::Empty);
    }
    let mut trajectories = Vec::with_capacity(problems.len());
    let mut unsolved = 0;
    for p in problems {
        match expert_solve(p, budget) {
            Some(r) => {
                let t = Trajectory::from_plan(Arc::new(p.clone()), r.plan).expect("expert plans are replay-verified");
                trajectories.push(t);
            }
            None => unsolved += 1,
        }
    }
    check_failure_rate(unsolved, problems.len())?;
    Ok(Collection { trajectories, unsolved })
}

fn check_failure_rate(failed: usize, total: usize) -> Result<(), CollectError> {
    if failed as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(CollectError::FailureRate { failed, total });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairSampling {
    /// Every pair `i < j` equally likely.
    #[default]
    Uniform,
    /// Goal index `j` drawn with probability proportional to `j`, then `i < j` uniformly.
    LinearIncreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Extra pairs per trajectory; `None` means the trajectory length.
    pub n_bootstrap: Option<usize>,
    pub sampling: PairSampling,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_bootstrap: None,
            sampling: PairSampling::Uniform,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    /// No extra pairs: only the original samples toward the real goal.
    pub fn without_bootstrap(seed: u64) -> Self {
        DatasetConfig {
            n_bootstrap: Some(0),
            seed,
            ..DatasetConfig::default()
        }
    }
}

/// One Sokoban training record.
#[derive(Debug, Clone, PartialEq)]
pub struct SokobanSample {
    pub current: Observation,
    pub goal: Observation,
    pub action: usize,
    /// Remaining steps to the goal state of the pair.
    pub plan_length: u32,
}

/// Draws one `(i, j)` pair with `i < j < t`.
pub fn sample_pair<R: Rng + ?Sized>(t: usize, sampling: PairSampling, rng: &mut R) -> (usize, usize) {
    assert!(t >= 2, "pairs need at least two states");
    match sampling {
        PairSampling::Uniform => {
            // Index into the T(T-1)/2 pairs ordered by j, then i.
            let mut k = rng.gen_range(0..t * (t - 1) / 2);
            let mut j = 1;
            while k >= j {
                k -= j;
                j += 1;
            }
            (k, j)
        }
        PairSampling::LinearIncreasing => {
            let weights = WeightedIndex::new(1..t).expect("positive weights");
            let j = weights.sample(rng) + 1;
            (rng.gen_range(0..j), j)
        }
    }
}

/// The `T-1` samples toward the real goal plus `n_bootstrap` sampled pairs whose
/// goal is an intermediate state rendered with the agent.
pub fn bootstrap_pairs(traj: &Trajectory, config: &DatasetConfig, index: u64) -> Vec<SokobanSample> {
    let t = traj.len();
    if t < 2 {
        return Vec::new();
    }
    let observations: Vec<Observation> = (0..t).map(|i| traj.observation(i)).collect();
    let real_goal = traj.problem.goal_observation();
    let mut samples: Vec<SokobanSample> = (0..t - 1)
        .map(|i| SokobanSample {
            current: observations[i].clone(),
            goal: real_goal.clone(),
            action: traj.actions[i].index(),
            plan_length: (t - 1 - i) as u32,
        })
        .collect();
    let n = config.n_bootstrap.unwrap_or(t);
    let mut rng = rng_from_seed(derive_seed(config.seed, index));
    for _ in 0..n {
        let (i, j) = sample_pair(t, config.sampling, &mut rng);
        samples.push(SokobanSample {
            current: observations[i].clone(),
            goal: observations[j].clone(),
            action: traj.actions[i].index(),
            plan_length: (j - i) as u32,
        });
    }
    samples
}

/// Samples for a whole trajectory set; trajectory `k` uses seed stream `k`.
pub fn assemble_dataset(trajectories: &[Trajectory], config: &DatasetConfig) -> Vec<SokobanSample> {
    trajectories
        .iter()
        .enumerate()
        .flat_map(|(k, t)| bootstrap_pairs(t, config, k as u64))
        .collect()
}

/// An expert tour as a visit order from its start node.
#[derive(Debug, Clone, PartialEq)]
pub struct TspTrajectory {
    pub graph: Arc<WeightedGraph>,
    pub tour: Vec<usize>,
    pub cost: f64,
}

impl TspTrajectory {
    /// `None` unless `tour` is a Hamiltonian cycle of `graph`.
    pub fn new(graph: Arc<WeightedGraph>, tour: Vec<usize>) -> Option<Self> {
        let cost = graph.cycle_cost(&tour)?;
        Some(TspTrajectory { graph, tour, cost })
    }

    /// States before each non-closing step, paired with the chosen node.
    pub fn steps(&self) -> Vec<(TspState, usize)> {
        let mut state = TspState::new(self.tour[0]);
        let mut out = Vec::with_capacity(self.tour.len() - 1);
        for &v in &self.tour[1..] {
            out.push((state, v));
            state = tsp_step(&self.graph, &state, v).expect("validated tour");
        }
        out
    }
}

/// One TSP training record: a partial path and the expert's next node.
#[derive(Debug, Clone, PartialEq)]
pub struct TspSample {
    pub graph: Arc<WeightedGraph>,
    pub state: TspState,
    pub action: usize,
}

impl TspSample {
    pub fn features(&self) -> NodeFeatures {
        encode_node_features(&self.graph, &self.state)
    }
}

/// Optimal tours from `start` for each graph.
pub fn collect_tsp_trajectories(graphs: &[WeightedGraph], start: usize) -> Result<Collection<TspTrajectory>, CollectError> {
    if graphs.is_empty() {
        return Err(CollectError::Empty);
    }
    let mut trajectories = Vec::with_capacity(graphs.len());
    let mut unsolved = 0;
    for g in graphs {
        match held_karp_solve(g, start) {
            Ok(t) => trajectories.push(TspTrajectory::new(Arc::new(g.clone()), t.nodes).expect("exact tours are valid")),
            Err(SolveError::Infeasible | SolveError::Size(_)) => unsolved += 1,
            Err(e) => panic!("unexpected solver error: {e}"),
        }
    }
    check_failure_rate(unsolved, graphs.len())?;
    Ok(Collection { trajectories, unsolved })
}

pub fn tsp_samples(trajectories: &[TspTrajectory]) -> Vec<TspSample> {
    trajectories
        .iter()
        .flat_map(|t| {
            t.steps().into_iter().map(|(state, action)| TspSample {
                graph: t.graph.clone(),
                state,
                action,
            })
        })
        .collect()
}

/// A homogeneous sample set, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Sokoban(Vec<SokobanSample>),
    Tsp(Vec<TspSample>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Sokoban(s) => s.len(),
            Dataset::Tsp(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
