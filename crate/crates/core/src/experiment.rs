//! Policy evaluation and search benchmarking shared by the CLI and tests.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grp::{rollout_sokoban, rollout_tsp, GrpError, SelectionMode, SokobanGrp, SokobanHeuristic, TspGrp, TspHeuristic};
use crate::search::{astar, greedy_best_first, Blind, Heuristic, SearchResult, SearchSpace};
use crate::seed::{derive_seed, rng_from_seed};
use crate::sokoban::{manhattan_heuristic, SokobanProblem, SokobanSpace, SokobanState};
use crate::tsp::{greedy_tour, held_karp_solve, mst_heuristic, plan_to_tour, Tour, TspSpace, TspState, WeightedGraph};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("instance set is empty")]
    Empty,
    #[error("heuristic {0} needs a trained model")]
    MissingModel(&'static str),
    #[error("no exact solution for instance {0}")]
    NoOracle(usize),
    #[error(transparent)]
    Grp(#[from] GrpError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Default rollout limit for a level: four steps per cell.
pub fn sokoban_step_budget(problem: &SokobanProblem) -> usize {
    4 * problem.height() * problem.width()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SokobanEval {
    pub instances: usize,
    pub solved: usize,
    pub success_rate: f64,
}

/// Rolls the policy out on every level. Stochastic rollouts draw from a
/// per-instance stream derived from `seed`.
pub fn evaluate_sokoban(
    model: &SokobanGrp,
    problems: &[SokobanProblem],
    mode: SelectionMode,
    step_budget: Option<usize>,
    seed: u64,
) -> Result<SokobanEval, ExperimentError> {
    evaluate_sokoban_with(problems, |k, p| {
        let mut rng = rng_from_seed(derive_seed(seed, k as u64));
        let budget = step_budget.unwrap_or_else(|| sokoban_step_budget(p));
        Ok(rollout_sokoban(model, p, mode, budget, &mut rng)?.solved)
    })
}

/// Success rate of an arbitrary solver `run(index, problem) -> solved`.
pub fn evaluate_sokoban_with(
    problems: &[SokobanProblem],
    mut run: impl FnMut(usize, &SokobanProblem) -> Result<bool, ExperimentError>,
) -> Result<SokobanEval, ExperimentError> {
    if problems.is_empty() {
        return Err(ExperimentError::Empty);
    }
    let mut solved = 0;
    for (k, p) in problems.iter().enumerate() {
        solved += usize::from(run(k, p)?);
    }
    Ok(SokobanEval {
        instances: problems.len(),
        solved,
        success_rate: solved as f64 / problems.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TspEval {
    pub graphs: usize,
    /// Tours attempted: one per (graph, start node).
    pub rollouts: usize,
    pub failures: usize,
    /// Mean of tour cost / optimal cost over successful rollouts.
    pub mean_relative_cost: f64,
}

impl TspEval {
    pub fn all_succeeded(&self) -> bool {
        self.failures == 0
    }
}

/// Relative cost of `tour_fn(graph, start)` against Held-Karp, averaged over
/// every start node of every graph. `None` from `tour_fn` counts as a failure.
pub fn evaluate_tours(
    graphs: &[WeightedGraph],
    mut tour_fn: impl FnMut(&WeightedGraph, usize) -> Result<Option<Tour>, ExperimentError>,
) -> Result<TspEval, ExperimentError> {
    if graphs.is_empty() {
        return Err(ExperimentError::Empty);
    }
    let (mut rollouts, mut failures, mut ratio_sum) = (0, 0, 0.0);
    for (k, g) in graphs.iter().enumerate() {
        let best = held_karp_solve(g, 0).map_err(|_| ExperimentError::NoOracle(k))?.cost;
        for start in 0..g.node_count() {
            rollouts += 1;
            match tour_fn(g, start)? {
                Some(t) => ratio_sum += t.cost / best,
                None => failures += 1,
            }
        }
    }
    let ok = rollouts - failures;
    Ok(TspEval {
        graphs: graphs.len(),
        rollouts,
        failures,
        mean_relative_cost: if ok == 0 { f64::NAN } else { ratio_sum / ok as f64 },
    })
}

pub fn evaluate_tsp_policy(model: &TspGrp, graphs: &[WeightedGraph], mode: SelectionMode, seed: u64) -> Result<TspEval, ExperimentError> {
    let mut rng = rng_from_seed(seed);
    evaluate_tours(graphs, |g, start| match rollout_tsp(model, g, start, mode, &mut rng) {
        Ok(t) => Ok(Some(t)),
        Err(GrpError::DeadEnd) => Ok(None),
        Err(e) => Err(e.into()),
    })
}

pub fn evaluate_greedy(graphs: &[WeightedGraph]) -> Result<TspEval, ExperimentError> {
    evaluate_tours(graphs, |g, start| Ok(greedy_tour(g, start).ok()))
}

/// Tour found by A* guided by the policy-derived heuristic.
pub fn learned_astar_tour(model: &TspGrp, graph: &WeightedGraph, start: usize, budget: usize) -> Option<Tour> {
    let mut h = TspHeuristic { model, graph };
    let result = astar(&TspSpace { graph }, TspState::new(start), &mut h, budget);
    tour_from_result(graph, start, &result)
}

pub fn evaluate_learned_astar(model: &TspGrp, graphs: &[WeightedGraph], budget: usize) -> Result<TspEval, ExperimentError> {
    evaluate_tours(graphs, |g, start| Ok(learned_astar_tour(model, g, start, budget)))
}

fn tour_from_result(graph: &WeightedGraph, start: usize, result: &SearchResult<usize>) -> Option<Tour> {
    if !result.is_solved() {
        return None;
    }
    let nodes = plan_to_tour(start, &result.plan);
    let cost = graph.cycle_cost(&nodes)?;
    Some(Tour { nodes, cost })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Astar,
    Greedy,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Astar => "astar",
            Algorithm::Greedy => "greedy",
        }
    }
}

/// Heuristic names; `Admissible` is Manhattan matching for Sokoban and the
/// MST bound for TSP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicKind {
    Blind,
    Admissible,
    Learned,
}

impl HeuristicKind {
    pub fn name(self, domain: Domain) -> &'static str {
        match (self, domain) {
            (HeuristicKind::Blind, _) => "blind",
            (HeuristicKind::Admissible, Domain::Sokoban) => "manhattan",
            (HeuristicKind::Admissible, Domain::Tsp) => "mst",
            (HeuristicKind::Learned, _) => "learned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    #[default]
    Sokoban,
    Tsp,
}

/// One search run. `wall_ms` is only filled when timing was requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance_id: usize,
    pub algorithm: String,
    pub heuristic: String,
    pub status: String,
    pub plan_length: Option<usize>,
    pub cost: Option<f64>,
    pub nodes_explored: usize,
    pub wall_ms: Option<f64>,
}

pub const BENCH_SCHEMA_VERSION: u32 = 1;

fn run_search<P, H>(space: &P, start: P::State, h: &mut H, algorithm: Algorithm, budget: usize) -> SearchResult<P::Action>
where
    P: SearchSpace,
    H: Heuristic<P::State, P::Action> + ?Sized,
{
    match algorithm {
        Algorithm::Astar => astar(space, start, h, budget),
        Algorithm::Greedy => greedy_best_first(space, start, h, budget),
    }
}

fn row<A>(id: usize, algorithm: Algorithm, heuristic: &str, result: &SearchResult<A>, cost: Option<f64>, wall: Option<f64>) -> BenchRow {
    let solved = result.is_solved();
    BenchRow {
        instance_id: id,
        algorithm: algorithm.as_str().into(),
        heuristic: heuristic.into(),
        status: result.status.as_str().into(),
        plan_length: solved.then_some(result.plan.len()),
        cost: if solved { cost } else { None },
        nodes_explored: result.nodes_explored,
        wall_ms: wall,
    }
}

/// Every (instance, algorithm, heuristic) combination on Sokoban levels.
pub fn bench_sokoban(
    problems: &[SokobanProblem],
    algorithms: &[Algorithm],
    heuristics: &[HeuristicKind],
    model: Option<&SokobanGrp>,
    budget: usize,
    timing: bool,
) -> Result<Vec<BenchRow>, ExperimentError> {
    if heuristics.contains(&HeuristicKind::Learned) && model.is_none() {
        return Err(ExperimentError::MissingModel("learned"));
    }
    let mut rows = Vec::new();
    for (id, problem) in problems.iter().enumerate() {
        let space = SokobanSpace { problem };
        for &algorithm in algorithms {
            for &kind in heuristics {
                let t0 = Instant::now();
                let result = match kind {
                    HeuristicKind::Blind => run_search(&space, problem.initial.clone(), &mut Blind, algorithm, budget),
                    HeuristicKind::Admissible => {
                        let mut h = |s: &SokobanState| manhattan_heuristic(problem, s);
                        run_search(&space, problem.initial.clone(), &mut h, algorithm, budget)
                    }
                    HeuristicKind::Learned => {
                        let mut h = SokobanHeuristic::new(model.expect("checked above"), problem);
                        run_search(&space, problem.initial.clone(), &mut h, algorithm, budget)
                    }
                };
                let wall = timing.then(|| t0.elapsed().as_secs_f64() * 1e3);
                let cost = Some(result.plan.len() as f64);
                rows.push(row(id, algorithm, kind.name(Domain::Sokoban), &result, cost, wall));
            }
        }
    }
    Ok(rows)
}

/// Every (graph, algorithm, heuristic) combination, tours from node 0.
pub fn bench_tsp(
    graphs: &[WeightedGraph],
    algorithms: &[Algorithm],
    heuristics: &[HeuristicKind],
    model: Option<&TspGrp>,
    budget: usize,
    timing: bool,
) -> Result<Vec<BenchRow>, ExperimentError> {
    if heuristics.contains(&HeuristicKind::Learned) && model.is_none() {
        return Err(ExperimentError::MissingModel("learned"));
    }
    let mut rows = Vec::new();
    for (id, graph) in graphs.iter().enumerate() {
        let space = TspSpace { graph };
        for &algorithm in algorithms {
            for &kind in heuristics {
                let t0 = Instant::now();
                let start = TspState::new(0);
                let result = match kind {
                    HeuristicKind::Blind => run_search(&space, start, &mut Blind, algorithm, budget),
                    HeuristicKind::Admissible => {
                        let mut h = |s: &TspState| mst_heuristic(graph, s);
                        run_search(&space, start, &mut h, algorithm, budget)
                    }
                    HeuristicKind::Learned => {
                        let mut h = TspHeuristic {
                            model: model.expect("checked above"),
                            graph,
                        };
                        run_search(&space, start, &mut h, algorithm, budget)
                    }
                };
                let wall = timing.then(|| t0.elapsed().as_secs_f64() * 1e3);
                let cost = tour_from_result(graph, 0, &result).map(|t| t.cost);
                rows.push(row(id, algorithm, kind.name(Domain::Tsp), &result, cost, wall));
            }
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per (algorithm, heuristic) aggregate of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub algorithm: String,
    pub heuristic: String,
    pub runs: usize,
    pub solved: usize,
    pub median_nodes: f64,
    /// Mean of cost / optimal cost over solved runs.
    pub mean_cost_ratio: Option<f64>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

/// Groups rows in first-seen order. `optimal[id]` is the exact cost of
/// instance `id`, used for the optimality gap.
pub fn summarize(rows: &[BenchRow], optimal: &[f64]) -> Vec<BenchSummary> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let k = (r.algorithm.as_str(), r.heuristic.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(a, h)| {
            let group: Vec<&BenchRow> = rows.iter().filter(|r| r.algorithm == a && r.heuristic == h).collect();
            let mut nodes: Vec<f64> = group.iter().map(|r| r.nodes_explored as f64).collect();
            let ratios: Vec<f64> = group
                .iter()
                .filter_map(|r| Some(r.cost? / *optimal.get(r.instance_id)?))
                .collect();
            BenchSummary {
                algorithm: a.into(),
                heuristic: h.into(),
                runs: group.len(),
                solved: group.iter().filter(|r| r.cost.is_some()).count(),
                median_nodes: median(&mut nodes),
                mean_cost_ratio: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grp::{GraphGrpConfig, SokobanGrpConfig};
    use crate::sokoban::{expert_solve, generate_level, GeneratorConfig};
    use crate::search::DEFAULT_BUDGET;
    use crate::tsp::generate_complete_graph;

    fn levels(n: usize, size: usize) -> Vec<SokobanProblem> {
        let cfg = GeneratorConfig::default();
        (0..n).map(|i| generate_level(size, size, 1, derive_seed(3, i as u64), &cfg).unwrap()).collect()
    }

    #[test]
    fn expert_replay_is_perfect() {
        let problems = levels(10, 7);
        let eval = evaluate_sokoban_with(&problems, |_, p| {
            let plan = expert_solve(p, DEFAULT_BUDGET).unwrap().plan;
            let end = plan.iter().fold(p.initial.clone(), |s, &a| p.apply_action(&s, a));
            Ok(p.is_goal(&end))
        })
        .unwrap();
        assert_eq!(eval.success_rate, 1.0);
        let graphs: Vec<_> = (0..10).map(|i| generate_complete_graph(6, i)).collect();
        let exact = evaluate_tours(&graphs, |g, s| Ok(held_karp_solve(g, s).ok())).unwrap();
        assert!((exact.mean_relative_cost - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_never_beats_optimal() {
        let graphs: Vec<_> = (0..50).map(|i| generate_complete_graph(7, 100 + i)).collect();
        let eval = evaluate_greedy(&graphs).unwrap();
        assert_eq!(eval.rollouts, 350);
        assert!(eval.all_succeeded());
        assert!(eval.mean_relative_cost >= 1.0);
        evaluate_tours(&graphs, |g, s| {
            let t = greedy_tour(g, s).unwrap();
            assert!(t.cost >= held_karp_solve(g, s).unwrap().cost - 1e-12);
            Ok(Some(t))
        })
        .unwrap();
    }

    #[test]
    fn untrained_sokoban_baseline_runs() {
        let model = SokobanGrp::new(
            SokobanGrpConfig {
                depth: 2,
                filters: 4,
                head_width: 8,
                ..SokobanGrpConfig::default()
            },
            0,
        )
        .unwrap();
        let eval = evaluate_sokoban(&model, &levels(20, 7), SelectionMode::Deterministic, None, 0).unwrap();
        assert_eq!(eval.instances, 20);
        assert!(eval.success_rate <= 1.0);
    }

    #[test]
    fn bench_rows_cover_the_grid() {
        let problems = levels(4, 7);
        let algs = [Algorithm::Astar, Algorithm::Greedy];
        let hs = [HeuristicKind::Blind, HeuristicKind::Admissible];
        let rows = bench_sokoban(&problems, &algs, &hs, None, DEFAULT_BUDGET, false).unwrap();
        assert_eq!(rows.len(), problems.len() * algs.len() * hs.len());
        assert!(rows.iter().all(|r| r.wall_ms.is_none()));
        let graphs: Vec<_> = (0..3).map(|i| generate_complete_graph(5, i)).collect();
        let model = TspGrp::new(GraphGrpConfig::default(), 0).unwrap();
        let hs = [HeuristicKind::Blind, HeuristicKind::Admissible, HeuristicKind::Learned];
        let rows = bench_tsp(&graphs, &algs, &hs, Some(&model), DEFAULT_BUDGET, true).unwrap();
        assert_eq!(rows.len(), 3 * 2 * 3);
        assert!(rows.iter().all(|r| r.wall_ms.is_some()));
        assert!(bench_tsp(&graphs, &algs, &hs, None, DEFAULT_BUDGET, false).is_err());
    }

    #[test]
    fn admissible_astar_rows_are_optimal() {
        let problems = levels(6, 7);
        let rows = bench_sokoban(&problems, &[Algorithm::Astar], &[HeuristicKind::Blind, HeuristicKind::Admissible], None, DEFAULT_BUDGET, false).unwrap();
        for pair in rows.chunks(2) {
            assert_eq!(pair[0].plan_length, pair[1].plan_length);
        }
        let graphs: Vec<_> = (0..10).map(|i| generate_complete_graph(6, 40 + i)).collect();
        let rows = bench_tsp(&graphs, &[Algorithm::Astar], &[HeuristicKind::Admissible], None, DEFAULT_BUDGET, false).unwrap();
        let optimal: Vec<f64> = graphs.iter().map(|g| held_karp_solve(g, 0).unwrap().cost).collect();
        for r in &rows {
            assert_eq!(r.cost, Some(optimal[r.instance_id]));
        }
        let summary = summarize(&rows, &optimal);
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].mean_cost_ratio, Some(1.0));
    }

    #[test]
    fn csv_is_stable_without_timing() {
        let graphs: Vec<_> = (0..3).map(|i| generate_complete_graph(5, i)).collect();
        let render = || {
            let rows = bench_tsp(&graphs, &[Algorithm::Astar], &[HeuristicKind::Admissible], None, DEFAULT_BUDGET, false).unwrap();
            let mut buf = Vec::new();
            write_bench_csv(&mut buf, &rows).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let a = render();
        assert_eq!(a, render());
        assert!(a.starts_with("instance_id,algorithm,heuristic,status,plan_length,cost,nodes_explored,wall_ms\n"));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }
}
