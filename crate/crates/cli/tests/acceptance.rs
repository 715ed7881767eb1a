//! Acceptance suite: twelve criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (no libtest harness) so that trained models are
//! shared between criteria in a fixed order. Exits non-zero if any criterion
//! fails. `GRP_ACCEPT_ONLY=4,5` restricts the run to a subset.

use std::collections::{HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use grp_core::autodiff::GraphStructure;
use grp_core::data::{
    assemble_dataset, collect_trajectories, collect_tsp_trajectories, tsp_samples, DatasetConfig, SokobanSample,
};
use grp_core::experiment::{evaluate_greedy, evaluate_learned_astar, evaluate_sokoban, evaluate_tsp_policy, median};
use grp_core::gradcheck::{finite_diff_check, finite_diff_check_strided, GradCheckReport, Probe};
use grp_core::grp::{
    train, GraphGrpConfig, SelectionMode, SokobanGrp, SokobanGrpConfig, SokobanHeuristic, TrainConfig, Trainable, TspGrp,
};
use grp_core::leapfrog::{leapfrog_run, retrained_baseline, LeapfrogPlan};
use grp_core::search::{astar, Blind, DEFAULT_BUDGET};
use grp_core::seed::derive_seed;
use grp_core::sokoban::{
    expert_solve, floor_is_connected, generate_level, manhattan_heuristic, open_area_violation, Action, GeneratorConfig,
    SokobanProblem, SokobanSpace, SokobanState,
};
use grp_core::tsp::{generate_complete_graph, held_karp_solve, mst_heuristic, plan_to_tour, TspSpace, TspState, WeightedGraph};
use grp_core::{Padding, Tape, Tensor, Var};

const SEED: u64 = 20_240_601;

/// Shared state handed from one criterion to the next.
#[derive(Default)]
struct Shared {
    tsp_model: Option<TspGrp>,
    sokoban_model: Option<SokobanGrp>,
    /// Success of the 8x32 bootstrap model on the reduced dataset.
    reduced_8x32: Option<f64>,
}

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            passed,
            detail: detail.into(),
        }
    }
}

fn stream(s: u64) -> u64 {
    derive_seed(SEED, s)
}

fn info(line: impl AsRef<str>) {
    println!("    info: {}", line.as_ref());
}

// ---------------------------------------------------------------- oracles

/// Cheapest Hamiltonian cycle by enumerating every permutation of 1..n.
fn brute_force_tsp(g: &WeightedGraph) -> Option<f64> {
    fn rec(g: &WeightedGraph, tour: &mut Vec<usize>, used: &mut [bool], best: &mut Option<f64>) {
        let n = g.node_count();
        if tour.len() == n {
            if let Some(c) = g.cycle_cost(tour) {
                if best.map_or(true, |b| c < b) {
                    *best = Some(c);
                }
            }
            return;
        }
        for v in 1..n {
            if !used[v] {
                used[v] = true;
                tour.push(v);
                rec(g, tour, used, best);
                tour.pop();
                used[v] = false;
            }
        }
    }
    let mut best = None;
    let mut used = vec![false; g.node_count()];
    used[0] = true;
    rec(g, &mut vec![0], &mut used, &mut best);
    best
}

/// Shortest plan length by breadth-first search over (agent, objects).
fn bfs_plan_length(p: &SokobanProblem) -> Option<usize> {
    let mut seen = HashSet::from([p.initial.clone()]);
    let mut queue = VecDeque::from([(p.initial.clone(), 0usize)]);
    while let Some((s, d)) = queue.pop_front() {
        if p.is_goal(&s) {
            return Some(d);
        }
        for a in Action::ALL {
            let next = p.apply_action(&s, a);
            if seen.insert(next.clone()) {
                queue.push_back((next, d + 1));
            }
        }
    }
    None
}

fn is_hamiltonian_cycle(g: &WeightedGraph, tour: &[usize]) -> bool {
    let n = g.node_count();
    let distinct: HashSet<usize> = tour.iter().copied().collect();
    tour.len() == n && distinct.len() == n && g.cycle_cost(tour).is_some()
}

// ---------------------------------------------------------------- data

fn levels(size: usize, count: usize, seed: u64) -> Vec<SokobanProblem> {
    let cfg = GeneratorConfig::default();
    (0..count)
        .map(|i| generate_level(size, size, 1, derive_seed(seed, i as u64), &cfg).expect("generator"))
        .collect()
}

fn graphs(n: usize, count: usize, seed: u64) -> Vec<WeightedGraph> {
    (0..count).map(|i| generate_complete_graph(n, derive_seed(seed, i as u64))).collect()
}

fn sokoban_samples(train_levels: &[SokobanProblem], bootstrap: bool, seed: u64) -> Vec<SokobanSample> {
    let trajectories = collect_trajectories(train_levels, DEFAULT_BUDGET).expect("expert").trajectories;
    let cfg = if bootstrap {
        DatasetConfig {
            seed,
            ..DatasetConfig::default()
        }
    } else {
        DatasetConfig::without_bootstrap(seed)
    };
    assemble_dataset(&trajectories, &cfg)
}

fn sokoban_config(depth: usize, filters: usize) -> SokobanGrpConfig {
    SokobanGrpConfig {
        depth,
        filters,
        ..SokobanGrpConfig::default()
    }
}

fn train_sokoban(config: SokobanGrpConfig, samples: &[SokobanSample], epochs: usize, seed: u64) -> SokobanGrp {
    let mut model = SokobanGrp::new(config, derive_seed(seed, 1)).expect("config");
    train(&mut model, samples, &TrainConfig::sokoban(epochs, derive_seed(seed, 2))).expect("training");
    model
}

fn success(model: &SokobanGrp, test: &[SokobanProblem]) -> f64 {
    let eval = evaluate_sokoban(model, test, SelectionMode::Deterministic, None, stream(90)).expect("eval");
    100.0 * eval.success_rate
}

fn train_tsp(config: GraphGrpConfig, n: usize, count: usize, epochs: usize, seed: u64) -> TspGrp {
    let data = collect_tsp_trajectories(&graphs(n, count, derive_seed(seed, 0)), 0).expect("held-karp");
    let mut model = TspGrp::new(config, derive_seed(seed, 1)).expect("config");
    train(&mut model, &tsp_samples(&data.trajectories), &TrainConfig::tsp(epochs, derive_seed(seed, 2))).expect("training");
    model
}

// ---------------------------------------------------------------- 1

fn c1_held_karp_oracle(_: &mut Shared) -> Verdict {
    let (mut checked, mut mismatches) = (0, Vec::new());
    for n in 4..=8 {
        for k in 0..40 {
            let g = generate_complete_graph(n, derive_seed(stream(1), (n * 100 + k) as u64));
            let hk = held_karp_solve(&g, 0).expect("complete graph");
            let brute = brute_force_tsp(&g).expect("complete graph");
            let valid = is_hamiltonian_cycle(&g, &hk.nodes) && g.cycle_cost(&hk.nodes) == Some(hk.cost);
            if hk.cost != brute || !valid {
                mismatches.push(format!("n={n} k={k}: hk {} brute {brute}", hk.cost));
            }
            checked += 1;
        }
    }
    Verdict::new(
        mismatches.is_empty() && checked == 200,
        format!("{checked} graphs, {} mismatches {:?}", mismatches.len(), mismatches.first()),
    )
}

// ---------------------------------------------------------------- 2

fn c2_admissible_search(_: &mut Shared) -> Verdict {
    let mut tsp_bad = 0;
    for k in 0..100u64 {
        let n = 4 + (k % 4) as usize;
        let g = generate_complete_graph(n, derive_seed(stream(2), k));
        let mut h = |s: &TspState| mst_heuristic(&g, s);
        let r = astar(&TspSpace { graph: &g }, TspState::new(0), &mut h, DEFAULT_BUDGET);
        let hk = held_karp_solve(&g, 0).expect("complete graph").cost;
        let tour = plan_to_tour(0, &r.plan);
        if !r.is_solved() || g.cycle_cost(&tour) != Some(hk) {
            tsp_bad += 1;
        }
    }
    let cfg = GeneratorConfig::default();
    let mut sok_bad = 0;
    for k in 0..100u64 {
        let (h, w) = (5 + (k % 5) as usize, 5 + (k / 5 % 5) as usize);
        let p = generate_level(h, w, 1, derive_seed(stream(3), k), &cfg).expect("generator");
        let mut heur = |s: &SokobanState| manhattan_heuristic(&p, s);
        let r = astar(&SokobanSpace { problem: &p }, p.initial.clone(), &mut heur, DEFAULT_BUDGET);
        if !r.is_solved() || Some(r.plan.len()) != bfs_plan_length(&p) {
            sok_bad += 1;
        }
    }
    Verdict::new(
        tsp_bad == 0 && sok_bad == 0,
        format!("tsp mismatches {tsp_bad}/100, sokoban mismatches {sok_bad}/100"),
    )
}

// ---------------------------------------------------------------- 3

fn tensor(shape: &[usize], seed: u64) -> Tensor {
    let len = shape.iter().product();
    let values = (0..len)
        .map(|i| (derive_seed(seed, i as u64) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
        .collect();
    Tensor::new(shape.to_vec(), values).unwrap()
}

fn op_check(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> GradCheckReport {
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    let flat: Vec<Vec<f64>> = inputs.iter().map(|t| t.values().to_vec()).collect();
    finite_diff_check(&flat, 1e-5, 1e-3, |point| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point
            .iter()
            .zip(&shapes)
            .map(|(v, s)| tape.input(&Tensor::new(s.clone(), v.clone()).unwrap()))
            .collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out);
        Probe {
            value: tape.scalar(out),
            gradients: vars
                .iter()
                .zip(point)
                .map(|(&v, p)| grads.wrt(v).map_or(vec![0.0; p.len()], <[f64]>::to_vec))
                .collect(),
            regime: tape.regime(),
        }
    })
}

fn model_check<M: Trainable + Clone>(
    model: &M,
    sample: &M::Sample,
    stride: usize,
    params: impl Fn(&M) -> Vec<Vec<f64>>,
    set: impl Fn(&mut M, &[Vec<f64>]),
    grads: impl Fn(&M) -> Vec<Vec<f64>>,
    zero: impl Fn(&mut M, &Tape, &grp_core::autodiff::Grads),
) -> GradCheckReport {
    let inputs = params(model);
    finite_diff_check_strided(&inputs, 1e-5, 1e-3, stride, &mut |x: &[Vec<f64>]| {
        let mut m = model.clone();
        set(&mut m, x);
        let mut tape = Tape::new();
        let terms = m.sample_loss(&mut tape, sample).expect("loss");
        let g = tape.backward(terms.total);
        zero(&mut m, &tape, &g);
        Probe {
            value: tape.scalar(terms.total),
            gradients: grads(&m),
            regime: tape.regime(),
        }
    })
}

fn c3_gradients(_: &mut Shared) -> Verdict {
    let mut reports: Vec<(&str, GradCheckReport)> = Vec::new();
    let square_sum = |t: &mut Tape, y: Var| {
        let sq = t.mul(y, y).unwrap();
        t.sum(sq)
    };
    let s = stream(4);
    for padding in [Padding::Same, Padding::Valid] {
        let inputs = [tensor(&[2, 5, 5], s), tensor(&[3, 2, 3, 3], s + 1), tensor(&[3], s + 2)];
        reports.push(("conv2d", op_check(&inputs, |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], padding).unwrap();
            square_sum(t, y)
        })));
    }
    let inputs = [tensor(&[6], s + 3), tensor(&[4, 6], s + 4), tensor(&[4], s + 5)];
    reports.push(("affine", op_check(&inputs, |t, v| {
        let y = t.affine(v[0], v[1], v[2]).unwrap();
        square_sum(t, y)
    })));
    let inputs = [tensor(&[5, 3], s + 6), tensor(&[2, 3], s + 7), tensor(&[2], s + 8)];
    reports.push(("row_affine", op_check(&inputs, |t, v| {
        let y = t.row_affine(v[0], v[1], v[2]).unwrap();
        square_sum(t, y)
    })));
    let inputs = [tensor(&[2, 4, 5], s + 9), tensor(&[3, 4, 5], s + 10), tensor(&[5, 4, 5], s + 11)];
    reports.push(("relu/add/mul/scale/concat/window/sum", op_check(&inputs, |t, v| {
        let c = t.concat_channels(v[0], v[1]).unwrap();
        let a = t.relu(c);
        let m = t.mul(a, v[2]).unwrap();
        let m = t.add(m, v[2]).unwrap();
        let sc = t.scale(m, 0.5);
        let w = t.window(sc, 3, 0, 3).unwrap();
        t.sum(w)
    })));
    let inputs = [tensor(&[5], s + 12)];
    reports.push(("softmax_cross_entropy", op_check(&inputs, |t, v| t.softmax_cross_entropy(v[0], 2).unwrap())));
    let inputs = [tensor(&[1], s + 13)];
    reports.push(("l1", op_check(&inputs, |t, v| t.l1(v[0], 0.25).unwrap())));

    let g = generate_complete_graph(5, s);
    let mut gs = g.structure();
    Arc::make_mut(&mut gs).neighbors[4].clear();
    for list in &mut Arc::make_mut(&mut gs).neighbors[..4] {
        list.retain(|&(v, _)| v != 4);
    }
    let graph: Arc<GraphStructure> = gs;
    let inputs = [tensor(&[5, 3], s + 14), tensor(&[7, 4], s + 15), tensor(&[4], s + 16)];
    reports.push(("graph_conv", op_check(&inputs, |t, v| {
        let y = t.graph_conv(v[0], graph.clone(), v[1], v[2]).unwrap();
        square_sum(t, y)
    })));
    let inputs = [tensor(&[5, 3], s + 17), tensor(&[4, 7], s + 18), tensor(&[4], s + 19)];
    reports.push(("edge_inputs/sum_incoming", op_check(&inputs, |t, v| {
        let e = t.edge_inputs(v[0], graph.clone()).unwrap();
        let h = t.row_affine(e, v[1], v[2]).unwrap();
        let y = t.sum_incoming(h, graph.clone()).unwrap();
        square_sum(t, y)
    })));

    // Full Sokoban network at the size used below, every 31st coordinate.
    let p = generate_level(7, 7, 1, s, &GeneratorConfig::default()).unwrap();
    let mut sample = sokoban_samples(&[p], false, 0).swap_remove(0);
    sample.plan_length += 3;
    let sok = SokobanGrp::new(sokoban_config(8, 32), s).unwrap();
    reports.push(("sokoban 8x32 network", model_check(
        &sok,
        &sample,
        31,
        |m| m.params().iter().map(|(_, t)| t.values().to_vec()).collect(),
        |m, x| m.params_mut().tensors_mut().iter_mut().zip(x).for_each(|(t, v)| t.values_mut().copy_from_slice(v)),
        |m| m.params().iter().map(|(_, t)| t.grad().map_or(vec![0.0; t.len()], <[f64]>::to_vec)).collect(),
        |m, tape, g| {
            m.params_mut().zero_grads();
            tape.accumulate_param_grads(g, m.params_mut());
        },
    )));

    // Full graph network (4x26). At the init scale the summed messages saturate
    // the softmax, so the check runs at a point with O(1) loss.
    let g = generate_complete_graph(6, s);
    let samples = tsp_samples(&collect_tsp_trajectories(&[g], 0).unwrap().trajectories);
    let mut tsp = TspGrp::new(GraphGrpConfig::default(), s).unwrap();
    tsp.params_mut().tensors_mut().iter_mut().for_each(|t| t.values_mut().iter_mut().for_each(|v| *v *= 0.4));
    reports.push(("graph network 4x26", model_check(
        &tsp,
        &samples[1],
        1,
        |m| m.params().iter().map(|(_, t)| t.values().to_vec()).collect(),
        |m, x| m.params_mut().tensors_mut().iter_mut().zip(x).for_each(|(t, v)| t.values_mut().copy_from_slice(v)),
        |m| m.params().iter().map(|(_, t)| t.grad().map_or(vec![0.0; t.len()], <[f64]>::to_vec)).collect(),
        |m, tape, g| {
            m.params_mut().zero_grads();
            tape.accumulate_param_grads(g, m.params_mut());
        },
    )));

    let mut ok = true;
    let mut worst = 0.0f64;
    for (name, r) in &reports {
        info(format!(
            "{name}: max rel err {:.2e}, checked {}, skipped at kinks {}",
            r.max_relative_error, r.checked, r.skipped_at_kinks
        ));
        ok &= r.passed();
        worst = worst.max(r.max_relative_error);
    }
    Verdict::new(ok, format!("{} checks, worst relative error {worst:.2e} (< 1e-3)", reports.len()))
}

// ---------------------------------------------------------------- 4, 5

fn c4_tsp_four_nodes(shared: &mut Shared) -> Verdict {
    let model = train_tsp(GraphGrpConfig::default(), 4, 1000, 30, stream(5));
    let test = graphs(4, 100, stream(6));
    let policy = evaluate_tsp_policy(&model, &test, SelectionMode::Deterministic, stream(7)).unwrap();
    let greedy = evaluate_greedy(&test).unwrap();
    shared.tsp_model = Some(model);
    Verdict::new(
        policy.all_succeeded() && policy.mean_relative_cost <= greedy.mean_relative_cost,
        format!(
            "failures {}/{}, relative cost {:.4} vs greedy {:.4}",
            policy.failures, policy.rollouts, policy.mean_relative_cost, greedy.mean_relative_cost
        ),
    )
}

fn c5_tsp_generalization(shared: &mut Shared) -> Verdict {
    let Some(model) = shared.tsp_model.as_ref() else {
        return Verdict::new(false, "no model from criterion 4");
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for n in 5..=8 {
        let test = graphs(n, 100, derive_seed(stream(8), n as u64));
        let policy = evaluate_tsp_policy(model, &test, SelectionMode::Deterministic, stream(7)).unwrap();
        let greedy = evaluate_greedy(&test).unwrap();
        ok &= policy.all_succeeded() && policy.mean_relative_cost <= greedy.mean_relative_cost;
        parts.push(format!(
            "n={n} {:.3}/{:.3}{}",
            policy.mean_relative_cost,
            greedy.mean_relative_cost,
            if policy.failures > 0 { format!(" ({} failed)", policy.failures) } else { String::new() }
        ));
    }
    Verdict::new(ok, format!("policy/greedy: {}", parts.join(", ")))
}

/// Same protocol with per-edge ReLU messages; printed for reference only.
fn edge_message_reference() {
    let cfg = GraphGrpConfig {
        edge_hidden: Some(16),
        ..GraphGrpConfig::default()
    };
    let model = train_tsp(cfg, 4, 1000, 30, stream(5));
    let mut parts = Vec::new();
    for n in 4..=8 {
        let test = if n == 4 { graphs(4, 100, stream(6)) } else { graphs(n, 100, derive_seed(stream(8), n as u64)) };
        let policy = evaluate_tsp_policy(&model, &test, SelectionMode::Deterministic, stream(7)).unwrap();
        let greedy = evaluate_greedy(&test).unwrap();
        parts.push(format!("n={n} {:.3}/{:.3}", policy.mean_relative_cost, greedy.mean_relative_cost));
    }
    info(format!("edge_hidden=16 reference (not scored), policy/greedy: {}", parts.join(", ")));
}

// ---------------------------------------------------------------- 6

fn c6_sokoban_training(shared: &mut Shared) -> Verdict {
    let train_levels = levels(7, 2000, stream(10));
    let test = levels(7, 200, stream(11));
    let samples = sokoban_samples(&train_levels, true, stream(12));
    info(format!("{} trajectories, {} samples", train_levels.len(), samples.len()));
    let untrained = SokobanGrp::new(sokoban_config(8, 32), derive_seed(stream(13), 1)).unwrap();
    let base = success(&untrained, &test);
    let model = train_sokoban(sokoban_config(8, 32), &samples, 6, stream(13));
    let rate = success(&model, &test);
    shared.sokoban_model = Some(model);
    Verdict::new(
        rate >= 60.0 && rate - base >= 50.0,
        format!("success {rate:.1}% vs untrained {base:.1}% (need >= 60 and +50)"),
    )
}

// ---------------------------------------------------------------- 7

/// The 500-trajectory training set and 200-level test set shared by 7 and 9.
fn reduced_data(bootstrap: bool) -> (Vec<SokobanSample>, Vec<SokobanProblem>) {
    let train_levels = levels(7, 500, stream(20));
    (sokoban_samples(&train_levels, bootstrap, stream(22)), levels(7, 200, stream(21)))
}

fn c7_bootstrap(shared: &mut Shared) -> Verdict {
    let (with_samples, test) = reduced_data(true);
    let (without_samples, _) = reduced_data(false);
    let a = success(&train_sokoban(sokoban_config(8, 32), &with_samples, 10, stream(23)), &test);
    let b = success(&train_sokoban(sokoban_config(8, 32), &without_samples, 10, stream(23)), &test);
    shared.reduced_8x32 = Some(a);
    let ok = a >= b || (b - a <= 2.0 && a >= 60.0 && b >= 60.0);
    Verdict::new(ok, format!("with bootstrap {a:.1}% vs without {b:.1}%"))
}

// ---------------------------------------------------------------- 8

fn c8_learned_heuristic(shared: &mut Shared) -> Verdict {
    let Some(model) = shared.sokoban_model.as_ref() else {
        return Verdict::new(false, "no model from criterion 6");
    };
    let test = levels(7, 50, stream(30));
    let (mut learned_nodes, mut blind_nodes) = (Vec::new(), Vec::new());
    let (mut solved, mut near_optimal) = (0, 0);
    for p in &test {
        let space = SokobanSpace { problem: p };
        let optimal = expert_solve(p, DEFAULT_BUDGET).expect("solvable").plan.len();
        let blind = astar(&space, p.initial.clone(), &mut Blind, DEFAULT_BUDGET);
        let learned = astar(&space, p.initial.clone(), &mut SokobanHeuristic::new(model, p), DEFAULT_BUDGET);
        blind_nodes.push(blind.nodes_explored as f64);
        learned_nodes.push(learned.nodes_explored as f64);
        if learned.is_solved() {
            solved += 1;
            near_optimal += usize::from(learned.plan.len() as f64 <= 1.1 * optimal as f64);
        }
    }
    let (ml, mb) = (median(&mut learned_nodes), median(&mut blind_nodes));
    let frac = if solved == 0 { 0.0 } else { near_optimal as f64 / solved as f64 };
    Verdict::new(
        ml < mb && frac >= 0.9,
        format!("median nodes {ml} vs blind {mb}; within 1.1x optimal on {near_optimal}/{solved} solved"),
    )
}

// ---------------------------------------------------------------- 9

fn c9_depth_ablation(shared: &mut Shared) -> Verdict {
    let (samples, test) = reduced_data(true);
    let run = |depth, filters| {
        let rate = success(&train_sokoban(sokoban_config(depth, filters), &samples, 10, stream(23)), &test);
        info(format!("{depth}x{filters}: {rate:.1}%"));
        rate
    };
    let s8 = shared.reduced_8x32.unwrap_or_else(|| run(8, 32));
    let (s14, s2) = (run(14, 32), run(2, 32));
    let (deep, shallow) = (run(8, 64), run(1, 512));
    let chain = s14 >= s8 - 5.0 && s8 - 5.0 >= s2 - 5.0;
    Verdict::new(
        chain && deep >= shallow + 10.0,
        format!("14/8/2 layers {s14:.1}/{s8:.1}/{s2:.1}%; 8x64 {deep:.1}% vs 1x512 {shallow:.1}%"),
    )
}

// ---------------------------------------------------------------- 10

fn c10_leapfrog(_: &mut Shared) -> Verdict {
    let plan = LeapfrogPlan::new(vec![4, 5, 6], 1000, 30, stream(50));
    let stages = match leapfrog_run(&plan, |s| {
        info(format!("stage {} n={}: {}/{} tours kept", s.report.stage, s.report.size, s.report.solved, s.report.attempted))
    }) {
        Ok(s) => s,
        Err(e) => return Verdict::new(false, format!("run failed: {e}")),
    };
    let last = stages.last().expect("three stages");
    let test = graphs(6, 100, stream(51));
    let ours = evaluate_learned_astar(&last.model, &test, DEFAULT_BUDGET).unwrap();
    let retrained = retrained_baseline(&plan, stages.len() - 1).unwrap();
    let theirs = evaluate_learned_astar(&retrained, &test, DEFAULT_BUDGET).unwrap();
    let greedy = evaluate_greedy(&test).unwrap();
    let ok = ours.all_succeeded()
        && ours.mean_relative_cost <= greedy.mean_relative_cost
        && ours.mean_relative_cost <= 1.1 * theirs.mean_relative_cost;
    Verdict::new(
        ok,
        format!(
            "n=6 relative cost {:.4} vs greedy {:.4}, retrained {:.4}",
            ours.mean_relative_cost, greedy.mean_relative_cost, theirs.mean_relative_cost
        ),
    )
}

// ---------------------------------------------------------------- 11

fn c11_generator(_: &mut Shared) -> Verdict {
    let cfg = GeneratorConfig::default();
    let mut bad = 0;
    let mut nondeterministic = 0;
    for k in 0..1000u64 {
        let seed = derive_seed(stream(60), k);
        let p = generate_level(9, 9, 1, seed, &cfg).expect("generator");
        if !floor_is_connected(p.walls(), 9, 9) || open_area_violation(p.walls(), 9, 9).is_some() {
            bad += 1;
        }
        if k % 10 == 0 && generate_level(9, 9, 1, seed, &cfg).expect("generator") != p {
            nondeterministic += 1;
        }
    }
    Verdict::new(
        bad == 0 && nondeterministic == 0,
        format!("1000 levels, {bad} invariant violations, {nondeterministic}/100 regenerations differ"),
    )
}

// ---------------------------------------------------------------- 12

fn grp(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_grp"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("grp {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Runs every subcommand once into `root`; later steps read earlier outputs.
fn pipeline(root: &Path, config: &Path) -> Result<(), String> {
    let p = |sub: &str| root.join(sub).to_string_lossy().into_owned();
    let c = config.to_string_lossy().into_owned();
    let common = ["--config", c.as_str(), "--seed", "7"];
    let run = |sub: &str, extra: &[&str]| {
        let args: Vec<&str> = [sub].iter().copied().chain(common).chain(extra.iter().copied()).collect();
        grp(&root.join(sub), &args)
    };
    run("gen-levels", &[])?;
    run("gen-graphs", &[])?;
    let levels = format!("{}/levels.txt", p("gen-levels"));
    run("collect", &["--instances", &levels])?;
    let dataset = format!("{}/dataset.grpd", p("collect"));
    run("train", &["--dataset", &dataset])?;
    let model = format!("{}/model.ckpt", p("train"));
    run("eval", &["--instances", &levels, "--model", &model])?;
    run("bench-search", &["--instances", &levels, "--model", &model])?;
    run("ablate", &["--grid", "depth"])?;
    run("leapfrog", &[])?;
    Ok(())
}

fn files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c12_determinism(_: &mut Shared) -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.toml");
    std::fs::write(
        &config,
        "[generate]\nsize = 6\ncount = 6\n\n[sokoban_model]\ndepth = 2\nfilters = 4\nhead_width = 8\n\n\
         [train]\nepochs = 2\n\n[bench]\nheuristics = [\"blind\", \"admissible\", \"learned\"]\n\n\
         [ablate]\ntrain_count = 6\ntest_count = 4\n\n[leapfrog]\nsizes = [4, 5]\ninstances_per_size = 12\ntest_count = 4\n",
    )
    .unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let snapshot = |dir: &Path| -> Vec<(std::path::PathBuf, Vec<u8>)> {
        files(dir).into_iter().map(|f| (f.clone(), std::fs::read(dir.join(&f)).unwrap())).collect()
    };
    if let Err(e) = pipeline(&a, &config) {
        return Verdict::new(false, e);
    }
    let first = snapshot(&a);
    if let Err(e) = pipeline(&a, &config).and_then(|_| pipeline(&b, &config)) {
        return Verdict::new(false, e);
    }
    let (again, elsewhere) = (snapshot(&a), snapshot(&b));
    let names = |s: &[(std::path::PathBuf, Vec<u8>)]| s.iter().map(|(f, _)| f.clone()).collect::<Vec<_>>();
    if names(&first) != names(&again) || names(&first) != names(&elsewhere) {
        return Verdict::new(false, "runs produced different file sets");
    }
    let csvs = first.iter().filter(|(f, _)| f.extension().is_some_and(|e| e == "csv")).count();
    let manifests = first.iter().filter(|(f, _)| f.ends_with("manifest.json")).count();
    let mut differing: Vec<String> = first
        .iter()
        .zip(&again)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    // Manifests record the output and input paths, so only the other files
    // are compared across directories.
    differing.extend(
        first
            .iter()
            .zip(&elsewhere)
            .filter(|(x, y)| !x.0.ends_with("manifest.json") && x.1 != y.1)
            .map(|(x, _)| format!("{} (other dir)", x.0.display())),
    );
    Verdict::new(
        differing.is_empty() && csvs >= 8 && manifests == 8,
        format!("8 subcommands, {} files ({csvs} csv, {manifests} manifests), differing: {differing:?}", first.len()),
    )
}

// ---------------------------------------------------------------- driver

type Criterion = (u32, &'static str, fn(&mut Shared) -> Verdict);

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "held-karp equals brute force", c1_held_karp_oracle),
        (2, "admissible search is optimal", c2_admissible_search),
        (3, "gradient integrity", c3_gradients),
        (4, "tsp policy on 4-node graphs", c4_tsp_four_nodes),
        (5, "tsp size generalization", c5_tsp_generalization),
        (6, "sokoban desk training", c6_sokoban_training),
        (7, "bootstrap benefit", c7_bootstrap),
        (8, "learned-heuristic search", c8_learned_heuristic),
        (9, "depth and skip ablation", c9_depth_ablation),
        (10, "leapfrog 4 -> 5 -> 6", c10_leapfrog),
        (11, "generator contract", c11_generator),
        (12, "determinism", c12_determinism),
    ];
    let only: Option<HashSet<u32>> = std::env::var("GRP_ACCEPT_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut shared = Shared::default();
    let mut failed = Vec::new();
    let total = Instant::now();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(|| run(&mut shared))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let status = if verdict.passed { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status} {name}: {} [{:.1}s]", verdict.detail, t0.elapsed().as_secs_f64());
        if id == 5 {
            let _ = catch_unwind(edge_message_reference);
        }
        if !verdict.passed {
            failed.push(id);
        }
    }
    println!("acceptance: {} failed {:?} [{:.1}s]", failed.len(), failed, total.elapsed().as_secs_f64());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
