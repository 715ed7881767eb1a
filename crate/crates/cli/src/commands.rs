use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use grp_core::data::{
    assemble_dataset, load_dataset, save_dataset, tsp_samples, Dataset, DatasetConfig, Trajectory, TspTrajectory, MAX_FAILURE_RATE,
};
use grp_core::experiment::{
    bench_sokoban, bench_tsp, evaluate_greedy, evaluate_learned_astar, evaluate_sokoban, evaluate_tours, evaluate_tsp_policy,
    sokoban_step_budget, summarize, BenchRow, Domain,
};
use grp_core::grp::{rollout_sokoban, rollout_tsp, train_with_progress, EpochStats, GrpError, SokobanGrp, SokobanGrpConfig, TspGrp};
use grp_core::leapfrog::{leapfrog_run, retrained_baseline, LeapfrogPlan};
use grp_core::seed::{derive_seed, rng_from_seed};
use grp_core::sokoban::{expert_solve, format_level, generate_level, parse_levels, GeneratorConfig, SokobanProblem};
use grp_core::tsp::{
    format_graphs, generate_chord_graph, generate_complete_graph, greedy_tour, held_karp_solve, parse_graphs, WeightedGraph,
    HELD_KARP_MAX_NODES,
};
use serde::Serialize;

use crate::config::{AblationGrid, ExperimentConfig};

// Independent random streams, all derived from the manifest seed.
const STREAM_LEVELS: u64 = 1;
const STREAM_GRAPHS: u64 = 2;
const STREAM_BOOTSTRAP: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_SHUFFLE: u64 = 5;
const STREAM_ROLLOUT: u64 = 6;
const STREAM_ABLATE_TRAIN: u64 = 7;
const STREAM_ABLATE_TEST: u64 = 8;
const STREAM_LEAPFROG_TEST: u64 = 9;

fn stream(cfg: &ExperimentConfig, s: u64) -> u64 {
    derive_seed(cfg.seed, s)
}

/// Writes `rows` to a fresh CSV in the output directory; returns the file name.
fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<String> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(name.to_string())
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("no {what} given (set it in the config or pass --{what})"))
}

fn generate_levels(cfg: &ExperimentConfig, base: u64, count: usize) -> Result<Vec<SokobanProblem>> {
    let gen = GeneratorConfig {
        expert_budget: cfg.budget,
        ..GeneratorConfig::default()
    };
    let g = &cfg.generate;
    (0..count)
        .map(|i| Ok(generate_level(g.size, g.size, g.objects, derive_seed(base, i as u64), &gen)?))
        .collect()
}

fn read_levels(cfg: &ExperimentConfig) -> Result<Vec<SokobanProblem>> {
    let path = required(&cfg.instances, "instances")?;
    let levels = parse_levels(&std::fs::read_to_string(path)?)?;
    ensure!(!levels.is_empty(), "{} holds no levels", path.display());
    Ok(levels)
}

fn read_graphs(cfg: &ExperimentConfig) -> Result<Vec<WeightedGraph>> {
    let path = required(&cfg.instances, "instances")?;
    let graphs = parse_graphs(&std::fs::read_to_string(path)?)?;
    ensure!(!graphs.is_empty(), "{} holds no graphs", path.display());
    Ok(graphs)
}

fn exact_tsp_cost(g: &WeightedGraph) -> Option<f64> {
    (g.node_count() <= HELD_KARP_MAX_NODES).then(|| held_karp_solve(g, 0).ok().map(|t| t.cost)).flatten()
}

#[derive(Serialize)]
struct LevelRow {
    instance_id: usize,
    height: usize,
    width: usize,
    objects: usize,
    optimal_length: Option<usize>,
}

pub fn gen_levels(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let levels = generate_levels(cfg, stream(cfg, STREAM_LEVELS), cfg.generate.count)?;
    let text: Vec<String> = levels.iter().map(format_level).collect();
    std::fs::write(cfg.out.join("levels.txt"), text.join("\n"))?;
    let rows: Vec<LevelRow> = levels
        .iter()
        .enumerate()
        .map(|(i, p)| LevelRow {
            instance_id: i,
            height: p.height(),
            width: p.width(),
            objects: p.goals().len(),
            optimal_length: expert_solve(p, cfg.budget).map(|r| r.plan.len()),
        })
        .collect();
    Ok(vec!["levels.txt".into(), write_csv(&cfg.out, "levels.csv", &rows)?])
}

#[derive(Serialize)]
struct GraphRow {
    instance_id: usize,
    nodes: usize,
    edges: usize,
    optimal_cost: Option<f64>,
}

fn generate_graphs(cfg: &ExperimentConfig, base: u64, size: usize, count: usize) -> Vec<WeightedGraph> {
    (0..count)
        .map(|i| {
            let s = derive_seed(base, i as u64);
            if cfg.generate.chord {
                generate_chord_graph(size, s)
            } else {
                generate_complete_graph(size, s)
            }
        })
        .collect()
}

pub fn gen_graphs(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let n = cfg.generate.size;
    ensure!((3..=grp_core::tsp::MAX_NODES).contains(&n), "graph size {n} out of range");
    let graphs = generate_graphs(cfg, stream(cfg, STREAM_GRAPHS), n, cfg.generate.count);
    std::fs::write(cfg.out.join("graphs.txt"), format_graphs(&graphs))?;
    let rows: Vec<GraphRow> = graphs
        .iter()
        .enumerate()
        .map(|(i, g)| GraphRow {
            instance_id: i,
            nodes: g.node_count(),
            edges: g.edge_count(),
            optimal_cost: exact_tsp_cost(g),
        })
        .collect();
    Ok(vec!["graphs.txt".into(), write_csv(&cfg.out, "graphs.csv", &rows)?])
}

#[derive(Serialize)]
struct CollectRow {
    instance_id: usize,
    status: &'static str,
    plan_length: Option<usize>,
    cost: Option<f64>,
}

fn dataset_config(cfg: &ExperimentConfig, bootstrap: bool) -> DatasetConfig {
    let seed = stream(cfg, STREAM_BOOTSTRAP);
    if bootstrap {
        DatasetConfig {
            n_bootstrap: cfg.collect.n_bootstrap,
            sampling: cfg.collect.sampling,
            seed,
        }
    } else {
        DatasetConfig::without_bootstrap(seed)
    }
}

/// Expert trajectories plus one row per level.
fn solve_levels(levels: &[SokobanProblem], budget: usize) -> Result<(Vec<Trajectory>, Vec<CollectRow>)> {
    let mut trajectories = Vec::new();
    let mut rows = Vec::new();
    for (i, p) in levels.iter().enumerate() {
        let traj = expert_solve(p, budget).and_then(|r| Trajectory::from_plan(Arc::new(p.clone()), r.plan));
        rows.push(CollectRow {
            instance_id: i,
            status: if traj.is_some() { "solved" } else { "unsolved" },
            plan_length: traj.as_ref().map(|t| t.len()),
            cost: traj.as_ref().map(|t| t.len() as f64),
        });
        trajectories.extend(traj);
    }
    check_yield(levels.len() - trajectories.len(), levels.len())?;
    Ok((trajectories, rows))
}

fn check_yield(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_FAILURE_RATE * total as f64 {
        bail!("expert failed on {failed} of {total} instances");
    }
    Ok(())
}

pub fn collect(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let (dataset, rows) = match cfg.domain {
        Domain::Sokoban => {
            let (trajectories, rows) = solve_levels(&read_levels(cfg)?, cfg.budget)?;
            let samples = assemble_dataset(&trajectories, &dataset_config(cfg, cfg.collect.bootstrap));
            (Dataset::Sokoban(samples), rows)
        }
        Domain::Tsp => {
            let graphs = read_graphs(cfg)?;
            let mut data = Vec::new();
            let mut rows = Vec::new();
            for (i, g) in graphs.iter().enumerate() {
                let t = held_karp_solve(g, 0)
                    .ok()
                    .and_then(|t| TspTrajectory::new(Arc::new(g.clone()), t.nodes));
                rows.push(CollectRow {
                    instance_id: i,
                    status: if t.is_some() { "solved" } else { "unsolved" },
                    plan_length: t.as_ref().map(|t| t.tour.len()),
                    cost: t.as_ref().map(|t| t.cost),
                });
                data.extend(t);
            }
            check_yield(graphs.len() - data.len(), graphs.len())?;
            (Dataset::Tsp(tsp_samples(&data)), rows)
        }
    };
    save_dataset(&cfg.out.join("dataset.grpd"), &dataset)?;
    Ok(vec!["dataset.grpd".into(), write_csv(&cfg.out, "collect.csv", &rows)?])
}

#[derive(Serialize)]
struct TrainRow {
    epoch: usize,
    lr: f64,
    loss: f64,
    cross_entropy: f64,
    length_l1: Option<f64>,
    accuracy: f64,
}

impl From<&EpochStats> for TrainRow {
    fn from(e: &EpochStats) -> Self {
        TrainRow {
            epoch: e.epoch,
            lr: e.lr,
            loss: e.loss,
            cross_entropy: e.cross_entropy,
            length_l1: e.length_l1,
            accuracy: e.accuracy,
        }
    }
}

fn log_epoch(e: &EpochStats) {
    eprintln!("epoch {:>3}  lr {:.2e}  loss {:.4}  acc {:.3}", e.epoch, e.lr, e.loss, e.accuracy);
}

fn save_model(path: &Path, save: impl FnOnce(std::io::BufWriter<std::fs::File>) -> Result<(), GrpError>) -> Result<()> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    save(std::io::BufWriter::new(f))?;
    Ok(())
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(std::io::BufReader::new(f))
}

pub fn train(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let dataset = load_dataset(required(&cfg.dataset, "dataset")?)?;
    let tc = cfg.train.resolve(cfg.domain, stream(cfg, STREAM_SHUFFLE));
    let init = stream(cfg, STREAM_INIT);
    let mut rows: Vec<TrainRow> = Vec::new();
    let ckpt = cfg.out.join("model.ckpt");
    match (cfg.domain, dataset) {
        (Domain::Sokoban, Dataset::Sokoban(samples)) => {
            let mut model = SokobanGrp::new(cfg.sokoban_model.clone(), init)?;
            train_with_progress(&mut model, &samples, &tc, |e| {
                log_epoch(e);
                rows.push(e.into());
            })?;
            save_model(&ckpt, |w| model.save(w))?;
        }
        (Domain::Tsp, Dataset::Tsp(samples)) => {
            let mut model = TspGrp::new(cfg.tsp_model.clone(), init)?;
            train_with_progress(&mut model, &samples, &tc, |e| {
                log_epoch(e);
                rows.push(e.into());
            })?;
            save_model(&ckpt, |w| model.save(w))?;
        }
        (d, _) => bail!("dataset does not match domain {d:?}"),
    }
    Ok(vec!["model.ckpt".into(), write_csv(&cfg.out, "train.csv", &rows)?])
}

#[derive(Serialize)]
struct SokobanEvalRow {
    instance_id: usize,
    solved: bool,
    steps: usize,
    optimal_length: Option<usize>,
}

#[derive(Serialize)]
struct TspEvalRow {
    instance_id: usize,
    start: usize,
    policy_cost: Option<f64>,
    greedy_cost: Option<f64>,
    optimal_cost: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    metric: &'static str,
    value: f64,
}

fn load_sokoban(cfg: &ExperimentConfig) -> Result<SokobanGrp> {
    if cfg.eval.untrained {
        return Ok(SokobanGrp::new(cfg.sokoban_model.clone(), stream(cfg, STREAM_INIT))?);
    }
    Ok(SokobanGrp::load(open(required(&cfg.model, "model")?)?)?)
}

fn load_tsp(cfg: &ExperimentConfig) -> Result<TspGrp> {
    if cfg.eval.untrained {
        return Ok(TspGrp::new(cfg.tsp_model.clone(), stream(cfg, STREAM_INIT))?);
    }
    Ok(TspGrp::load(open(required(&cfg.model, "model")?)?)?)
}

pub fn eval(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let base = stream(cfg, STREAM_ROLLOUT);
    match cfg.domain {
        Domain::Sokoban => {
            let model = load_sokoban(cfg)?;
            let levels = read_levels(cfg)?;
            let mut rows = Vec::new();
            for (i, p) in levels.iter().enumerate() {
                let mut rng = rng_from_seed(derive_seed(base, i as u64));
                let budget = cfg.eval.step_budget.unwrap_or_else(|| sokoban_step_budget(p));
                let r = rollout_sokoban(&model, p, cfg.eval.mode, budget, &mut rng)?;
                rows.push(SokobanEvalRow {
                    instance_id: i,
                    solved: r.solved,
                    steps: r.steps,
                    optimal_length: expert_solve(p, cfg.budget).map(|s| s.plan.len()),
                });
            }
            let solved = rows.iter().filter(|r| r.solved).count();
            let summary = [
                SummaryRow {
                    metric: "instances",
                    value: levels.len() as f64,
                },
                SummaryRow {
                    metric: "success_rate",
                    value: solved as f64 / levels.len() as f64,
                },
            ];
            Ok(vec![
                write_csv(&cfg.out, "eval.csv", &rows)?,
                write_csv(&cfg.out, "eval_summary.csv", &summary)?,
            ])
        }
        Domain::Tsp => {
            let model = load_tsp(cfg)?;
            let graphs = read_graphs(cfg)?;
            let mut rows = Vec::new();
            let mut rng = rng_from_seed(base);
            let mut instance = 0;
            let policy = evaluate_tours(&graphs, |g, start| {
                if start == 0 && !rows.is_empty() {
                    instance += 1;
                }
                let tour = match rollout_tsp(&model, g, start, cfg.eval.mode, &mut rng) {
                    Ok(t) => Some(t),
                    Err(GrpError::DeadEnd) => None,
                    Err(e) => return Err(e.into()),
                };
                rows.push(TspEvalRow {
                    instance_id: instance,
                    start,
                    policy_cost: tour.as_ref().map(|t| t.cost),
                    greedy_cost: greedy_tour(g, start).ok().map(|t| t.cost),
                    optimal_cost: held_karp_solve(g, 0).expect("evaluate_tours checked feasibility").cost,
                });
                Ok(tour)
            })?;
            let greedy = evaluate_greedy(&graphs)?;
            let summary = [
                SummaryRow {
                    metric: "rollouts",
                    value: policy.rollouts as f64,
                },
                SummaryRow {
                    metric: "policy_failures",
                    value: policy.failures as f64,
                },
                SummaryRow {
                    metric: "policy_relative_cost",
                    value: policy.mean_relative_cost,
                },
                SummaryRow {
                    metric: "greedy_failures",
                    value: greedy.failures as f64,
                },
                SummaryRow {
                    metric: "greedy_relative_cost",
                    value: greedy.mean_relative_cost,
                },
            ];
            Ok(vec![
                write_csv(&cfg.out, "eval.csv", &rows)?,
                write_csv(&cfg.out, "eval_summary.csv", &summary)?,
            ])
        }
    }
}

pub fn bench_search(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let b = &cfg.bench;
    let needs_model = b.heuristics.contains(&grp_core::experiment::HeuristicKind::Learned);
    let (rows, optimal): (Vec<BenchRow>, Vec<f64>) = match cfg.domain {
        Domain::Sokoban => {
            let levels = read_levels(cfg)?;
            let model = if needs_model { Some(load_sokoban(cfg)?) } else { None };
            let rows = bench_sokoban(&levels, &b.algorithms, &b.heuristics, model.as_ref(), cfg.budget, b.timing)?;
            let optimal = levels
                .iter()
                .map(|p| expert_solve(p, cfg.budget).map_or(f64::NAN, |r| r.plan.len() as f64))
                .collect();
            (rows, optimal)
        }
        Domain::Tsp => {
            let graphs = read_graphs(cfg)?;
            let model = if needs_model { Some(load_tsp(cfg)?) } else { None };
            let rows = bench_tsp(&graphs, &b.algorithms, &b.heuristics, model.as_ref(), cfg.budget, b.timing)?;
            let optimal = graphs.iter().map(|g| exact_tsp_cost(g).unwrap_or(f64::NAN)).collect();
            (rows, optimal)
        }
    };
    let summary = summarize(&rows, &optimal);
    Ok(vec![
        write_csv(&cfg.out, "bench.csv", &rows)?,
        write_csv(&cfg.out, "bench_summary.csv", &summary)?,
    ])
}

#[derive(Serialize)]
struct AblateRow {
    variant: String,
    depth: usize,
    filters: usize,
    skip: bool,
    bootstrap: bool,
    lambda_len: f64,
    action_loss: bool,
    parameters: usize,
    samples: usize,
    final_loss: Option<f64>,
    success_rate: f64,
    /// Mean |predicted − optimal| plan length at the test levels' start states.
    length_l1: f64,
}

struct Variant {
    name: String,
    model: SokobanGrpConfig,
    bootstrap: bool,
}

fn ablation_variants(grid: AblationGrid, base: &SokobanGrpConfig) -> Vec<Variant> {
    let v = |name: &str, model: SokobanGrpConfig, bootstrap: bool| Variant {
        name: name.to_string(),
        model,
        bootstrap,
    };
    let shaped = |depth, filters| SokobanGrpConfig {
        depth,
        filters,
        ..base.clone()
    };
    match grid {
        AblationGrid::Depth => [2, 8, 14]
            .into_iter()
            .map(|d| v(&format!("depth{d}"), shaped(d, base.filters), true))
            .collect(),
        AblationGrid::Bootstrap => vec![v("bootstrap", base.clone(), true), v("no_bootstrap", base.clone(), false)],
        AblationGrid::SharedHead => {
            let joint = base.clone();
            let actions = SokobanGrpConfig {
                lambda_len: 0.0,
                action_loss: true,
                ..base.clone()
            };
            let length = SokobanGrpConfig {
                lambda_len: base.lambda_len.max(1e-3),
                action_loss: false,
                ..base.clone()
            };
            let mut out = Vec::new();
            for (tag, boot) in [("bootstrap", true), ("no_bootstrap", false)] {
                out.push(v(&format!("joint_{tag}"), joint.clone(), boot));
                out.push(v(&format!("actions_only_{tag}"), actions.clone(), boot));
                out.push(v(&format!("length_only_{tag}"), length.clone(), boot));
            }
            out
        }
        AblationGrid::DeepVsShallow => vec![
            v("deep_8x64", shaped(8, 64), true),
            v("shallow_2x256", shaped(2, 256), true),
            v("shallow_1x512", shaped(1, 512), true),
        ],
    }
}

pub fn ablate(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    ensure!(cfg.domain == Domain::Sokoban, "ablations are defined for Sokoban only");
    let train_levels = generate_levels(cfg, stream(cfg, STREAM_ABLATE_TRAIN), cfg.ablate.train_count)?;
    let test_levels = generate_levels(cfg, stream(cfg, STREAM_ABLATE_TEST), cfg.ablate.test_count)?;
    let (trajectories, _) = solve_levels(&train_levels, cfg.budget)?;
    let optimal: Vec<Option<usize>> = test_levels.iter().map(|p| expert_solve(p, cfg.budget).map(|r| r.plan.len())).collect();
    let tc = cfg.train.resolve(Domain::Sokoban, stream(cfg, STREAM_SHUFFLE));
    let mut rows = Vec::new();
    for variant in ablation_variants(cfg.ablate.grid, &cfg.sokoban_model) {
        eprintln!("variant {}", variant.name);
        let samples = assemble_dataset(&trajectories, &dataset_config(cfg, variant.bootstrap));
        let mut model = SokobanGrp::new(variant.model.clone(), stream(cfg, STREAM_INIT))?;
        let report = train_with_progress(&mut model, &samples, &tc, log_epoch)?;
        let eval = evaluate_sokoban(&model, &test_levels, cfg.eval.mode, cfg.eval.step_budget, stream(cfg, STREAM_ROLLOUT))?;
        let (mut err, mut n) = (0.0, 0usize);
        for (p, opt) in test_levels.iter().zip(&optimal) {
            if let Some(len) = opt {
                let (_, pred) = model.predict(&p.render_observation(&p.initial, true), &p.goal_observation())?;
                err += (pred - *len as f64).abs();
                n += 1;
            }
        }
        rows.push(AblateRow {
            variant: variant.name,
            depth: variant.model.depth,
            filters: variant.model.filters,
            skip: variant.model.skip,
            bootstrap: variant.bootstrap,
            lambda_len: variant.model.lambda_len,
            action_loss: variant.model.action_loss,
            parameters: model.params().scalar_count(),
            samples: samples.len(),
            final_loss: report.final_loss(),
            success_rate: eval.success_rate,
            length_l1: if n == 0 { f64::NAN } else { err / n as f64 },
        });
    }
    Ok(vec![write_csv(&cfg.out, "ablate.csv", &rows)?])
}

#[derive(Serialize)]
struct LeapfrogRow {
    model: &'static str,
    stage: usize,
    size: usize,
    attempted: usize,
    solved: usize,
    samples: usize,
    mean_tour_cost: Option<f64>,
    policy_relative_cost: f64,
    policy_failures: usize,
    astar_relative_cost: f64,
    astar_failures: usize,
    greedy_relative_cost: f64,
}

fn leapfrog_metrics(
    model: &TspGrp,
    graphs: &[WeightedGraph],
    budget: usize,
    seed: u64,
) -> Result<(grp_core::experiment::TspEval, grp_core::experiment::TspEval)> {
    let policy = evaluate_tsp_policy(model, graphs, grp_core::grp::SelectionMode::Deterministic, seed)?;
    let astar = evaluate_learned_astar(model, graphs, budget)?;
    Ok((policy, astar))
}

pub fn leapfrog(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let lf = &cfg.leapfrog;
    let plan = LeapfrogPlan {
        sizes: lf.sizes.clone(),
        instances_per_size: lf.instances_per_size,
        model: cfg.tsp_model.clone(),
        train: cfg.train.resolve(Domain::Tsp, stream(cfg, STREAM_SHUFFLE)),
        search_budget: cfg.budget,
        seed: cfg.seed,
    };
    let test_graphs = |size: usize| generate_graphs(cfg, derive_seed(stream(cfg, STREAM_LEAPFROG_TEST), size as u64), size, lf.test_count);
    let mut outputs = Vec::new();
    let mut stage_err: Option<anyhow::Error> = None;
    let stages = leapfrog_run(&plan, |s| {
        let dir = format!("stage{}_n{}", s.report.stage, s.report.size);
        let result = (|| -> Result<()> {
            let path = cfg.out.join(&dir);
            std::fs::create_dir_all(&path)?;
            save_dataset(&path.join("dataset.grpd"), &Dataset::Tsp(tsp_samples(&s.data)))?;
            save_model(&path.join("model.ckpt"), |w| s.model.save(w))?;
            let rows: Vec<TrainRow> = s.report.training.epochs.iter().map(TrainRow::from).collect();
            write_csv(&path, "train.csv", &rows)?;
            Ok(())
        })();
        match result {
            Ok(()) => {
                for f in ["dataset.grpd", "model.ckpt", "train.csv"] {
                    outputs.push(format!("{dir}/{f}"));
                }
            }
            Err(e) => {
                stage_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = stage_err {
        return Err(e);
    }
    let mut rows = Vec::new();
    for s in &stages {
        let r = &s.report;
        let graphs = test_graphs(r.size);
        let greedy = evaluate_greedy(&graphs)?;
        let (policy, astar) = leapfrog_metrics(&s.model, &graphs, cfg.budget, stream(cfg, STREAM_ROLLOUT))?;
        rows.push(LeapfrogRow {
            model: "leapfrog",
            stage: r.stage,
            size: r.size,
            attempted: r.attempted,
            solved: r.solved,
            samples: r.samples,
            mean_tour_cost: Some(r.mean_tour_cost),
            policy_relative_cost: policy.mean_relative_cost,
            policy_failures: policy.failures,
            astar_relative_cost: astar.mean_relative_cost,
            astar_failures: astar.failures,
            greedy_relative_cost: greedy.mean_relative_cost,
        });
        if lf.baseline && r.stage > 0 {
            let base = retrained_baseline(&plan, r.stage)?;
            let (policy, astar) = leapfrog_metrics(&base, &graphs, cfg.budget, stream(cfg, STREAM_ROLLOUT))?;
            rows.push(LeapfrogRow {
                model: "retrained",
                stage: r.stage,
                size: r.size,
                attempted: r.attempted,
                solved: r.attempted,
                samples: r.size.saturating_sub(1) * r.attempted,
                mean_tour_cost: None,
                policy_relative_cost: policy.mean_relative_cost,
                policy_failures: policy.failures,
                astar_relative_cost: astar.mean_relative_cost,
                astar_failures: astar.failures,
                greedy_relative_cost: greedy.mean_relative_cost,
            });
        }
    }
    outputs.push(write_csv(&cfg.out, "leapfrog.csv", &rows)?);
    Ok(outputs)
}
