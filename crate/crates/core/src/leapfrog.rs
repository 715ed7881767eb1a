//! Curriculum over TSP sizes: exact tours at the first size, then tours found
//! by A* with the previous stage's learned heuristic.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{collect_tsp_trajectories, tsp_samples, CollectError, TspTrajectory};
use crate::experiment::learned_astar_tour;
use crate::grp::{train, GraphGrpConfig, GrpError, TrainConfig, TrainReport, TspGrp};
use crate::search::DEFAULT_BUDGET;
use crate::seed::derive_seed;
use crate::tsp::{generate_complete_graph, WeightedGraph, HELD_KARP_MAX_NODES};

/// Stages yielding fewer solved instances than this fraction abort.
pub const MIN_STAGE_YIELD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeapfrogPlan {
    /// Graph sizes, strictly increasing.
    pub sizes: Vec<usize>,
    pub instances_per_size: usize,
    pub model: GraphGrpConfig,
    pub train: TrainConfig,
    /// Node budget for each self-generating A* search.
    pub search_budget: usize,
    pub seed: u64,
}

impl LeapfrogPlan {
    pub fn new(sizes: Vec<usize>, instances_per_size: usize, epochs: usize, seed: u64) -> Self {
        LeapfrogPlan {
            sizes,
            instances_per_size,
            model: GraphGrpConfig::default(),
            train: TrainConfig::tsp(epochs, seed),
            search_budget: DEFAULT_BUDGET,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), LeapfrogError> {
        let Some(&first) = self.sizes.first() else {
            return Err(LeapfrogError::Plan("no sizes".into()));
        };
        if !self.sizes.windows(2).all(|w| w[0] < w[1]) {
            return Err(LeapfrogError::Plan("sizes must be strictly increasing".into()));
        }
        if !(3..=HELD_KARP_MAX_NODES).contains(&first) {
            return Err(LeapfrogError::Plan(format!("exact solver cannot handle the first size {first}")));
        }
        if self.instances_per_size == 0 {
            return Err(LeapfrogError::Plan("instances_per_size must be positive".into()));
        }
        Ok(())
    }

    /// Training graphs of stage `stage`.
    pub fn stage_graphs(&self, stage: usize) -> Vec<WeightedGraph> {
        let base = derive_seed(self.seed, stage as u64);
        (0..self.instances_per_size)
            .map(|k| generate_complete_graph(self.sizes[stage], derive_seed(base, k as u64)))
            .collect()
    }

    fn stage_train_config(&self, stage: usize) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.train.seed, stage as u64),
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Error)]
pub enum LeapfrogError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("stage {stage} (n={size}) solved only {solved} of {attempted} instances")]
    LowYield {
        stage: usize,
        size: usize,
        solved: usize,
        attempted: usize,
    },
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Grp(#[from] GrpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub size: usize,
    pub attempted: usize,
    pub solved: usize,
    pub samples: usize,
    /// Mean cost of the stage's training tours.
    pub mean_tour_cost: f64,
    pub training: TrainReport,
}

pub struct Stage {
    pub report: StageReport,
    pub data: Vec<TspTrajectory>,
    pub model: TspGrp,
}

/// Runs the whole curriculum; `on_stage` sees each finished stage in order.
pub fn leapfrog_run(plan: &LeapfrogPlan, mut on_stage: impl FnMut(&Stage)) -> Result<Vec<Stage>, LeapfrogError> {
    plan.validate()?;
    let mut stages: Vec<Stage> = Vec::with_capacity(plan.sizes.len());
    for (t, &size) in plan.sizes.iter().enumerate() {
        let graphs = plan.stage_graphs(t);
        let data = match stages.last() {
            None => collect_tsp_trajectories(&graphs, 0)?.trajectories,
            Some(prev) => self_generate(&prev.model, &graphs, plan.search_budget),
        };
        if (data.len() as f64) < MIN_STAGE_YIELD * graphs.len() as f64 {
            return Err(LeapfrogError::LowYield {
                stage: t,
                size,
                solved: data.len(),
                attempted: graphs.len(),
            });
        }
        let samples = tsp_samples(&data);
        let mut model = TspGrp::new(plan.model.clone(), derive_seed(plan.seed ^ 0x1eaf, t as u64))?;
        let training = train(&mut model, &samples, &plan.stage_train_config(t))?;
        let report = StageReport {
            stage: t,
            size,
            attempted: graphs.len(),
            solved: data.len(),
            samples: samples.len(),
            mean_tour_cost: data.iter().map(|d| d.cost).sum::<f64>() / data.len() as f64,
            training,
        };
        let stage = Stage { report, data, model };
        on_stage(&stage);
        stages.push(stage);
    }
    Ok(stages)
}

/// Tours from node 0 found by learned-heuristic A*; each is replayed through
/// the validity check before it is kept.
pub fn self_generate(model: &TspGrp, graphs: &[WeightedGraph], budget: usize) -> Vec<TspTrajectory> {
    graphs
        .iter()
        .filter_map(|g| {
            let tour = learned_astar_tour(model, g, 0, budget)?;
            TspTrajectory::new(Arc::new(g.clone()), tour.nodes)
        })
        .collect()
}

/// The comparison model: same graphs and training as stage `stage`, but with
/// exact tours.
pub fn retrained_baseline(plan: &LeapfrogPlan, stage: usize) -> Result<TspGrp, LeapfrogError> {
    plan.validate()?;
    let graphs = plan.stage_graphs(stage);
    let data = collect_tsp_trajectories(&graphs, 0)?.trajectories;
    let mut model = TspGrp::new(plan.model.clone(), derive_seed(plan.seed ^ 0x1eaf, stage as u64))?;
    train(&mut model, &tsp_samples(&data), &plan.stage_train_config(stage))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tsp_samples;

    fn tiny(sizes: Vec<usize>) -> LeapfrogPlan {
        let mut p = LeapfrogPlan::new(sizes, 40, 2, 5);
        p.model.width = 8;
        p
    }

    #[test]
    fn plan_validation() {
        assert!(tiny(vec![]).validate().is_err());
        assert!(tiny(vec![5, 5]).validate().is_err());
        assert!(tiny(vec![6, 5]).validate().is_err());
        assert!(tiny(vec![30, 31]).validate().is_err());
        let mut p = tiny(vec![4]);
        p.instances_per_size = 0;
        assert!(p.validate().is_err());
        assert!(tiny(vec![4, 5, 6]).validate().is_ok());
    }

    #[test]
    fn single_stage_is_plain_training() {
        let plan = tiny(vec![4]);
        let stages = leapfrog_run(&plan, |_| {}).unwrap();
        assert_eq!(stages.len(), 1);
        let mut direct = TspGrp::new(plan.model.clone(), derive_seed(plan.seed ^ 0x1eaf, 0)).unwrap();
        let data = collect_tsp_trajectories(&plan.stage_graphs(0), 0).unwrap().trajectories;
        let report = train(&mut direct, &tsp_samples(&data), &plan.stage_train_config(0)).unwrap();
        assert_eq!(stages[0].report.training, report);
        assert_eq!(stages[0].model.params(), direct.params());
        assert_eq!(stages[0].report.solved, 40);
    }

    #[test]
    fn later_stage_tours_replay_as_cycles() {
        let plan = tiny(vec![4, 6]);
        let mut seen = Vec::new();
        let stages = leapfrog_run(&plan, |s| seen.push(s.report.size)).unwrap();
        assert_eq!(seen, vec![4, 6]);
        let s = &stages[1];
        assert!(s.report.solved as f64 >= MIN_STAGE_YIELD * 40.0);
        for d in &s.data {
            assert_eq!(d.tour.len(), 6);
            assert_eq!(d.graph.cycle_cost(&d.tour), Some(d.cost));
        }
    }

    #[test]
    fn starved_search_aborts_stage() {
        let mut plan = tiny(vec![4, 6]);
        plan.search_budget = 2;
        match leapfrog_run(&plan, |_| {}) {
            Err(LeapfrogError::LowYield { stage: 1, solved: 0, .. }) => {}
            other => panic!("expected low yield, got {:?}", other.map(|s| s.len())),
        }
    }

    #[test]
    fn reproducible() {
        let plan = tiny(vec![4, 5]);
        let a = leapfrog_run(&plan, |_| {}).unwrap();
        let b = leapfrog_run(&plan, |_| {}).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.report, y.report);
            assert_eq!(x.model.params(), y.model.params());
        }
    }
}
