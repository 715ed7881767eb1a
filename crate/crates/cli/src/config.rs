use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use grp_core::data::PairSampling;
use grp_core::experiment::{Algorithm, Domain, HeuristicKind};
use grp_core::grp::{GraphGrpConfig, SelectionMode, SokobanGrpConfig, TrainConfig};
use grp_core::optim::LrSchedule;
use grp_core::search::DEFAULT_BUDGET;
use serde::{Deserialize, Serialize};

/// Everything a run reads, as one TOML file. Flags override single fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub seed: u64,
    pub out: PathBuf,
    /// Level or graph file consumed by collect, eval and bench-search.
    pub instances: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Node budget for every search (expert solving, benchmarks, leapfrog).
    pub budget: usize,
    pub generate: GenerateConfig,
    pub collect: CollectConfig,
    pub sokoban_model: SokobanGrpConfig,
    pub tsp_model: GraphGrpConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
    pub ablate: AblateConfig,
    pub leapfrog: LeapfrogConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: Domain::Sokoban,
            seed: 0,
            out: PathBuf::from("out"),
            instances: None,
            dataset: None,
            model: None,
            budget: DEFAULT_BUDGET,
            generate: GenerateConfig::default(),
            collect: CollectConfig::default(),
            sokoban_model: SokobanGrpConfig::default(),
            tsp_model: GraphGrpConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
            ablate: AblateConfig::default(),
            leapfrog: LeapfrogConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Grid side for Sokoban, node count for TSP.
    pub size: usize,
    pub count: usize,
    pub objects: usize,
    /// TSP: cycle-plus-chords graphs instead of complete graphs.
    pub chord: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            size: 7,
            count: 100,
            objects: 1,
            chord: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub bootstrap: bool,
    /// Extra goal pairs per trajectory; unset means the trajectory length.
    pub n_bootstrap: Option<usize>,
    pub sampling: PairSampling,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            bootstrap: true,
            n_bootstrap: None,
            sampling: PairSampling::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Unset: 10 for Sokoban, 30 for TSP.
    pub epochs: Option<usize>,
    pub batch: usize,
    /// Unset: halving every 5 epochs from 1e-3 (Sokoban), 0.95 decay from 1e-3 (TSP).
    pub schedule: Option<LrSchedule>,
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: None,
            batch: 32,
            schedule: None,
            clip_norm: 10.0,
        }
    }
}

impl TrainSection {
    pub fn resolve(&self, domain: Domain, seed: u64) -> TrainConfig {
        let base = match domain {
            Domain::Sokoban => TrainConfig::sokoban(self.epochs.unwrap_or(10), seed),
            Domain::Tsp => TrainConfig::tsp(self.epochs.unwrap_or(30), seed),
        };
        TrainConfig {
            batch: self.batch,
            schedule: self.schedule.unwrap_or(base.schedule),
            clip_norm: self.clip_norm,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: SelectionMode,
    /// Rollout step limit; unset means 4·H·W.
    pub step_budget: Option<usize>,
    /// Evaluate a freshly initialized model instead of loading one.
    pub untrained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub algorithms: Vec<Algorithm>,
    pub heuristics: Vec<HeuristicKind>,
    /// Fill `wall_ms`; makes the CSV non-reproducible.
    pub timing: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            algorithms: vec![Algorithm::Astar],
            heuristics: vec![HeuristicKind::Blind, HeuristicKind::Admissible],
            timing: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AblationGrid {
    #[default]
    Depth,
    Bootstrap,
    SharedHead,
    DeepVsShallow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub grid: AblationGrid,
    pub train_count: usize,
    pub test_count: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            grid: AblationGrid::Depth,
            train_count: 500,
            test_count: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeapfrogConfig {
    pub sizes: Vec<usize>,
    pub instances_per_size: usize,
    /// Held-out graphs per size for the stage metrics.
    pub test_count: usize,
    /// Also train on exact tours at every later size for comparison.
    pub baseline: bool,
}

impl Default for LeapfrogConfig {
    fn default() -> Self {
        LeapfrogConfig {
            sizes: vec![4, 5, 6],
            instances_per_size: 1000,
            test_count: 100,
            baseline: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.domain = Domain::Tsp;
        cfg.train.schedule = Some(LrSchedule::halving(1e-2, 3));
        cfg.collect.n_bootstrap = Some(4);
        cfg.bench.heuristics.push(HeuristicKind::Learned);
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg: ExperimentConfig = toml::from_str("seed = 5\n[generate]\nsize = 9\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.generate.size, 9);
        assert_eq!(cfg.generate.count, 100);
        assert!(toml::from_str::<ExperimentConfig>("sed = 5\n").is_err());
    }

    #[test]
    fn train_defaults_depend_on_domain() {
        let t = TrainSection::default();
        assert_eq!(t.resolve(Domain::Sokoban, 1).epochs, 10);
        assert_eq!(t.resolve(Domain::Tsp, 1).schedule, LrSchedule::exponential(1e-3));
    }
}
