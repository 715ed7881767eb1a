//! `grp`: generation, data collection, training, evaluation, search
//! benchmarks, ablations and leapfrogging for the Sokoban and TSP GRPs.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use grp_core::experiment::Domain;

use config::{AblationGrid, ExperimentConfig};

#[derive(Parser)]
#[command(name = "grp", version, about = "Generalized reactive policies for Sokoban and TSP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DomainArg {
    Sokoban,
    Tsp,
}

/// Flags shared by every subcommand; each overrides one config field.
#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment config; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    domain: Option<DomainArg>,
    /// Grid side (Sokoban) or node count (TSP).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    /// Node budget for searches.
    #[arg(long)]
    budget: Option<usize>,
    /// Level or graph file.
    #[arg(long)]
    instances: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate Sokoban levels (levels.txt, levels.csv).
    GenLevels(Common),
    /// Generate TSP graphs (graphs.txt, graphs.csv).
    GenGraphs {
        #[command(flatten)]
        common: Common,
        /// Cycle-plus-chords graphs instead of complete graphs.
        #[arg(long)]
        chord: bool,
    },
    /// Solve instances exactly and write a training dataset.
    Collect(Common),
    /// Train a GRP on a dataset.
    Train(Common),
    /// Evaluate a policy on instances.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluate a freshly initialized model.
        #[arg(long)]
        untrained: bool,
    },
    /// Run search algorithms with several heuristics.
    BenchSearch {
        #[command(flatten)]
        common: Common,
        /// Record wall-clock time per row (output is then not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Train and compare Sokoban architecture or data variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        grid: Option<AblationGrid>,
    },
    /// Run the TSP size curriculum.
    Leapfrog(Common),
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(d) = self.domain {
            cfg.domain = match d {
                DomainArg::Sokoban => Domain::Sokoban,
                DomainArg::Tsp => Domain::Tsp,
            };
        }
        if let Some(s) = self.size {
            cfg.generate.size = s;
        }
        if let Some(c) = self.count {
            cfg.generate.count = c;
        }
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        if let Some(p) = &self.instances {
            cfg.instances = Some(p.clone());
        }
        if let Some(p) = &self.dataset {
            cfg.dataset = Some(p.clone());
        }
        if let Some(p) = &self.model {
            cfg.model = Some(p.clone());
        }
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (name, cfg) = match &cli.command {
        Command::GenLevels(c) => ("gen-levels", c.resolve()?),
        Command::GenGraphs { common, chord } => {
            let mut cfg = common.resolve()?;
            cfg.domain = Domain::Tsp;
            cfg.generate.chord |= chord;
            ("gen-graphs", cfg)
        }
        Command::Collect(c) => ("collect", c.resolve()?),
        Command::Train(c) => ("train", c.resolve()?),
        Command::Eval { common, untrained } => {
            let mut cfg = common.resolve()?;
            cfg.eval.untrained |= untrained;
            ("eval", cfg)
        }
        Command::BenchSearch { common, timing } => {
            let mut cfg = common.resolve()?;
            cfg.bench.timing |= timing;
            ("bench-search", cfg)
        }
        Command::Ablate { common, grid } => {
            let mut cfg = common.resolve()?;
            if let Some(g) = grid {
                cfg.ablate.grid = *g;
            }
            ("ablate", cfg)
        }
        Command::Leapfrog(c) => {
            let mut cfg = c.resolve()?;
            cfg.domain = Domain::Tsp;
            ("leapfrog", cfg)
        }
    };
    std::fs::create_dir_all(&cfg.out)?;
    let outputs = match name {
        "gen-levels" => commands::gen_levels(&cfg)?,
        "gen-graphs" => commands::gen_graphs(&cfg)?,
        "collect" => commands::collect(&cfg)?,
        "train" => commands::train(&cfg)?,
        "eval" => commands::eval(&cfg)?,
        "bench-search" => commands::bench_search(&cfg)?,
        "ablate" => commands::ablate(&cfg)?,
        "leapfrog" => commands::leapfrog(&cfg)?,
        _ => unreachable!("every subcommand is named above"),
    };
    manifest::write_manifest(&cfg.out, name, &cfg, &outputs)?;
    for o in &outputs {
        eprintln!("wrote {}", cfg.out.join(o).display());
    }
    Ok(())
}
