//! Generalized reactive policies: the Sokoban image network, the TSP graph
//! network, their shared training loop, and policy/heuristic adapters.

mod graph_net;
mod sokoban_net;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softmax, Tape, Var};
use crate::checkpoint::{load_into, read_checkpoint, write_checkpoint, CheckpointError};
use crate::optim::{adam_step, AdamState, LrSchedule, OptimError};
use crate::params::ParamStore;
use crate::seed::rng_from_seed;
use crate::tensor::TensorError;

pub use graph_net::{rollout_tsp, GraphGrpConfig, TspGrp, TspHeuristic};
pub use sokoban_net::{rollout_sokoban, Rollout, SokobanGrp, SokobanGrpConfig, SokobanHeuristic};

#[derive(Debug, Error)]
pub enum GrpError {
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("current observation has no agent")]
    MissingAgent,
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("loss became non-finite in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("empty training set")]
    EmptyDataset,
    #[error("no legal move")]
    DeadEnd,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Argmax of the masked logits; ties go to the lowest index.
    #[default]
    Deterministic,
    /// Sample from the masked softmax.
    Stochastic,
}

/// Picks an index among `legal` entries of `logits`. `None` when nothing is legal.
pub fn choose<R: Rng + ?Sized>(logits: &[f64], legal: &[bool], mode: SelectionMode, rng: &mut R) -> Option<usize> {
    let probs = masked_softmax(logits, legal)?;
    match mode {
        SelectionMode::Deterministic => {
            let mut best: Option<usize> = None;
            for i in 0..logits.len() {
                if legal[i] && best.is_none_or(|b| logits[i] > logits[b]) {
                    best = Some(i);
                }
            }
            best
        }
        SelectionMode::Stochastic => {
            let mut u: f64 = rng.gen();
            let last = (0..probs.len()).rev().find(|&i| legal[i])?;
            for (i, &p) in probs.iter().enumerate() {
                if legal[i] {
                    if u < p {
                        return Some(i);
                    }
                    u -= p;
                }
            }
            Some(last)
        }
    }
}

/// Softmax restricted to `legal`; illegal entries get probability 0.
pub fn masked_softmax(logits: &[f64], legal: &[bool]) -> Option<Vec<f64>> {
    let kept: Vec<f64> = logits.iter().zip(legal).filter(|(_, &l)| l).map(|(&z, _)| z).collect();
    if kept.is_empty() {
        return None;
    }
    let mut p = softmax(&kept).into_iter();
    Some(legal.iter().map(|&l| if l { p.next().expect("one per legal entry") } else { 0.0 }).collect())
}

/// Loss node for one sample plus the numbers reported per epoch.
pub struct LossTerms {
    pub total: Var,
    pub cross_entropy: f64,
    /// Absolute plan-length error in steps (Sokoban only).
    pub length_l1: Option<f64>,
    pub correct: bool,
}

/// A network trainable by [`train`].
pub trait Trainable {
    type Sample;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn sample_loss(&self, tape: &mut Tape, sample: &Self::Sample) -> Result<LossTerms, GrpError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub schedule: LrSchedule,
    pub clip_norm: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn sokoban(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch: 32,
            schedule: LrSchedule::halving(1e-3, 5),
            clip_norm: 10.0,
            seed,
        }
    }

    pub fn tsp(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch: 32,
            schedule: LrSchedule::exponential(1e-3),
            clip_norm: 10.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub cross_entropy: f64,
    pub length_l1: Option<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

pub fn train<M: Trainable>(model: &mut M, samples: &[M::Sample], config: &TrainConfig) -> Result<TrainReport, GrpError> {
    train_with_progress(model, samples, config, |_| {})
}

/// Mini-batch Adam by per-sample gradient accumulation; `progress` sees each
/// finished epoch. The shuffle order depends only on `config.seed`.
pub fn train_with_progress<M: Trainable>(
    model: &mut M,
    samples: &[M::Sample],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainReport, GrpError> {
    if samples.is_empty() {
        return Err(GrpError::EmptyDataset);
    }
    if config.batch == 0 {
        return Err(GrpError::Config("batch must be positive".into()));
    }
    let mut adam = AdamState::new(model.params(), config.schedule.clone());
    let mut rng = rng_from_seed(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut ce_sum, mut l1_sum, mut correct) = (0.0, 0.0, 0.0, 0usize);
        let mut has_l1 = false;
        for batch in order.chunks(config.batch) {
            model.params_mut().zero_grads();
            for &i in batch {
                let mut tape = Tape::new();
                let terms = model.sample_loss(&mut tape, &samples[i])?;
                let loss = tape.scalar(terms.total);
                if !loss.is_finite() {
                    return Err(GrpError::Diverged { epoch });
                }
                loss_sum += loss;
                ce_sum += terms.cross_entropy;
                if let Some(l1) = terms.length_l1 {
                    l1_sum += l1;
                    has_l1 = true;
                }
                correct += usize::from(terms.correct);
                let grads = tape.backward(terms.total);
                tape.accumulate_param_grads(&grads, model.params_mut());
            }
            let params = model.params_mut();
            params.scale_grads(1.0 / batch.len() as f64);
            if config.clip_norm > 0.0 {
                params.clip_grad_norm(config.clip_norm);
            }
            adam_step(params, &mut adam, epoch)?;
        }
        let n = samples.len() as f64;
        let stats = EpochStats {
            epoch,
            lr: config.schedule.rate_at(epoch),
            loss: loss_sum / n,
            cross_entropy: ce_sum / n,
            length_l1: has_l1.then_some(l1_sum / n),
            accuracy: correct as f64 / n,
        };
        progress(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}

#[derive(Serialize, Deserialize)]
struct ModelMeta<C> {
    kind: String,
    config: C,
}

impl SokobanGrp {
    pub fn save<W: std::io::Write>(&self, w: W) -> Result<(), GrpError> {
        save_model(w, "sokoban", self.config(), self.params())
    }

    pub fn load<R: std::io::Read>(r: R) -> Result<Self, GrpError> {
        let (config, params) = load_model::<_, SokobanGrpConfig>(r, "sokoban")?;
        let mut model = SokobanGrp::new(config, 0)?;
        load_into(model.params_mut(), &params)?;
        Ok(model)
    }
}

impl TspGrp {
    pub fn save<W: std::io::Write>(&self, w: W) -> Result<(), GrpError> {
        save_model(w, "tsp", self.config(), self.params())
    }

    pub fn load<R: std::io::Read>(r: R) -> Result<Self, GrpError> {
        let (config, params) = load_model::<_, GraphGrpConfig>(r, "tsp")?;
        let mut model = TspGrp::new(config, 0)?;
        load_into(model.params_mut(), &params)?;
        Ok(model)
    }
}

fn save_model<W: std::io::Write, C: Serialize>(w: W, kind: &str, config: &C, params: &ParamStore) -> Result<(), GrpError> {
    let meta = serde_json::to_string(&ModelMeta { kind: kind.to_string(), config }).expect("configs serialize");
    Ok(write_checkpoint(w, params, &meta)?)
}

fn load_model<R: std::io::Read, C: serde::de::DeserializeOwned>(r: R, kind: &str) -> Result<(C, ParamStore), GrpError> {
    let (params, meta) = read_checkpoint(r)?;
    let meta: ModelMeta<C> = serde_json::from_str(&meta)
        .map_err(|e| CheckpointError::Malformed(format!("model metadata: {e}")))?;
    if meta.kind != kind {
        return Err(CheckpointError::Mismatch(format!("checkpoint holds a {} model, expected {kind}", meta.kind)).into());
    }
    Ok((meta.config, params))
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
