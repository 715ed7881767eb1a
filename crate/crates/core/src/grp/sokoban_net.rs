use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, choose, GrpError, LossTerms, SelectionMode, Trainable};
use crate::autodiff::{Padding, Tape, Var};
use crate::data::SokobanSample;
use crate::params::{kaiming_uniform, ParamId, ParamStore};
use crate::search::Heuristic;
use crate::seed::rng_from_seed;
use crate::sokoban::{Action, Observation, SokobanProblem, SokobanState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SokobanGrpConfig {
    pub depth: usize,
    pub filters: usize,
    /// Side of the feature window cut around the agent; odd.
    pub window: usize,
    /// Weight of the plan-length loss; 0 trains the action head alone.
    pub lambda_len: f64,
    pub head_width: usize,
    /// Feed the raw input into every convolution layer.
    pub skip: bool,
    /// Include the action cross-entropy in the loss; off trains the length head alone.
    pub action_loss: bool,
}

impl Default for SokobanGrpConfig {
    fn default() -> Self {
        SokobanGrpConfig {
            depth: 14,
            filters: 64,
            window: 1,
            lambda_len: 1.0,
            head_width: 128,
            skip: true,
            action_loss: true,
        }
    }
}

impl SokobanGrpConfig {
    pub fn validate(&self) -> Result<(), GrpError> {
        if self.depth == 0 || self.filters == 0 || self.head_width == 0 {
            return Err(GrpError::Config("depth, filters and head width must be positive".into()));
        }
        if self.window % 2 == 0 {
            return Err(GrpError::Config(format!("window {} must be odd", self.window)));
        }
        if !(self.lambda_len >= 0.0 && self.lambda_len.is_finite()) {
            return Err(GrpError::Config("lambda_len must be finite and non-negative".into()));
        }
        if !self.action_loss && self.lambda_len == 0.0 {
            return Err(GrpError::Config("both loss terms are disabled".into()));
        }
        Ok(())
    }
}

/// Channels in the stacked current+goal input.
const INPUT_CHANNELS: usize = 6;
const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct SokobanGrp {
    config: SokobanGrpConfig,
    params: ParamStore,
    convs: Vec<Dense>,
    action_head: [Dense; 2],
    length_head: [Dense; 2],
}

impl SokobanGrp {
    /// Kaiming-uniform weights and zero biases drawn from `seed`.
    pub fn new(config: SokobanGrpConfig, seed: u64) -> Result<Self, GrpError> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = ParamStore::new();
        let f = config.filters;
        let mut convs = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let c_in = if l == 0 {
                INPUT_CHANNELS
            } else if config.skip {
                f + INPUT_CHANNELS
            } else {
                f
            };
            let fan_in = c_in * KERNEL * KERNEL;
            convs.push(Dense {
                weight: params.add(format!("conv{l}.kernel"), kaiming_uniform(&[f, c_in, KERNEL, KERNEL], fan_in, &mut rng)),
                bias: params.add(format!("conv{l}.bias"), Tensor::zeros([f])),
            });
        }
        let features = f * config.window * config.window;
        let mut head = |name: &str, out: usize, params: &mut ParamStore| {
            let h = config.head_width;
            [
                Dense {
                    weight: params.add(format!("{name}.fc1.weight"), kaiming_uniform(&[h, features], features, &mut rng)),
                    bias: params.add(format!("{name}.fc1.bias"), Tensor::zeros([h])),
                },
                Dense {
                    weight: params.add(format!("{name}.fc2.weight"), kaiming_uniform(&[out, h], h, &mut rng)),
                    bias: params.add(format!("{name}.fc2.bias"), Tensor::zeros([out])),
                },
            ]
        };
        let action_head = head("action", 4, &mut params);
        let length_head = head("length", 1, &mut params);
        Ok(SokobanGrp {
            config,
            params,
            convs,
            action_head,
            length_head,
        })
    }

    pub fn config(&self) -> &SokobanGrpConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Records the forward pass on `tape`. Returns the action logits `[4]` and
    /// the raw length output, which predicts plan length divided by grid width.
    pub fn forward(&self, tape: &mut Tape, current: &Observation, goal: &Observation) -> Result<(Var, Var), GrpError> {
        let input = stacked_input(current, goal)?;
        let agent = current.agent().ok_or(GrpError::MissingAgent)?;
        let raw = tape.input(&input);
        let mut x = raw;
        for (l, conv) in self.convs.iter().enumerate() {
            let inp = if l > 0 && self.config.skip { tape.concat_channels(x, raw)? } else { x };
            let k = tape.param(&self.params, conv.weight);
            let b = tape.param(&self.params, conv.bias);
            let z = tape.conv2d(inp, k, b, Padding::Same)?;
            x = tape.relu(z);
        }
        // +1 for the wall ring added around the grid.
        let window = tape.window(x, agent.row as isize + 1, agent.col as isize + 1, self.config.window)?;
        let logits = self.head(tape, window, &self.action_head)?;
        let length = self.head(tape, window, &self.length_head)?;
        Ok((logits, length))
    }

    fn head(&self, tape: &mut Tape, x: Var, layers: &[Dense; 2]) -> Result<Var, GrpError> {
        let w = tape.param(&self.params, layers[0].weight);
        let b = tape.param(&self.params, layers[0].bias);
        let hidden = tape.affine(x, w, b)?;
        let hidden = tape.relu(hidden);
        let w = tape.param(&self.params, layers[1].weight);
        let b = tape.param(&self.params, layers[1].bias);
        Ok(tape.affine(hidden, w, b)?)
    }

    /// Action logits and predicted plan length in steps.
    pub fn predict(&self, current: &Observation, goal: &Observation) -> Result<([f64; 4], f64), GrpError> {
        let mut tape = Tape::new();
        let (logits, length) = self.forward(&mut tape, current, goal)?;
        let l = tape.value(logits);
        Ok(([l[0], l[1], l[2], l[3]], tape.scalar(length) * current.width() as f64))
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        problem: &SokobanProblem,
        state: &SokobanState,
        goal: &Observation,
        mode: SelectionMode,
        rng: &mut R,
    ) -> Result<Action, GrpError> {
        let (logits, _) = self.predict(&problem.render_observation(state, true), goal)?;
        // Moves that leave the state unchanged are masked out.
        let mut legal = [false; 4];
        for a in Action::ALL {
            legal[a.index()] = problem.apply_action(state, a) != *state;
        }
        if !legal.iter().any(|&l| l) {
            legal = [true; 4];
        }
        let i = choose(&logits, &legal, mode, rng).ok_or(GrpError::DeadEnd)?;
        Ok(Action::from_index(i).expect("four actions"))
    }
}

impl Trainable for SokobanGrp {
    type Sample = SokobanSample;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn sample_loss(&self, tape: &mut Tape, sample: &SokobanSample) -> Result<LossTerms, GrpError> {
        let (logits, length) = self.forward(tape, &sample.current, &sample.goal)?;
        let correct = argmax(tape.value(logits)) == sample.action;
        let ce = tape.softmax_cross_entropy(logits, sample.action)?;
        let width = sample.current.width() as f64;
        let target = f64::from(sample.plan_length);
        let length_l1 = (tape.scalar(length) * width - target).abs();
        let cross_entropy = tape.scalar(ce);
        let total = if self.config.lambda_len > 0.0 {
            let l1 = tape.l1(length, target / width)?;
            let weighted = tape.scale(l1, self.config.lambda_len);
            if self.config.action_loss {
                tape.add(ce, weighted)?
            } else {
                weighted
            }
        } else {
            ce
        };
        Ok(LossTerms {
            total,
            cross_entropy,
            length_l1: Some(length_l1),
            correct,
        })
    }
}

/// Current and goal observations stacked to 6 channels, surrounded by a
/// one-cell ring that reads as wall in both wall channels.
fn stacked_input(current: &Observation, goal: &Observation) -> Result<Tensor, GrpError> {
    let (cs, gs) = (current.channels.shape(), goal.channels.shape());
    if cs != gs || cs.len() != 3 || cs[0] != 3 {
        return Err(crate::tensor::TensorError::Shape {
            op: "sokoban_forward",
            expected: format!("{cs:?}"),
            found: format!("{gs:?}"),
        }
        .into());
    }
    let (h, w) = (cs[1], cs[2]);
    let (ph, pw) = (h + 2, w + 2);
    let mut t = Tensor::zeros([INPUT_CHANNELS, ph, pw]);
    let out = t.values_mut();
    for (half, obs) in [current, goal].into_iter().enumerate() {
        let v = obs.channels.values();
        for c in 0..3 {
            let dst = (half * 3 + c) * ph * pw;
            for r in 0..h {
                let row = dst + (r + 1) * pw + 1;
                out[row..row + w].copy_from_slice(&v[(c * h + r) * w..(c * h + r + 1) * w]);
            }
        }
        let wall = half * 3 * ph * pw;
        for r in 0..ph {
            for c in 0..pw {
                if r == 0 || c == 0 || r == ph - 1 || c == pw - 1 {
                    out[wall + r * pw + c] = 1.0;
                }
            }
        }
    }
    Ok(t)
}

/// Outcome of executing a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rollout {
    pub solved: bool,
    pub steps: usize,
}

/// Runs the policy toward the real goal for at most `step_budget` steps.
/// With a deterministic policy a repeated state means a cycle, so the rollout
/// stops there as a failure.
pub fn rollout_sokoban<R: Rng + ?Sized>(
    model: &SokobanGrp,
    problem: &SokobanProblem,
    mode: SelectionMode,
    step_budget: usize,
    rng: &mut R,
) -> Result<Rollout, GrpError> {
    let goal = problem.goal_observation();
    let mut state = problem.initial.clone();
    let mut seen = HashSet::from([state.clone()]);
    for steps in 0..step_budget {
        if problem.is_goal(&state) {
            return Ok(Rollout { solved: true, steps });
        }
        let a = model.select_action(problem, &state, &goal, mode, rng)?;
        state = problem.apply_action(&state, a);
        if !seen.insert(state.clone()) && mode == SelectionMode::Deterministic {
            return Ok(Rollout {
                solved: false,
                steps: steps + 1,
            });
        }
    }
    Ok(Rollout {
        solved: problem.is_goal(&state),
        steps: step_budget,
    })
}

/// Plan-length prediction toward the real goal, clamped at 0.
pub struct SokobanHeuristic<'a> {
    pub model: &'a SokobanGrp,
    pub problem: &'a SokobanProblem,
    pub goal: Observation,
}

impl<'a> SokobanHeuristic<'a> {
    pub fn new(model: &'a SokobanGrp, problem: &'a SokobanProblem) -> Self {
        SokobanHeuristic {
            model,
            problem,
            goal: problem.goal_observation(),
        }
    }
}

impl Heuristic<SokobanState, Action> for SokobanHeuristic<'_> {
    fn estimate(&mut self, state: &SokobanState) -> f64 {
        let obs = self.problem.render_observation(state, true);
        let (_, length) = self.model.predict(&obs, &self.goal).expect("observations match the model");
        length.max(0.0)
    }
}
