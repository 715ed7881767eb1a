use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, choose, GrpError, LossTerms, SelectionMode, Trainable};
use crate::autodiff::{softmax, GraphStructure, Tape, Var};
use crate::data::TspSample;
use crate::params::{kaiming_uniform, ParamId, ParamStore};
use crate::search::Heuristic;
use crate::seed::rng_from_seed;
use crate::tensor::Tensor;
use crate::tsp::{encode_node_features, legal_moves, tsp_step, Tour, TspState, WeightedGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphGrpConfig {
    pub layers: usize,
    pub width: usize,
    /// Node feature width; entries past the three binary features are zero.
    pub input_width: usize,
    /// Count each node among its own neighbors (edge weight 0).
    pub include_self: bool,
    /// Hidden width of a per-edge ReLU message applied before the neighbor
    /// sum. Unset keeps the linear message.
    pub edge_hidden: Option<usize>,
}

impl Default for GraphGrpConfig {
    fn default() -> Self {
        GraphGrpConfig {
            layers: 4,
            width: 26,
            input_width: 3,
            include_self: false,
            edge_hidden: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    theta: ParamId,
    bias: ParamId,
    /// Per-edge message weights when `edge_hidden` is set.
    edge: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
pub struct TspGrp {
    config: GraphGrpConfig,
    params: ParamStore,
    layers: Vec<Layer>,
    score: Layer,
}

impl TspGrp {
    pub fn new(config: GraphGrpConfig, seed: u64) -> Result<Self, GrpError> {
        if config.layers == 0 || config.width == 0 {
            return Err(GrpError::Config("layers and width must be positive".into()));
        }
        if config.edge_hidden == Some(0) {
            return Err(GrpError::Config("edge_hidden must be positive".into()));
        }
        if config.input_width < 3 {
            return Err(GrpError::Config("input width must be at least 3".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut params = ParamStore::new();
        let mut c = config.input_width;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let rows = 2 * c + 1;
            let layer = match config.edge_hidden {
                None => Layer {
                    theta: params.add(format!("gconv{l}.theta"), kaiming_uniform(&[rows, config.width], rows, &mut rng)),
                    bias: params.add(format!("gconv{l}.bias"), Tensor::zeros([config.width])),
                    edge: None,
                },
                Some(h) => {
                    let ew = params.add(format!("gconv{l}.edge_weight"), kaiming_uniform(&[h, rows], rows, &mut rng));
                    let eb = params.add(format!("gconv{l}.edge_bias"), Tensor::zeros([h]));
                    Layer {
                        theta: params.add(format!("gconv{l}.theta"), kaiming_uniform(&[config.width, h], h, &mut rng)),
                        bias: params.add(format!("gconv{l}.bias"), Tensor::zeros([config.width])),
                        edge: Some((ew, eb)),
                    }
                }
            };
            layers.push(layer);
            c = config.width;
        }
        let score = Layer {
            theta: params.add("score.weight", kaiming_uniform(&[1, c], c, &mut rng)),
            bias: params.add("score.bias", Tensor::zeros([1])),
            edge: None,
        };
        Ok(TspGrp {
            config,
            params,
            layers,
            score,
        })
    }

    pub fn config(&self) -> &GraphGrpConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn structure(&self, graph: &WeightedGraph) -> Arc<GraphStructure> {
        let mut s = graph.structure();
        if self.config.include_self {
            let s = Arc::make_mut(&mut s);
            for (i, nbrs) in s.neighbors.iter_mut().enumerate() {
                nbrs.push((i, 0.0));
                nbrs.sort_by_key(|&(v, _)| v);
            }
        }
        s
    }

    /// One graph convolution followed by ReLU.
    pub fn graph_conv_layer(&self, tape: &mut Tape, x: Var, graph: Arc<GraphStructure>, layer: usize) -> Result<Var, GrpError> {
        let l = self.layers[layer];
        let theta = tape.param(&self.params, l.theta);
        let bias = tape.param(&self.params, l.bias);
        let z = match l.edge {
            None => tape.graph_conv(x, graph, theta, bias)?,
            Some((ew, eb)) => {
                let ew = tape.param(&self.params, ew);
                let eb = tape.param(&self.params, eb);
                let e = tape.edge_inputs(x, graph.clone())?;
                let m = tape.row_affine(e, ew, eb)?;
                let m = tape.relu(m);
                let agg = tape.sum_incoming(m, graph)?;
                tape.row_affine(agg, theta, bias)?
            }
        };
        Ok(tape.relu(z))
    }

    /// Per-node scores `[n, 1]` from node features `[n, input_width]`.
    pub fn forward(&self, tape: &mut Tape, graph: Arc<GraphStructure>, features: &Tensor) -> Result<Var, GrpError> {
        let mut x = tape.input(features);
        for l in 0..self.layers.len() {
            x = self.graph_conv_layer(tape, x, graph.clone(), l)?;
        }
        let w = tape.param(&self.params, self.score.theta);
        let b = tape.param(&self.params, self.score.bias);
        Ok(tape.row_affine(x, w, b)?)
    }

    /// Node scores for a partial tour.
    pub fn scores(&self, graph: &WeightedGraph, state: &TspState) -> Result<Vec<f64>, GrpError> {
        let mut tape = Tape::new();
        let features = encode_node_features(graph, state).to_tensor(self.config.input_width);
        let out = self.forward(&mut tape, self.structure(graph), &features)?;
        Ok(tape.value(out).to_vec())
    }

    /// Softmax over all nodes.
    pub fn probabilities(&self, graph: &WeightedGraph, state: &TspState) -> Result<Vec<f64>, GrpError> {
        Ok(softmax(&self.scores(graph, state)?))
    }

    /// Next node among the legal ones.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        graph: &WeightedGraph,
        state: &TspState,
        mode: SelectionMode,
        rng: &mut R,
    ) -> Result<usize, GrpError> {
        let scores = self.scores(graph, state)?;
        let mut legal = vec![false; graph.node_count()];
        for v in legal_moves(graph, state) {
            legal[v] = true;
        }
        choose(&scores, &legal, mode, rng).ok_or(GrpError::DeadEnd)
    }
}

impl Trainable for TspGrp {
    type Sample = TspSample;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn sample_loss(&self, tape: &mut Tape, sample: &TspSample) -> Result<LossTerms, GrpError> {
        let features = sample.features().to_tensor(self.config.input_width);
        let scores = self.forward(tape, self.structure(&sample.graph), &features)?;
        let correct = argmax(tape.value(scores)) == sample.action;
        let ce = tape.softmax_cross_entropy(scores, sample.action)?;
        Ok(LossTerms {
            total: ce,
            cross_entropy: tape.scalar(ce),
            length_l1: None,
            correct,
        })
    }
}

/// Builds a full tour from `start` with the policy. Fails at a dead end.
pub fn rollout_tsp<R: Rng + ?Sized>(
    model: &TspGrp,
    graph: &WeightedGraph,
    start: usize,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<Tour, GrpError> {
    let n = graph.node_count();
    let mut state = TspState::new(start);
    let mut nodes = vec![start];
    while !state.all_visited(n) {
        let v = model.select_action(graph, &state, mode, rng)?;
        state = tsp_step(graph, &state, v).expect("selected moves are legal");
        nodes.push(v);
    }
    let cost = graph.cycle_cost(&nodes).ok_or(GrpError::DeadEnd)?;
    Ok(Tour { nodes, cost })
}

/// `(N − v)(1 − p_i) / 2` for the child reached by moving to node `i`, where
/// `v` counts the parent's visited nodes and `p_i` is the policy probability.
pub struct TspHeuristic<'a> {
    pub model: &'a TspGrp,
    pub graph: &'a WeightedGraph,
}

impl TspHeuristic<'_> {
    pub fn value(n: usize, visited: usize, p: f64) -> f64 {
        (n - visited) as f64 * (1.0 - p) / 2.0
    }
}

impl Heuristic<TspState, usize> for TspHeuristic<'_> {
    /// Without a parent the policy term is dropped (`p = 0`).
    fn estimate(&mut self, state: &TspState) -> f64 {
        let n = self.graph.node_count();
        if state.is_complete(n) {
            return 0.0;
        }
        Self::value(n, state.visited_count(), 0.0)
    }

    fn estimate_children(&mut self, parent: &TspState, children: &[(usize, TspState, f64)]) -> Vec<f64> {
        if children.is_empty() {
            return Vec::new();
        }
        let n = self.graph.node_count();
        let p = self.model.probabilities(self.graph, parent).expect("graph matches the model");
        children
            .iter()
            .map(|(i, _, _)| Self::value(n, parent.visited_count(), p[*i]))
            .collect()
    }
}
