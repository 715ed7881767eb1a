//! Reverse-mode differentiation over a per-sample tape.
//!
//! Every operation appends a node holding its forward value plus whatever it
//! needs for the backward sweep. `Tape::backward` walks the nodes in reverse
//! and returns the gradient of a scalar node with respect to every node.

use std::sync::Arc;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so the output keeps the input's spatial size.
    Same,
    Valid,
}

/// Neighbor lists for graph convolution: `neighbors[i]` holds `(s, w_si)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStructure {
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

impl GraphStructure {
    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Directed edge count: the sum of all neighbor-list lengths.
    pub fn edge_slots(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        cols: Vec<f64>,
        geometry: ConvGeometry,
    },
    Affine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    RowAffine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    GraphConv {
        input: Var,
        theta: Var,
        bias: Var,
        graph: Arc<GraphStructure>,
        aggregated: Vec<f64>,
    },
    EdgeInputs {
        input: Var,
        graph: Arc<GraphStructure>,
    },
    SumIncoming {
        input: Var,
        graph: Arc<GraphStructure>,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    ConcatChannels(Var, Var),
    Window {
        input: Var,
        row: isize,
        col: isize,
        k: usize,
    },
    SoftmaxXent {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    L1 {
        pred: Var,
        target: f64,
    },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    c_in: usize,
    c_out: usize,
    in_h: usize,
    in_w: usize,
    k_h: usize,
    k_w: usize,
    pad_h: usize,
    pad_w: usize,
    out_h: usize,
    out_w: usize,
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every tape node.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

/// `c = beta * c + op(a) * op(b)` for row-major matrices; `op` transposes when
/// the flag is set (the operand is then stored with the swapped shape).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n row-major
    // buffers whose lengths are checked by the debug assertion and the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[0]
    }

    pub fn tensor(&self, var: Var) -> Tensor {
        let n = &self.nodes[var.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes are well formed")
    }

    /// Constant or differentiable input; its gradient is available from `Grads::wrt`.
    pub fn input(&mut self, tensor: &Tensor) -> Var {
        self.push(tensor.shape().to_vec(), tensor.values().to_vec(), Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Param(id))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        padding: Padding,
    ) -> Result<Var, TensorError> {
        let is = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if is.len() != 3 {
            return Err(TensorError::shape("conv2d input", "[C,H,W]", &is));
        }
        if ks.len() != 4 {
            return Err(TensorError::shape("conv2d kernel", "[Cout,Cin,kh,kw]", &ks));
        }
        let (c_in, in_h, in_w) = (is[0], is[1], is[2]);
        let (c_out, k_h, k_w) = (ks[0], ks[2], ks[3]);
        if ks[1] != c_in {
            return Err(TensorError::shape("conv2d channels", c_in, ks[1]));
        }
        if k_h % 2 == 0 || k_w % 2 == 0 {
            return Err(TensorError::shape("conv2d kernel", "odd spatial dims", &ks));
        }
        if self.shape(bias) != [c_out] {
            return Err(TensorError::shape("conv2d bias", [c_out], self.shape(bias)));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => ((k_h - 1) / 2, (k_w - 1) / 2),
            Padding::Valid => {
                if in_h < k_h || in_w < k_w {
                    return Err(TensorError::shape("conv2d valid", [k_h, k_w], [in_h, in_w]));
                }
                (0, 0)
            }
        };
        let g = ConvGeometry {
            c_in,
            c_out,
            in_h,
            in_w,
            k_h,
            k_w,
            pad_h,
            pad_w,
            out_h: in_h + 2 * pad_h + 1 - k_h,
            out_w: in_w + 2 * pad_w + 1 - k_w,
        };
        let cols = im2col(self.value(input), &g);
        let positions = g.out_h * g.out_w;
        let rows = c_in * k_h * k_w;
        let mut out = vec![0.0; c_out * positions];
        let b = self.value(bias);
        for (co, chunk) in out.chunks_mut(positions).enumerate() {
            chunk.iter_mut().for_each(|v| *v = b[co]);
        }
        gemm(
            c_out,
            rows,
            positions,
            self.value(kernel),
            false,
            &cols,
            false,
            &mut out,
            1.0,
        );
        Ok(self.push(
            vec![c_out, g.out_h, g.out_w],
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                cols,
                geometry: g,
            },
        ))
    }

    /// `weight · input + bias` with `input` flattened to a vector.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let ws = self.shape(weight).to_vec();
        let n_in = self.value(input).len();
        if ws.len() != 2 || ws[1] != n_in {
            return Err(TensorError::shape("affine weight", format!("[_, {n_in}]"), &ws));
        }
        if self.shape(bias) != [ws[0]] {
            return Err(TensorError::shape("affine bias", [ws[0]], self.shape(bias)));
        }
        let x = self.value(input);
        let w = self.value(weight);
        let out: Vec<f64> = self
            .value(bias)
            .iter()
            .enumerate()
            .map(|(o, &b)| b + dot(&w[o * n_in..(o + 1) * n_in], x))
            .collect();
        Ok(self.push(vec![ws[0]], out, Op::Affine { input, weight, bias }))
    }

    /// Applies the same affine map to every row of an `[n, C]` input.
    pub fn row_affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let is = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if is.len() != 2 {
            return Err(TensorError::shape("row_affine input", "[n,C]", &is));
        }
        if ws.len() != 2 || ws[1] != is[1] {
            return Err(TensorError::shape("row_affine weight", format!("[_, {}]", is[1]), &ws));
        }
        if self.shape(bias) != [ws[0]] {
            return Err(TensorError::shape("row_affine bias", [ws[0]], self.shape(bias)));
        }
        let (n, c, out_w) = (is[0], is[1], ws[0]);
        let mut out: Vec<f64> = broadcast_bias_rows(self.value(bias), n).collect();
        gemm(n, c, out_w, self.value(input), false, self.value(weight), true, &mut out, 1.0);
        Ok(self.push(vec![n, out_w], out, Op::RowAffine { input, weight, bias }))
    }

    /// Pre-activation of one graph convolution layer:
    /// `out_ij = Σ_{s∈N(i)} ([x_s, x_i, w_si] · theta_j + b_j)`.
    pub fn graph_conv(
        &mut self,
        input: Var,
        graph: Arc<GraphStructure>,
        theta: Var,
        bias: Var,
    ) -> Result<Var, TensorError> {
        let is = self.shape(input).to_vec();
        if is.len() != 2 || is[0] != graph.node_count() {
            return Err(TensorError::shape(
                "graph_conv input",
                format!("[{}, C]", graph.node_count()),
                &is,
            ));
        }
        let (n, c) = (is[0], is[1]);
        let ts = self.shape(theta).to_vec();
        if ts.len() != 2 || ts[0] != 2 * c + 1 {
            return Err(TensorError::shape("graph_conv theta", format!("[{}, _]", 2 * c + 1), &ts));
        }
        let c_out = ts[1];
        if self.shape(bias) != [c_out] {
            return Err(TensorError::shape("graph_conv bias", [c_out], self.shape(bias)));
        }
        let width = 2 * c + 1;
        let x = self.value(input);
        let mut aggregated = vec![0.0; n * width];
        for (i, nbrs) in graph.neighbors.iter().enumerate() {
            let row = &mut aggregated[i * width..(i + 1) * width];
            for &(s, w) in nbrs {
                for (a, &v) in row[..c].iter_mut().zip(&x[s * c..(s + 1) * c]) {
                    *a += v;
                }
                row[2 * c] += w;
            }
            let deg = nbrs.len() as f64;
            for (a, &v) in row[c..2 * c].iter_mut().zip(&x[i * c..(i + 1) * c]) {
                *a = deg * v;
            }
        }
        let b = self.value(bias);
        let mut out = Vec::with_capacity(n * c_out);
        for nbrs in &graph.neighbors {
            let deg = nbrs.len() as f64;
            out.extend(b.iter().map(|&bj| deg * bj));
        }
        gemm(n, width, c_out, &aggregated, false, self.value(theta), false, &mut out, 1.0);
        Ok(self.push(
            vec![n, c_out],
            out,
            Op::GraphConv {
                input,
                theta,
                bias,
                graph,
                aggregated,
            },
        ))
    }

    /// One row `[x_s, x_i, w_si]` per directed edge, ordered by `i` and then
    /// by `i`'s neighbor list.
    pub fn edge_inputs(&mut self, input: Var, graph: Arc<GraphStructure>) -> Result<Var, TensorError> {
        let is = self.shape(input).to_vec();
        if is.len() != 2 || is[0] != graph.node_count() {
            return Err(TensorError::shape("edge_inputs input", format!("[{}, C]", graph.node_count()), &is));
        }
        let c = is[1];
        let width = 2 * c + 1;
        let x = self.value(input);
        let mut out = Vec::with_capacity(graph.edge_slots() * width);
        for (i, nbrs) in graph.neighbors.iter().enumerate() {
            for &(s, w) in nbrs {
                out.extend_from_slice(&x[s * c..(s + 1) * c]);
                out.extend_from_slice(&x[i * c..(i + 1) * c]);
                out.push(w);
            }
        }
        Ok(self.push(vec![graph.edge_slots(), width], out, Op::EdgeInputs { input, graph }))
    }

    /// Sums per-edge rows (in [`Tape::edge_inputs`] order) into their target nodes.
    pub fn sum_incoming(&mut self, input: Var, graph: Arc<GraphStructure>) -> Result<Var, TensorError> {
        let is = self.shape(input).to_vec();
        if is.len() != 2 || is[0] != graph.edge_slots() {
            return Err(TensorError::shape("sum_incoming input", format!("[{}, C]", graph.edge_slots()), &is));
        }
        let c = is[1];
        let x = self.value(input);
        let mut out = vec![0.0; graph.node_count() * c];
        let mut e = 0;
        for (i, nbrs) in graph.neighbors.iter().enumerate() {
            for _ in nbrs {
                for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(&x[e * c..(e + 1) * c]) {
                    *o += v;
                }
                e += 1;
            }
        }
        Ok(self.push(vec![graph.node_count(), c], out, Op::SumIncoming { input, graph }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).iter().map(|&v| v.max(0.0)).collect();
        self.push(self.shape(input).to_vec(), value, Op::Relu(input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape("add", self.shape(a), self.shape(b)));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), value, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape("mul", self.shape(a), self.shape(b)));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).iter().map(|v| v * factor).collect();
        self.push(self.shape(input).to_vec(), value, Op::Scale(input, factor))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(input))
    }

    /// Stacks two `[C, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(TensorError::shape("concat_channels", sa, sb));
        }
        let shape = vec![sa[0] + sb[0], sa[1], sa[2]];
        let mut value = Vec::with_capacity(shape.iter().product());
        value.extend_from_slice(self.value(a));
        value.extend_from_slice(self.value(b));
        Ok(self.push(shape, value, Op::ConcatChannels(a, b)))
    }

    /// Crops a `k×k` window centered at `(row, col)` from a `[C, H, W]` map,
    /// zero-filled outside the map, flattened to `[C·k·k]`.
    pub fn window(&mut self, input: Var, row: isize, col: isize, k: usize) -> Result<Var, TensorError> {
        let s = self.shape(input).to_vec();
        if s.len() != 3 {
            return Err(TensorError::shape("window", "[C,H,W]", &s));
        }
        if k % 2 == 0 {
            return Err(TensorError::shape("window", "odd k", k));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let half = (k / 2) as isize;
        let x = self.value(input);
        let mut out = vec![0.0; c * k * k];
        for ch in 0..c {
            for di in 0..k {
                let r = row + di as isize - half;
                if r < 0 || r >= h as isize {
                    continue;
                }
                for dj in 0..k {
                    let cc = col + dj as isize - half;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    out[(ch * k + di) * k + dj] = x[(ch * h + r as usize) * w + cc as usize];
                }
            }
        }
        Ok(self.push(vec![c * k * k], out, Op::Window { input, row, col, k }))
    }

    /// Softmax cross-entropy against a class index; returns the scalar loss node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, TensorError> {
        let z = self.value(logits);
        if label >= z.len() {
            return Err(TensorError::Index {
                op: "softmax_cross_entropy",
                index: label,
                len: z.len(),
            });
        }
        let probs = softmax(z);
        let loss = log_sum_exp(z) - z[label];
        Ok(self.push(vec![1], vec![loss], Op::SoftmaxXent { logits, label, probs }))
    }

    pub fn l1(&mut self, pred: Var, target: f64) -> Result<Var, TensorError> {
        if self.value(pred).len() != 1 {
            return Err(TensorError::shape("l1", [1], self.shape(pred)));
        }
        let loss = (self.value(pred)[0] - target).abs();
        Ok(self.push(vec![1], vec![loss], Op::L1 { pred, target }))
    }

    /// Softmax probabilities cached by a cross-entropy node.
    pub fn probabilities(&self, loss: Var) -> Option<&[f64]> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Fingerprint of every piecewise-linear branch taken (ReLU masks, L1 signs).
    /// Two evaluations with equal fingerprints lie on the same linear piece.
    pub fn regime(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |bit: u8| {
            h ^= u64::from(bit);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => {
                    for &v in &self.nodes[x.0].value {
                        mix(u8::from(v > 0.0));
                    }
                }
                Op::L1 { pred, target } => {
                    let d = self.nodes[pred.0].value[0] - target;
                    mix(if d > 0.0 { 2 } else if d < 0.0 { 1 } else { 0 });
                }
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: Var) -> Grads {
        assert_eq!(self.nodes[output.0].value.len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                cols,
                geometry,
            } => {
                let geo = *geometry;
                let positions = geo.out_h * geo.out_w;
                let rows = geo.c_in * geo.k_h * geo.k_w;
                {
                    let db = add_into(&mut grads[bias.0], geo.c_out);
                    for (co, chunk) in g.chunks(positions).enumerate() {
                        db[co] += chunk.iter().sum::<f64>();
                    }
                }
                {
                    let dk = add_into(&mut grads[kernel.0], geo.c_out * rows);
                    gemm(geo.c_out, positions, rows, g, false, cols, true, dk, 1.0);
                }
                let mut dcols = vec![0.0; rows * positions];
                gemm(
                    rows,
                    geo.c_out,
                    positions,
                    &self.nodes[kernel.0].value,
                    true,
                    g,
                    false,
                    &mut dcols,
                    0.0,
                );
                let dx = add_into(&mut grads[input.0], geo.c_in * geo.in_h * geo.in_w);
                col2im(&dcols, &geo, dx);
            }
            Op::Affine { input, weight, bias } => {
                let n_in = self.len_of(*input);
                let x = &self.nodes[input.0].value;
                let w = &self.nodes[weight.0].value;
                {
                    let db = add_into(&mut grads[bias.0], g.len());
                    db.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
                {
                    let dw = add_into(&mut grads[weight.0], g.len() * n_in);
                    for (o, &go) in g.iter().enumerate() {
                        if go != 0.0 {
                            axpy(go, x, &mut dw[o * n_in..(o + 1) * n_in]);
                        }
                    }
                }
                let dx = add_into(&mut grads[input.0], n_in);
                for (o, &go) in g.iter().enumerate() {
                    if go != 0.0 {
                        axpy(go, &w[o * n_in..(o + 1) * n_in], dx);
                    }
                }
            }
            Op::RowAffine { input, weight, bias } => {
                let is = &self.nodes[input.0].shape;
                let (n, c) = (is[0], is[1]);
                let out_w = node.shape[1];
                {
                    let db = add_into(&mut grads[bias.0], out_w);
                    for row in g.chunks(out_w) {
                        db.iter_mut().zip(row).for_each(|(d, gi)| *d += gi);
                    }
                }
                {
                    let dw = add_into(&mut grads[weight.0], out_w * c);
                    gemm(out_w, n, c, g, true, &self.nodes[input.0].value, false, dw, 1.0);
                }
                let dx = add_into(&mut grads[input.0], n * c);
                gemm(n, out_w, c, g, false, &self.nodes[weight.0].value, false, dx, 1.0);
            }
            Op::GraphConv {
                input,
                theta,
                bias,
                graph,
                aggregated,
            } => {
                let is = &self.nodes[input.0].shape;
                let (n, c) = (is[0], is[1]);
                let c_out = node.shape[1];
                let width = 2 * c + 1;
                {
                    let db = add_into(&mut grads[bias.0], c_out);
                    for (row, nbrs) in g.chunks(c_out).zip(&graph.neighbors) {
                        let deg = nbrs.len() as f64;
                        db.iter_mut().zip(row).for_each(|(d, gi)| *d += deg * gi);
                    }
                }
                {
                    let dt = add_into(&mut grads[theta.0], width * c_out);
                    gemm(width, n, c_out, aggregated, true, g, false, dt, 1.0);
                }
                let mut dagg = vec![0.0; n * width];
                gemm(n, c_out, width, g, false, &self.nodes[theta.0].value, true, &mut dagg, 0.0);
                let dx = add_into(&mut grads[input.0], n * c);
                for (i, nbrs) in graph.neighbors.iter().enumerate() {
                    let row = &dagg[i * width..(i + 1) * width];
                    for &(s, _) in nbrs {
                        for (d, &v) in dx[s * c..(s + 1) * c].iter_mut().zip(&row[..c]) {
                            *d += v;
                        }
                    }
                    let deg = nbrs.len() as f64;
                    for (d, &v) in dx[i * c..(i + 1) * c].iter_mut().zip(&row[c..2 * c]) {
                        *d += deg * v;
                    }
                }
            }
            Op::EdgeInputs { input, graph } => {
                let c = self.nodes[input.0].shape[1];
                let width = 2 * c + 1;
                let dx = add_into(&mut grads[input.0], graph.node_count() * c);
                let mut rows = g.chunks(width);
                for (i, nbrs) in graph.neighbors.iter().enumerate() {
                    for &(s, _) in nbrs {
                        let row = rows.next().expect("one row per edge");
                        for (d, &v) in dx[s * c..(s + 1) * c].iter_mut().zip(&row[..c]) {
                            *d += v;
                        }
                        for (d, &v) in dx[i * c..(i + 1) * c].iter_mut().zip(&row[c..2 * c]) {
                            *d += v;
                        }
                    }
                }
            }
            Op::SumIncoming { input, graph } => {
                let c = node.shape[1];
                let dx = add_into(&mut grads[input.0], graph.edge_slots() * c);
                let mut e = 0;
                for (i, nbrs) in graph.neighbors.iter().enumerate() {
                    for _ in nbrs {
                        for (d, &v) in dx[e * c..(e + 1) * c].iter_mut().zip(&g[i * c..(i + 1) * c]) {
                            *d += v;
                        }
                        e += 1;
                    }
                }
            }
            Op::Relu(x) => {
                let xv = &self.nodes[x.0].value;
                let dx = add_into(&mut grads[x.0], xv.len());
                for ((d, &gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                    if v > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    let d = add_into(&mut grads[v.0], g.len());
                    d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let da: Vec<f64> = g.iter().zip(bv).map(|(gi, y)| gi * y).collect();
                let db: Vec<f64> = g.iter().zip(av).map(|(gi, x)| gi * x).collect();
                for (v, d) in [(a, da), (b, db)] {
                    let acc = add_into(&mut grads[v.0], g.len());
                    acc.iter_mut().zip(&d).for_each(|(a, di)| *a += di);
                }
            }
            Op::Scale(x, f) => {
                let d = add_into(&mut grads[x.0], g.len());
                d.iter_mut().zip(g).for_each(|(d, gi)| *d += f * gi);
            }
            Op::Sum(x) => {
                let len = self.len_of(*x);
                let d = add_into(&mut grads[x.0], len);
                d.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::ConcatChannels(a, b) => {
                let la = self.len_of(*a);
                let lb = self.len_of(*b);
                {
                    let da = add_into(&mut grads[a.0], la);
                    da.iter_mut().zip(&g[..la]).for_each(|(d, gi)| *d += gi);
                }
                let db = add_into(&mut grads[b.0], lb);
                db.iter_mut().zip(&g[la..]).for_each(|(d, gi)| *d += gi);
            }
            Op::Window { input, row, col, k } => {
                let s = &self.nodes[input.0].shape;
                let (c, h, w) = (s[0], s[1], s[2]);
                let k = *k;
                let half = (k / 2) as isize;
                let dx = add_into(&mut grads[input.0], c * h * w);
                for ch in 0..c {
                    for di in 0..k {
                        let r = row + di as isize - half;
                        if r < 0 || r >= h as isize {
                            continue;
                        }
                        for dj in 0..k {
                            let cc = col + dj as isize - half;
                            if cc < 0 || cc >= w as isize {
                                continue;
                            }
                            dx[(ch * h + r as usize) * w + cc as usize] += g[(ch * k + di) * k + dj];
                        }
                    }
                }
            }
            Op::SoftmaxXent { logits, label, probs } => {
                let d = add_into(&mut grads[logits.0], probs.len());
                for (i, (d, &p)) in d.iter_mut().zip(probs).enumerate() {
                    let onehot = if i == *label { 1.0 } else { 0.0 };
                    *d += g[0] * (p - onehot);
                }
            }
            Op::L1 { pred, target } => {
                let diff = self.nodes[pred.0].value[0] - target;
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let d = add_into(&mut grads[pred.0], 1);
                d[0] += g[0] * sign;
            }
        }
    }

    /// Adds the parameter gradients from `grads` into the store's accumulators.
    pub fn accumulate_param_grads(&self, grads: &Grads, store: &mut ParamStore) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[idx]) {
                let acc = store.get_mut(*id).grad_mut();
                acc.iter_mut().zip(g).for_each(|(a, gi)| *a += gi);
            }
        }
    }
}

fn broadcast_bias_rows(bias: &[f64], rows: usize) -> impl Iterator<Item = f64> + '_ {
    (0..rows).flat_map(move |_| bias.iter().copied())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let positions = g.out_h * g.out_w;
    let mut cols = vec![0.0; g.c_in * g.k_h * g.k_w * positions];
    for c in 0..g.c_in {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for di in 0..g.k_h {
            for dj in 0..g.k_w {
                let r = (c * g.k_h + di) * g.k_w + dj;
                let dst = &mut cols[r * positions..(r + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = oy as isize + di as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = ox as isize + dj as isize - g.pad_w as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[oy * g.out_w + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let positions = g.out_h * g.out_w;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for di in 0..g.k_h {
            for dj in 0..g.k_w {
                let r = (c * g.k_h + di) * g.k_w + dj;
                let src = &dcols[r * positions..(r + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = oy as isize + di as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = ox as isize + dj as isize - g.pad_w as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst_row[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Absolute error and its subgradient, `sign(0) = 0`.
pub fn l1_loss(pred: f64, target: f64) -> (f64, f64) {
    let d = pred - target;
    let sign = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    (d.abs(), sign)
}
