//! Reverse-mode autodiff over a flat tape.
//!
//! The tape supports exactly the ops the training losses need. Forward
//! values are produced by the kernels in [`super::kernels`], so a graph
//! forward pass equals the inference path bit for bit.

use super::kernels;
use super::{GradientSet, Layer, Network, NnError, PolicyHead};
use std::ops::Range;

pub const LOG_FLOOR: f64 = 1e-12;
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Shape {
    Mat { rows: usize, cols: usize },
    Chw { batch: usize, c: usize, h: usize, w: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Mat { rows, cols } => rows * cols,
            Shape::Chw { batch, c, h, w } => batch * c * h * w,
        }
    }

    pub fn scalar() -> Shape {
        Shape::Mat { rows: 1, cols: 1 }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Value,
    Param,
    Linear { batch: usize, inp: usize, out: usize },
    Conv { batch: usize, cin: usize, cout: usize, h: usize, w: usize },
    Pool,
    Norm { batch: usize, c: usize, hw: usize, batch_stats: bool },
    LeakyRelu { slope: f64 },
    SoftmaxRows,
    LogFloor,
    Gather,
    Add,
    Sub,
    Mul,
    Scale { k: f64 },
    ClipConst { lo: f64, hi: f64 },
    Min,
    Max,
    Square,
    SumRows,
    MeanAll,
    Flatten,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Vec<f64>,
    shape: Shape,
    param_range: Option<Range<usize>>,
    indices: Vec<usize>,
    stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Recording tape. Build a scalar loss with the op methods, then call
/// [`Tape::backward`] to get parameter gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&mut self, data: Vec<f64>, shape: Shape) -> NodeId {
        assert_eq!(data.len(), shape.len(), "value data does not match shape");
        self.push(Node {
            op: Op::Value,
            inputs: vec![],
            value: data,
            shape,
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    pub fn param(&mut self, net: &Network, range: Range<usize>, shape: Shape) -> NodeId {
        assert_eq!(range.len(), shape.len(), "param range does not match shape");
        self.push(Node {
            op: Op::Param,
            inputs: vec![],
            value: net.params()[range.clone()].to_vec(),
            shape,
            param_range: Some(range),
            indices: vec![],
            stats: None,
        })
    }

    pub fn val(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        assert_eq!(self.nodes[id.0].shape.len(), 1, "node is not a scalar");
        self.nodes[id.0].value[0]
    }

    fn mat(&self, id: NodeId, what: &str) -> (usize, usize) {
        match self.nodes[id.0].shape {
            Shape::Mat { rows, cols } => (rows, cols),
            s => panic!("{what}: expected matrix node, got {s:?}"),
        }
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (batch, inp) = self.mat(x, "linear input");
        let (out, w_in) = self.mat(w, "linear weight");
        assert_eq!(inp, w_in, "linear: weight columns {w_in} != input features {inp}");
        let (_, b_out) = self.mat(b, "linear bias");
        assert_eq!(out, b_out, "linear: bias length mismatch");
        let value = kernels::linear(
            &self.nodes[x.0].value,
            batch,
            inp,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
            out,
        );
        self.push(Node {
            op: Op::Linear { batch, inp, out },
            inputs: vec![x, w, b],
            value,
            shape: Shape::Mat { rows: batch, cols: out },
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    pub fn conv3x3(&mut self, x: NodeId, w: NodeId, b: NodeId, cout: usize) -> NodeId {
        let (batch, cin, h, wd) = match self.nodes[x.0].shape {
            Shape::Chw { batch, c, h, w } => (batch, c, h, w),
            s => panic!("conv: expected CHW input, got {s:?}"),
        };
        assert_eq!(self.nodes[w.0].value.len(), cout * cin * 9, "conv weight size");
        assert_eq!(self.nodes[b.0].value.len(), cout, "conv bias size");
        let value = kernels::conv3x3(
            &self.nodes[x.0].value,
            batch,
            cin,
            h,
            wd,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
            cout,
        );
        self.push(Node {
            op: Op::Conv { batch, cin, cout, h, w: wd },
            inputs: vec![x, w, b],
            value,
            shape: Shape::Chw { batch, c: cout, h, w: wd },
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    pub fn maxpool2x2(&mut self, x: NodeId) -> NodeId {
        let (batch, c, h, w) = match self.nodes[x.0].shape {
            Shape::Chw { batch, c, h, w } => (batch, c, h, w),
            s => panic!("pool: expected CHW input, got {s:?}"),
        };
        let (value, arg, ho, wo) = kernels::maxpool2x2(&self.nodes[x.0].value, batch, c, h, w);
        self.push(Node {
            op: Op::Pool,
            inputs: vec![x],
            value,
            shape: Shape::Chw { batch, c, h: ho, w: wo },
            param_range: None,
            indices: arg,
            stats: None,
        })
    }

    pub fn channel_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, batch_stats: bool) -> NodeId {
        let (batch, c, h, w) = match self.nodes[x.0].shape {
            Shape::Chw { batch, c, h, w } => (batch, c, h, w),
            s => panic!("norm: expected CHW input, got {s:?}"),
        };
        let (value, mean, var) = kernels::channel_norm(
            &self.nodes[x.0].value,
            batch,
            c,
            h * w,
            &self.nodes[gain.0].value,
            &self.nodes[bias.0].value,
            batch_stats,
        );
        self.push(Node {
            op: Op::Norm { batch, c, hw: h * w, batch_stats },
            inputs: vec![x, gain, bias],
            value,
            shape: self.nodes[x.0].shape,
            param_range: None,
            indices: vec![],
            stats: Some((mean, var)),
        })
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let value = kernels::leaky_relu(&self.nodes[x.0].value, slope);
        self.push(Node {
            op: Op::LeakyRelu { slope },
            inputs: vec![x],
            value,
            shape: self.nodes[x.0].shape,
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (rows, cols) = self.mat(x, "softmax");
        let value = kernels::softmax_rows(&self.nodes[x.0].value, rows, cols);
        self.push(Node {
            op: Op::SoftmaxRows,
            inputs: vec![x],
            value,
            shape: self.nodes[x.0].shape,
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    /// ln(max(x, 1e-12)) elementwise.
    pub fn log_floor(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|&v| v.max(LOG_FLOOR).ln()).collect();
        self.push(Node {
            op: Op::LogFloor,
            inputs: vec![x],
            value,
            shape: self.nodes[x.0].shape,
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    /// Per-row column pick: out[r] = x[r, idx[r]].
    pub fn gather_cols(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let (rows, cols) = self.mat(x, "gather");
        assert_eq!(idx.len(), rows, "gather: one index per row");
        assert!(idx.iter().all(|&i| i < cols), "gather: index out of range");
        let value = idx
            .iter()
            .enumerate()
            .map(|(r, &i)| self.nodes[x.0].value[r * cols + i])
            .collect();
        self.push(Node {
            op: Op::Gather,
            inputs: vec![x],
            value,
            shape: Shape::Mat { rows, cols: 1 },
            param_range: None,
            indices: idx.to_vec(),
            stats: None,
        })
    }

    fn binary(&mut self, op: Op, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.nodes[a.0].shape,
            self.nodes[b.0].shape,
            "elementwise op on mismatched shapes"
        );
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| match op {
                Op::Add => x + y,
                Op::Sub => x - y,
                Op::Mul => x * y,
                Op::Min => {
                    if x <= y {
                        x
                    } else {
                        y
                    }
                }
                Op::Max => {
                    if x >= y {
                        x
                    } else {
                        y
                    }
                }
                _ => unreachable!(),
            })
            .collect();
        let shape = self.nodes[a.0].shape;
        self.push(Node { op, inputs: vec![a, b], value, shape, param_range: None, indices: vec![], stats: None })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Mul, a, b)
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Min, a, b)
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Max, a, b)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|v| v * k).collect();
        self.push(Node {
            op: Op::Scale { k },
            inputs: vec![x],
            value,
            shape: self.nodes[x.0].shape,
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    pub fn clip_const(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|&v| v.clamp(lo, hi)).collect();
        self.push(Node {
            op: Op::ClipConst { lo, hi },
            inputs: vec![x],
            value,
            shape: self.nodes[x.0].shape,
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|v| v * v).collect();
        self.push(Node {
            op: Op::Square,
            inputs: vec![x],
            value,
            shape: self.nodes[x.0].shape,
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let (rows, cols) = self.mat(x, "sum_rows");
        let value = (0..rows)
            .map(|r| self.nodes[x.0].value[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        self.push(Node {
            op: Op::SumRows,
            inputs: vec![x],
            value,
            shape: Shape::Mat { rows, cols: 1 },
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x.0].value.len() as f64;
        let value = vec![self.nodes[x.0].value.iter().sum::<f64>() / n];
        self.push(Node {
            op: Op::MeanAll,
            inputs: vec![x],
            value,
            shape: Shape::scalar(),
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let (rows, cols) = match self.nodes[x.0].shape {
            Shape::Chw { batch, c, h, w } => (batch, c * h * w),
            Shape::Mat { rows, cols } => (rows, cols),
        };
        let value = self.nodes[x.0].value.clone();
        self.push(Node {
            op: Op::Flatten,
            inputs: vec![x],
            value,
            shape: Shape::Mat { rows, cols },
            param_range: None,
            indices: vec![],
            stats: None,
        })
    }

    /// Reverse pass from a finite scalar loss down to flat parameter
    /// gradients aligned with `net.params()`.
    pub fn backward(&mut self, net: &Network, loss: NodeId) -> Result<GradientSet, NnError> {
        if self.nodes[loss.0].shape.len() != 1 {
            return Err(NnError::ShapeMismatch {
                expected: "scalar loss".into(),
                actual: format!("{:?}", self.nodes[loss.0].shape),
            });
        }
        if !self.nodes[loss.0].value[0].is_finite() {
            return Err(NnError::NonFinite("loss"));
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss.0][0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            if grads[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.backprop_node(i, &g, &mut grads);
            grads[i] = g;
        }
        let mut flat = vec![0.0; net.param_count()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(range) = &node.param_range {
                for (k, idx) in range.clone().enumerate() {
                    flat[idx] += grads[i][k];
                }
            }
        }
        GradientSet::new(flat)
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        match node.op {
            Op::Value | Op::Param => {}
            Op::Linear { batch, inp, out } => {
                let [x, w, b] = [node.inputs[0].0, node.inputs[1].0, node.inputs[2].0];
                let xv = &self.nodes[x].value;
                let wv = &self.nodes[w].value;
                for bi in 0..batch {
                    for o in 0..out {
                        let go = g[bi * out + o];
                        if go == 0.0 {
                            continue;
                        }
                        grads[b][o] += go;
                        for k in 0..inp {
                            grads[w][o * inp + k] += go * xv[bi * inp + k];
                            grads[x][bi * inp + k] += go * wv[o * inp + k];
                        }
                    }
                }
            }
            Op::Conv { batch, cin, cout, h, w } => {
                let [x, wn, bn] = [node.inputs[0].0, node.inputs[1].0, node.inputs[2].0];
                let xv = &self.nodes[x].value;
                let wv = &self.nodes[wn].value;
                for b in 0..batch {
                    for co in 0..cout {
                        let wbase = co * cin * 9;
                        for oy in 0..h {
                            for ox in 0..w {
                                let go = g[(b * cout + co) * h * w + oy * w + ox];
                                if go == 0.0 {
                                    continue;
                                }
                                grads[bn][co] += go;
                                for ci in 0..cin {
                                    let xbase = (b * cin + ci) * h * w;
                                    let kbase = wbase + ci * 9;
                                    for ky in 0..3usize {
                                        let iy = oy as isize + ky as isize - 1;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..3usize {
                                            let ix = ox as isize + kx as isize - 1;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            let xi = xbase + iy as usize * w + ix as usize;
                                            grads[wn][kbase + ky * 3 + kx] += go * xv[xi];
                                            grads[x][xi] += go * wv[kbase + ky * 3 + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Pool { .. } => {
                let x = node.inputs[0].0;
                for (o, &src) in node.indices.iter().enumerate() {
                    grads[x][src] += g[o];
                }
            }
            Op::Norm { batch, c, hw, batch_stats } => {
                let [x, gn, bn] = [node.inputs[0].0, node.inputs[1].0, node.inputs[2].0];
                let xv = &self.nodes[x].value;
                let gainv = &self.nodes[gn].value;
                let (mean, var) = node.stats.as_ref().unwrap();
                if !batch_stats {
                    for b in 0..batch {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            for k in 0..hw {
                                let go = g[base + k];
                                grads[x][base + k] += go * gainv[ch];
                                grads[gn][ch] += go * xv[base + k];
                                grads[bn][ch] += go;
                            }
                        }
                    }
                } else {
                    let n = (batch * hw) as f64;
                    for ch in 0..c {
                        let inv = 1.0 / (var[ch] + NORM_EPS).sqrt();
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xm = 0.0;
                        let mut sum_xm = 0.0;
                        for b in 0..batch {
                            let base = (b * c + ch) * hw;
                            for k in 0..hw {
                                let go = g[base + k];
                                let xm = xv[base + k] - mean[ch];
                                let dxhat = go * gainv[ch];
                                sum_dxhat += dxhat;
                                sum_dxhat_xm += dxhat * xm;
                                sum_xm += xm;
                                grads[gn][ch] += go * xm * inv;
                                grads[bn][ch] += go;
                            }
                        }
                        let dvar = sum_dxhat_xm * (-0.5) * inv * inv * inv;
                        let dmu = -inv * sum_dxhat + dvar * (-2.0 / n) * sum_xm;
                        for b in 0..batch {
                            let base = (b * c + ch) * hw;
                            for k in 0..hw {
                                let go = g[base + k];
                                let xm = xv[base + k] - mean[ch];
                                grads[x][base + k] +=
                                    go * gainv[ch] * inv + dvar * 2.0 * xm / n + dmu / n;
                            }
                        }
                    }
                }
            }
            Op::LeakyRelu { slope } => {
                let x = node.inputs[0].0;
                for (k, &xv) in self.nodes[x].value.iter().enumerate() {
                    grads[x][k] += g[k] * if xv >= 0.0 { 1.0 } else { slope };
                }
            }
            Op::SoftmaxRows => {
                let x = node.inputs[0].0;
                let (rows, cols) = match node.shape {
                    Shape::Mat { rows, cols } => (rows, cols),
                    _ => unreachable!(),
                };
                for r in 0..rows {
                    let y = &node.value[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ci in 0..cols {
                        grads[x][r * cols + ci] += y[ci] * (gr[ci] - dot);
                    }
                }
            }
            Op::LogFloor => {
                let x = node.inputs[0].0;
                for (k, &xv) in self.nodes[x].value.iter().enumerate() {
                    if xv > LOG_FLOOR {
                        grads[x][k] += g[k] / xv;
                    }
                }
            }
            Op::Gather => {
                let x = node.inputs[0].0;
                let cols = match self.nodes[x].shape {
                    Shape::Mat { cols, .. } => cols,
                    _ => unreachable!(),
                };
                for (r, &ci) in node.indices.iter().enumerate() {
                    grads[x][r * cols + ci] += g[r];
                }
            }
            Op::Add => {
                for inp in [node.inputs[0].0, node.inputs[1].0] {
                    for k in 0..g.len() {
                        grads[inp][k] += g[k];
                    }
                }
            }
            Op::Sub => {
                let (a, b) = (node.inputs[0].0, node.inputs[1].0);
                for k in 0..g.len() {
                    grads[a][k] += g[k];
                    grads[b][k] -= g[k];
                }
            }
            Op::Mul => {
                let (a, b) = (node.inputs[0].0, node.inputs[1].0);
                for k in 0..g.len() {
                    grads[a][k] += g[k] * self.nodes[b].value[k];
                    grads[b][k] += g[k] * self.nodes[a].value[k];
                }
            }
            Op::Scale { k: c } => {
                let x = node.inputs[0].0;
                for k in 0..g.len() {
                    grads[x][k] += g[k] * c;
                }
            }
            Op::ClipConst { lo, hi } => {
                let x = node.inputs[0].0;
                for (k, &xv) in self.nodes[x].value.iter().enumerate() {
                    if xv > lo && xv < hi {
                        grads[x][k] += g[k];
                    }
                }
            }
            Op::Min | Op::Max => {
                let (a, b) = (node.inputs[0].0, node.inputs[1].0);
                let take_a = |x: f64, y: f64| match node.op {
                    Op::Min => x <= y,
                    _ => x >= y,
                };
                for k in 0..g.len() {
                    if take_a(self.nodes[a].value[k], self.nodes[b].value[k]) {
                        grads[a][k] += g[k];
                    } else {
                        grads[b][k] += g[k];
                    }
                }
            }
            Op::Square => {
                let x = node.inputs[0].0;
                for (k, &xv) in self.nodes[x].value.iter().enumerate() {
                    grads[x][k] += g[k] * 2.0 * xv;
                }
            }
            Op::SumRows => {
                let x = node.inputs[0].0;
                let cols = match self.nodes[x].shape {
                    Shape::Mat { cols, .. } => cols,
                    _ => unreachable!(),
                };
                for r in 0..g.len() {
                    for ci in 0..cols {
                        grads[x][r * cols + ci] += g[r];
                    }
                }
            }
            Op::MeanAll => {
                let x = node.inputs[0].0;
                let n = self.nodes[x].value.len() as f64;
                for k in 0..self.nodes[x].value.len() {
                    grads[x][k] += g[0] / n;
                }
            }
            Op::Flatten => {
                let x = node.inputs[0].0;
                for k in 0..g.len() {
                    grads[x][k] += g[k];
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tower {
    Rl,
    Sl,
}

/// Build the body of one tower on the tape; returns flat features (batch × body_out).
pub fn body_graph(tape: &mut Tape, net: &Network, tower: Tower, states: &[Vec<f64>]) -> NodeId {
    let batch = states.len();
    let arch = net.arch();
    let flat: Vec<f64> = states.iter().flatten().copied().collect();
    let mut x = match arch.input {
        super::InputShape::Flat(n) => tape.value(flat, Shape::Mat { rows: batch, cols: n }),
        super::InputShape::Spatial { channels, height, width } => {
            tape.value(flat, Shape::Chw { batch, c: channels, h: height, w: width })
        }
    };
    let body = match tower {
        Tower::Rl => &net.layout.rl_body,
        Tower::Sl => &net.layout.sl_body,
    };
    for layer in body {
        x = match layer {
            Layer::Linear { inp, out, w, b } => {
                let wn = tape.param(net, w.clone(), Shape::Mat { rows: *out, cols: *inp });
                let bn = tape.param(net, b.clone(), Shape::Mat { rows: 1, cols: *out });
                tape.linear(x, wn, bn)
            }
            Layer::Conv { cin, cout, w, b, .. } => {
                let wn = tape.param(net, w.clone(), Shape::Mat { rows: *cout, cols: cin * 9 });
                let bn = tape.param(net, b.clone(), Shape::Mat { rows: 1, cols: *cout });
                tape.conv3x3(x, wn, bn, *cout)
            }
            Layer::Norm { c, gain, bias, .. } => {
                let gn = tape.param(net, gain.clone(), Shape::Mat { rows: 1, cols: *c });
                let bn = tape.param(net, bias.clone(), Shape::Mat { rows: 1, cols: *c });
                tape.channel_norm(x, gn, bn, arch.batch_stats)
            }
            Layer::Pool { .. } => tape.maxpool2x2(x),
            Layer::Act => tape.leaky_relu(x, arch.leaky_slope),
        };
    }
    tape.flatten(x)
}

/// Policy head on top of body features: softmax probabilities (batch × actions).
pub fn policy_graph(tape: &mut Tape, net: &Network, head: PolicyHead, body: NodeId) -> NodeId {
    let slot = match head {
        PolicyHead::Rl => &net.layout.pi_rl,
        PolicyHead::Sl => &net.layout.pi_sl,
    };
    let wn = tape.param(net, slot.w.clone(), Shape::Mat { rows: slot.out, cols: slot.inp });
    let bn = tape.param(net, slot.b.clone(), Shape::Mat { rows: 1, cols: slot.out });
    let logits = tape.linear(body, wn, bn);
    tape.softmax_rows(logits)
}

/// Value head on top of body features: one scalar per row (batch × 1).
pub fn value_graph(tape: &mut Tape, net: &Network, body: NodeId) -> NodeId {
    let slot = &net.layout.v_rl;
    let wn = tape.param(net, slot.w.clone(), Shape::Mat { rows: slot.out, cols: slot.inp });
    let bn = tape.param(net, slot.b.clone(), Shape::Mat { rows: 1, cols: slot.out });
    tape.linear(body, wn, bn)
}

/// Central finite differences of an arbitrary scalar function of the
/// parameters; the reference the backward pass is checked against.
pub fn finite_difference<F>(net: &Network, mut f: F, h: f64) -> Vec<f64>
where
    F: FnMut(&Network) -> f64,
{
    let mut probe = net.clone();
    let n = probe.param_count();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let up = f(&probe);
        probe.params_mut()[i] = orig - h;
        let down = f(&probe);
        probe.params_mut()[i] = orig;
        out[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Gradient-check error measure: |a − b| / max(|a|, |b|, 1).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
