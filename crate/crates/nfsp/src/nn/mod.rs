//! Differentiable policy/value networks.
//!
//! A [`Network`] owns one flat `Vec<f64>` of parameters holding two tower
//! bodies and three heads: the RL body feeds the `π_RL` policy head and the
//! `V_RL` value head, while `π_SL` sits on its own body with identical
//! architecture. Inference ([`Network::forward`]) and the training graph
//! ([`graph::Tape`]) call the same kernels, so both paths produce
//! bit-identical outputs.

pub mod checkpoint;
pub mod graph;
pub mod kernels;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid arch spec: {field}: {msg}")]
    InvalidSpec { field: &'static str, msg: String },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("gradient length {grads} does not match parameter count {params}")]
    Misaligned { grads: usize, params: usize },
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Input layout accepted by a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputShape {
    Flat(usize),
    Spatial { channels: usize, height: usize, width: usize },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Flat(n) => n,
            InputShape::Spatial { channels, height, width } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Architecture description: body depth and width, pooling schedule,
/// activation slope, and action count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input: InputShape,
    /// Body depth: conv blocks in spatial mode, hidden layers in flat mode.
    pub blocks: usize,
    /// Conv channels per block, or hidden width in flat mode.
    pub channels: usize,
    /// 2x2 max pooling after every `pool_every` conv blocks; 0 disables.
    pub pool_every: usize,
    pub leaky_slope: f64,
    pub actions: usize,
    /// Channel normalization uses live batch statistics instead of the
    /// frozen identity statistics.
    pub batch_stats: bool,
}

impl ArchSpec {
    /// Flat-input body: `hidden` layers of `width` units.
    pub fn mlp(input_len: usize, width: usize, hidden: usize, actions: usize) -> Self {
        ArchSpec {
            input: InputShape::Flat(input_len),
            blocks: hidden,
            channels: width,
            pool_every: 0,
            leaky_slope: 0.1,
            actions,
            batch_stats: false,
        }
    }

    /// Spatial body with the default block plan: four 3x3 conv blocks of 64
    /// channels, 2x2 max pooling after every second block.
    pub fn conv(channels: usize, height: usize, width: usize, actions: usize) -> Self {
        ArchSpec {
            input: InputShape::Spatial { channels, height, width },
            blocks: 4,
            channels: 64,
            pool_every: 2,
            leaky_slope: 0.1,
            actions,
            batch_stats: false,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.actions < 2 {
            return Err(NnError::InvalidSpec {
                field: "actions",
                msg: format!("need at least 2 actions, got {}", self.actions),
            });
        }
        match self.input {
            InputShape::Flat(n) => {
                if n == 0 {
                    return Err(NnError::InvalidSpec {
                        field: "input",
                        msg: "flat input length is 0".into(),
                    });
                }
            }
            InputShape::Spatial { channels, height, width } => {
                if channels == 0 || height == 0 || width == 0 {
                    return Err(NnError::InvalidSpec {
                        field: "input",
                        msg: format!("spatial dims must be positive, got {channels}x{height}x{width}"),
                    });
                }
            }
        }
        if self.blocks > 0 && self.channels == 0 {
            return Err(NnError::InvalidSpec {
                field: "channels",
                msg: "zero channels with a nonzero block count".into(),
            });
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(NnError::InvalidSpec {
                field: "leaky_slope",
                msg: format!("slope must lie in [0, 1), got {}", self.leaky_slope),
            });
        }
        // reject pooling schedules that collapse the grid to nothing
        layout(self).map(|_| ())
    }
}

/// One body layer with its parameter segments inside the flat array.
#[derive(Clone, Debug)]
pub(crate) enum Layer {
    Linear { inp: usize, out: usize, w: Range<usize>, b: Range<usize> },
    Conv { cin: usize, cout: usize, h: usize, w_dim: usize, w: Range<usize>, b: Range<usize> },
    Norm { c: usize, hw: usize, gain: Range<usize>, bias: Range<usize> },
    Pool { c: usize, h: usize, w_dim: usize },
    Act,
}

#[derive(Clone, Debug)]
pub(crate) struct HeadSlot {
    pub inp: usize,
    pub out: usize,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

/// Resolved parameter layout for one architecture.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub rl_body: Vec<Layer>,
    pub sl_body: Vec<Layer>,
    pub pi_rl: HeadSlot,
    pub v_rl: HeadSlot,
    pub pi_sl: HeadSlot,
    pub body_out: usize,
    pub total: usize,
    pub rl_tower: Range<usize>,
    pub sl_tower: Range<usize>,
}

fn body_layers(arch: &ArchSpec, cursor: &mut usize) -> Result<(Vec<Layer>, usize), NnError> {
    let mut layers = Vec::new();
    let mut take = |n: usize, cursor: &mut usize| -> Range<usize> {
        let r = *cursor..*cursor + n;
        *cursor += n;
        r
    };
    match arch.input {
        InputShape::Flat(n) => {
            let mut prev = n;
            for _ in 0..arch.blocks {
                let w = take(arch.channels * prev, cursor);
                let b = take(arch.channels, cursor);
                layers.push(Layer::Linear { inp: prev, out: arch.channels, w, b });
                layers.push(Layer::Act);
                prev = arch.channels;
            }
            Ok((layers, prev))
        }
        InputShape::Spatial { channels, height, width } => {
            let mut c = channels;
            let mut h = height;
            let mut w_dim = width;
            for blk in 1..=arch.blocks {
                let w = take(arch.channels * c * 9, cursor);
                let b = take(arch.channels, cursor);
                layers.push(Layer::Conv { cin: c, cout: arch.channels, h, w_dim, w, b });
                c = arch.channels;
                let gain = take(c, cursor);
                let bias = take(c, cursor);
                layers.push(Layer::Norm { c, hw: h * w_dim, gain, bias });
                layers.push(Layer::Act);
                if arch.pool_every > 0 && blk % arch.pool_every == 0 {
                    if h / 2 == 0 || w_dim / 2 == 0 {
                        return Err(NnError::InvalidSpec {
                            field: "pool_every",
                            msg: format!("pooling at block {blk} collapses a {h}x{w_dim} grid"),
                        });
                    }
                    layers.push(Layer::Pool { c, h, w_dim });
                    h /= 2;
                    w_dim /= 2;
                }
            }
            Ok((layers, c * h * w_dim))
        }
    }
}

pub(crate) fn layout(arch: &ArchSpec) -> Result<Layout, NnError> {
    let mut cursor = 0usize;
    let rl_start = cursor;
    let (rl_body, body_out) = body_layers(arch, &mut cursor)?;
    let mut head = |inp: usize, out: usize, cursor: &mut usize| -> HeadSlot {
        let w = *cursor..*cursor + out * inp;
        *cursor += out * inp;
        let b = *cursor..*cursor + out;
        *cursor += out;
        HeadSlot { inp, out, w, b }
    };
    let pi_rl = head(body_out, arch.actions, &mut cursor);
    let v_rl = head(body_out, 1, &mut cursor);
    let rl_tower = rl_start..cursor;
    let sl_start = cursor;
    let (sl_body, sl_out) = body_layers(arch, &mut cursor)?;
    debug_assert_eq!(body_out, sl_out);
    let pi_sl = head(body_out, arch.actions, &mut cursor);
    let sl_tower = sl_start..cursor;
    Ok(Layout { rl_body, sl_body, pi_rl, v_rl, pi_sl, body_out, total: cursor, rl_tower, sl_tower })
}

/// Which heads a forward pass should evaluate.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeadSet {
    pub pi_rl: bool,
    pub pi_sl: bool,
    pub v_rl: bool,
}

impl HeadSet {
    pub fn all() -> Self {
        HeadSet { pi_rl: true, pi_sl: true, v_rl: true }
    }
    pub fn rl() -> Self {
        HeadSet { pi_rl: true, pi_sl: false, v_rl: true }
    }
    pub fn pi_rl() -> Self {
        HeadSet { pi_rl: true, pi_sl: false, v_rl: false }
    }
    pub fn pi_sl() -> Self {
        HeadSet { pi_rl: false, pi_sl: true, v_rl: false }
    }
}

/// Per-head outputs of a batched forward pass. Policy rows are probability
/// vectors over the action count; values are scalars.
#[derive(Clone, Debug, Default)]
pub struct ForwardOut {
    pub pi_rl: Option<Vec<Vec<f64>>>,
    pub pi_sl: Option<Vec<Vec<f64>>>,
    pub v_rl: Option<Vec<f64>>,
}

/// Per-parameter partial derivatives aligned with [`Network::params`].
#[derive(Clone, Debug)]
pub struct GradientSet {
    values: Vec<f64>,
    norm: f64,
}

impl GradientSet {
    pub fn new(values: Vec<f64>) -> Result<Self, NnError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("gradients"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(GradientSet { values, norm })
    }

    pub fn zeros(len: usize) -> Self {
        GradientSet { values: vec![0.0; len], norm: 0.0 }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Elementwise sum with another set of the same length.
    pub fn add(&self, other: &GradientSet) -> Result<GradientSet, NnError> {
        if self.len() != other.len() {
            return Err(NnError::Misaligned { grads: other.len(), params: self.len() });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        GradientSet::new(values)
    }
}

/// Scale gradients down to `max_norm` when their global L2 norm exceeds it.
pub fn clip_global_norm(grads: &GradientSet, max_norm: f64) -> Result<GradientSet, NnError> {
    if !(max_norm > 0.0) {
        return Err(NnError::NonPositive("max_norm", max_norm));
    }
    if grads.norm <= max_norm {
        return Ok(grads.clone());
    }
    let scale = max_norm / grads.norm;
    let values = grads.values.iter().map(|v| v * scale).collect();
    GradientSet::new(values)
}

/// Shared-body three-head network over one flat parameter array.
#[derive(Clone, Debug)]
pub struct Network {
    arch: ArchSpec,
    params: Vec<f64>,
    pub(crate) layout: Layout,
}

/// Deterministic construction: fan-in-scaled uniform weights, zero biases,
/// identity normalization, all drawn from one seeded stream.
pub fn build_network(spec: &ArchSpec, seed: u64) -> Result<Network, NnError> {
    spec.validate()?;
    let lay = layout(spec)?;
    let mut params = vec![0.0; lay.total];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut fill_uniform = |range: Range<usize>, fan_in: usize, params: &mut Vec<f64>| {
        let s = 1.0 / (fan_in as f64).sqrt();
        for i in range {
            params[i] = rng.gen_range(-s..s);
        }
    };
    for body in [&lay.rl_body, &lay.sl_body] {
        for layer in body {
            match layer {
                Layer::Linear { inp, w, .. } => fill_uniform(w.clone(), *inp, &mut params),
                Layer::Conv { cin, w, .. } => fill_uniform(w.clone(), cin * 9, &mut params),
                Layer::Norm { gain, .. } => {
                    for i in gain.clone() {
                        params[i] = 1.0;
                    }
                }
                _ => {}
            }
        }
    }
    for h in [&lay.pi_rl, &lay.v_rl, &lay.pi_sl] {
        fill_uniform(h.w.clone(), h.inp, &mut params);
    }
    Ok(Network { arch: spec.clone(), params, layout: lay })
}

impl Network {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn from_parts(arch: ArchSpec, params: Vec<f64>) -> Result<Self, NnError> {
        arch.validate()?;
        let lay = layout(&arch)?;
        if params.len() != lay.total {
            return Err(NnError::Misaligned { grads: params.len(), params: lay.total });
        }
        Ok(Network { arch, params, layout: lay })
    }

    /// Index ranges of the two parameter towers (RL body with both RL heads;
    /// SL body with its policy head).
    pub fn rl_tower_range(&self) -> Range<usize> {
        self.layout.rl_tower.clone()
    }

    pub fn sl_tower_range(&self) -> Range<usize> {
        self.layout.sl_tower.clone()
    }

    fn check_state_shape(&self, states: &[Vec<f64>]) -> Result<(), NnError> {
        let want = self.arch.input.len();
        if states.is_empty() {
            return Err(NnError::ShapeMismatch {
                expected: "nonempty batch".into(),
                actual: "empty batch".into(),
            });
        }
        for (i, s) in states.iter().enumerate() {
            if s.len() != want {
                return Err(NnError::ShapeMismatch {
                    expected: format!("{want} features per state"),
                    actual: format!("{} features at row {i}", s.len()),
                });
            }
        }
        Ok(())
    }

    fn run_body(&self, body: &[Layer], mut x: Vec<f64>, batch: usize) -> Vec<f64> {
        for layer in body {
            x = match layer {
                Layer::Linear { inp, out, w, b } => kernels::linear(
                    &x,
                    batch,
                    *inp,
                    &self.params[w.clone()],
                    &self.params[b.clone()],
                    *out,
                ),
                Layer::Conv { cin, cout, h, w_dim, w, b } => kernels::conv3x3(
                    &x,
                    batch,
                    *cin,
                    *h,
                    *w_dim,
                    &self.params[w.clone()],
                    &self.params[b.clone()],
                    *cout,
                ),
                Layer::Norm { c, hw, gain, bias } => {
                    kernels::channel_norm(
                        &x,
                        batch,
                        *c,
                        *hw,
                        &self.params[gain.clone()],
                        &self.params[bias.clone()],
                        self.arch.batch_stats,
                    )
                    .0
                }
                Layer::Pool { c, h, w_dim } => kernels::maxpool2x2(&x, batch, *c, *h, *w_dim).0,
                Layer::Act => kernels::leaky_relu(&x, self.arch.leaky_slope),
            };
        }
        x
    }

    fn head_linear(&self, slot: &HeadSlot, features: &[f64], batch: usize) -> Vec<f64> {
        kernels::linear(
            features,
            batch,
            slot.inp,
            &self.params[slot.w.clone()],
            &self.params[slot.b.clone()],
            slot.out,
        )
    }

    /// Batched inference through the requested heads.
    pub fn forward(&self, states: &[Vec<f64>], heads: HeadSet) -> Result<ForwardOut, NnError> {
        self.check_state_shape(states)?;
        let batch = states.len();
        let flat: Vec<f64> = states.iter().flatten().copied().collect();
        let mut out = ForwardOut::default();
        if heads.pi_rl || heads.v_rl {
            let feats = self.run_body(&self.layout.rl_body, flat.clone(), batch);
            if heads.pi_rl {
                let logits = self.head_linear(&self.layout.pi_rl, &feats, batch);
                let probs = kernels::softmax_rows(&logits, batch, self.arch.actions);
                out.pi_rl = Some(split_rows(&probs, batch, self.arch.actions));
            }
            if heads.v_rl {
                out.v_rl = Some(self.head_linear(&self.layout.v_rl, &feats, batch));
            }
        }
        if heads.pi_sl {
            let feats = self.run_body(&self.layout.sl_body, flat, batch);
            let logits = self.head_linear(&self.layout.pi_sl, &feats, batch);
            let probs = kernels::softmax_rows(&logits, batch, self.arch.actions);
            out.pi_sl = Some(split_rows(&probs, batch, self.arch.actions));
        }
        Ok(out)
    }

    /// Single-state policy distribution for one head.
    pub fn policy_row(&self, head: PolicyHead, state: &[f64]) -> Result<Vec<f64>, NnError> {
        let states = vec![state.to_vec()];
        let hs = match head {
            PolicyHead::Rl => HeadSet::pi_rl(),
            PolicyHead::Sl => HeadSet::pi_sl(),
        };
        let out = self.forward(&states, hs)?;
        Ok(match head {
            PolicyHead::Rl => out.pi_rl.unwrap().pop().unwrap(),
            PolicyHead::Sl => out.pi_sl.unwrap().pop().unwrap(),
        })
    }
}

fn split_rows(flat: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|r| flat[r * cols..(r + 1) * cols].to_vec()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyHead {
    Rl,
    Sl,
}

/// One plain SGD step: params ← params − lr · grads.
pub fn sgd_step(net: &mut Network, grads: &GradientSet, lr: f64) -> Result<(), NnError> {
    if !(lr > 0.0) {
        return Err(NnError::NonPositive("lr", lr));
    }
    if grads.len() != net.params.len() {
        return Err(NnError::Misaligned { grads: grads.len(), params: net.params.len() });
    }
    for (p, g) in net.params.iter_mut().zip(grads.values()) {
        *p -= lr * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ArchSpec {
        ArchSpec::mlp(8, 32, 2, 3)
    }

    #[test]
    fn same_seed_same_params() {
        let a = build_network(&tiny_spec(), 7).unwrap();
        let b = build_network(&tiny_spec(), 7).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn different_seed_different_params() {
        let a = build_network(&tiny_spec(), 7).unwrap();
        let b = build_network(&tiny_spec(), 8).unwrap();
        assert_ne!(a.params(), b.params());
    }

    #[test]
    fn conv_default_head_sizes() {
        let spec = ArchSpec::conv(22, 20, 20, 9);
        let net = build_network(&spec, 1).unwrap();
        assert_eq!(net.layout.pi_rl.out, 9);
        assert_eq!(net.layout.pi_sl.out, 9);
        assert_eq!(net.layout.v_rl.out, 1);
        let obs = vec![vec![0.25; 22 * 20 * 20]];
        let out = net.forward(&obs, HeadSet::all()).unwrap();
        assert_eq!(out.pi_rl.unwrap()[0].len(), 9);
        assert_eq!(out.pi_sl.unwrap()[0].len(), 9);
        assert_eq!(out.v_rl.unwrap().len(), 1);
    }

    #[test]
    fn zero_params_give_uniform_policy_and_zero_value() {
        let mut net = build_network(&tiny_spec(), 3).unwrap();
        for p in net.params_mut() {
            *p = 0.0;
        }
        let out = net.forward(&[vec![0.5; 8]], HeadSet::all()).unwrap();
        for p in &out.pi_rl.unwrap()[0] {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(out.v_rl.unwrap()[0], 0.0);
    }

    #[test]
    fn policy_rows_are_distributions() {
        let net = build_network(&tiny_spec(), 11).unwrap();
        let states: Vec<Vec<f64>> = (0..128).map(|i| vec![(i as f64) / 128.0; 8]).collect();
        let out = net.forward(&states, HeadSet::pi_rl()).unwrap();
        let rows = out.pi_rl.unwrap();
        assert_eq!(rows.len(), 128);
        for row in rows {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let bad = ArchSpec::mlp(8, 32, 2, 1);
        let err = bad.validate().unwrap_err();
        assert!(err.to_string().contains("actions"));

        let bad = ArchSpec::mlp(0, 32, 2, 3);
        assert!(bad.validate().unwrap_err().to_string().contains("input"));

        let mut bad = ArchSpec::conv(4, 4, 4, 3);
        bad.blocks = 8;
        bad.pool_every = 1;
        assert!(bad.validate().unwrap_err().to_string().contains("pool_every"));
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let net = build_network(&tiny_spec(), 1).unwrap();
        let err = net.forward(&[vec![0.0; 5]], HeadSet::rl()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("8") && msg.contains("5"), "{msg}");
    }

    #[test]
    fn clip_below_threshold_unchanged() {
        let g = GradientSet::new(vec![0.3, 0.0, 0.0]).unwrap();
        let c = clip_global_norm(&g, 0.5).unwrap();
        assert_eq!(c.values(), g.values());
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let g = GradientSet::new(vec![3.0, 4.0]).unwrap();
        let c = clip_global_norm(&g, 0.5).unwrap();
        assert!((c.values()[0] - 0.3).abs() < 1e-12);
        assert!((c.values()[1] - 0.4).abs() < 1e-12);
        assert!((c.norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clip_zero_gradient_is_zero() {
        let g = GradientSet::zeros(4);
        let c = clip_global_norm(&g, 0.5).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clip_rejects_non_finite() {
        assert!(GradientSet::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn sgd_hand_case() {
        let mut net = build_network(&ArchSpec::mlp(1, 0, 0, 2), 1).unwrap();
        let n = net.param_count();
        net.params_mut()[0] = 1.0;
        let mut g = vec![0.0; n];
        g[0] = 0.5;
        sgd_step(&mut net, &GradientSet::new(g).unwrap(), 0.01).unwrap();
        assert!((net.params()[0] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_grads_noop() {
        let mut net = build_network(&tiny_spec(), 5).unwrap();
        let before = net.params().to_vec();
        let zeros = GradientSet::zeros(net.param_count());
        sgd_step(&mut net, &zeros, 0.1).unwrap();
        assert_eq!(net.params(), &before[..]);
    }

    #[test]
    fn sgd_two_steps_equal_summed_step() {
        let spec = tiny_spec();
        let mut a = build_network(&spec, 9).unwrap();
        let mut b = a.clone();
        let g: Vec<f64> = (0..a.param_count()).map(|i| (i % 7) as f64 * 0.01 - 0.03).collect();
        let gs = GradientSet::new(g.clone()).unwrap();
        sgd_step(&mut a, &gs, 0.01).unwrap();
        sgd_step(&mut a, &gs, 0.01).unwrap();
        let doubled = GradientSet::new(g.iter().map(|v| 2.0 * v).collect()).unwrap();
        sgd_step(&mut b, &doubled, 0.01).unwrap();
        for (x, y) in a.params().iter().zip(b.params()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_rejects_misaligned() {
        let mut net = build_network(&tiny_spec(), 2).unwrap();
        let err = sgd_step(&mut net, &GradientSet::zeros(3), 0.1).unwrap_err();
        assert!(err.to_string().contains("does not match"));
    }

    #[test]
    fn towers_cover_all_params() {
        let net = build_network(&tiny_spec(), 1).unwrap();
        let rl = net.rl_tower_range();
        let sl = net.sl_tower_range();
        assert_eq!(rl.start, 0);
        assert_eq!(rl.end, sl.start);
        assert_eq!(sl.end, net.param_count());
    }
}
