//! Binds a [`LayerGraph`] to the tensor backend: parameter storage and
//! initialization, forward execution, and reverse-mode gradients.
//!
//! Parameters live in one flat f32 store (the checkpoint blob) described by
//! a manifest of entries; each entry's initialization stream is seeded from
//! `(seed, node, name)`, so two graphs sharing nodes initialize those nodes
//! identically regardless of the rest of the graph.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::graph::{HeadActivation, LayerGraph, LayerOp};
use crate::parallel;
use crate::volume::{ProbabilityMap, ScalarVolume, VolumeShape};
use crate::{Error, Result};

use super::conv::{
    conv1_backward_input, conv1_backward_params, conv1_forward, conv3_backward_input,
    conv3_backward_params, conv3_forward,
};
use super::layers::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, elu_backward,
    elu_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward,
    sigmoid_backward, sigmoid_forward, softmax_backward, softmax_forward, upsample_backward,
    upsample_forward, BnStats,
};
use super::tensor::Tensor;

/// Execution mode: training caches intermediates and updates batch-norm
/// running statistics; inference uses the running statistics and frees
/// activations as soon as possible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    BnRunningMean,
    BnRunningVar,
}

impl ParamKind {
    /// Running statistics are buffers, not trainable parameters.
    pub fn is_trainable(&self) -> bool {
        !matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }
}

/// One named slice of the flat parameter blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub node: String,
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter data and gradients plus the entry manifest.
#[derive(Clone, Debug)]
pub struct ParamStore {
    pub entries: Vec<ParamEntry>,
    pub data: Vec<f32>,
    pub grad: Vec<f32>,
}

impl ParamStore {
    /// Number of trainable parameters (matches graph-level counting).
    pub fn num_trainable(&self) -> u64 {
        self.entries.iter().filter(|e| e.kind.is_trainable()).map(|e| e.len as u64).sum()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Zeroes all trainable values of one node (weights, biases, and batch
    /// norm scale/shift).
    pub fn zero_node_params(&mut self, node: &str) {
        for e in &self.entries {
            if e.node == node && e.kind.is_trainable() {
                self.data[e.offset..e.offset + e.len].fill(0.0);
            }
        }
    }

    fn init(&mut self, seed: u64) {
        for e in &self.entries {
            let slice = &mut self.data[e.offset..e.offset + e.len];
            match e.kind {
                ParamKind::Weight => {
                    let stream = derive_seed(seed, fnv64(&e.node, &e.name));
                    let mut rng = ChaCha8Rng::seed_from_u64(stream);
                    let fan_in: usize = e.shape[1..].iter().product();
                    let std = (2.0 / fan_in as f64).sqrt();
                    for v in slice {
                        *v = (gauss(&mut rng) * std) as f32;
                    }
                }
                ParamKind::Bias | ParamKind::BnShift | ParamKind::BnRunningMean => {
                    slice.fill(0.0)
                }
                ParamKind::BnScale | ParamKind::BnRunningVar => slice.fill(1.0),
            }
        }
    }

    /// Little-endian byte serialization of the full blob (parameters and
    /// buffers).
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn load_le_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        if bytes.len() != self.data.len() * 4 {
            return Err(Error::ShapeMismatch(format!(
                "parameter blob holds {} bytes, store requires {}",
                bytes.len(),
                self.data.len() * 4
            )));
        }
        for (v, b) in self.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        Ok(())
    }
}

fn fnv64(node: &str, name: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in node.bytes().chain([b'/']).chain(name.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Standard normal draw (Box-Muller; one value per pair of uniforms).
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Clone, Debug)]
struct ConvParams {
    w: Range<usize>,
    b: Range<usize>,
    in_ch: usize,
    out_ch: usize,
}

#[derive(Clone, Debug)]
struct BnParams {
    gamma: Range<usize>,
    beta: Range<usize>,
    rmean: Range<usize>,
    rvar: Range<usize>,
}

#[derive(Clone, Debug)]
enum ExecOp {
    Input,
    ConvBlock { conv1: ConvParams, bn1: BnParams, conv2: ConvParams, bn2: BnParams },
    MaxPool,
    Upsample,
    Concat,
    AttentionGate { wg: ConvParams, wx: ConvParams, psi: ConvParams },
    OutputHead { conv: ConvParams, activation: HeadActivation },
}

#[derive(Clone, Debug)]
struct PlanNode {
    name: String,
    inputs: Vec<usize>,
    consumers: usize,
    op: ExecOp,
}

enum Cache {
    None,
    ConvBlock { conv1_out: Tensor, bn1: BnStats, act1: Tensor, conv2_out: Tensor, bn2: BnStats },
    MaxPool { arg: Vec<u32>, in_dims: (usize, usize, usize, usize, usize) },
    Upsample { in_dims: (usize, usize, usize, usize, usize) },
    Gate { s: Tensor, alpha: Tensor },
}

/// One forward execution: activations per plan node plus backward caches.
pub struct ForwardPass {
    activations: Vec<Option<Tensor>>,
    caches: Vec<Cache>,
    phase: Phase,
}

/// Executable network: a compiled layer graph plus its parameter store.
pub struct Network {
    pub graph: LayerGraph,
    pub store: ParamStore,
    plan: Vec<PlanNode>,
    ports: BTreeMap<String, usize>,
}

impl Network {
    /// Compiles `graph` and initializes parameters from `seed`.
    pub fn new(graph: LayerGraph, seed: u64) -> Result<Self> {
        let mut net = Self::compile(graph)?;
        net.store.init(seed);
        Ok(net)
    }

    fn compile(graph: LayerGraph) -> Result<Self> {
        graph.validate()?;
        let order = graph.topo_order()?;
        let input_map = graph.input_map()?;
        let mut entries = Vec::new();
        let mut len = 0usize;
        let mut alloc = |node: &str, name: &str, kind: ParamKind, shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let e = ParamEntry {
                node: node.into(),
                name: name.into(),
                kind,
                shape,
                offset: len,
                len: n,
            };
            len += n;
            entries.push(e);
            len - n..len
        };
        let conv = |alloc: &mut dyn FnMut(&str, &str, ParamKind, Vec<usize>) -> Range<usize>,
                    node: &str,
                    prefix: &str,
                    in_ch: usize,
                    out_ch: usize,
                    k: usize|
         -> ConvParams {
            let w = alloc(
                node,
                &format!("{prefix}.weight"),
                ParamKind::Weight,
                vec![out_ch, in_ch, k, k, k],
            );
            let b = alloc(node, &format!("{prefix}.bias"), ParamKind::Bias, vec![out_ch]);
            ConvParams { w, b, in_ch, out_ch }
        };
        let bn = |alloc: &mut dyn FnMut(&str, &str, ParamKind, Vec<usize>) -> Range<usize>,
                  node: &str,
                  prefix: &str,
                  ch: usize|
         -> BnParams {
            BnParams {
                gamma: alloc(node, &format!("{prefix}.scale"), ParamKind::BnScale, vec![ch]),
                beta: alloc(node, &format!("{prefix}.shift"), ParamKind::BnShift, vec![ch]),
                rmean: alloc(
                    node,
                    &format!("{prefix}.running_mean"),
                    ParamKind::BnRunningMean,
                    vec![ch],
                ),
                rvar: alloc(
                    node,
                    &format!("{prefix}.running_var"),
                    ParamKind::BnRunningVar,
                    vec![ch],
                ),
            }
        };

        let mut name_to_idx: BTreeMap<&str, usize> = BTreeMap::new();
        let mut plan = Vec::with_capacity(graph.nodes.len());
        for &gi in &order {
            let node = &graph.nodes[gi];
            let inputs: Vec<usize> =
                input_map[&node.name].iter().map(|n| name_to_idx[n.as_str()]).collect();
            let op = match &node.op {
                LayerOp::Input => ExecOp::Input,
                LayerOp::MaxPool => ExecOp::MaxPool,
                LayerOp::Upsample => ExecOp::Upsample,
                LayerOp::Concat => ExecOp::Concat,
                LayerOp::ConvBlock(s) => ExecOp::ConvBlock {
                    conv1: conv(&mut alloc, &node.name, "conv1", s.in_channels, s.out_channels, 3),
                    bn1: bn(&mut alloc, &node.name, "bn1", s.out_channels),
                    conv2: conv(&mut alloc, &node.name, "conv2", s.out_channels, s.out_channels, 3),
                    bn2: bn(&mut alloc, &node.name, "bn2", s.out_channels),
                },
                LayerOp::AttentionGate(s) => ExecOp::AttentionGate {
                    wg: conv(&mut alloc, &node.name, "wg", s.gating_channels, s.inter_channels, 1),
                    wx: conv(&mut alloc, &node.name, "wx", s.skip_channels, s.inter_channels, 1),
                    psi: conv(&mut alloc, &node.name, "psi", s.inter_channels, 1, 1),
                },
                LayerOp::OutputHead(s) => ExecOp::OutputHead {
                    conv: conv(&mut alloc, &node.name, "conv", s.in_channels, s.out_channels, 1),
                    activation: s.activation,
                },
            };
            name_to_idx.insert(node.name.as_str(), plan.len());
            plan.push(PlanNode { name: node.name.clone(), inputs, consumers: 0, op });
        }
        let consumer_counts: Vec<usize> = plan
            .iter()
            .map(|n| plan.iter().map(|m| m.inputs.iter().filter(|&&i| i == name_to_idx[n.name.as_str()]).count()).sum())
            .collect();
        for (node, count) in plan.iter_mut().zip(consumer_counts) {
            node.consumers = count;
        }
        let ports: BTreeMap<String, usize> =
            graph.outputs.iter().map(|(p, n)| (p.clone(), name_to_idx[n.as_str()])).collect();
        let store =
            ParamStore { entries, data: vec![0.0; len], grad: vec![0.0; len] };
        Ok(Self { graph, store, plan, ports })
    }

    /// Plan index of an output port.
    pub fn port_index(&self, port: &str) -> Result<usize> {
        self.ports
            .get(port)
            .copied()
            .ok_or_else(|| Error::Graph(format!("network has no output port `{port}`")))
    }

    /// Output tensor of a port within a forward pass.
    pub fn output<'a>(&self, pass: &'a ForwardPass, port: &str) -> Result<&'a Tensor> {
        let idx = self.port_index(port)?;
        pass.activations[idx]
            .as_ref()
            .ok_or_else(|| Error::Graph(format!("output for port `{port}` was freed")))
    }

    /// Executes the graph on a batch.
    ///
    /// Input is `[batch, 1, Z, Y, X]`; shape problems (including pooling
    /// divisibility) are rejected via shape inference before any tensor
    /// work.
    pub fn forward(&mut self, input: Tensor, phase: Phase) -> Result<ForwardPass> {
        if input.c != 1 {
            return Err(Error::ShapeMismatch(format!(
                "network input must have 1 channel, got {}",
                input.c
            )));
        }
        if input.n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let vol_shape = VolumeShape::new(input.x, input.y, input.z);
        self.graph.infer_shapes(vol_shape)?;

        let mut remaining: Vec<usize> = self.plan.iter().map(|n| n.consumers).collect();
        let mut pass = ForwardPass {
            activations: (0..self.plan.len()).map(|_| None).collect(),
            caches: (0..self.plan.len()).map(|_| Cache::None).collect(),
            phase,
        };
        let data = &mut self.store.data;
        for i in 0..self.plan.len() {
            let node = &self.plan[i];
            let (out, cache) = match &node.op {
                ExecOp::Input => (input.clone(), Cache::None),
                ExecOp::ConvBlock { conv1, bn1, conv2, bn2 } => {
                    let x = pass.activations[node.inputs[0]].as_ref().unwrap();
                    let c1 = conv3_forward(x, &data[conv1.w.clone()], &data[conv1.b.clone()], conv1.out_ch);
                    let (b1, s1) = run_bn(data, bn1, &c1, phase);
                    let a1 = elu_forward(b1);
                    let c2 = conv3_forward(&a1, &data[conv2.w.clone()], &data[conv2.b.clone()], conv2.out_ch);
                    let (b2, s2) = run_bn(data, bn2, &c2, phase);
                    let a2 = elu_forward(b2);
                    let cache = if phase == Phase::Train {
                        Cache::ConvBlock { conv1_out: c1, bn1: s1, act1: a1, conv2_out: c2, bn2: s2 }
                    } else {
                        Cache::None
                    };
                    (a2, cache)
                }
                ExecOp::MaxPool => {
                    let x = pass.activations[node.inputs[0]].as_ref().unwrap();
                    let (out, arg) = maxpool_forward(x);
                    let cache = if phase == Phase::Train {
                        Cache::MaxPool { arg, in_dims: x.dims() }
                    } else {
                        Cache::None
                    };
                    (out, cache)
                }
                ExecOp::Upsample => {
                    let x = pass.activations[node.inputs[0]].as_ref().unwrap();
                    let out = upsample_forward(x);
                    let cache = if phase == Phase::Train {
                        Cache::Upsample { in_dims: x.dims() }
                    } else {
                        Cache::None
                    };
                    (out, cache)
                }
                ExecOp::Concat => {
                    let parts: Vec<&Tensor> = node
                        .inputs
                        .iter()
                        .map(|&j| pass.activations[j].as_ref().unwrap())
                        .collect();
                    (concat_channels(&parts), Cache::None)
                }
                ExecOp::AttentionGate { wg, wx, psi } => {
                    let x = pass.activations[node.inputs[0]].as_ref().unwrap();
                    let g = pass.activations[node.inputs[1]].as_ref().unwrap();
                    let mut a = conv1_forward(g, &data[wg.w.clone()], &data[wg.b.clone()], wg.out_ch);
                    let ax = conv1_forward(x, &data[wx.w.clone()], &data[wx.b.clone()], wx.out_ch);
                    add_in_place(&mut a, &ax);
                    let s = relu_forward(a);
                    let t = conv1_forward(&s, &data[psi.w.clone()], &data[psi.b.clone()], 1);
                    let alpha = sigmoid_forward(t);
                    let out = mul_broadcast(x, &alpha);
                    let cache = if phase == Phase::Train {
                        Cache::Gate { s, alpha }
                    } else {
                        Cache::None
                    };
                    (out, cache)
                }
                ExecOp::OutputHead { conv, activation } => {
                    let x = pass.activations[node.inputs[0]].as_ref().unwrap();
                    let t = conv1_forward(x, &data[conv.w.clone()], &data[conv.b.clone()], conv.out_ch);
                    let out = match activation {
                        HeadActivation::Softmax => softmax_forward(&t),
                        HeadActivation::Sigmoid => sigmoid_forward(t),
                    };
                    (out, Cache::None)
                }
            };
            pass.activations[i] = Some(out);
            pass.caches[i] = cache;
            if phase == Phase::Eval {
                // free inputs whose consumers are all done
                for &j in &self.plan[i].inputs.clone() {
                    remaining[j] -= 1;
                    if remaining[j] == 0 && !self.ports.values().any(|&p| p == j) {
                        pass.activations[j] = None;
                    }
                }
            }
        }
        Ok(pass)
    }

    /// Accumulates parameter gradients (and nothing else) for the given
    /// output-port gradients. Walks the plan in reverse topological order.
    pub fn backward(&mut self, pass: &ForwardPass, port_grads: Vec<(String, Tensor)>) -> Result<()> {
        if pass.phase != Phase::Train {
            return Err(Error::InvalidArgument("backward requires a training-mode forward pass".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.plan.len()).map(|_| None).collect();
        for (port, g) in port_grads {
            let idx = self.port_index(&port)?;
            let out = pass.activations[idx].as_ref().unwrap();
            if !g.same_dims(out) {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for port `{port}` has dims {:?}, output has {:?}",
                    g.dims(),
                    out.dims()
                )));
            }
            accumulate(&mut grads[idx], g);
        }
        let ParamStore { data, grad, .. } = &mut self.store;
        for i in (0..self.plan.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.plan[i];
            match &node.op {
                ExecOp::Input => {}
                ExecOp::ConvBlock { conv1, bn1, conv2, bn2 } => {
                    let Cache::ConvBlock { conv1_out, bn1: s1, act1, conv2_out, bn2: s2 } =
                        &pass.caches[i]
                    else {
                        unreachable!("conv block cache present in train mode")
                    };
                    let act2 = pass.activations[i].as_ref().unwrap();
                    let x = pass.activations[node.inputs[0]].as_ref().unwrap();
                    let d_b2 = elu_backward(act2, &g);
                    let (dg2, db2) = split_two(grad, &bn2.gamma, &bn2.beta);
                    let d_c2 = batchnorm_backward(conv2_out, &d_b2, &data[bn2.gamma.clone()], s2, dg2, db2);
                    let (dw2, dbias2) = split_two(grad, &conv2.w, &conv2.b);
                    conv3_backward_params(act1, &d_c2, dw2, dbias2);
                    let d_a1 = conv3_backward_input(&d_c2, &data[conv2.w.clone()], conv2.in_ch);
                    let d_b1 = elu_backward(act1, &d_a1);
                    let (dg1, db1) = split_two(grad, &bn1.gamma, &bn1.beta);
                    let d_c1 = batchnorm_backward(conv1_out, &d_b1, &data[bn1.gamma.clone()], s1, dg1, db1);
                    let (dw1, dbias1) = split_two(grad, &conv1.w, &conv1.b);
                    conv3_backward_params(x, &d_c1, dw1, dbias1);
                    let din = conv3_backward_input(&d_c1, &data[conv1.w.clone()], conv1.in_ch);
                    accumulate(&mut grads[node.inputs[0]], din);
                }
                ExecOp::MaxPool => {
                    let Cache::MaxPool { arg, in_dims } = &pass.caches[i] else {
                        unreachable!("max pool cache present in train mode")
                    };
                    accumulate(&mut grads[node.inputs[0]], maxpool_backward(&g, arg, *in_dims));
                }
                ExecOp::Upsample => {
                    let Cache::Upsample { in_dims } = &pass.caches[i] else {
                        unreachable!("upsample cache present in train mode")
                    };
                    accumulate(&mut grads[node.inputs[0]], upsample_backward(&g, *in_dims));
                }
                ExecOp::Concat => {
                    let mut offset = 0usize;
                    for &j in &node.inputs {
                        let part = pass.activations[j].as_ref().unwrap();
                        let mut dj = Tensor::zeros(part.n, part.c, part.z, part.y, part.x);
                        for b in 0..part.n {
                            for c in 0..part.c {
                                let src = g.block(b, offset + c);
                                dj.block_mut(b, c).copy_from_slice(src);
                            }
                        }
                        offset += part.c;
                        accumulate(&mut grads[j], dj);
                    }
                }
                ExecOp::AttentionGate { wg, wx, psi } => {
                    let Cache::Gate { s, alpha } = &pass.caches[i] else {
                        unreachable!("gate cache present in train mode")
                    };
                    let x = pass.activations[node.inputs[0]].as_ref().unwrap();
                    let gin = pass.activations[node.inputs[1]].as_ref().unwrap();
                    // direct path
                    let mut dx = mul_broadcast(&g, alpha);
                    // attention-coefficient path
                    let dalpha = broadcast_dot(&g, x);
                    let dt = sigmoid_backward(alpha, &dalpha);
                    let (dwp, dbp) = split_two(grad, &psi.w, &psi.b);
                    conv1_backward_params(s, &dt, dwp, dbp);
                    let ds = conv1_backward_input(&dt, &data[psi.w.clone()], psi.in_ch);
                    let da = relu_backward(s, &ds);
                    let (dwg, dbg) = split_two(grad, &wg.w, &wg.b);
                    conv1_backward_params(gin, &da, dwg, dbg);
                    let dgin = conv1_backward_input(&da, &data[wg.w.clone()], wg.in_ch);
                    let (dwx, dbx) = split_two(grad, &wx.w, &wx.b);
                    conv1_backward_params(x, &da, dwx, dbx);
                    let dx2 = conv1_backward_input(&da, &data[wx.w.clone()], wx.in_ch);
                    add_in_place(&mut dx, &dx2);
                    accumulate(&mut grads[node.inputs[0]], dx);
                    accumulate(&mut grads[node.inputs[1]], dgin);
                }
                ExecOp::OutputHead { conv, activation } => {
                    let probs = pass.activations[i].as_ref().unwrap();
                    let x = pass.activations[node.inputs[0]].as_ref().unwrap();
                    let dz = match activation {
                        HeadActivation::Softmax => softmax_backward(probs, &g),
                        HeadActivation::Sigmoid => sigmoid_backward(probs, &g),
                    };
                    let (dw, db) = split_two(grad, &conv.w, &conv.b);
                    conv1_backward_params(x, &dz, dw, db);
                    let din = conv1_backward_input(&dz, &data[conv.w.clone()], conv.in_ch);
                    accumulate(&mut grads[node.inputs[0]], din);
                }
            }
        }
        Ok(())
    }

    /// Inference on a batch of scalar volumes; returns one probability map
    /// per input (region channels plus the boundary channel when present).
    pub fn infer(&mut self, volumes: &[&ScalarVolume]) -> Result<Vec<ProbabilityMap>> {
        if volumes.is_empty() {
            return Err(Error::InvalidArgument("empty inference batch".into()));
        }
        let shape = volumes[0].shape;
        if volumes.iter().any(|v| v.shape != shape) {
            return Err(Error::ShapeMismatch("inference batch mixes volume shapes".into()));
        }
        let n = volumes.len();
        let mut input = Tensor::zeros(n, 1, shape.depth, shape.height, shape.width);
        for (b, v) in volumes.iter().enumerate() {
            input.block_mut(b, 0).copy_from_slice(&v.data);
        }
        let pass = self.forward(input, Phase::Eval)?;
        let region = self.output(&pass, "region")?;
        let classes = region.c;
        let boundary = self.ports.contains_key("boundary").then(|| {
            self.output(&pass, "boundary").expect("boundary port present")
        });
        let mut out = Vec::with_capacity(n);
        for b in 0..n {
            let mut map =
                ProbabilityMap::new(shape, classes, region.sample(b).to_vec())?;
            if let Some(bt) = boundary {
                debug_assert_eq!(bt.c, 1);
                map.boundary = Some(bt.block(b, 0).to_vec());
            }
            out.push(map);
        }
        Ok(out)
    }
}

fn run_bn(data: &mut [f32], bn: &BnParams, input: &Tensor, phase: Phase) -> (Tensor, BnStats) {
    match phase {
        Phase::Train => {
            let mut rm = data[bn.rmean.clone()].to_vec();
            let mut rv = data[bn.rvar.clone()].to_vec();
            let (out, stats) = batchnorm_forward_train(
                input,
                &data[bn.gamma.clone()],
                &data[bn.beta.clone()],
                &mut rm,
                &mut rv,
            );
            data[bn.rmean.clone()].copy_from_slice(&rm);
            data[bn.rvar.clone()].copy_from_slice(&rv);
            (out, stats)
        }
        Phase::Eval => {
            let out = batchnorm_forward_eval(
                input,
                &data[bn.gamma.clone()],
                &data[bn.beta.clone()],
                &data[bn.rmean.clone()],
                &data[bn.rvar.clone()],
            );
            (out, BnStats::default())
        }
    }
}

/// Disjoint mutable slices of the gradient buffer for two parameter ranges.
fn split_two<'a>(
    grad: &'a mut [f32],
    a: &Range<usize>,
    b: &Range<usize>,
) -> (&'a mut [f32], &'a mut [f32]) {
    debug_assert!(a.end <= b.start || b.end <= a.start);
    if a.start < b.start {
        let (lo, hi) = grad.split_at_mut(b.start);
        (&mut lo[a.clone()], &mut hi[..b.end - b.start])
    } else {
        let (lo, hi) = grad.split_at_mut(a.start);
        let bl = &mut lo[b.clone()];
        (&mut hi[..a.end - a.start], bl)
    }
}

fn concat_channels(parts: &[&Tensor]) -> Tensor {
    let first = parts[0];
    let c_total: usize = parts.iter().map(|t| t.c).sum();
    let mut out = Tensor::zeros(first.n, c_total, first.z, first.y, first.x);
    for b in 0..first.n {
        let mut offset = 0usize;
        for part in parts {
            for c in 0..part.c {
                out.block_mut(b, offset + c).copy_from_slice(part.block(b, c));
            }
            offset += part.c;
        }
    }
    out
}

fn add_in_place(a: &mut Tensor, b: &Tensor) {
    debug_assert!(a.same_dims(b));
    let b_ref = &b.data;
    parallel::for_each_chunk_mut(&mut a.data, parallel::SUM_CHUNK, |i, chunk| {
        let base = i * parallel::SUM_CHUNK;
        for (j, v) in chunk.iter_mut().enumerate() {
            *v += b_ref[base + j];
        }
    });
}

/// `out[c][v] = x[c][v] * alpha[0][v]` (alpha broadcast over channels).
fn mul_broadcast(x: &Tensor, alpha: &Tensor) -> Tensor {
    debug_assert_eq!(alpha.c, 1);
    let (n, c, z, y, xx) = x.dims();
    let spatial = x.spatial();
    let mut out = Tensor::zeros(n, c, z, y, xx);
    parallel::for_each_chunk_mut(&mut out.data, spatial, |unit, slab| {
        let ci = unit % c;
        let b = unit / c;
        let a = alpha.block(b, 0);
        let xv = x.block(b, ci);
        for ((o, &xi), &ai) in slab.iter_mut().zip(xv).zip(a) {
            *o = xi * ai;
        }
    });
    out
}

/// `out[0][v] = sum_c g[c][v] * x[c][v]` (per-voxel channel dot).
fn broadcast_dot(g: &Tensor, x: &Tensor) -> Tensor {
    debug_assert!(g.same_dims(x));
    let (n, c, z, y, xx) = g.dims();
    let spatial = g.spatial();
    let mut out = Tensor::zeros(n, 1, z, y, xx);
    parallel::for_each_chunk_mut(&mut out.data, spatial, |b, slab| {
        for ci in 0..c {
            let gc = g.block(b, ci);
            let xc = x.block(b, ci);
            for (o, (&gv, &xv)) in slab.iter_mut().zip(gc.iter().zip(xc)) {
                *o += gv * xv;
            }
        }
    });
    out
}

fn accumulate(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        None => *slot = Some(t),
        Some(existing) => add_in_place(existing, &t),
    }
}
