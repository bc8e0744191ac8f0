//! Declarative layer graphs for the model zoo.
//!
//! A [`LayerGraph`] is a backend-free description of a 3D encoder-decoder
//! network: typed nodes (conv blocks, pools, upsamples, concats, attention
//! gates, output heads) joined by directed data-flow edges. Shape inference
//! and parameter counting run on the graph alone; execution binds a graph to
//! the tensor backend in [`crate::nn`].
//!
//! Three base architectures (UNet, UNet++, Attention-UNet) can each be built
//! in three topologies:
//!
//! * `Baseline` — single region head.
//! * `Tsol` — task-specific output layers: the whole encoder-decoder is
//!   shared and a second 1x1x1 boundary head is appended, adding
//!   `base_features + 1` parameters (17 under defaults).
//! * `Tsd` — task-specific decoders: a shared encoder feeds two full
//!   decoding arms. The boundary arm is always a plain decoder: for UNet++
//!   it consumes only the deepest-encoder skips, and for Attention-UNet it
//!   carries no attention gates.
//!
//! UNet++ is built without deep supervision. Upsampling is trilinear
//! interpolation followed by concatenation; there are no transposed
//! convolutions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::volume::{VolumeShape, AXIS_NAMES};
use crate::{Error, Result};

/// Base encoder-decoder family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Unet,
    #[serde(rename = "unetpp")]
    UnetPlusPlus,
    #[serde(rename = "attunet")]
    AttentionUnet,
}

impl Architecture {
    pub const ALL: [Architecture; 3] =
        [Architecture::Unet, Architecture::UnetPlusPlus, Architecture::AttentionUnet];

    pub fn label(&self) -> &'static str {
        match self {
            Architecture::Unet => "3D UNet",
            Architecture::UnetPlusPlus => "3D UNet++",
            Architecture::AttentionUnet => "3D Att-UNet",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unet" => Ok(Architecture::Unet),
            "unetpp" | "unet++" => Ok(Architecture::UnetPlusPlus),
            "attunet" | "att-unet" => Ok(Architecture::AttentionUnet),
            other => Err(format!("unknown architecture `{other}` (expected unet, unetpp, attunet)")),
        }
    }
}

/// Extent of parameter sharing between the region and boundary tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Baseline,
    Tsol,
    Tsd,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 3] =
        [TopologyKind::Baseline, TopologyKind::Tsol, TopologyKind::Tsd];

    pub fn label(&self) -> &'static str {
        match self {
            TopologyKind::Baseline => "baseline",
            TopologyKind::Tsol => "MTL-TSOL",
            TopologyKind::Tsd => "MTL-TSD",
        }
    }
}

impl std::str::FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(TopologyKind::Baseline),
            "tsol" => Ok(TopologyKind::Tsol),
            "tsd" => Ok(TopologyKind::Tsd),
            other => Err(format!("unknown topology `{other}` (expected baseline, tsol, tsd)")),
        }
    }
}

/// Feature-ladder and head configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    /// Channels at the first encoder stage.
    pub base_features: usize,
    /// Number of encoder stages (conv blocks); depth - 1 poolings.
    pub depth: usize,
    /// Cap for the doubling feature ladder.
    pub max_features: usize,
    /// Region classes C including background.
    pub region_classes: usize,
    /// Boundary output channels (a single binary edge map).
    pub boundary_channels: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            base_features: 16,
            depth: 5,
            max_features: 256,
            region_classes: 9,
            boundary_channels: 1,
        }
    }
}

impl ArchitectureConfig {
    /// Channels at 0-based encoder stage `k`: `base * 2^k`, capped.
    pub fn features(&self, stage: usize) -> usize {
        (self.base_features << stage).min(self.max_features)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidArgument("architecture depth must be >= 2".into()));
        }
        if self.base_features == 0 || self.max_features < self.base_features {
            return Err(Error::InvalidArgument(
                "base_features must be >= 1 and <= max_features".into(),
            ));
        }
        if self.region_classes < 2 {
            return Err(Error::InvalidArgument("region_classes must be >= 2".into()));
        }
        if self.boundary_channels != 1 {
            return Err(Error::InvalidArgument("boundary_channels must be 1".into()));
        }
        Ok(())
    }
}

/// Two padded 3x3x3 convolutions, each followed by batch norm and ELU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
}

/// Additive attention gate on a skip connection: 1x1x1 projections of the
/// skip (`x`) and the gating signal (`g`, the upsampled coarser decoder
/// feature), ReLU, a 1x1x1 scalar projection, sigmoid coefficients
/// multiplying the skip features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionGateSpec {
    pub skip_channels: usize,
    pub gating_channels: usize,
    pub inter_channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadActivation {
    /// Per-voxel softmax over channels (region head).
    Softmax,
    /// Per-voxel sigmoid (boundary head).
    Sigmoid,
}

/// Final 1x1x1 convolution plus activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputHeadSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: HeadActivation,
}

/// Typed layer descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerOp {
    /// The single graph input (one intensity channel).
    Input,
    ConvBlock(ConvBlockSpec),
    /// 2x2x2 max pooling, stride 2.
    MaxPool,
    /// Trilinear upsampling, factor 2 per axis.
    Upsample,
    /// Channel-wise concatenation of all inputs (slot order).
    Concat,
    AttentionGate(AttentionGateSpec),
    OutputHead(OutputHeadSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub name: String,
    pub op: LayerOp,
}

/// Directed data-flow edge; `slot` is the input position at the consumer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub slot: usize,
}

/// Declarative architecture DAG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub arch: Architecture,
    pub topology: TopologyKind,
    pub config: ArchitectureConfig,
    pub nodes: Vec<LayerNode>,
    pub edges: Vec<Edge>,
    /// Name of the input node.
    pub input: String,
    /// Output port name -> producing node name.
    pub outputs: BTreeMap<String, String>,
}

/// Inferred channel count and spatial shape of one node's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeShape {
    pub channels: usize,
    pub shape: VolumeShape,
}

/// Result of shape inference over a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub per_node: BTreeMap<String, NodeShape>,
    /// Smallest feature map in the graph (deepest encoder output).
    pub bottleneck: NodeShape,
}

impl LayerGraph {
    pub fn node(&self, name: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Ordered input producers per node (by slot). Errors on dangling edges
    /// or non-dense slots.
    pub fn input_map(&self) -> Result<BTreeMap<String, Vec<String>>> {
        let names: BTreeSet<&str> = self.nodes.iter().map(|n| n.name.as_str()).collect();
        let mut map: BTreeMap<String, Vec<(usize, String)>> =
            self.nodes.iter().map(|n| (n.name.clone(), Vec::new())).collect();
        for e in &self.edges {
            if !names.contains(e.from.as_str()) {
                return Err(Error::Graph(format!("edge from unknown node `{}`", e.from)));
            }
            let entry = map
                .get_mut(&e.to)
                .ok_or_else(|| Error::Graph(format!("edge to unknown node `{}`", e.to)))?;
            entry.push((e.slot, e.from.clone()));
        }
        let mut out = BTreeMap::new();
        for (name, mut slots) in map {
            slots.sort_by_key(|(s, _)| *s);
            for (expect, (slot, _)) in slots.iter().enumerate() {
                if *slot != expect {
                    return Err(Error::Graph(format!(
                        "node `{name}` has non-contiguous input slots"
                    )));
                }
            }
            out.insert(name, slots.into_iter().map(|(_, f)| f).collect());
        }
        Ok(out)
    }

    /// Topological order of node indices; errors on cycles.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let index: BTreeMap<&str, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.name.as_str(), i)).collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            let (&f, &t) = match (index.get(e.from.as_str()), index.get(e.to.as_str())) {
                (Some(f), Some(t)) => (f, t),
                _ => {
                    return Err(Error::Graph(format!(
                        "edge {} -> {} names unknown node",
                        e.from, e.to
                    )))
                }
            };
            succ[f].push(t);
            indegree[t] += 1;
        }
        let mut queue: Vec<usize> = (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = queue.pop() {
            order.push(i);
            for &s in &succ[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    queue.push(s);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::Graph("graph contains a cycle".into()));
        }
        Ok(order)
    }

    /// Structural validation: single input, arities, output ports matching
    /// the topology, acyclicity.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let inputs = self.input_map()?;
        self.topo_order()?;
        let n_inputs = self.nodes.iter().filter(|n| matches!(n.op, LayerOp::Input)).count();
        if n_inputs != 1 {
            return Err(Error::Graph(format!(
                "graph must have exactly 1 input node, found {n_inputs}"
            )));
        }
        match self.node(&self.input).map(|n| &n.op) {
            Some(LayerOp::Input) => {}
            _ => {
                return Err(Error::Graph(format!(
                    "input port `{}` is not an Input node",
                    self.input
                )))
            }
        }
        for node in &self.nodes {
            let arity = inputs[&node.name].len();
            let ok = match node.op {
                LayerOp::Input => arity == 0,
                LayerOp::ConvBlock(_)
                | LayerOp::MaxPool
                | LayerOp::Upsample
                | LayerOp::OutputHead(_) => arity == 1,
                LayerOp::Concat => arity >= 2,
                LayerOp::AttentionGate(_) => arity == 2,
            };
            if !ok {
                return Err(Error::Graph(format!(
                    "node `{}` has {arity} inputs, invalid for {:?}",
                    node.name, node.op
                )));
            }
        }
        let expect_ports: &[&str] = match self.topology {
            TopologyKind::Baseline => &["region"],
            TopologyKind::Tsol | TopologyKind::Tsd => &["boundary", "region"],
        };
        let got: Vec<&str> = self.outputs.keys().map(|s| s.as_str()).collect();
        if got != expect_ports {
            return Err(Error::Graph(format!(
                "topology {:?} requires output ports {expect_ports:?}, found {got:?}",
                self.topology
            )));
        }
        for node in self.outputs.values() {
            if self.node(node).is_none() {
                return Err(Error::Graph(format!("output port maps to unknown node `{node}`")));
            }
        }
        Ok(())
    }

    /// Walks the graph and infers per-node output shapes for `input`.
    ///
    /// Pooling halves each axis (erroring with the offending axis on odd
    /// extents), upsampling doubles, convolutions preserve shape.
    pub fn infer_shapes(&self, input: VolumeShape) -> Result<ShapeReport> {
        input.validate()?;
        let inputs = self.input_map()?;
        let order = self.topo_order()?;
        let mut shapes: BTreeMap<String, NodeShape> = BTreeMap::new();
        for i in order {
            let node = &self.nodes[i];
            let srcs: Vec<NodeShape> =
                inputs[&node.name].iter().map(|s| shapes[s.as_str()]).collect();
            let out = match &node.op {
                LayerOp::Input => NodeShape { channels: 1, shape: input },
                LayerOp::ConvBlock(spec) => {
                    let got = srcs[0].channels;
                    if got != spec.in_channels {
                        return Err(Error::Graph(format!(
                            "conv block `{}` configured for {} input channels, receives {got}",
                            node.name, spec.in_channels
                        )));
                    }
                    NodeShape { channels: spec.out_channels, shape: srcs[0].shape }
                }
                LayerOp::MaxPool => {
                    let s = srcs[0].shape;
                    for (axis, extent) in s.as_array().into_iter().enumerate() {
                        if extent % 2 != 0 {
                            return Err(Error::IndivisibleAxis {
                                node: node.name.clone(),
                                axis: AXIS_NAMES[axis],
                                size: extent,
                            });
                        }
                    }
                    NodeShape {
                        channels: srcs[0].channels,
                        shape: VolumeShape::new(s.width / 2, s.height / 2, s.depth / 2),
                    }
                }
                LayerOp::Upsample => {
                    let s = srcs[0].shape;
                    NodeShape {
                        channels: srcs[0].channels,
                        shape: VolumeShape::new(s.width * 2, s.height * 2, s.depth * 2),
                    }
                }
                LayerOp::Concat => {
                    let shape = srcs[0].shape;
                    if srcs.iter().any(|s| s.shape != shape) {
                        return Err(Error::Graph(format!(
                            "concat `{}` inputs disagree on spatial shape",
                            node.name
                        )));
                    }
                    NodeShape { channels: srcs.iter().map(|s| s.channels).sum(), shape }
                }
                LayerOp::AttentionGate(spec) => {
                    let (x, g) = (srcs[0], srcs[1]);
                    if x.shape != g.shape {
                        return Err(Error::Graph(format!(
                            "attention gate `{}` skip/gating shapes disagree",
                            node.name
                        )));
                    }
                    if x.channels != spec.skip_channels || g.channels != spec.gating_channels {
                        return Err(Error::Graph(format!(
                            "attention gate `{}` channel mismatch: skip {} (want {}), gating {} (want {})",
                            node.name, x.channels, spec.skip_channels, g.channels, spec.gating_channels
                        )));
                    }
                    x
                }
                LayerOp::OutputHead(spec) => {
                    if srcs[0].channels != spec.in_channels {
                        return Err(Error::Graph(format!(
                            "output head `{}` configured for {} input channels, receives {}",
                            node.name, spec.in_channels, srcs[0].channels
                        )));
                    }
                    NodeShape { channels: spec.out_channels, shape: srcs[0].shape }
                }
            };
            shapes.insert(node.name.clone(), out);
        }
        let bottleneck = shapes
            .iter()
            .filter(|(name, _)| {
                matches!(self.node(name).map(|n| &n.op), Some(LayerOp::ConvBlock(_)))
            })
            .map(|(_, s)| *s)
            .min_by_key(|s| (s.shape.num_voxels(), usize::MAX - s.channels))
            .expect("graph has at least one conv block");
        Ok(ShapeReport { per_node: shapes, bottleneck })
    }

    /// Exact trainable-parameter count.
    ///
    /// Convolutions count `in*out*k^3 + out` (weights + biases); batch norms
    /// count scale and shift only (running statistics are buffers, not
    /// parameters).
    pub fn count_params(&self) -> u64 {
        self.nodes.iter().map(|n| op_params(&n.op)).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layer graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let graph: LayerGraph = serde_json::from_str(text)
            .map_err(|e| Error::Graph(format!("invalid graph JSON: {e}")))?;
        graph.validate()?;
        Ok(graph)
    }
}

fn conv_params(in_ch: usize, out_ch: usize, k: usize) -> u64 {
    (in_ch * out_ch * k * k * k + out_ch) as u64
}

fn op_params(op: &LayerOp) -> u64 {
    match op {
        LayerOp::Input | LayerOp::MaxPool | LayerOp::Upsample | LayerOp::Concat => 0,
        LayerOp::ConvBlock(s) => {
            conv_params(s.in_channels, s.out_channels, 3)
                + conv_params(s.out_channels, s.out_channels, 3)
                + 2 * (2 * s.out_channels as u64)
        }
        LayerOp::AttentionGate(s) => {
            conv_params(s.gating_channels, s.inter_channels, 1)
                + conv_params(s.skip_channels, s.inter_channels, 1)
                + conv_params(s.inter_channels, 1, 1)
        }
        LayerOp::OutputHead(s) => conv_params(s.in_channels, s.out_channels, 1),
    }
}

struct GraphBuilder {
    nodes: Vec<LayerNode>,
    edges: Vec<Edge>,
}

impl GraphBuilder {
    fn new() -> Self {
        let nodes = vec![LayerNode { name: "input".into(), op: LayerOp::Input }];
        Self { nodes, edges: Vec::new() }
    }

    fn add(&mut self, name: &str, op: LayerOp, inputs: &[&str]) -> String {
        self.nodes.push(LayerNode { name: name.into(), op });
        for (slot, from) in inputs.iter().enumerate() {
            self.edges.push(Edge { from: (*from).into(), to: name.into(), slot });
        }
        name.into()
    }

    fn conv_block(&mut self, name: &str, in_ch: usize, out_ch: usize, src: &str) -> String {
        self.add(
            name,
            LayerOp::ConvBlock(ConvBlockSpec { in_channels: in_ch, out_channels: out_ch }),
            &[src],
        )
    }
}

/// Builds the shared encoder: `enc1..encD` conv blocks with 2x2x2 max pools
/// between stages. Returns the encoder block names per stage.
fn build_encoder(b: &mut GraphBuilder, cfg: &ArchitectureConfig) -> Vec<String> {
    let mut stages = Vec::with_capacity(cfg.depth);
    let mut src = "input".to_string();
    let mut in_ch = 1;
    for stage in 0..cfg.depth {
        if stage > 0 {
            src = b.add(&format!("pool{stage}"), LayerOp::MaxPool, &[&src]);
        }
        let out_ch = cfg.features(stage);
        src = b.conv_block(&format!("enc{}", stage + 1), in_ch, out_ch, &src);
        in_ch = out_ch;
        stages.push(src.clone());
    }
    stages
}

/// Builds one decoding arm over per-stage skip sources. `prefix` is empty for
/// the region arm and `"b"` for a boundary arm; gates are inserted on skips
/// when `gated`.
fn build_decoder(
    b: &mut GraphBuilder,
    cfg: &ArchitectureConfig,
    skips: &[String],
    prefix: &str,
    gated: bool,
) -> String {
    let mut prev = skips[cfg.depth - 1].clone();
    for stage in (0..cfg.depth - 1).rev() {
        let k = stage + 1;
        let up = b.add(&format!("{prefix}up{k}"), LayerOp::Upsample, &[&prev]);
        let skip = if gated {
            let f_skip = cfg.features(stage);
            let f_gate = cfg.features(stage + 1);
            b.add(
                &format!("{prefix}att{k}"),
                LayerOp::AttentionGate(AttentionGateSpec {
                    skip_channels: f_skip,
                    gating_channels: f_gate,
                    inter_channels: (f_skip / 2).max(1),
                }),
                &[&skips[stage], &up],
            )
        } else {
            skips[stage].clone()
        };
        let cat = b.add(&format!("{prefix}cat{k}"), LayerOp::Concat, &[&up, &skip]);
        let in_ch = cfg.features(stage + 1) + cfg.features(stage);
        prev = b.conv_block(&format!("{prefix}dec{k}"), in_ch, cfg.features(stage), &cat);
    }
    prev
}

/// Builds the nested dense-skip pathways of UNet++ over the backbone
/// (no deep supervision). Returns the final `x0_{depth-1}` node.
fn build_nested(b: &mut GraphBuilder, cfg: &ArchitectureConfig, backbone: &[String]) -> String {
    let d = cfg.depth;
    // grid[i][j] = node computing the block at level i, column j;
    // column 0 is the backbone
    let mut grid: Vec<Vec<String>> = backbone.iter().map(|n| vec![n.clone()]).collect();
    for j in 1..d {
        for i in 0..d - j {
            let up =
                b.add(&format!("up{i}_{j}"), LayerOp::Upsample, &[grid[i + 1][j - 1].as_str()]);
            let mut inputs: Vec<&str> = grid[i][..j].iter().map(|s| s.as_str()).collect();
            inputs.push(&up);
            let cat = b.add(&format!("cat{i}_{j}"), LayerOp::Concat, &inputs);
            let in_ch = j * cfg.features(i) + cfg.features(i + 1);
            let node = b.conv_block(&format!("x{i}_{j}"), in_ch, cfg.features(i), &cat);
            grid[i].push(node);
        }
    }
    grid[0][d - 1].clone()
}

fn region_head(b: &mut GraphBuilder, cfg: &ArchitectureConfig, src: &str) -> String {
    b.add(
        "region_head",
        LayerOp::OutputHead(OutputHeadSpec {
            in_channels: cfg.base_features,
            out_channels: cfg.region_classes,
            activation: HeadActivation::Softmax,
        }),
        &[src],
    )
}

fn boundary_head(b: &mut GraphBuilder, cfg: &ArchitectureConfig, src: &str) -> String {
    b.add(
        "boundary_head",
        LayerOp::OutputHead(OutputHeadSpec {
            in_channels: cfg.base_features,
            out_channels: cfg.boundary_channels,
            activation: HeadActivation::Sigmoid,
        }),
        &[src],
    )
}

/// Builds the layer graph for one of the nine model variants.
pub fn build_graph(
    arch: Architecture,
    topology: TopologyKind,
    cfg: &ArchitectureConfig,
) -> Result<LayerGraph> {
    cfg.validate()?;
    let mut b = GraphBuilder::new();
    let encoder = build_encoder(&mut b, cfg);
    let gated = arch == Architecture::AttentionUnet;

    // region arm
    let region_feat = match arch {
        Architecture::Unet | Architecture::AttentionUnet => {
            build_decoder(&mut b, cfg, &encoder, "", gated)
        }
        Architecture::UnetPlusPlus => build_nested(&mut b, cfg, &encoder),
    };
    let region = region_head(&mut b, cfg, &region_feat);

    let mut outputs = BTreeMap::new();
    outputs.insert("region".to_string(), region);
    match topology {
        TopologyKind::Baseline => {}
        TopologyKind::Tsol => {
            // second prediction layer on the shared final decoder features
            let boundary = boundary_head(&mut b, cfg, &region_feat);
            outputs.insert("boundary".to_string(), boundary);
        }
        TopologyKind::Tsd => {
            // separate decoding arm; plain decoder over the deepest-encoder
            // skips for every architecture (no nesting, no gates)
            let boundary_feat = build_decoder(&mut b, cfg, &encoder, "b", false);
            let boundary = boundary_head(&mut b, cfg, &boundary_feat);
            outputs.insert("boundary".to_string(), boundary);
        }
    }

    let graph = LayerGraph {
        arch,
        topology,
        config: *cfg,
        nodes: b.nodes,
        edges: b.edges,
        input: "input".into(),
        outputs,
    };
    graph.validate()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> ArchitectureConfig {
        ArchitectureConfig::default()
    }

    fn count(arch: Architecture, topo: TopologyKind) -> u64 {
        build_graph(arch, topo, &defaults()).unwrap().count_params()
    }

    #[test]
    fn unet_baseline_structure() {
        let g = build_graph(Architecture::Unet, TopologyKind::Baseline, &defaults()).unwrap();
        assert_eq!(g.outputs.len(), 1);
        let enc = g
            .nodes
            .iter()
            .filter(|n| n.name.starts_with("enc") && matches!(n.op, LayerOp::ConvBlock(_)))
            .count();
        let dec = g
            .nodes
            .iter()
            .filter(|n| n.name.starts_with("dec") && matches!(n.op, LayerOp::ConvBlock(_)))
            .count();
        assert_eq!(enc, 5);
        assert_eq!(dec, 4);
    }

    #[test]
    fn tsol_is_baseline_plus_one_head() {
        let base = build_graph(Architecture::Unet, TopologyKind::Baseline, &defaults()).unwrap();
        let tsol = build_graph(Architecture::Unet, TopologyKind::Tsol, &defaults()).unwrap();
        assert_eq!(tsol.nodes.len(), base.nodes.len() + 1);
        assert_eq!(tsol.outputs.len(), 2);
        let extra: Vec<_> = tsol.nodes.iter().filter(|n| base.node(&n.name).is_none()).collect();
        assert_eq!(extra.len(), 1);
        assert!(matches!(extra[0].op, LayerOp::OutputHead(_)));
    }

    #[test]
    fn tsd_has_two_decoding_arms() {
        let g = build_graph(Architecture::Unet, TopologyKind::Tsd, &defaults()).unwrap();
        assert_eq!(g.outputs.len(), 2);
        assert!(g.node("dec1").is_some());
        assert!(g.node("bdec1").is_some());
        // a single shared encoder feeds both arms
        assert_eq!(
            g.nodes.iter().filter(|n| n.name.starts_with("enc")).count(),
            5
        );
    }

    #[test]
    fn bottleneck_is_9_cubed_at_144_for_all_variants() {
        for arch in Architecture::ALL {
            for topo in TopologyKind::ALL {
                let g = build_graph(arch, topo, &defaults()).unwrap();
                let report = g.infer_shapes(VolumeShape::cube(144)).unwrap();
                assert_eq!(report.bottleneck.shape, VolumeShape::cube(9), "{arch:?} {topo:?}");
                assert_eq!(report.bottleneck.channels, 256, "{arch:?} {topo:?}");
                let out = report.per_node[&g.outputs["region"]];
                assert_eq!(out.shape, VolumeShape::cube(144));
                assert_eq!(out.channels, 9);
            }
        }
    }

    #[test]
    fn bottleneck_of_32_input_is_2_cubed() {
        let g = build_graph(Architecture::Unet, TopologyKind::Baseline, &defaults()).unwrap();
        let report = g.infer_shapes(VolumeShape::cube(32)).unwrap();
        assert_eq!(report.bottleneck.shape, VolumeShape::cube(2));
    }

    #[test]
    fn indivisible_input_names_the_axis() {
        let g = build_graph(Architecture::Unet, TopologyKind::Baseline, &defaults()).unwrap();
        let err = g.infer_shapes(VolumeShape::new(32, 30, 32)).unwrap_err();
        match err {
            Error::IndivisibleAxis { axis, size, .. } => {
                assert_eq!(axis, 'y');
                assert_eq!(size, 15);
            }
            other => panic!("expected IndivisibleAxis, got {other:?}"),
        }
    }

    #[test]
    fn first_conv_block_parameter_arithmetic() {
        // conv1 = 1*16*27+16 = 448; conv2 = 16*16*27+16 = 6928; 2 BN = 64
        let op = LayerOp::ConvBlock(ConvBlockSpec { in_channels: 1, out_channels: 16 });
        assert_eq!(op_params(&op), 7_440);
    }

    #[test]
    fn tsol_delta_is_17_for_all_architectures() {
        for arch in Architecture::ALL {
            let delta = count(arch, TopologyKind::Tsol) - count(arch, TopologyKind::Baseline);
            assert_eq!(delta, 17, "{arch:?}");
        }
    }

    #[test]
    fn tsd_delta_rounds_to_2_35m_for_all_architectures() {
        for arch in Architecture::ALL {
            let delta = count(arch, TopologyKind::Tsd) - count(arch, TopologyKind::Baseline);
            assert_eq!(delta, 2_351_537, "{arch:?}");
            assert_eq!((delta as f64 / 1e6 * 100.0).round() / 100.0, 2.35);
        }
    }

    #[test]
    fn absolute_counts_match_reported_millions() {
        let unet = count(Architecture::Unet, TopologyKind::Baseline);
        assert_eq!(unet, 5_887_113);
        assert!((unet as f64 / 1e6 - 5.89).abs() < 0.03 * 5.89);
        let unetpp = count(Architecture::UnetPlusPlus, TopologyKind::Baseline);
        assert_eq!(unetpp, 6_869_673);
        assert!((unetpp as f64 / 1e6 - 6.87).abs() < 0.03 * 6.87);
        // Att-UNet gate internals are a design decision; the count is
        // reported, not pinned to a published value.
        let att = count(Architecture::AttentionUnet, TopologyKind::Baseline);
        assert!(att > unet);
    }

    #[test]
    fn graph_json_round_trip() {
        let g = build_graph(Architecture::UnetPlusPlus, TopologyKind::Tsd, &defaults()).unwrap();
        let back = LayerGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn unetpp_nested_depth3_shape() {
        let cfg = ArchitectureConfig {
            base_features: 4,
            depth: 3,
            max_features: 64,
            region_classes: 3,
            boundary_channels: 1,
        };
        let g = build_graph(Architecture::UnetPlusPlus, TopologyKind::Baseline, &cfg).unwrap();
        assert!(g.node("x0_1").is_some());
        assert!(g.node("x1_1").is_some());
        assert!(g.node("x0_2").is_some());
        let report = g.infer_shapes(VolumeShape::cube(8)).unwrap();
        assert_eq!(report.per_node["x0_2"].channels, 4);
        assert_eq!(report.bottleneck.shape, VolumeShape::cube(2));
    }

    #[test]
    fn attention_gates_only_on_region_arm_in_tsd() {
        let g = build_graph(Architecture::AttentionUnet, TopologyKind::Tsd, &defaults()).unwrap();
        let gates: Vec<&str> = g
            .nodes
            .iter()
            .filter(|n| matches!(n.op, LayerOp::AttentionGate(_)))
            .map(|n| n.name.as_str())
            .collect();
        assert_eq!(gates.len(), 4);
        assert!(gates.iter().all(|n| !n.starts_with('b')));
    }

    #[test]
    fn unetpp_tsd_boundary_arm_uses_backbone_skips_only() {
        let g = build_graph(Architecture::UnetPlusPlus, TopologyKind::Tsd, &defaults()).unwrap();
        let inputs = g.input_map().unwrap();
        for k in 1..5 {
            let cat = &inputs[&format!("bcat{k}")];
            assert_eq!(cat.len(), 2);
            assert_eq!(cat[1], format!("enc{k}"));
        }
    }
}
