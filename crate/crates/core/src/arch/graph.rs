//! Layer graph, its builder, and the interpreters that execute it.

use super::attention;
use super::config::NetworkConfig;
use super::params::{ParamId, ParamKind, ParamStore};
use crate::autograd::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{
    self, batchnorm2d_with, conv2d, BatchNormMode, ConvSpec, Pointwise, PoolKind, RunningStats,
    Scalar, Tensor,
};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum NodeOp {
    Input,
    Conv {
        spec: ConvSpec,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    Activation(Pointwise),
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
    },
    Pool(PoolKind),
    /// Axis order over `N x C x H x W`.
    Permute([usize; 4]),
    PixelShuffle(usize),
    Concat,
    Add,
    MulBroadcast,
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: NodeOp,
    pub inputs: Vec<NodeId>,
}

impl Node {
    /// Names of the learnable tensors this node owns, as (weight-like, bias-like).
    pub fn param_names(&self) -> Option<(String, Option<String>)> {
        match &self.op {
            NodeOp::Conv { bias, .. } => Some((
                format!("{}.weight", self.name),
                bias.map(|_| format!("{}.bias", self.name)),
            )),
            NodeOp::BatchNorm { .. } => Some((
                format!("{}.gamma", self.name),
                Some(format!("{}.beta", self.name)),
            )),
            _ => None,
        }
    }
}

/// Appends nodes and allocates their parameters.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: ParamStore<f32>,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            params: ParamStore::new(),
        }
    }

    pub(crate) fn node_op(&self, id: NodeId) -> &NodeOp {
        &self.nodes[id].op
    }

    pub(crate) fn push_node(&mut self, name: impl Into<String>, op: NodeOp, inputs: Vec<NodeId>) -> NodeId {
        self.nodes.push(Node {
            name: name.into(),
            op,
            inputs,
        });
        self.nodes.len() - 1
    }

    pub fn input(&mut self) -> NodeId {
        self.push_node("input", NodeOp::Input, vec![])
    }

    pub fn conv(&mut self, name: &str, x: NodeId, spec: ConvSpec, bias: bool) -> Result<NodeId> {
        spec.validate()?;
        let weight = self.params.insert(
            format!("{name}.weight"),
            ParamKind::Weight,
            Tensor::zeros(&spec.weight_shape()),
        )?;
        let bias = if bias {
            Some(self.params.insert(
                format!("{name}.bias"),
                ParamKind::Bias,
                Tensor::zeros(&[spec.out_channels]),
            )?)
        } else {
            None
        };
        Ok(self.push_node(name, NodeOp::Conv { spec, weight, bias }, vec![x]))
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push_node(name, NodeOp::Activation(Pointwise::Relu), vec![x])
    }

    pub fn sigmoid(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push_node(name, NodeOp::Activation(Pointwise::Sigmoid), vec![x])
    }

    pub fn batchnorm(&mut self, name: &str, x: NodeId, channels: usize) -> Result<NodeId> {
        let gamma = self.params.insert(format!("{name}.gamma"), ParamKind::BnGamma, Tensor::ones(&[channels]))?;
        let beta = self.params.insert(format!("{name}.beta"), ParamKind::BnBeta, Tensor::zeros(&[channels]))?;
        let running_mean = self.params.insert(
            format!("{name}.running_mean"),
            ParamKind::RunningMean,
            Tensor::zeros(&[channels]),
        )?;
        let running_var = self.params.insert(
            format!("{name}.running_var"),
            ParamKind::RunningVar,
            Tensor::ones(&[channels]),
        )?;
        Ok(self.push_node(
            name,
            NodeOp::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            },
            vec![x],
        ))
    }

    pub fn pool(&mut self, name: &str, x: NodeId, kind: PoolKind) -> NodeId {
        self.push_node(name, NodeOp::Pool(kind), vec![x])
    }

    pub fn permute(&mut self, name: &str, x: NodeId, perm: [usize; 4]) -> NodeId {
        self.push_node(name, NodeOp::Permute(perm), vec![x])
    }

    pub fn pixel_shuffle(&mut self, name: &str, x: NodeId, s: usize) -> NodeId {
        self.push_node(name, NodeOp::PixelShuffle(s), vec![x])
    }

    pub fn concat(&mut self, name: &str, xs: Vec<NodeId>) -> NodeId {
        self.push_node(name, NodeOp::Concat, xs)
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        self.push_node(name, NodeOp::Add, vec![a, b])
    }

    pub fn mul(&mut self, name: &str, x: NodeId, w: NodeId) -> NodeId {
        self.push_node(name, NodeOp::MulBroadcast, vec![x, w])
    }

    pub fn mean(&mut self, name: &str, xs: Vec<NodeId>) -> NodeId {
        self.push_node(name, NodeOp::Mean, xs)
    }

    pub fn finish(self, config: NetworkConfig, input_channels: usize, output: NodeId) -> ModelGraph {
        ModelGraph {
            config,
            input_channels,
            nodes: self.nodes,
            output,
            params: self.params,
        }
    }
}

/// Instantiated layer graph with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub config: NetworkConfig,
    pub input_channels: usize,
    pub nodes: Vec<Node>,
    pub output: NodeId,
    pub params: ParamStore<f32>,
}

/// Appends one pyramidal dense attention block reading `x` (trunk width).
pub fn append_block(b: &mut GraphBuilder, prefix: &str, x: NodeId, cfg: &NetworkConfig) -> Result<NodeId> {
    let growth = cfg.growth;
    let trunk = cfg.trunk_channels;
    let reduced = b.conv(&format!("{prefix}.reduce"), x, ConvSpec::new(trunk, growth.c0, 1), true)?;
    let mut features = vec![reduced];
    for layer in growth.table()? {
        let p = format!("{prefix}.dense{}", layer.index);
        let input = if features.len() == 1 {
            features[0]
        } else {
            b.concat(&format!("{p}.concat"), features.clone())
        };
        let bottleneck = b.conv(
            &format!("{p}.bottleneck"),
            input,
            ConvSpec::new(layer.in_channels, layer.out_channels, 1),
            true,
        )?;
        let act = b.relu(&format!("{p}.bottleneck_relu"), bottleneck);
        let grouped = b.conv(
            &format!("{p}.group_conv"),
            act,
            ConvSpec::new(layer.out_channels, layer.out_channels, 3).with_groups(layer.groups),
            true,
        )?;
        features.push(b.relu(&format!("{p}.group_relu"), grouped));
    }
    let width = growth.concat_width();
    let cat = b.concat(&format!("{prefix}.concat"), features);
    let attended = attention::append(b, &format!("{prefix}.attention"), cat, width, cfg)?;
    let fused = b.conv(&format!("{prefix}.fusion"), attended, ConvSpec::new(width, trunk, 1), true)?;
    Ok(b.add(&format!("{prefix}.residual"), x, fused))
}

/// Graph of a single block whose input and output have trunk width.
pub fn build_pdab(cfg: &NetworkConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let mut b = GraphBuilder::new();
    let x = b.input();
    let out = append_block(&mut b, "block", x, cfg)?;
    let mut graph = b.finish(cfg.clone(), cfg.trunk_channels, out);
    graph.params.initialize(cfg.seed);
    Ok(graph)
}

/// Full network: head conv, blocks, body conv, sub-pixel stages, final conv.
pub fn build_network(cfg: &NetworkConfig) -> Result<ModelGraph> {
    let mut graph = assemble_network(cfg)?;
    graph.params.initialize(cfg.seed);
    Ok(graph)
}

/// Same topology as [`build_network`] with all-zero parameter buffers.
pub(crate) fn assemble_network(cfg: &NetworkConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let n = cfg.trunk_channels;
    let mut b = GraphBuilder::new();
    let x = b.input();
    let head = b.conv("head", x, ConvSpec::new(3, n, 3), true)?;
    let mut h = head;
    for d in 0..cfg.num_blocks {
        h = append_block(&mut b, &format!("blocks.{d}"), h, cfg)?;
    }
    let mut h = b.conv("body_tail", h, ConvSpec::new(n, n, 3), true)?;
    if cfg.global_skip {
        h = b.add("global_skip", head, h);
    }
    for (k, s) in cfg.upsample_stages()?.into_iter().enumerate() {
        let up = b.conv(&format!("upsample.{k}.conv"), h, ConvSpec::new(n, n * s * s, 3), true)?;
        h = b.pixel_shuffle(&format!("upsample.{k}.shuffle"), up, s);
    }
    let out = b.conv("tail", h, ConvSpec::new(n, 3, 3), true)?;
    Ok(b.finish(cfg.clone(), 3, out))
}

/// Options for recording a forward pass onto a tape.
#[derive(Clone, Copy, Debug)]
pub struct RecordOptions {
    /// Record parameters as differentiable leaves.
    pub param_grads: bool,
    pub bn_mode: BatchNormMode,
}

/// Output of [`ModelGraph::record`].
#[derive(Debug)]
pub struct Recorded<T: Scalar> {
    pub output: Var,
    /// Tape handle of every store entry, indexed by `ParamId`.
    pub param_vars: Vec<Var>,
    /// Batch statistics to fold into (running_mean, running_var).
    pub bn_updates: Vec<(ParamId, ParamId, BatchStats<T>)>,
}

fn annotate(err: Error, node: &Node) -> Error {
    match err {
        Error::NonFinite(op) => Error::NonFinite(format!("{op} at node '{}'", node.name)),
        Error::Shape { op, detail } => Error::Shape {
            op,
            detail: format!("{detail} (node '{}')", node.name),
        },
        other => other,
    }
}

fn running<T: Scalar>(params: &ParamStore<T>, mean: ParamId, var: ParamId) -> RunningStats<T> {
    RunningStats {
        mean: params.get(mean).data().to_vec(),
        var: params.get(var).data().to_vec(),
    }
}

impl ModelGraph {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    /// Per-node `(C, H, W)` for an input of spatial size `h x w`.
    pub fn shapes(&self, h: usize, w: usize) -> Result<Vec<[usize; 3]>> {
        let mut shapes: Vec<[usize; 3]> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<[usize; 3]> = node.inputs.iter().map(|&i| shapes[i]).collect();
            let err = |detail: String| Error::Shape {
                op: "shapes",
                detail: format!("{detail} (node '{}')", node.name),
            };
            let s = match &node.op {
                NodeOp::Input => [self.input_channels, h, w],
                NodeOp::Conv { spec, .. } => {
                    let [c, ih, iw] = ins[0];
                    if c != spec.in_channels {
                        return Err(err(format!("{c} channels into {spec:?}")));
                    }
                    [spec.out_channels, spec.output_extent(ih)?, spec.output_extent(iw)?]
                }
                NodeOp::Activation(_) | NodeOp::BatchNorm { .. } => ins[0],
                NodeOp::Pool(PoolKind::Gap | PoolKind::Gmp) => [ins[0][0], 1, 1],
                NodeOp::Pool(PoolKind::ChannelPool) => [2, ins[0][1], ins[0][2]],
                NodeOp::Permute(p) => {
                    let full = [1, ins[0][0], ins[0][1], ins[0][2]];
                    if p[0] != 0 {
                        return Err(err("batch axis must stay first".into()));
                    }
                    [full[p[1]], full[p[2]], full[p[3]]]
                }
                NodeOp::PixelShuffle(s) => {
                    let [c, ih, iw] = ins[0];
                    if c % (s * s) != 0 {
                        return Err(err(format!("{c} channels not divisible by {}", s * s)));
                    }
                    [c / (s * s), ih * s, iw * s]
                }
                NodeOp::Concat => {
                    let [_, ih, iw] = ins[0];
                    if ins.iter().any(|s| s[1] != ih || s[2] != iw) {
                        return Err(err("spatial mismatch in concat".into()));
                    }
                    [ins.iter().map(|s| s[0]).sum(), ih, iw]
                }
                NodeOp::Add | NodeOp::Mean => {
                    if ins.iter().any(|s| *s != ins[0]) {
                        return Err(err("operand shapes differ".into()));
                    }
                    ins[0]
                }
                NodeOp::MulBroadcast => {
                    let [c, ih, iw] = ins[0];
                    if ins[1] != [c, 1, 1] && ins[1] != [1, ih, iw] {
                        return Err(err(format!("cannot scale {:?} by {:?}", ins[0], ins[1])));
                    }
                    ins[0]
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    fn last_uses(&self) -> Vec<usize> {
        let mut last = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for &j in &node.inputs {
                last[j] = i;
            }
        }
        last[self.output] = usize::MAX;
        last
    }

    /// Inference-mode forward with an explicit parameter store, releasing
    /// each activation after its last consumer.
    pub fn run<T: Scalar>(&self, params: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let rank3 = input.rank() == 3;
        let input = input.clone().batched()?;
        let last = self.last_uses();
        let mut values: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            let arg = |k: usize| values[node.inputs[k]].as_ref().expect("operand computed");
            let out = match &node.op {
                NodeOp::Input => Ok(input.clone()),
                NodeOp::Conv { spec, weight, bias } => {
                    conv2d(arg(0), spec, params.get(*weight), bias.map(|b| params.get(b)))
                }
                NodeOp::Activation(kind) => Ok(tensor::pointwise(arg(0), *kind)),
                NodeOp::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => batchnorm2d_with(
                    arg(0),
                    params.get(*gamma),
                    params.get(*beta),
                    self.config.bn_eps,
                    Some(&running(params, *running_mean, *running_var)),
                )
                .map(|f| f.output),
                NodeOp::Pool(kind) => tensor::reduce_pool(arg(0), *kind),
                NodeOp::Permute(p) => tensor::permute(arg(0), p),
                NodeOp::PixelShuffle(s) => tensor::pixel_shuffle(arg(0), *s),
                NodeOp::Concat => {
                    let xs: Vec<&Tensor<T>> = (0..node.inputs.len()).map(arg).collect();
                    tensor::concat_channels(&xs)
                }
                NodeOp::Add => tensor::add(arg(0), arg(1)),
                NodeOp::MulBroadcast => tensor::mul_broadcast(arg(0), arg(1)),
                NodeOp::Mean => {
                    let xs: Vec<&Tensor<T>> = (0..node.inputs.len()).map(arg).collect();
                    tensor::mean_of(&xs)
                }
            }
            .map_err(|e| annotate(e, node))?;
            if !out.is_finite() {
                return Err(Error::NonFinite(format!("node '{}'", node.name)));
            }
            values[i] = Some(out);
            for &j in &node.inputs {
                if last[j] == i {
                    values[j] = None;
                }
            }
        }
        let out = values[self.output].take().expect("output computed");
        if rank3 {
            let [_, c, h, w] = out.dims4()?;
            out.reshape(&[c, h, w])
        } else {
            Ok(out)
        }
    }

    /// Inference forward with the model's own `f32` parameters.
    pub fn forward(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.run(&self.params, input)
    }

    /// Records the forward pass on `tape` for differentiation.
    pub fn record<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        input: Var,
        opts: RecordOptions,
    ) -> Result<Recorded<T>> {
        let param_vars: Vec<Var> = params
            .entries()
            .iter()
            .map(|e| {
                if opts.param_grads && e.kind.trainable() {
                    tape.param(e.tensor.clone())
                } else {
                    tape.constant(e.tensor.clone())
                }
            })
            .collect();
        self.record_with(params, param_vars, tape, input, opts.bn_mode)
    }

    /// Like [`ModelGraph::record`] but reads parameters from caller-made
    /// tape handles, one per store entry. `params` still supplies the
    /// running statistics for inference-mode batch norm.
    pub fn record_with<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        param_vars: Vec<Var>,
        tape: &mut Tape<T>,
        input: Var,
        bn_mode: BatchNormMode,
    ) -> Result<Recorded<T>> {
        if param_vars.len() != params.len() {
            return Err(Error::shape(
                "record",
                format!("{} parameter handles for {} entries", param_vars.len(), params.len()),
            ));
        }
        let mut vars: Vec<Var> = Vec::with_capacity(self.nodes.len());
        let mut bn_updates = Vec::new();
        for node in &self.nodes {
            let a = |k: usize| vars[node.inputs[k]];
            let v = match &node.op {
                NodeOp::Input => Ok(input),
                NodeOp::Conv { spec, weight, bias } => {
                    tape.conv2d(a(0), param_vars[weight.0], bias.map(|b| param_vars[b.0]), *spec)
                }
                NodeOp::Activation(kind) => tape.pointwise(a(0), *kind),
                NodeOp::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let stats = match bn_mode {
                        BatchNormMode::Training => None,
                        BatchNormMode::Inference => Some(running(params, *running_mean, *running_var)),
                    };
                    tape.batchnorm(
                        a(0),
                        param_vars[gamma.0],
                        param_vars[beta.0],
                        self.config.bn_eps,
                        stats.as_ref(),
                    )
                    .map(|(v, batch)| {
                        if let Some(batch) = batch {
                            bn_updates.push((*running_mean, *running_var, batch));
                        }
                        v
                    })
                }
                NodeOp::Pool(kind) => tape.pool(a(0), *kind),
                NodeOp::Permute(p) => tape.permute(a(0), p),
                NodeOp::PixelShuffle(s) => tape.pixel_shuffle(a(0), *s),
                NodeOp::Concat => {
                    let xs: Vec<Var> = (0..node.inputs.len()).map(a).collect();
                    tape.concat(&xs)
                }
                NodeOp::Add => tape.add(a(0), a(1)),
                NodeOp::MulBroadcast => tape.mul_broadcast(a(0), a(1)),
                NodeOp::Mean => {
                    let xs: Vec<Var> = (0..node.inputs.len()).map(a).collect();
                    tape.mean(&xs)
                }
            }
            .map_err(|e| annotate(e, node))?;
            vars.push(v);
        }
        Ok(Recorded {
            output: vars[self.output],
            param_vars,
            bn_updates,
        })
    }

    /// Folds recorded batch statistics into the running buffers.
    pub fn apply_bn_updates<T: Scalar>(&mut self, updates: &[(ParamId, ParamId, BatchStats<T>)]) {
        let m = self.config.bn_momentum;
        for (mean_id, var_id, stats) in updates {
            for (dst, src) in [(mean_id, &stats.mean), (var_id, &stats.var)] {
                let t = self.params.get_mut(*dst);
                for (r, &b) in t.data_mut().iter_mut().zip(src.iter()) {
                    *r = ((1.0 - m) * *r as f64 + m * b.as_f64()) as f32;
                }
            }
        }
    }

    /// Re-initializes all parameters from `seed`.
    pub fn init_weights(&mut self, seed: u64) {
        self.config.seed = seed;
        self.params.initialize(seed);
    }

    /// Learnable parameter count by enumeration of the store.
    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }
}
