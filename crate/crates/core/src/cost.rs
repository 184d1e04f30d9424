//! Parameter and FLOP accounting.
//!
//! FLOPs follow the multiply-accumulate convention: one MAC is one FLOP.
//! Auxiliary work adds one op per bias add and one per element read by a
//! global (spatial) pooling node. Channel pooling and the remaining
//! elementwise ops (activations, scaling, averaging, normalization) are not
//! counted.

use std::fmt::Write as _;

use crate::arch::{assemble_network, AttentionKind, ModelGraph, NetworkConfig, NodeOp};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, PoolKind};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub node: String,
    pub params_w: usize,
    pub params_b: usize,
    pub macs: u64,
    pub aux: u64,
    /// Output spatial extent `(h, w)`.
    pub resolution: (usize, usize),
    /// Store names of the tensors counted in `params_w` and `params_b`.
    pub owned: Vec<String>,
}

impl LayerCost {
    pub fn params(&self) -> usize {
        self.params_w + self.params_b
    }

    pub fn flops(&self) -> u64 {
        self.macs + self.aux
    }
}

/// Cost of one stride-1 convolution producing an `out_h x out_w` map.
pub fn conv_cost(spec: &ConvSpec, out_h: usize, out_w: usize) -> LayerCost {
    let weights = spec.weight_count();
    let positions = (out_h * out_w) as u64;
    LayerCost {
        node: String::new(),
        params_w: weights,
        params_b: spec.out_channels,
        macs: weights as u64 * positions,
        aux: spec.out_channels as u64 * positions,
        resolution: (out_h, out_w),
        owned: Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub config: NetworkConfig,
    pub hr_size: usize,
    pub lr_size: usize,
    pub layers: Vec<LayerCost>,
    pub total_params: usize,
    pub total_macs: u64,
    pub total_aux: u64,
}

impl CostReport {
    pub fn total_flops(&self) -> u64 {
        self.total_macs + self.total_aux
    }

    pub fn gflops(&self) -> f64 {
        self.total_flops() as f64 / 1e9
    }

    /// Parameter total rounded to the nearest thousand.
    pub fn params_k(&self) -> usize {
        (self.total_params + 500) / 1000
    }

    pub fn summary(&self) -> String {
        format!("params: {}K, flops: ~{:.2} G", self.params_k(), self.gflops())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,params_w,params_b,macs,resolution\n");
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{},{},{},{},{}x{}",
                l.node, l.params_w, l.params_b, l.macs, l.resolution.0, l.resolution.1
            );
        }
        out
    }

    /// Fixed-width table of the layers that own parameters or do work.
    pub fn to_table(&self) -> String {
        let width = self.layers.iter().map(|l| l.node.len()).max().unwrap_or(4).max(4);
        let mut out = format!(
            "{:<width$}  {:>9}  {:>7}  {:>14}  {:>9}\n",
            "node", "params_w", "params_b", "macs", "res"
        );
        for l in self.layers.iter().filter(|l| l.params() > 0 || l.flops() > 0) {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>7}  {:>14}  {:>9}",
                l.node,
                l.params_w,
                l.params_b,
                l.macs,
                format!("{}x{}", l.resolution.0, l.resolution.1)
            );
        }
        let _ = writeln!(
            out,
            "total: {} params, {} MACs, {} aux ops (hr {}x{}, lr {}x{})",
            self.total_params,
            self.total_macs,
            self.total_aux,
            self.hr_size,
            self.hr_size,
            self.lr_size,
            self.lr_size
        );
        out
    }
}

/// Walks `graph` symbolically for an `h x w` input.
pub fn graph_cost(graph: &ModelGraph, h: usize, w: usize) -> Result<Vec<LayerCost>> {
    let shapes = graph.shapes(h, w)?;
    let mut layers = Vec::with_capacity(graph.nodes.len());
    for (i, node) in graph.nodes.iter().enumerate() {
        let [c, oh, ow] = shapes[i];
        let mut cost = LayerCost {
            node: node.name.clone(),
            params_w: 0,
            params_b: 0,
            macs: 0,
            aux: 0,
            resolution: (oh, ow),
            owned: Vec::new(),
        };
        match &node.op {
            NodeOp::Conv { spec, weight, bias } => {
                let mut conv = conv_cost(spec, oh, ow);
                if bias.is_none() {
                    conv.params_b = 0;
                    conv.aux = 0;
                }
                cost.macs = conv.macs;
                cost.aux = conv.aux;
                // A conv reusing another node's tensors owns nothing.
                let owner = graph.params.entry(*weight).name == format!("{}.weight", node.name);
                if owner {
                    cost.params_w = conv.params_w;
                    cost.params_b = conv.params_b;
                    cost.owned.push(format!("{}.weight", node.name));
                    if bias.is_some() {
                        cost.owned.push(format!("{}.bias", node.name));
                    }
                }
            }
            NodeOp::BatchNorm { .. } => {
                cost.params_w = c;
                cost.params_b = c;
                cost.owned.push(format!("{}.gamma", node.name));
                cost.owned.push(format!("{}.beta", node.name));
            }
            NodeOp::Pool(PoolKind::Gap | PoolKind::Gmp) => {
                let [ic, ih, iw] = shapes[node.inputs[0]];
                cost.aux = (ic * ih * iw) as u64;
            }
            _ => {}
        }
        layers.push(cost);
    }
    Ok(layers)
}

/// Cost of the network described by `cfg`, evaluated for an `hr_size` square
/// output.
pub fn network_cost(cfg: &NetworkConfig, hr_size: usize) -> Result<CostReport> {
    cfg.validate()?;
    if hr_size == 0 || hr_size % cfg.scale != 0 {
        return Err(Error::Divisibility {
            what: "hr_size".into(),
            value: hr_size,
            divisor: cfg.scale,
        });
    }
    let lr = hr_size / cfg.scale;
    let graph = assemble_network(cfg)?;
    let layers = graph_cost(&graph, lr, lr)?;
    Ok(CostReport {
        config: cfg.clone(),
        hr_size,
        lr_size: lr,
        total_params: layers.iter().map(LayerCost::params).sum(),
        total_macs: layers.iter().map(|l| l.macs).sum(),
        total_aux: layers.iter().map(|l| l.aux).sum(),
        layers,
    })
}

fn conv_params(cin: usize, cout: usize, k: usize, groups: usize, bias: bool) -> usize {
    cout * (cin / groups) * k * k + if bias { cout } else { 0 }
}

/// Closed-form learnable parameter count, computed without building a graph.
pub fn analytic_param_count(cfg: &NetworkConfig) -> Result<usize> {
    cfg.validate()?;
    let n = cfg.trunk_channels;
    let gs = cfg.growth;
    let width = gs.concat_width();
    let mut block = conv_params(n, gs.c0, 1, 1, true) + conv_params(width, n, 1, 1, true);
    for l in gs.table()? {
        block += conv_params(l.in_channels, l.out_channels, 1, 1, true);
        block += conv_params(l.out_channels, l.out_channels, 3, l.groups, true);
    }
    let mlp = 2 * width * (width / cfg.reduction);
    block += match cfg.attention {
        AttentionKind::None => 0,
        AttentionKind::Se => mlp,
        // Three spatial arms: 2 -> 1 3x3 conv without bias plus BN affine.
        AttentionKind::Joint => mlp + 3 * (conv_params(2, 1, 3, 1, false) + 2),
        AttentionKind::Cbam => mlp + conv_params(2, 1, 7, 1, true),
    };
    let mut total = conv_params(3, n, 3, 1, true) + cfg.num_blocks * block + conv_params(n, n, 3, 1, true);
    for s in cfg.upsample_stages()? {
        total += conv_params(n, n * s * s, 3, 1, true);
    }
    total += conv_params(n, 3, 3, 1, true);
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountMismatch {
    pub node: String,
    pub analytic: usize,
    pub enumerated: usize,
}

/// Outcome of comparing a cost report against an instantiated model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountVerdict {
    pub analytic_total: usize,
    pub enumerated_total: usize,
    /// Per-node disagreements in graph order.
    pub mismatches: Vec<CountMismatch>,
    /// Trainable store entries not owned by any report node.
    pub unowned: Vec<String>,
}

impl CountVerdict {
    pub fn passed(&self) -> bool {
        self.analytic_total == self.enumerated_total && self.mismatches.is_empty() && self.unowned.is_empty()
    }

    pub fn first_divergent(&self) -> Option<&CountMismatch> {
        self.mismatches.first()
    }
}

/// Checks the report's per-node and total counts against the model's store.
pub fn verify_counts(model: &ModelGraph, report: &CostReport) -> CountVerdict {
    let mut mismatches = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for l in &report.layers {
        let enumerated: usize = l
            .owned
            .iter()
            .filter_map(|name| {
                seen.insert(name.as_str());
                model.params.by_name(name).map(|t| t.len())
            })
            .sum();
        if enumerated != l.params() {
            mismatches.push(CountMismatch {
                node: l.node.clone(),
                analytic: l.params(),
                enumerated,
            });
        }
    }
    let unowned = model
        .params
        .entries()
        .iter()
        .filter(|e| e.kind.trainable() && !seen.contains(e.name.as_str()))
        .map(|e| e.name.clone())
        .collect();
    CountVerdict {
        analytic_total: report.total_params,
        enumerated_total: model.param_count(),
        mismatches,
        unowned,
    }
}
