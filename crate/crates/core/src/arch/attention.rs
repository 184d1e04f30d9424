//! Attention modules applied to a block's dense concatenation.
//!
//! Joint attention averages four recalibrated copies of its input:
//!
//! * channel: GAP, 1x1 squeeze to `C/r`, ReLU, 1x1 excite to `C`, sigmoid;
//! * spatial: channel pool to two maps, 3x3 conv with dilation 3, batch
//!   norm, sigmoid;
//! * channel/height and channel/width: the spatial recipe applied after
//!   swapping the channel axis with H (resp. W), then swapped back.

use super::config::{AttentionKind, NetworkConfig};
use super::graph::{GraphBuilder, ModelGraph, NodeId, NodeOp, RecordOptions};
use super::params::ParamStore;
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, ConvSpec, PoolKind, Scalar, Tensor};

/// Axis orders (over `N x C x H x W`) of the cross-dimension branches; each
/// is its own inverse.
pub const SWAP_CHANNEL_HEIGHT: [usize; 4] = [0, 2, 1, 3];
pub const SWAP_CHANNEL_WIDTH: [usize; 4] = [0, 3, 2, 1];

/// Dilation of the spatial-arm convolutions of joint attention.
pub const SPATIAL_DILATION: usize = 3;
/// Kernel of the CBAM spatial convolution.
pub const CBAM_KERNEL: usize = 7;

pub(crate) fn append(
    b: &mut GraphBuilder,
    prefix: &str,
    x: NodeId,
    channels: usize,
    cfg: &NetworkConfig,
) -> Result<NodeId> {
    match cfg.attention {
        AttentionKind::None => Ok(x),
        AttentionKind::Se => {
            let w = channel_weights(b, &format!("{prefix}.channel"), x, channels, cfg.reduction)?;
            Ok(b.mul(&format!("{prefix}.channel.scale"), x, w))
        }
        AttentionKind::Cbam => cbam(b, prefix, x, channels, cfg.reduction),
        AttentionKind::Joint => joint(b, prefix, x, channels, cfg.reduction),
    }
}

fn check_reduction(channels: usize, r: usize) -> Result<usize> {
    if r == 0 || channels % r != 0 {
        return Err(Error::Divisibility {
            what: "attention channels".into(),
            value: channels,
            divisor: r,
        });
    }
    Ok(channels / r)
}

/// SE-style excitation: `sigmoid(W2 relu(W1 gap(x)))`, bias-free.
fn channel_weights(b: &mut GraphBuilder, p: &str, x: NodeId, c: usize, r: usize) -> Result<NodeId> {
    let hidden = check_reduction(c, r)?;
    let pooled = b.pool(&format!("{p}.gap"), x, PoolKind::Gap);
    let down = b.conv(&format!("{p}.down"), pooled, ConvSpec::new(c, hidden, 1), false)?;
    let act = b.relu(&format!("{p}.relu"), down);
    let up = b.conv(&format!("{p}.up"), act, ConvSpec::new(hidden, c, 1), false)?;
    Ok(b.sigmoid(&format!("{p}.sigmoid"), up))
}

/// Channel pool, dilated 3x3 conv (no bias), batch norm, sigmoid, scale.
fn spatial_arm(b: &mut GraphBuilder, p: &str, x: NodeId) -> Result<NodeId> {
    let pooled = b.pool(&format!("{p}.pool"), x, PoolKind::ChannelPool);
    let conv = b.conv(
        &format!("{p}.conv"),
        pooled,
        ConvSpec::new(2, 1, 3).with_dilation(SPATIAL_DILATION),
        false,
    )?;
    let bn = b.batchnorm(&format!("{p}.bn"), conv, 1)?;
    let w = b.sigmoid(&format!("{p}.sigmoid"), bn);
    Ok(b.mul(&format!("{p}.scale"), x, w))
}

fn joint(b: &mut GraphBuilder, prefix: &str, x: NodeId, c: usize, r: usize) -> Result<NodeId> {
    let cw = channel_weights(b, &format!("{prefix}.channel"), x, c, r)?;
    let channel = b.mul(&format!("{prefix}.channel.scale"), x, cw);

    let spatial = spatial_arm(b, &format!("{prefix}.spatial_hw"), x)?;

    let mut crossed = Vec::with_capacity(2);
    for (name, perm) in [("cross_ch", SWAP_CHANNEL_HEIGHT), ("cross_cw", SWAP_CHANNEL_WIDTH)] {
        let p = format!("{prefix}.{name}");
        let rotated = b.permute(&format!("{p}.rotate"), x, perm);
        let refined = spatial_arm(b, &p, rotated)?;
        crossed.push(b.permute(&format!("{p}.restore"), refined, perm));
    }

    Ok(b.mean(
        &format!("{prefix}.average"),
        vec![channel, spatial, crossed[0], crossed[1]],
    ))
}

/// Channel attention from average and max statistics through a shared MLP,
/// followed by spatial attention from a 7x7 conv over the channel pool.
fn cbam(b: &mut GraphBuilder, prefix: &str, x: NodeId, c: usize, r: usize) -> Result<NodeId> {
    let hidden = check_reduction(c, r)?;
    let p = format!("{prefix}.channel");
    let avg = b.pool(&format!("{p}.gap"), x, PoolKind::Gap);
    let max = b.pool(&format!("{p}.gmp"), x, PoolKind::Gmp);
    let down_avg = b.conv(&format!("{p}.down"), avg, ConvSpec::new(c, hidden, 1), false)?;
    let down_max = b.reuse_conv(&format!("{p}.down_max"), max, down_avg);
    let relu_avg = b.relu(&format!("{p}.relu"), down_avg);
    let relu_max = b.relu(&format!("{p}.relu_max"), down_max);
    let up_avg = b.conv(&format!("{p}.up"), relu_avg, ConvSpec::new(hidden, c, 1), false)?;
    let up_max = b.reuse_conv(&format!("{p}.up_max"), relu_max, up_avg);
    let logits = b.add(&format!("{p}.sum"), up_avg, up_max);
    let cw = b.sigmoid(&format!("{p}.sigmoid"), logits);
    let refined = b.mul(&format!("{p}.scale"), x, cw);

    let p = format!("{prefix}.spatial");
    let pooled = b.pool(&format!("{p}.pool"), refined, PoolKind::ChannelPool);
    let conv = b.conv(&format!("{p}.conv"), pooled, ConvSpec::new(2, 1, CBAM_KERNEL), true)?;
    let sw = b.sigmoid(&format!("{p}.sigmoid"), conv);
    Ok(b.mul(&format!("{p}.scale"), refined, sw))
}

impl GraphBuilder {
    /// Adds a conv node sharing the parameters of an existing conv node.
    pub fn reuse_conv(&mut self, name: &str, x: NodeId, from: NodeId) -> NodeId {
        let op = self.node_op(from).clone();
        assert!(matches!(op, NodeOp::Conv { .. }), "reuse_conv needs a conv node");
        self.push_node(name, op, vec![x])
    }
}

/// Graph holding only a joint attention module over `channels` inputs.
/// Parameters are named `attention.*`.
pub fn joint_attention_fragment(channels: usize, r: usize) -> Result<ModelGraph> {
    let cfg = NetworkConfig {
        attention: AttentionKind::Joint,
        reduction: r,
        ..NetworkConfig::default()
    };
    let mut b = GraphBuilder::new();
    let x = b.input();
    let out = joint(&mut b, "attention", x, channels, r)?;
    let mut g = b.finish(cfg, channels, out);
    g.params.initialize(0);
    Ok(g)
}

/// Applies joint attention to `x` (`[N,] C x H x W`) with parameters laid
/// out as in [`joint_attention_fragment`].
pub fn joint_attention_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &ParamStore<T>,
    r: usize,
    bn_mode: BatchNormMode,
) -> Result<Tensor<T>> {
    let [_, c, _, _] = x.dims4()?;
    let frag = joint_attention_fragment(c, r)?;
    if params.len() != frag.params.len() {
        return Err(Error::shape("joint_attention", "parameter store layout"));
    }
    let rank3 = x.rank() == 3;
    let mut tape = Tape::new();
    let input = tape.constant(x.clone().batched()?);
    let rec = frag.record(
        params,
        &mut tape,
        input,
        RecordOptions {
            param_grads: false,
            bn_mode,
        },
    )?;
    let out = tape.value(rec.output).clone();
    if rank3 {
        out.reshape(x.shape())
    } else {
        Ok(out)
    }
}
