//! Network architecture: growth schedule, configuration, layer graph,
//! attention variants and checkpoints.

mod attention;
mod checkpoint;
mod config;
mod graph;
mod params;
mod schedule;

pub use attention::{
    joint_attention_forward, joint_attention_fragment, CBAM_KERNEL, SPATIAL_DILATION,
    SWAP_CHANNEL_HEIGHT, SWAP_CHANNEL_WIDTH,
};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{AttentionKind, NetworkConfig, MODEL_KEYS};
pub use graph::{
    append_block, build_network, build_pdab, GraphBuilder, ModelGraph, Node, NodeId, NodeOp,
    RecordOptions, Recorded,
};
pub(crate) use graph::assemble_network;
pub use params::{ParamEntry, ParamId, ParamKind, ParamStore};
pub use schedule::{
    fixed_input_channels, layer_groups, pyramid_input_channels, pyramid_output_channels,
    DenseLayer, GrowthSchedule,
};
