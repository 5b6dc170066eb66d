//! The fusion network: two tabular encoders, a cross-attention stack in which
//! survey tokens attend over external tokens, a learned elementwise gate that
//! interpolates between the survey embedding and the attended one, and a
//! sigmoid head with one output per response key.
//!
//! [`Variant::SurveyOnly`] and [`Variant::ExternalOnly`] keep one encoder and
//! the head, which makes them the natural ablation baselines.

mod config;
mod network;
mod params;

pub use config::{LanternConfig, Variant};
pub use network::{
    cross_attention_block, cross_attention_layer, encode, forward_on_tape, gated_fusion,
    masked_bce_loss, multi_head_attention, output_head, BlockHooks, Branch, ForwardOptions,
    ForwardOutput, Fusion, Hooks, Lantern, ShapeTrace,
};
pub use params::{param_specs, BoundParams, Init, LanternParams, ParamSpec};
