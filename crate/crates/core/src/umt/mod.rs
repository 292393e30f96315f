//! The material translator: a frozen encoder, AdaIN at the deepest tap, and
//! a trainable decoder driven by content and style feature losses.

pub(crate) mod nets;
mod norm;
mod train;

pub use nets::{
    patch_tensor, patches_tensor, Decoder, Encoder, EncoderTaps, TAP_CHANNELS, TAP_SIDES,
};
pub use norm::{
    adain, adain_var, channel_stats, content_loss, content_loss_var, instance_norm,
    instance_norm_var, style_loss, style_loss_var, ChannelStats, InstanceNormAffine,
};
pub use train::{
    pretrain_encoder, synthesis_plan, synthesize_corpus, train_generator, DecoderInit, GeneratorLogEntry,
    PretrainConfig, PretrainOutcome, Provenance, UmtConfig, UmtGenerator,
};
