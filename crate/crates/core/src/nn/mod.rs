//! Forward and backward kernels for the layers the network is built from.

mod activation;
mod attention;
mod conv;
mod shuffle;

pub use activation::{sigmoid, silu, Activation};
pub use attention::{
    channel_attention, channel_attention_backward, AttentionCache, AttentionGrads, AttentionParams,
};
pub use conv::{conv2d, conv2d_backward, ConvShape};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
