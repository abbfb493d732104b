//! Minimal CNN toolkit with hand-written backward passes.
//!
//! Every layer exposes an inference `forward`, a `forward_train` that
//! returns a cache, and a `backward` that accumulates parameter gradients.

pub mod adam;
pub mod conv;
pub mod layers;
pub mod param;
pub mod sft;
pub mod tensor;

pub use adam::Adam;
pub use conv::{Conv2d, ConvCache};
pub use layers::{
    global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward, pixel_shuffle, pixel_unshuffle,
    stretch, stretch_backward, Linear, LinearCache, LEAKY_SLOPE,
};
pub use param::{Module, Param};
pub use sft::{SftCache, SftLayer};
pub use tensor::{concat_channels, split_channels, Tensor};
