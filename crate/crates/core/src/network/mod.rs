//! Forward-only generator and discriminator networks.

pub mod attention;
pub mod check;
pub mod config;
pub mod ops;
pub mod sdm;
pub mod tunet;
pub mod weights;

pub use attention::{attention_weights, cosine_logits, dot_product_attention, scaled_cosine_attention, AttentionParams, TAU_FLOOR};
pub use check::{run_net_check, CheckOutcome, NetCheckReport};
pub use config::{NetworkConfig, SdmConfig, TunetConfig};
pub use sdm::{init_sdm_weights, sdm_forward, sdm_forward_batch, sdm_param_specs};
pub use tunet::{hafm_fuse, init_tunet_weights, patch_embed, tunet_forward, tunet_forward_traced, tunet_param_specs, window_tensor, TunetOutput};
pub use weights::{Init, ParamSpec, WeightStore};
