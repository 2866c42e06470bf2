//! A looped attention model whose hand-set weights run the two-stage
//! gradient recursion in its forward pass.
//!
//! [`layout`] defines the prompt embedding, [`forward`] the attention and
//! MLP passes, and [`construct`] the explicit weights, the looped model and
//! the finite-difference coefficient extraction.

mod construct;
mod forward;
mod layout;

pub use construct::{
    build_block, build_readout, build_ridge_block, compute_mask_bounds, extract_coefficients,
    looped_forward, looped_forward_trace, mask_bounds_from_states, params_csv, BlockParams,
    LoopedModel,
};
pub use forward::{
    attention_forward, mlp_forward, AttentionHead, AttentionLayerParams, MlpLayerParams,
};
pub use layout::{embed, extract_state, read_y, EmbeddedPrompt, Layout};
