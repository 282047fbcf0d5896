//! Two-level attention over meta-paths with a sigmoid fraud classifier.
//!
//! Transaction features are projected into a shared hidden space, each
//! meta-path aggregates neighbour projections with multi-head attention,
//! the per-path embeddings are fused with semantic attention, and a dense
//! sigmoid layer scores each transaction. Gradients are derived by hand.

mod backward;
mod forward;
mod params;

pub use backward::{backward, compute_gradients, per_sample_gradients, Gradients, LossTerm};
pub use forward::{
    classify, cross_entropy_loss, forward, node_level_attention, project_features, semantic_attention, ForwardTrace,
    HeadAttention, HeadScores, PathTrace, SemanticAttention, PROB_CLAMP,
};
pub use params::{Activation, Hyperparams, ModelParams, Tensor};
