//! Forgetting prevention across regional tasks: a replay buffer sampled
//! from the previous region, Gaussian twins drawn around per-class
//! prototypes, and a Fisher-weighted pull towards the previous optimum.

mod replay;
mod smoothing;

pub use replay::{
    generate_prototypes, sample_replay_buffer, write_replay_csv, ClassPrototype, PrototypeSet, ReplayBuffer,
    DEFAULT_SIGMA_SCALE,
};
pub use smoothing::{compute_fisher, smoothing_loss, total_objective, FisherState};
