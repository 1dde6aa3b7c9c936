//! Learned rescheduling policy: feature encoding, a small reverse-mode
//! autodiff tape, the two-stage actor-critic network, checkpoints, PPO
//! training and risk-seeking evaluation.

pub mod agent;
pub mod checkpoint;
pub mod features;
pub mod float;
pub mod network;
pub mod ppo;
pub mod risk;
pub mod tape;

use thiserror::Error;

pub use agent::{run_policy, PolicyRollout};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use features::{encode_features, FeatureTensor, NormStats};
pub use float::Float;
pub use network::{Decision, Masks, NetConfig, PolicyNet};
pub use ppo::{clipped_surrogate, compute_gae, ppo_update, train, train_from, PpoConfig, RolloutBuffer, TrainConfig, TrainData, TrainReport, Trainer};
pub use risk::{best_of_k, default_grid, threshold_probs, tune_quantiles, BestOfK};

/// Single-precision policy, the default for training and inference.
pub type Policy = PolicyNet<f32>;
/// Double-precision policy, used for gradient checks.
pub type Policy64 = PolicyNet<f64>;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no legal action")]
    NoAction,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Sim(#[from] vmr_core::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
