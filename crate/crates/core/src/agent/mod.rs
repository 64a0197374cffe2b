//! PPO irrigation agent: policy network, clipped-surrogate loss, optimiser,
//! training loop and snapshot persistence.

mod adam;
mod gradcheck;
mod persist;
mod policy;
mod ppo;
mod train;

pub use adam::{Adam, AdamParams};
pub use gradcheck::{gradient_check, max_relative_error};
pub use persist::{
    config_hash, load_snapshot, read_curve_csv, read_snapshot, save_snapshot, write_curve_csv, write_snapshot,
    FORMAT_VERSION,
};
pub use policy::{squash, squashed_log_density, unsquash, ActionSample, PolicySnapshot, LOG_STD_MAX, LOG_STD_MIN};
pub use ppo::{
    clipped_surrogate, importance_ratio, step_baseline_advantages, AdvantageMode, normalized_advantages, ppo_loss, ppo_loss_and_grad, returns_to_go,
    surrogate_loss, surrogate_loss_and_grad, RolloutBatch, RolloutStep,
};
pub use train::{
    collect_episode, is_converged, train, train_with, windowed_change, CurvePoint, EnvFactory, SeasonPool,
    TrainOutcome, TrainerConfig,
};
