//! Policy training: co-occurrence shaping targets, PPO updates and the
//! episode-collecting training loop.

mod adam;
mod cooccurrence;
mod ppo;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use cooccurrence::{
    build_cooccurrence, shaping_counts, shaping_loss, shaping_target, CooccurrenceMatrix,
};
pub use ppo::{
    compute_advantages, max_ratio_deviation, normalize, ppo_update, Optimizers, PpoConfig, Step,
    TrajectoryBuffer, UpdateStats,
};
pub use train::{collect_rounds, train, train_with, training_split, EpochRecord, TrainOutput, TrainingLog};
