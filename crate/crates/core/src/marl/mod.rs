//! Population training: L-BRDiv and the fixed-weight BRDiv / LIPO baselines.

mod eval;
mod population;
mod rollout;
mod train;
mod update;

use thiserror::Error;

pub use eval::{matrix_action_profile, matrix_game_expected_returns, measure_return_matrix, teammate_argmax_actions};
pub use population::{constant_policy, Population};
pub use rollout::{argmax, choose_action, collect, sample_pair, RolloutBatch, Transition, Worker};
pub use train::{
    metrics_header, read_metrics_csv, train_baseline, train_lbrdiv, write_metrics_csv, Baseline, MetricsRow,
    TrainOutcome, TrainSchedule, Trainer,
};
pub use update::{
    critic_update, entropy, policy_update, surrogate_logit_grad, td_errors, Optimizers, PolicyStats, UpdateRule,
    UpdateSettings,
};

use crate::diversity::DiversityError;
use crate::envs::EnvError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("critic diverged: |V| = {value:.3e} exceeds {limit:.3e}")]
    Divergence { value: f64, limit: f64 },
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Diversity(#[from] DiversityError),
}
