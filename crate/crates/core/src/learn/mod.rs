//! Learning stack: dense networks, PPO pretraining in the nominal simulator
//! and residual TD3 against the gapped one.

pub mod nn;
pub mod noise;
pub mod ppo;
pub mod replay;
pub mod residual;
pub mod rollout;
pub mod td3;
pub mod threaded;

pub use nn::{Adam, DenseNet, OutputActivation};
pub use noise::{guided_noise, CorrelatedNoise};
pub use replay::{ReplayBuffer, Transition};
pub use td3::{Explorer, ResidualAgent, ResidualConfig, ResidualPolicy};
pub use threaded::train_residual_threaded;
pub use residual::{train_residual, CurvePoint, ResidualOutcome};
pub use ppo::{ppo_train, PpoConfig, PpoOutcome, SimPolicy};
pub use rollout::{closed_loop_rollout, hybrid_rollout, run_mode, RolloutMode};
