//! Execution modes for a simulation-trained policy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ppo::{policy_rollout, SimPolicy};
use crate::env::{execute_trajectory, GapModel, PianoEnv, RolloutLog};
use crate::error::{Error, Result};
use crate::hand::{JointState, JointTrajectory};

/// Proprioception entries at the head of a flattened observation.
const PROPRIO: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RolloutMode {
    OpenLoop,
    ClosedLoop,
    Hybrid,
}

impl RolloutMode {
    pub const ALL: [RolloutMode; 3] = [RolloutMode::OpenLoop, RolloutMode::ClosedLoop, RolloutMode::Hybrid];
}

impl fmt::Display for RolloutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RolloutMode::OpenLoop => "open-loop",
            RolloutMode::ClosedLoop => "closed-loop",
            RolloutMode::Hybrid => "hybrid",
        })
    }
}

impl FromStr for RolloutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RolloutMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown rollout mode '{s}'; expected open-loop, closed-loop or hybrid")))
    }
}

/// Policy acting on the gapped env's own observations.
pub fn closed_loop_rollout(env: &mut PianoEnv, policy: &SimPolicy, seed: u64) -> Result<RolloutLog> {
    Ok(policy_rollout(env, policy, seed)?.0)
}

/// Policy acting on the gapped env's observations with proprioception taken
/// from a nominal copy stepped in lockstep with the same commands.
pub fn hybrid_rollout(env: &mut PianoEnv, policy: &SimPolicy, seed: u64) -> Result<RolloutLog> {
    let mut nominal = env.clone();
    for h in &mut nominal.hands {
        h.set_gap(GapModel::identity());
    }
    let mut real = env.reset(seed).map(|o| o.flatten());
    let mut sim = nominal.reset(seed).map(|o| o.flatten());
    let mut log = RolloutLog::default();
    for t in 0..env.num_steps() {
        let cmd = JointState {
            hands: std::array::from_fn(|h| {
                real[h][..PROPRIO].copy_from_slice(&sim[h][..PROPRIO]);
                policy.command(h, &real[h], t)
            }),
        };
        let [l, r] = env.step(&cmd)?;
        let [nl, nr] = nominal.step(&cmd)?;
        real = [l.obs.flatten(), r.obs.flatten()];
        sim = [nl.obs.flatten(), nr.obs.flatten()];
        log.hands[0].push(l.record);
        log.hands[1].push(r.record);
    }
    Ok(log)
}

/// Runs `mode` with the policy or its exported trajectory.
pub fn run_mode(env: &mut PianoEnv, mode: RolloutMode, policy: Option<&SimPolicy>, traj: Option<&JointTrajectory>, seed: u64) -> Result<RolloutLog> {
    match mode {
        RolloutMode::OpenLoop => {
            let traj = traj.ok_or_else(|| Error::Contract("open-loop rollout needs a trajectory".into()))?;
            execute_trajectory(env, traj, seed)
        }
        RolloutMode::ClosedLoop | RolloutMode::Hybrid => {
            let policy = policy.ok_or_else(|| Error::Contract(format!("{mode} rollout needs a policy")))?;
            if mode == RolloutMode::Hybrid {
                hybrid_rollout(env, policy, seed)
            } else {
                closed_loop_rollout(env, policy, seed)
            }
        }
    }
}
