//! Residual TD3 training over an open-loop base trajectory.

use serde::{Deserialize, Serialize};

use super::replay::Transition;
use super::td3::{apply_residual, lateral_dim, ResidualAgent, ResidualConfig, ResidualPolicy, ACTION_DIM};
use crate::env::{real_key_on_coef, PianoEnv, RolloutLog, StepRecord};
use crate::error::Result;
use crate::eval::{mean_sd, score_f1};
use crate::hand::{HandConfig, JointState, JointTrajectory, FINGERS};
use crate::refine::hand_errors;
use crate::score::Hand;

/// Seed offset separating evaluation episodes from training episodes.
pub const EVAL_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Training episodes completed.
    pub episode: usize,
    pub env_steps: u64,
    pub grad_steps: u64,
    /// F1 × 100 over the evaluation rollouts.
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone)]
pub struct ResidualOutcome {
    /// Snapshot with the best mean evaluation F1.
    pub best: [ResidualPolicy; 2],
    pub best_f1: f64,
    pub best_episode: usize,
    pub curve: Vec<CurvePoint>,
    pub agents: [ResidualAgent; 2],
}

/// Lateral dims with a defined error sign in `record`, as guided-noise input.
pub fn lateral_signs(record: &StepRecord, hand: Hand) -> Vec<(usize, f64)> {
    let errors = hand_errors(std::slice::from_ref(record), hand, 1.0);
    (0..FINGERS)
        .filter(|&f| errors[f][0] != 0.0)
        .map(|f| (lateral_dim(f), errors[f][0].signum()))
        .collect()
}

/// Noiseless rollout of `base` plus the policies' residuals (none = open loop).
pub fn residual_rollout(
    env: &mut PianoEnv,
    base: &JointTrajectory,
    policies: Option<&[ResidualPolicy; 2]>,
    seed: u64,
) -> Result<RolloutLog> {
    base.check_matches(env.roll())?;
    let mut obs = env.reset(seed).map(|o| o.flatten());
    let mut log = RolloutLog::default();
    let mut held: [Vec<f64>; 2] = Default::default();
    for t in 0..env.num_steps() {
        let mut cmd: JointState = base.states[t + 1];
        if let Some(p) = policies {
            for h in 0..2 {
                if t % p[h].chunk == 0 {
                    held[h] = p[h].action(&obs[h]);
                }
                cmd.hands[h] = p[h].apply(&cmd.hands[h], &held[h]);
            }
        }
        let [l, r] = env.step(&cmd)?;
        obs = [l.obs.flatten(), r.obs.flatten()];
        log.hands[0].push(l.record);
        log.hands[1].push(r.record);
    }
    Ok(log)
}

/// F1 × 100 of `eval_rollouts` noiseless rollouts.
pub fn evaluate(
    env: &mut PianoEnv,
    base: &JointTrajectory,
    policies: Option<&[ResidualPolicy; 2]>,
    rollouts: usize,
) -> Result<(f64, f64)> {
    let roll = env.roll().clone();
    let mut scores = Vec::with_capacity(rollouts);
    for k in 0..rollouts {
        let log = residual_rollout(env, base, policies, EVAL_SEED_OFFSET + k as u64)?;
        scores.push(100.0 * score_f1(&log.active_per_step(), &roll)?.f1);
    }
    Ok(mean_sd(&scores))
}

struct Pending {
    obs: Vec<f64>,
    action: Vec<f64>,
    reward: f64,
    steps: usize,
}

/// What the episode loop needs from a trainer.
pub(crate) trait Collector {
    fn act(&mut self, hand: usize, obs: &[f64], signs: &[(usize, f64)]) -> Vec<f64>;
    fn remember(&mut self, hand: usize, t: Transition) -> Result<()>;
    /// Called once after every env step.
    fn after_step(&mut self) -> Result<()>;
}

/// Runs one exploring training episode. Each decision is held for `chunk`
/// steps and its transition reward is the mean of those step rewards.
pub(crate) fn run_episode(
    env: &mut PianoEnv,
    base: &JointTrajectory,
    bounds: [&[f64; ACTION_DIM]; 2],
    chunk: usize,
    seed: u64,
    c: &mut impl Collector,
) -> Result<()> {
    let mut obs = env.reset(seed).map(|o| o.flatten());
    let mut pending: [Option<Pending>; 2] = [None, None];
    let mut held: [Vec<f64>; 2] = Default::default();
    let mut last: [Option<StepRecord>; 2] = [None, None];
    for t in 0..env.num_steps() {
        let mut cmd: JointState = base.states[t + 1];
        for h in 0..2 {
            if t % chunk == 0 {
                if let Some(p) = pending[h].take() {
                    c.remember(h, p.into_transition(&obs[h], false))?;
                }
                let signs = last[h].as_ref().map(|r| lateral_signs(r, Hand::BOTH[h])).unwrap_or_default();
                held[h] = c.act(h, &obs[h], &signs);
                pending[h] = Some(Pending {
                    obs: obs[h].clone(),
                    action: held[h].clone(),
                    reward: 0.0,
                    steps: 0,
                });
            }
            cmd.hands[h] = apply_residual(&cmd.hands[h], &held[h], bounds[h]);
        }
        let outs = env.step(&cmd)?;
        for (h, out) in outs.into_iter().enumerate() {
            let p = pending[h].as_mut().expect("decision made at chunk start");
            p.reward += out.record.reward.total;
            p.steps += 1;
            obs[h] = out.obs.flatten();
            last[h] = Some(out.record);
        }
        c.after_step()?;
    }
    for h in 0..2 {
        if let Some(p) = pending[h].take() {
            c.remember(h, p.into_transition(&obs[h], true))?;
        }
    }
    Ok(())
}

impl Pending {
    fn into_transition(self, next_obs: &[f64], done: bool) -> Transition {
        Transition {
            obs: self.obs,
            action: self.action,
            reward: self.reward / self.steps as f64,
            next_obs: next_obs.to_vec(),
            done,
        }
    }
}

pub(crate) fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(episode as u64)
}

/// Eval curve and best snapshot bookkeeping shared by both trainers.
pub(crate) struct Tracker {
    pub curve: Vec<CurvePoint>,
    pub best: [ResidualPolicy; 2],
    pub best_f1: f64,
    pub best_episode: usize,
}

impl Tracker {
    pub fn start(env: &mut PianoEnv, base: &JointTrajectory, policies: [ResidualPolicy; 2], rollouts: usize) -> Result<Tracker> {
        let (mean, sd) = evaluate(env, base, Some(&policies), rollouts)?;
        Ok(Tracker {
            curve: vec![CurvePoint {
                episode: 0,
                env_steps: 0,
                grad_steps: 0,
                mean,
                sd,
            }],
            best: policies,
            best_f1: mean,
            best_episode: 0,
        })
    }

    pub fn record(
        &mut self,
        env: &mut PianoEnv,
        base: &JointTrajectory,
        policies: [ResidualPolicy; 2],
        episode: usize,
        env_steps: u64,
        grad_steps: u64,
        rollouts: usize,
    ) -> Result<()> {
        let (mean, sd) = evaluate(env, base, Some(&policies), rollouts)?;
        log::info!("episode {episode}: F1 {mean:.2} ± {sd:.2}");
        self.curve.push(CurvePoint {
            episode,
            env_steps,
            grad_steps,
            mean,
            sd,
        });
        if mean > self.best_f1 {
            self.best_f1 = mean;
            self.best_episode = episode;
            self.best = policies;
        }
        Ok(())
    }

    pub fn finish(self, agents: [ResidualAgent; 2]) -> ResidualOutcome {
        ResidualOutcome {
            best: self.best,
            best_f1: self.best_f1,
            best_episode: self.best_episode,
            curve: self.curve,
            agents,
        }
    }
}

pub(crate) fn is_eval_episode(cfg: &ResidualConfig, episode: usize) -> bool {
    episode.is_multiple_of(cfg.eval_every) || episode == cfg.episodes
}

struct Inline<'a>(&'a mut [ResidualAgent; 2]);

impl Collector for Inline<'_> {
    fn act(&mut self, hand: usize, obs: &[f64], signs: &[(usize, f64)]) -> Vec<f64> {
        self.0[hand].act(obs, true, signs)
    }

    fn remember(&mut self, hand: usize, t: Transition) -> Result<()> {
        self.0[hand].remember(t);
        Ok(())
    }

    fn after_step(&mut self) -> Result<()> {
        for agent in self.0.iter_mut() {
            if agent.tick() {
                agent.update()?;
            }
        }
        Ok(())
    }
}

pub(crate) fn new_agents(env: &PianoEnv, cfg: &ResidualConfig, hand_cfg: &HandConfig, seed: u64) -> Result<[ResidualAgent; 2]> {
    Ok([
        ResidualAgent::new(env.hands[0].obs_dim(), cfg, hand_cfg, seed.wrapping_mul(2))?,
        ResidualAgent::new(env.hands[1].obs_dim(), cfg, hand_cfg, seed.wrapping_mul(2) + 1)?,
    ])
}

/// Trains one agent per hand against `env`. Every `eval_every` episodes
/// (and before the first) the deterministic policies are evaluated.
pub fn train_residual(
    env: &mut PianoEnv,
    base: &JointTrajectory,
    cfg: &ResidualConfig,
    hand_cfg: &HandConfig,
    seed: u64,
) -> Result<ResidualOutcome> {
    cfg.validate()?;
    base.check_matches(env.roll())?;
    let mut agents = new_agents(env, cfg, hand_cfg, seed)?;
    let snapshot = |agents: &[ResidualAgent; 2]| [agents[0].policy(), agents[1].policy()];
    let mut tracker = Tracker::start(env, base, snapshot(&agents), cfg.eval_rollouts)?;
    for episode in 1..=cfg.episodes {
        for (h, agent) in agents.iter_mut().enumerate() {
            agent.start_episode();
            env.hands[h].set_key_on_coef(real_key_on_coef(agent.grad_steps()));
        }
        let bounds = [*agents[0].bounds(), *agents[1].bounds()];
        run_episode(env, base, [&bounds[0], &bounds[1]], cfg.chunk, episode_seed(seed, episode), &mut Inline(&mut agents))?;
        if is_eval_episode(cfg, episode) {
            let (e, g) = (agents[0].env_steps(), agents[0].grad_steps());
            tracker.record(env, base, snapshot(&agents), episode, e, g, cfg.eval_rollouts)?;
        }
    }
    Ok(tracker.finish(agents))
}

/// Eval curve as whitespace-separated columns.
pub fn curve_to_text(curve: &[CurvePoint], header: &crate::io::ArtifactHeader) -> String {
    let mut out = header.render("curve");
    out.push_str("episode env_steps grad_steps f1_mean f1_sd\n");
    for p in curve {
        out.push_str(&format!("{} {} {} {} {}\n", p.episode, p.env_steps, p.grad_steps, p.mean, p.sd));
    }
    out
}
