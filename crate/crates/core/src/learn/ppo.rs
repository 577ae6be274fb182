//! PPO pretraining in the nominal simulator.
//!
//! Each hand gets its own Gaussian policy over delta-joint actions: the
//! lateral and first two flexion joints of every finger move relative to the
//! current proprioception, the last flexion stays fixed and the wrist follows
//! its scripted track.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::nn::{clip_grad_norm, Adam, DenseNet, OutputActivation};
use super::td3::{ACTION_DIM, ACTIVE_JOINTS};
use crate::env::{EnvConfig, GapModel, GapRanges, HandEnv, PianoEnv, RolloutLog};
use crate::error::{Error, Result};
use crate::eval::score_f1;
use crate::hand::{script_wrist, HandConfig, HandJoints, JointState, JointTrajectory, WristTrack, FINGERS, JOINTS_PER_FINGER, LAST_FLEXION};
use crate::keyboard::Keyboard;
use crate::score::{Hand, PianoRoll};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub num_envs: usize,
    pub steps_per_env: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub init_log_std: f64,
    /// Radians per unit action on lateral joints.
    pub lateral_scale: f64,
    /// Radians per unit action on flexion joints.
    pub flex_scale: f64,
    /// Env steps per hand across all instances.
    pub total_steps: u64,
    /// Iterations between deterministic evaluations.
    pub eval_every: usize,
    /// Stops early once the evaluation F1 reaches this value.
    pub target_f1: Option<f64>,
    /// Per-episode gap randomization; `None` trains on the nominal model.
    pub randomize: Option<GapRanges>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            hidden: vec![64, 64],
            num_envs: 16,
            steps_per_env: 32,
            epochs: 8,
            minibatches: 32,
            gamma: 0.8,
            lambda: 0.95,
            clip: 0.2,
            lr: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            init_log_std: -0.5,
            lateral_scale: 0.1,
            flex_scale: 0.5,
            total_steps: 500_000,
            eval_every: 10,
            target_f1: None,
            randomize: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo.{m}")));
        if self.num_envs == 0 || self.steps_per_env == 0 || self.epochs == 0 || self.minibatches == 0 {
            return bad("num_envs, steps_per_env, epochs and minibatches must be > 0");
        }
        if self.minibatches > self.num_envs * self.steps_per_env {
            return bad("minibatches must not exceed num_envs * steps_per_env");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must be in [0, 1]");
        }
        if !(self.clip > 0.0 && self.lr > 0.0) {
            return bad("clip and lr must be > 0");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be > 0");
        }
        Ok(())
    }
}

fn gauss_logp(a: &[f64], mu: &[f64], log_std: &[f64]) -> f64 {
    a.iter()
        .zip(mu)
        .zip(log_std)
        .map(|((a, m), s)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// One hand's Gaussian policy and value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPolicy {
    pub mean: DenseNet,
    pub log_std: Vec<f64>,
    pub value: DenseNet,
    /// Action scale per active joint of a finger.
    pub scales: [f64; ACTIVE_JOINTS],
    pub fixed_last: f64,
}

impl HandPolicy {
    pub fn new<R: Rng>(obs_dim: usize, cfg: &PpoConfig, hand_cfg: &HandConfig, rng: &mut R) -> HandPolicy {
        let sizes = |out: usize| {
            let mut s = vec![obs_dim];
            s.extend(&cfg.hidden);
            s.push(out);
            s
        };
        HandPolicy {
            mean: DenseNet::new(&sizes(ACTION_DIM), OutputActivation::Identity, 0.0, true, rng),
            log_std: vec![cfg.init_log_std; ACTION_DIM],
            value: DenseNet::new(&sizes(1), OutputActivation::Identity, 0.0, false, rng),
            scales: [cfg.lateral_scale, cfg.flex_scale, cfg.flex_scale],
            fixed_last: hand_cfg.fixed_last_joint,
        }
    }

    pub fn mean_action(&self, obs: &[f64]) -> Vec<f64> {
        self.mean.predict(obs, 1)
    }

    /// Absolute command: proprioception (first 12 observation entries) plus
    /// the scaled, clipped action; last flexion fixed; wrist as given.
    pub fn command(&self, obs: &[f64], action: &[f64], wrist: [f64; 3]) -> HandJoints {
        let mut fingers = [[0.0; JOINTS_PER_FINGER]; FINGERS];
        for f in 0..FINGERS {
            for j in 0..ACTIVE_JOINTS {
                let a = action[f * ACTIVE_JOINTS + j].clamp(-1.0, 1.0);
                fingers[f][j] = obs[f * JOINTS_PER_FINGER + j] + self.scales[j] * a;
            }
            fingers[f][LAST_FLEXION] = self.fixed_last;
        }
        HandJoints { fingers, wrist }
    }
}

/// Both hands' policies plus the wrist script they ride on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPolicy {
    pub hands: [HandPolicy; 2],
    pub wrists: [WristTrack; 2],
}

impl SimPolicy {
    /// Deterministic command for hand `h` at step `t` from its observation.
    pub fn command(&self, h: usize, obs: &[f64], t: usize) -> HandJoints {
        let p = &self.hands[h];
        p.command(obs, &p.mean_action(obs), self.wrists[h].absolute(t + 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
}

/// Rollout storage for one hand, `num_envs × steps_per_env`, env-major.
struct Storage {
    obs: Vec<f64>,
    actions: Vec<f64>,
    logp: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

/// Generalized advantage estimates for one env's segment. `dones[i]` marks
/// that the episode ended after step `i`; `last_value` bootstraps the tail.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[f64], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        let next_v = if i + 1 < n { values[i + 1] } else { last_value };
        let nonterminal = 1.0 - dones[i];
        let delta = rewards[i] + gamma * next_v * nonterminal - values[i];
        acc = delta + gamma * lambda * nonterminal * acc;
        adv[i] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Clipped-surrogate gradients for one minibatch with respect to the mean
/// outputs and log-std, and the loss. Advantages are normalized inside.
pub fn surrogate_grads(
    mu: &[f64],
    log_std: &[f64],
    actions: &[f64],
    old_logp: &[f64],
    advantages: &[f64],
    clip: f64,
    entropy_coef: f64,
) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let n = advantages.len();
    let d = log_std.len();
    let mean = advantages.iter().sum::<f64>() / n as f64;
    let sd = (advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mut dmu = vec![0.0; n * d];
    let mut dls = vec![0.0; d];
    let mut loss = 0.0;
    let mut kl = 0.0;
    for i in 0..n {
        let a = &actions[i * d..(i + 1) * d];
        let m = &mu[i * d..(i + 1) * d];
        let adv = (advantages[i] - mean) / (sd + 1e-8);
        let logp = gauss_logp(a, m, log_std);
        let ratio = (logp - old_logp[i]).exp();
        kl += old_logp[i] - logp;
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
        loss -= unclipped.min(clipped) / n as f64;
        // Gradient flows only through the unclipped branch when it is the min.
        if unclipped <= clipped {
            let g = -ratio * adv / n as f64;
            for j in 0..d {
                let var = (2.0 * log_std[j]).exp();
                dmu[i * d + j] = g * (a[j] - m[j]) / var;
                let z2 = (a[j] - m[j]).powi(2) / var;
                dls[j] += g * (z2 - 1.0);
            }
        }
    }
    for g in &mut dls {
        *g -= entropy_coef;
    }
    (dmu, dls, loss, kl / n as f64)
}

/// Trainer state for one hand.
struct HandTrainer {
    policy: HandPolicy,
    wrist: WristTrack,
    policy_opt: Adam,
    value_opt: Adam,
    envs: Vec<HandEnv>,
    obs: Vec<Vec<f64>>,
    episodes: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct PpoOutcome {
    pub policy: SimPolicy,
    /// Commanded states of the best deterministic evaluation rollout.
    pub best_trajectory: JointTrajectory,
    pub best_f1: f64,
    /// `(env steps per hand, F1)` at each evaluation.
    pub curve: Vec<(u64, f64)>,
    pub env_steps: u64,
    /// Set when training stopped on non-finite values; the policy is the
    /// last finite one.
    pub diverged: Option<String>,
}

/// Deterministic closed-loop rollout in `env`; returns the log and the
/// commanded trajectory (clamped, as executed).
pub fn policy_rollout(env: &mut PianoEnv, policy: &SimPolicy, seed: u64) -> Result<(RolloutLog, JointTrajectory)> {
    let mut obs = env.reset(seed).map(|o| o.flatten());
    let mut log = RolloutLog::default();
    let first = JointState {
        hands: [*env.hands[0].last_command(), *env.hands[1].last_command()],
    };
    let mut states = vec![first];
    for t in 0..env.num_steps() {
        let cmd = JointState {
            hands: [policy.command(0, &obs[0], t), policy.command(1, &obs[1], t)],
        };
        let [l, r] = env.step(&cmd)?;
        states.push(JointState {
            hands: [l.record.command, r.record.command],
        });
        obs = [l.obs.flatten(), r.obs.flatten()];
        log.hands[0].push(l.record);
        log.hands[1].push(r.record);
    }
    let traj = JointTrajectory {
        roll_ref: env.roll().title().to_string(),
        states,
    };
    Ok((log, traj))
}

/// Trains both hands' policies in lockstep on nominal environments and
/// exports the best deterministic rollout as an open-loop trajectory.
pub fn ppo_train(
    roll: Arc<PianoRoll>,
    keyboard: Arc<Keyboard>,
    hand_cfg: &HandConfig,
    env_cfg: &EnvConfig,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<PpoOutcome> {
    cfg.validate()?;
    let wrists = script_wrist(&roll, &keyboard, hand_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = JointTrajectory::rest(&roll, hand_cfg, &wrists).states[0];
    let mut eval_env = PianoEnv::new(roll.clone(), keyboard.clone(), hand_cfg, &GapModel::identity(), env_cfg, &initial);
    let mut trainers: Vec<HandTrainer> = Hand::BOTH
        .iter()
        .map(|&hand| {
            let envs: Vec<HandEnv> = (0..cfg.num_envs)
                .map(|_| {
                    HandEnv::new(
                        hand,
                        roll.clone(),
                        keyboard.clone(),
                        hand_cfg.clone(),
                        GapModel::identity(),
                        env_cfg.clone(),
                        initial.hand(hand).wrist,
                    )
                })
                .collect();
            let policy = HandPolicy::new(envs[0].obs_dim(), cfg, hand_cfg, &mut rng);
            HandTrainer {
                wrist: wrists[hand.index()].clone(),
                policy_opt: Adam::new(policy.mean.num_params() + ACTION_DIM, cfg.lr),
                value_opt: Adam::new(policy.value.num_params(), cfg.lr),
                policy,
                obs: vec![Vec::new(); cfg.num_envs],
                episodes: vec![0; cfg.num_envs],
                envs,
            }
        })
        .collect();
    for (h, tr) in trainers.iter_mut().enumerate() {
        for i in 0..cfg.num_envs {
            tr.obs[i] = reset_env(&mut tr.envs[i], cfg, hand_cfg, seed, h, i, 0)?;
        }
    }

    let snapshot = |trainers: &[HandTrainer]| SimPolicy {
        hands: [trainers[0].policy.clone(), trainers[1].policy.clone()],
        wrists: wrists.clone(),
    };
    let evaluate = |env: &mut PianoEnv, p: &SimPolicy| -> Result<(f64, JointTrajectory)> {
        let (log, traj) = policy_rollout(env, p, 0)?;
        Ok((score_f1(&log.active_per_step(), &roll)?.f1, traj))
    };
    let mut policy = snapshot(&trainers);
    let (mut best_f1, mut best_trajectory) = evaluate(&mut eval_env, &policy)?;
    let mut curve = vec![(0, best_f1)];
    let per_iter = (cfg.num_envs * cfg.steps_per_env) as u64;
    let iterations = cfg.total_steps.div_ceil(per_iter);
    let mut env_steps = 0;
    let mut diverged = None;
    for it in 1..=iterations {
        for (h, tr) in trainers.iter_mut().enumerate() {
            let mut st = collect(tr, cfg, hand_cfg, seed, h, &mut rng)?;
            match update(tr, &mut st, cfg, &mut rng) {
                Ok(stats) => log::debug!("ppo iteration {it} hand {h}: {stats:?}"),
                Err(e) => {
                    diverged = Some(e.to_string());
                    break;
                }
            }
        }
        if diverged.is_some() {
            log::warn!("PPO diverged at iteration {it}; keeping the last finite policy");
            break;
        }
        env_steps += per_iter;
        policy = snapshot(&trainers);
        if it % cfg.eval_every as u64 == 0 || it == iterations {
            let (f1, traj) = evaluate(&mut eval_env, &policy)?;
            log::info!("ppo iteration {it} ({env_steps} steps/hand): F1 {f1:.4}");
            curve.push((env_steps, f1));
            if f1 > best_f1 {
                best_f1 = f1;
                best_trajectory = traj;
            }
            if cfg.target_f1.is_some_and(|t| best_f1 >= t) {
                break;
            }
        }
    }
    Ok(PpoOutcome {
        policy,
        best_trajectory,
        best_f1,
        curve,
        env_steps,
        diverged,
    })
}

fn reset_env(env: &mut HandEnv, cfg: &PpoConfig, hand_cfg: &HandConfig, seed: u64, h: usize, i: usize, episode: u64) -> Result<Vec<f64>> {
    let episode_seed = seed
        .wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add(((h * 1_000_003 + i) as u64) << 20)
        .wrapping_add(episode);
    if let Some(ranges) = &cfg.randomize {
        let dims = env.keyboard().dims().clone();
        env.set_gap(GapModel::sample(ranges, episode_seed, hand_cfg, &dims));
    }
    Ok(env.reset(episode_seed).flatten())
}

fn collect<R: Rng>(tr: &mut HandTrainer, cfg: &PpoConfig, hand_cfg: &HandConfig, seed: u64, h: usize, rng: &mut R) -> Result<Storage> {
    let (ne, ns) = (cfg.num_envs, cfg.steps_per_env);
    let od = tr.envs[0].obs_dim();
    let mut st = Storage {
        obs: Vec::with_capacity(ne * ns * od),
        actions: Vec::with_capacity(ne * ns * ACTION_DIM),
        logp: Vec::with_capacity(ne * ns),
        values: Vec::with_capacity(ne * ns),
        rewards: Vec::with_capacity(ne * ns),
        dones: Vec::with_capacity(ne * ns),
        advantages: Vec::new(),
        returns: Vec::new(),
    };
    let p = &tr.policy;
    let std: Vec<f64> = p.log_std.iter().map(|s| s.exp()).collect();
    let mut last_values = Vec::with_capacity(ne);
    for i in 0..ne {
        for _ in 0..ns {
            let obs = &tr.obs[i];
            let mu = p.mean.predict(obs, 1);
            let a: Vec<f64> = mu
                .iter()
                .zip(&std)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let env = &mut tr.envs[i];
            let cmd = p.command(obs, &a, tr.wrist.absolute(env.t() + 1));
            let out = env.step(&cmd)?;
            st.obs.extend_from_slice(obs);
            st.logp.push(gauss_logp(&a, &mu, &p.log_std));
            st.values.push(p.value.predict(obs, 1)[0]);
            st.actions.extend(a);
            st.rewards.push(out.record.reward.total);
            let done = env.t() >= env.num_steps();
            st.dones.push(if done { 1.0 } else { 0.0 });
            if done {
                tr.episodes[i] += 1;
                tr.obs[i] = reset_env(env, cfg, hand_cfg, seed, h, i, tr.episodes[i])?;
            } else {
                tr.obs[i] = out.obs.flatten();
            }
        }
        last_values.push(p.value.predict(&tr.obs[i], 1)[0]);
    }
    for i in 0..ne {
        let r = i * ns..(i + 1) * ns;
        let (adv, ret) = gae(&st.rewards[r.clone()], &st.values[r.clone()], &st.dones[r], last_values[i], cfg.gamma, cfg.lambda);
        st.advantages.extend(adv);
        st.returns.extend(ret);
    }
    Ok(st)
}

fn update<R: Rng>(tr: &mut HandTrainer, st: &mut Storage, cfg: &PpoConfig, rng: &mut R) -> Result<PpoStats> {
    let n = st.rewards.len();
    let od = st.obs.len() / n;
    let mb = n / cfg.minibatches;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut stats = PpoStats::default();
    let mut count = 0;
    for _ in 0..cfg.epochs {
        // Fisher-Yates with the trainer RNG.
        for i in (1..n).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        for b in 0..cfg.minibatches {
            let ids = &idx[b * mb..(b + 1) * mb];
            let mut obs = Vec::with_capacity(mb * od);
            let mut act = Vec::with_capacity(mb * ACTION_DIM);
            let (mut old, mut adv, mut ret) = (Vec::with_capacity(mb), Vec::with_capacity(mb), Vec::with_capacity(mb));
            for &i in ids {
                obs.extend_from_slice(&st.obs[i * od..(i + 1) * od]);
                act.extend_from_slice(&st.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
                old.push(st.logp[i]);
                adv.push(st.advantages[i]);
                ret.push(st.returns[i]);
            }
            let p = &mut tr.policy;
            let cache = p.mean.forward::<ChaCha8Rng>(&obs, mb, None);
            let (dmu, dls, ploss, kl) = surrogate_grads(cache.output(), &p.log_std, &act, &old, &adv, cfg.clip, cfg.entropy_coef);
            let (mut g, _) = p.mean.backward(&cache, &dmu);
            g.extend(dls);
            clip_grad_norm(&mut g, cfg.max_grad_norm);
            let mut params = std::mem::take(&mut p.mean.params);
            params.extend_from_slice(&p.log_std);
            tr.policy_opt.step(&mut params, &g);
            let split = params.len() - ACTION_DIM;
            p.log_std.copy_from_slice(&params[split..]);
            params.truncate(split);
            p.mean.params = params;

            let vc = p.value.forward::<ChaCha8Rng>(&obs, mb, None);
            let v = vc.output();
            let vloss = cfg.value_coef * (0..mb).map(|i| (v[i] - ret[i]).powi(2)).sum::<f64>() / mb as f64;
            let dv: Vec<f64> = (0..mb).map(|i| 2.0 * cfg.value_coef * (v[i] - ret[i]) / mb as f64).collect();
            let (mut gv, _) = p.value.backward(&vc, &dv);
            clip_grad_norm(&mut gv, cfg.max_grad_norm);
            tr.value_opt.step(&mut p.value.params, &gv);

            stats.policy_loss += ploss;
            stats.value_loss += vloss;
            stats.approx_kl += kl;
            count += 1;
        }
    }
    let p = &tr.policy;
    if !(stats.policy_loss.is_finite() && stats.value_loss.is_finite() && p.mean.is_finite() && p.value.is_finite() && p.log_std.iter().all(|s| s.is_finite())) {
        return Err(Error::Diverged("non-finite PPO loss".into()));
    }
    stats.policy_loss /= count as f64;
    stats.value_loss /= count as f64;
    stats.approx_kl /= count as f64;
    Ok(stats)
}
