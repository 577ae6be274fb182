//! Residual TD3 agent for one hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::nn::{Adam, DenseNet, OutputActivation};
use super::noise::{guided_noise, CorrelatedNoise};
use super::replay::{Batch, ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::hand::{HandConfig, HandJoints, FINGERS};

/// Residual dims per finger: lateral and the first two flexions.
pub const ACTIVE_JOINTS: usize = 3;
/// Residual action width per hand.
pub const ACTION_DIM: usize = FINGERS * ACTIVE_JOINTS;

/// Index of finger `f`'s lateral joint in the residual action.
pub fn lateral_dim(f: usize) -> usize {
    f * ACTIVE_JOINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualConfig {
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Critic gradient steps per update event.
    pub utd: usize,
    /// Env steps between update events.
    pub update_every: u64,
    /// Critic steps per actor step.
    pub policy_delay: usize,
    /// Env steps during which the actor output is replaced by zero.
    pub initial_exploration: u64,
    pub gamma: f64,
    pub dropout: f64,
    pub replay_capacity: usize,
    /// Residual magnitude in radians per active joint.
    pub bound: f64,
    /// Widens the bound to each joint's full range (learning from scratch).
    pub full_range: bool,
    /// Env steps each residual action is held for.
    pub chunk: usize,
    pub noise_beta: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    /// Gradient steps over which the exploration scale anneals.
    pub sigma_steps: u64,
    pub noise_clip: f64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub p_guided: f64,
    pub episodes: usize,
    pub eval_every: usize,
    pub eval_rollouts: usize,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        ResidualConfig {
            hidden: vec![256, 256, 256],
            batch: 2048,
            tau: 0.005,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            utd: 8,
            update_every: 10,
            policy_delay: 2,
            initial_exploration: 512,
            gamma: 0.8,
            dropout: 0.5,
            replay_capacity: 200_000,
            bound: 0.08,
            full_range: false,
            chunk: 2,
            noise_beta: 0.2,
            sigma_start: 0.3,
            sigma_end: 0.05,
            sigma_steps: 10_000,
            noise_clip: 0.5,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            p_guided: 0.5,
            episodes: 100,
            eval_every: 20,
            eval_rollouts: 5,
        }
    }
}

impl ResidualConfig {
    /// Smaller networks and batches that fit a single CPU core.
    pub fn compact() -> ResidualConfig {
        ResidualConfig {
            hidden: vec![64, 64],
            batch: 128,
            ..ResidualConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("residual.{m}")));
        if self.hidden.contains(&0) {
            return bad("hidden widths must be > 0");
        }
        if self.batch == 0 || self.utd == 0 || self.chunk == 0 || self.update_every == 0 || self.policy_delay == 0 {
            return bad("batch, utd, chunk, update_every and policy_delay must be > 0");
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.gamma) {
            return bad("tau and gamma must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.p_guided) {
            return bad("p_guided must be in [0, 1]");
        }
        if !(self.bound > 0.0) {
            return bad("bound must be > 0");
        }
        if self.eval_every == 0 || self.eval_rollouts == 0 {
            return bad("eval_every and eval_rollouts must be > 0");
        }
        Ok(())
    }

    /// Exploration scale after `grad_steps` gradient steps.
    pub fn sigma(&self, grad_steps: u64) -> f64 {
        if grad_steps >= self.sigma_steps {
            return self.sigma_end;
        }
        let f = grad_steps as f64 / self.sigma_steps as f64;
        self.sigma_start + f * (self.sigma_end - self.sigma_start)
    }

    /// Per-dim residual bound.
    pub fn bounds(&self, hand: &HandConfig) -> [f64; ACTION_DIM] {
        let mut b = [self.bound; ACTION_DIM];
        if self.full_range {
            for (d, v) in b.iter_mut().enumerate() {
                let (lo, hi) = hand.joint_limits[d % ACTIVE_JOINTS];
                *v = hi - lo;
            }
        }
        b
    }
}

/// A trained actor with what is needed to turn its output into commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPolicy {
    pub actor: DenseNet,
    pub bounds: [f64; ACTION_DIM],
    pub chunk: usize,
}

impl ResidualPolicy {
    /// Deterministic normalized action.
    pub fn action(&self, obs: &[f64]) -> Vec<f64> {
        self.actor.predict(obs, 1)
    }

    /// `base` plus the scaled residual on the active joints.
    pub fn apply(&self, base: &HandJoints, action: &[f64]) -> HandJoints {
        apply_residual(base, action, &self.bounds)
    }
}

pub fn apply_residual(base: &HandJoints, action: &[f64], bounds: &[f64; ACTION_DIM]) -> HandJoints {
    let mut out = *base;
    for f in 0..FINGERS {
        for j in 0..ACTIVE_JOINTS {
            let d = f * ACTIVE_JOINTS + j;
            out.fingers[f][j] += bounds[d] * action[d];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub critic: f64,
    pub actor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualAgent {
    pub cfg: ResidualConfig,
    obs_dim: usize,
    bounds: [f64; ACTION_DIM],
    pub actor: DenseNet,
    pub actor_target: DenseNet,
    pub critics: [DenseNet; 2],
    pub critic_targets: [DenseNet; 2],
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    #[serde(skip, default = "empty_replay")]
    pub replay: ReplayBuffer,
    explorer: Explorer,
    rng: ChaCha8Rng,
    grad_steps: u64,
}

/// Mixed into an agent seed to seed its explorer.
pub(crate) const EXPLORER_SEED_MIX: u64 = 0x5851_f42d_4c95_7f2d;

/// Acting-side state: exploration noise, its RNG and the env step count.
/// Split out so an actor thread can act from a published actor snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Explorer {
    cfg: ResidualConfig,
    noise: CorrelatedNoise,
    rng: ChaCha8Rng,
    env_steps: u64,
}

impl Explorer {
    pub fn new(cfg: &ResidualConfig, seed: u64) -> Explorer {
        Explorer {
            noise: CorrelatedNoise::new(ACTION_DIM, cfg.noise_beta),
            rng: ChaCha8Rng::seed_from_u64(seed),
            env_steps: 0,
            cfg: cfg.clone(),
        }
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Counts one env step. Returns true when an update event is due.
    pub fn tick(&mut self) -> bool {
        self.env_steps += 1;
        self.env_steps >= self.cfg.initial_exploration && self.env_steps.is_multiple_of(self.cfg.update_every)
    }

    /// Zeroes the correlated-noise state at an episode boundary.
    pub fn start_episode(&mut self) {
        self.noise.reset();
    }

    /// Normalized action for one decision. With `explore`, correlated noise
    /// is sign-guided on the given lateral dims, scaled by the schedule at
    /// `grad_steps` and clipped, then added. The result is clipped to
    /// `[-1, 1]`. The actor is bypassed during initial exploration.
    pub fn act(&mut self, actor: &DenseNet, obs: &[f64], explore: bool, lateral_signs: &[(usize, f64)], grad_steps: u64) -> Vec<f64> {
        let mut a = if self.env_steps < self.cfg.initial_exploration {
            vec![0.0; ACTION_DIM]
        } else {
            actor.predict(obs, 1)
        };
        if explore {
            let eps = self.noise.sample(&mut self.rng);
            let eps = guided_noise(&eps, lateral_signs, self.cfg.p_guided, &mut self.rng);
            let sigma = self.cfg.sigma(grad_steps);
            let clip = self.cfg.noise_clip;
            for (x, e) in a.iter_mut().zip(eps) {
                *x = (*x + (sigma * e).clamp(-clip, clip)).clamp(-1.0, 1.0);
            }
        }
        a
    }
}

fn empty_replay() -> ReplayBuffer {
    ReplayBuffer::new(1)
}

impl ResidualAgent {
    pub fn new(obs_dim: usize, cfg: &ResidualConfig, hand: &HandConfig, seed: u64) -> Result<ResidualAgent> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(ACTION_DIM);
        let mut critic_sizes = vec![obs_dim + ACTION_DIM];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let actor = DenseNet::new(&actor_sizes, OutputActivation::Tanh, 0.0, true, &mut rng);
        let critics = [
            DenseNet::new(&critic_sizes, OutputActivation::Identity, cfg.dropout, false, &mut rng),
            DenseNet::new(&critic_sizes, OutputActivation::Identity, cfg.dropout, false, &mut rng),
        ];
        Ok(ResidualAgent {
            obs_dim,
            bounds: cfg.bounds(hand),
            actor_target: actor.clone(),
            actor_opt: Adam::new(actor.num_params(), cfg.actor_lr),
            critic_opts: [
                Adam::new(critics[0].num_params(), cfg.critic_lr),
                Adam::new(critics[1].num_params(), cfg.critic_lr),
            ],
            critic_targets: critics.clone(),
            actor,
            critics,
            replay: ReplayBuffer::new(cfg.replay_capacity),
            explorer: Explorer::new(cfg, seed ^ EXPLORER_SEED_MIX),
            rng,
            grad_steps: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn bounds(&self) -> &[f64; ACTION_DIM] {
        &self.bounds
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn env_steps(&self) -> u64 {
        self.explorer.env_steps
    }

    pub fn policy(&self) -> ResidualPolicy {
        ResidualPolicy {
            actor: self.actor.clone(),
            bounds: self.bounds,
            chunk: self.cfg.chunk,
        }
    }

    pub fn start_episode(&mut self) {
        self.explorer.start_episode();
    }

    pub fn tick(&mut self) -> bool {
        self.explorer.tick()
    }

    /// See [`Explorer::act`].
    pub fn act(&mut self, obs: &[f64], explore: bool, lateral_signs: &[(usize, f64)]) -> Vec<f64> {
        self.explorer.act(&self.actor, obs, explore, lateral_signs, self.grad_steps)
    }

    pub fn apply(&self, base: &HandJoints, action: &[f64]) -> HandJoints {
        apply_residual(base, action, &self.bounds)
    }

    pub fn remember(&mut self, t: Transition) {
        debug_assert_eq!(t.obs.len(), self.obs_dim);
        debug_assert_eq!(t.action.len(), ACTION_DIM);
        self.replay.push(t);
    }

    /// One update event: `utd` critic steps and an actor/target step after
    /// every `policy_delay` of them. Skipped (None) while the buffer holds
    /// fewer than a batch.
    pub fn update(&mut self) -> Result<Option<Losses>> {
        if self.replay.len() < self.cfg.batch {
            log::debug!("update skipped: {} transitions < batch {}", self.replay.len(), self.cfg.batch);
            return Ok(None);
        }
        let mut losses = Losses::default();
        let mut actor_steps = 0;
        for i in 0..self.cfg.utd {
            let batch = self.replay.sample(self.cfg.batch, &mut self.rng);
            losses.critic += self.critic_step(&batch);
            if (i + 1) % self.cfg.policy_delay == 0 {
                losses.actor += self.actor_step(&batch);
                self.update_targets();
                actor_steps += 1;
            }
            self.grad_steps += 1;
        }
        losses.critic /= self.cfg.utd as f64;
        if actor_steps > 0 {
            losses.actor /= actor_steps as f64;
        }
        if !(losses.critic.is_finite() && losses.actor.is_finite() && self.actor.is_finite()) {
            return Err(Error::Diverged(format!("non-finite TD3 loss after {} gradient steps", self.grad_steps)));
        }
        Ok(Some(losses))
    }

    fn concat(obs: &[f64], act: &[f64], n: usize, obs_dim: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(n * (obs_dim + ACTION_DIM));
        for i in 0..n {
            x.extend_from_slice(&obs[i * obs_dim..(i + 1) * obs_dim]);
            x.extend_from_slice(&act[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
        }
        x
    }

    /// Bellman targets from the smoothed target policy and the minimum of
    /// the target critics (evaluated without dropout).
    pub fn targets(&mut self, batch: &Batch) -> Vec<f64> {
        let n = batch.size;
        let mut next = self.actor_target.predict(&batch.next_obs, n);
        let c = self.cfg.target_noise_clip;
        for a in &mut next {
            let e: f64 = self.rng.sample(StandardNormal);
            *a = (*a + (self.cfg.target_noise * e).clamp(-c, c)).clamp(-1.0, 1.0);
        }
        let x = Self::concat(&batch.next_obs, &next, n, self.obs_dim);
        let q1 = self.critic_targets[0].predict(&x, n);
        let q2 = self.critic_targets[1].predict(&x, n);
        (0..n)
            .map(|i| batch.reward[i] + self.cfg.gamma * batch.not_done[i] * q1[i].min(q2[i]))
            .collect()
    }

    fn critic_step(&mut self, batch: &Batch) -> f64 {
        let n = batch.size;
        let y = self.targets(batch);
        let x = Self::concat(&batch.obs, &batch.action, n, self.obs_dim);
        let mut total = 0.0;
        for k in 0..2 {
            let cache = self.critics[k].forward(&x, n, Some(&mut self.rng));
            let q = cache.output();
            let dout: Vec<f64> = (0..n).map(|i| 2.0 * (q[i] - y[i]) / n as f64).collect();
            total += (0..n).map(|i| (q[i] - y[i]).powi(2)).sum::<f64>() / n as f64;
            let (g, _) = self.critics[k].backward(&cache, &dout);
            self.critic_opts[k].step(&mut self.critics[k].params, &g);
        }
        total / 2.0
    }

    /// Gradient of `-mean Q1(o, actor(o))` with respect to the actor
    /// parameters, and the loss itself.
    pub fn actor_gradient(&self, obs: &[f64], n: usize) -> (Vec<f64>, f64) {
        let cache = self.actor.forward::<ChaCha8Rng>(obs, n, None);
        let x = Self::concat(obs, cache.output(), n, self.obs_dim);
        let qc = self.critics[0].forward::<ChaCha8Rng>(&x, n, None);
        let loss = -qc.output().iter().sum::<f64>() / n as f64;
        let (_, dx) = self.critics[0].backward(&qc, &vec![-1.0 / n as f64; n]);
        let width = self.obs_dim + ACTION_DIM;
        let da: Vec<f64> = (0..n).flat_map(|i| dx[i * width + self.obs_dim..(i + 1) * width].iter().copied()).collect();
        let (g, _) = self.actor.backward(&cache, &da);
        (g, loss)
    }

    fn actor_step(&mut self, batch: &Batch) -> f64 {
        let (g, loss) = self.actor_gradient(&batch.obs, batch.size);
        self.actor_opt.step(&mut self.actor.params, &g);
        loss
    }

    fn update_targets(&mut self) {
        let tau = self.cfg.tau;
        self.actor_target.polyak_from(&self.actor, tau);
        for k in 0..2 {
            self.critic_targets[k].polyak_from(&self.critics[k], tau);
        }
    }
}
