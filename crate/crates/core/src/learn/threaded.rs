//! Actor/learner residual training on two threads.
//!
//! The actor thread owns the env and steps it with exploration noise on top
//! of the latest published actor snapshot. The learner thread owns the
//! agents, fills their replay buffers from a channel and runs the same
//! update schedule as [`train_residual`](super::train_residual). After each
//! update event it publishes both actors at once, so the acting side never
//! sees one hand updated and the other stale.
//!
//! Not bitwise reproducible: which snapshot a decision sees depends on
//! thread timing. The single-threaded trainer is the reference.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::{Arc, Mutex};
use std::thread;

use super::replay::Transition;
use super::residual::{episode_seed, is_eval_episode, new_agents, run_episode, Collector, ResidualOutcome, Tracker};
use super::td3::{Explorer, ResidualAgent, ResidualConfig, ResidualPolicy};
use crate::env::{real_key_on_coef, PianoEnv};
use crate::error::{Error, Result};
use crate::hand::{HandConfig, JointTrajectory};

/// Messages buffered between actor and learner before the actor blocks.
const CHANNEL_DEPTH: usize = 4096;

enum Msg {
    Transition(usize, Transition),
    /// One env step happened.
    Step,
}

/// Latest policies plus the gradient step count they were taken at.
struct Published {
    policies: Mutex<Arc<[ResidualPolicy; 2]>>,
    grad_steps: AtomicU64,
    failed: AtomicBool,
}

impl Published {
    fn load(&self) -> Arc<[ResidualPolicy; 2]> {
        self.policies.lock().expect("snapshot lock poisoned").clone()
    }

    fn store(&self, agents: &[ResidualAgent; 2]) {
        let snap = Arc::new([agents[0].policy(), agents[1].policy()]);
        *self.policies.lock().expect("snapshot lock poisoned") = snap;
        self.grad_steps.store(agents[0].grad_steps(), Ordering::Release);
    }
}

struct Acting<'a> {
    explorers: [Explorer; 2],
    snapshot: Arc<[ResidualPolicy; 2]>,
    published: &'a Published,
    tx: std::sync::mpsc::SyncSender<Msg>,
}

impl Acting<'_> {
    fn send(&self, m: Msg) -> Result<()> {
        // A closed channel means the learner stopped; its error is reported
        // when it is joined.
        self.tx.send(m).map_err(|_| Error::Diverged("learner stopped".into()))
    }
}

impl Collector for Acting<'_> {
    fn act(&mut self, hand: usize, obs: &[f64], signs: &[(usize, f64)]) -> Vec<f64> {
        if hand == 0 {
            self.snapshot = self.published.load();
        }
        let g = self.published.grad_steps.load(Ordering::Acquire);
        self.explorers[hand].act(&self.snapshot[hand].actor, obs, true, signs, g)
    }

    fn remember(&mut self, hand: usize, t: Transition) -> Result<()> {
        self.send(Msg::Transition(hand, t))
    }

    fn after_step(&mut self) -> Result<()> {
        for e in &mut self.explorers {
            e.tick();
        }
        if self.published.failed.load(Ordering::Acquire) {
            return Err(Error::Diverged("learner stopped".into()));
        }
        self.send(Msg::Step)
    }
}

fn learn(mut agents: [ResidualAgent; 2], rx: Receiver<Msg>, published: &Published) -> Result<[ResidualAgent; 2]> {
    let run = |agents: &mut [ResidualAgent; 2]| -> Result<()> {
        for msg in rx {
            match msg {
                Msg::Transition(h, t) => agents[h].remember(t),
                Msg::Step => {
                    let mut updated = false;
                    for agent in agents.iter_mut() {
                        if agent.tick() {
                            updated |= agent.update()?.is_some();
                        }
                    }
                    if updated {
                        published.store(agents);
                    }
                }
            }
        }
        Ok(())
    };
    if let Err(e) = run(&mut agents) {
        published.failed.store(true, Ordering::Release);
        return Err(e);
    }
    Ok(agents)
}

/// Same contract as [`train_residual`](super::train_residual) with acting
/// and learning on separate threads. Evaluations use the snapshot current
/// at the end of the episode.
pub fn train_residual_threaded(
    env: &mut PianoEnv,
    base: &JointTrajectory,
    cfg: &ResidualConfig,
    hand_cfg: &HandConfig,
    seed: u64,
) -> Result<ResidualOutcome> {
    cfg.validate()?;
    base.check_matches(env.roll())?;
    let agents = new_agents(env, cfg, hand_cfg, seed)?;
    let bounds = [*agents[0].bounds(), *agents[1].bounds()];
    let explorers = [
        Explorer::new(cfg, seed.wrapping_mul(2) ^ super::td3::EXPLORER_SEED_MIX),
        Explorer::new(cfg, (seed.wrapping_mul(2) + 1) ^ super::td3::EXPLORER_SEED_MIX),
    ];
    let initial = Arc::new([agents[0].policy(), agents[1].policy()]);
    let mut tracker = Tracker::start(env, base, (*initial).clone(), cfg.eval_rollouts)?;
    let published = Published {
        policies: Mutex::new(initial.clone()),
        grad_steps: AtomicU64::new(0),
        failed: AtomicBool::new(false),
    };
    let (tx, rx) = sync_channel(CHANNEL_DEPTH);

    thread::scope(|scope| {
        let learner = scope.spawn(|| learn(agents, rx, &published));
        let mut acting = Acting {
            explorers,
            snapshot: initial,
            published: &published,
            tx,
        };
        let acted = (|| -> Result<()> {
            for episode in 1..=cfg.episodes {
                let g = published.grad_steps.load(Ordering::Acquire);
                for (h, e) in acting.explorers.iter_mut().enumerate() {
                    e.start_episode();
                    env.hands[h].set_key_on_coef(real_key_on_coef(g));
                }
                run_episode(env, base, [&bounds[0], &bounds[1]], cfg.chunk, episode_seed(seed, episode), &mut acting)?;
                if is_eval_episode(cfg, episode) {
                    let snap = (*published.load()).clone();
                    let g = published.grad_steps.load(Ordering::Acquire);
                    tracker.record(env, base, snap, episode, acting.explorers[0].env_steps(), g, cfg.eval_rollouts)?;
                }
            }
            Ok(())
        })();
        drop(acting);
        let learned = learner.join().map_err(|_| Error::Diverged("learner thread panicked".into()))?;
        // A learner failure explains an acting failure, so report it first.
        let agents = learned?;
        acted?;
        Ok(tracker.finish(agents))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, GapModel};
    use crate::hand::script_wrist;
    use crate::keyboard::{Keyboard, KeyboardDims};
    use crate::learn::train_residual;
    use crate::songs;

    fn setup() -> (PianoEnv, JointTrajectory, HandConfig) {
        let roll = Arc::new(songs::bundled("toy").unwrap());
        let kb = Arc::new(Keyboard::build(88, &KeyboardDims::default()));
        let hc = HandConfig::default();
        let wrists = script_wrist(&roll, &kb, &hc).unwrap();
        let traj = JointTrajectory::rest(&roll, &hc, &wrists);
        let env = PianoEnv::new(roll, kb, &hc, &GapModel::identity(), &EnvConfig::default(), &traj.states[0]);
        (env, traj, hc)
    }

    fn cfg() -> ResidualConfig {
        ResidualConfig {
            hidden: vec![16],
            batch: 32,
            initial_exploration: 64,
            episodes: 6,
            eval_every: 2,
            eval_rollouts: 1,
            ..ResidualConfig::default()
        }
    }

    #[test]
    fn matches_reference_when_no_update_happens() {
        // Without updates every snapshot is the zero actor, so thread timing
        // cannot matter and both trainers see the same noise.
        let (mut env, base, hc) = setup();
        let cfg = ResidualConfig {
            initial_exploration: 1_000_000,
            ..cfg()
        };
        let a = train_residual(&mut env, &base, &cfg, &hc, 3).unwrap();
        let b = train_residual_threaded(&mut env, &base, &cfg, &hc, 3).unwrap();
        assert_eq!(a.curve, b.curve);
        for h in 0..2 {
            assert_eq!(a.agents[h].replay.len(), b.agents[h].replay.len());
            for i in 0..a.agents[h].replay.len() {
                assert_eq!(a.agents[h].replay.get(i), b.agents[h].replay.get(i));
            }
        }
    }

    #[test]
    fn learner_runs_the_reference_schedule() {
        let (mut env, base, hc) = setup();
        let cfg = cfg();
        let a = train_residual(&mut env, &base, &cfg, &hc, 5).unwrap();
        let b = train_residual_threaded(&mut env, &base, &cfg, &hc, 5).unwrap();
        // Step counts and update counts do not depend on timing.
        for h in 0..2 {
            assert_eq!(a.agents[h].env_steps(), b.agents[h].env_steps());
            assert_eq!(a.agents[h].grad_steps(), b.agents[h].grad_steps());
            assert!(b.agents[h].grad_steps() > 0);
        }
        assert_eq!(a.curve.len(), b.curve.len());
        assert!(b.curve.iter().all(|p| p.mean.is_finite()));
    }
}
