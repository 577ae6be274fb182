//! Nominal and gap-injected piano environments.
//!
//! One implementation serves both: the nominal simulator is a [`HandEnv`]
//! whose [`GapModel`] is the identity. Each hand is an independent MDP over
//! its own key region; [`PianoEnv`] steps both and merges their logs.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{forward_kinematics, HandConfig, HandJoints, JointState, JointTrajectory, FINGERS, LATERAL};
use crate::io::ArtifactHeader;
use crate::keyboard::{KeyState, Keyboard, KeyboardDims, PressEvent};
use crate::score::{Finger, Goal, Hand, PianoRoll};

/// Distance at which the tolerance kernel falls to 0.1.
pub const KERNEL_MARGIN: f64 = 0.05;
/// Gradient steps after which the real-world key-on coefficient drops.
pub const KEY_ON_SWITCH: u64 = 10_000;
pub const INITIAL_KEY_ON: f64 = 0.7;
pub const FINAL_KEY_ON: f64 = 0.5;

/// Gaussian tolerance: `g(0) = 1`, `g(KERNEL_MARGIN) = 0.1`.
pub fn kernel(d: f64) -> f64 {
    let r = d / KERNEL_MARGIN;
    (-std::f64::consts::LN_10 * r * r).exp()
}

/// Key-on term plus false-positive term, weighted by `key_on_coef` and its
/// complement. With no goal keys the key-on term is 1.
pub fn key_press_reward(keys: &KeyState, goal: &[u8], key_on_coef: f64) -> f64 {
    let on = if goal.is_empty() {
        1.0
    } else {
        goal.iter()
            .map(|&k| kernel((keys.depression[usize::from(k)] - 1.0).abs()))
            .sum::<f64>()
            / goal.len() as f64
    };
    let false_positive = keys.active_keys().any(|k| !goal.contains(&k));
    key_on_coef * on + (1.0 - key_on_coef) * if false_positive { 0.0 } else { 1.0 }
}

/// Mean kernel of the along-keyboard (`y`) distance from each assigned
/// fingertip to its key's center line; 1 with no goals. Depth is left out so
/// that curling down to press does not cost fingering reward.
pub fn fingering_reward(tips: &[[f64; 3]; FINGERS], goals: &[(Finger, u8)], keyboard: &Keyboard) -> f64 {
    if goals.is_empty() {
        return 1.0;
    }
    goals
        .iter()
        .map(|&(f, k)| {
            let spec = keyboard.spec(k);
            let tip = tips[f.index()];
            kernel((tip[1] - spec.center_y).abs())
        })
        .sum::<f64>()
        / goals.len() as f64
}

/// Key-on coefficient for residual training after `grad_steps` updates.
pub fn real_key_on_coef(grad_steps: u64) -> f64 {
    if grad_steps < KEY_ON_SWITCH {
        INITIAL_KEY_ON
    } else {
        FINAL_KEY_ON
    }
}

/// The only reward the pseudo-real system exposes.
pub fn make_real_reward(keys: &KeyState, goal: &[u8], grad_steps: u64) -> f64 {
    key_press_reward(keys, goal, real_key_on_coef(grad_steps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub fingering_coef: f64,
    pub key_press_coef: f64,
    pub action_l1_coef: f64,
    pub key_on_coef: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            fingering_coef: 1.0,
            key_press_coef: 1.0,
            action_l1_coef: 0.01,
            key_on_coef: INITIAL_KEY_ON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub key_press: f64,
    pub fingering: f64,
    pub action_l1: f64,
    pub total: f64,
}

/// Discrepancy between the nominal and pseudo-real simulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapModel {
    /// Radians added to each lateral joint target, `[hand][finger]`.
    pub lateral_bias: [[f64; FINGERS]; 2],
    /// Meters added to the wrist `y` of each hand.
    pub wrist_y_offset: [f64; 2],
    /// Meters added to the wrist height of each hand.
    pub wrist_z_offset: [f64; 2],
    /// Fraction of the remaining tracking error closed per substep.
    pub lag_alpha: f64,
    pub actuation_noise_sd: f64,
    /// Added to the activation threshold.
    pub threshold_shift: f64,
    pub seed: u64,
}

impl Default for GapModel {
    fn default() -> Self {
        GapModel::identity()
    }
}

impl GapModel {
    pub fn identity() -> GapModel {
        GapModel {
            lateral_bias: [[0.0; FINGERS]; 2],
            wrist_y_offset: [0.0; 2],
            wrist_z_offset: [0.0; 2],
            lag_alpha: 1.0,
            actuation_noise_sd: 0.0,
            threshold_shift: 0.0,
            seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        let id = GapModel {
            seed: self.seed,
            ..GapModel::identity()
        };
        *self == id
    }

    /// Draws a gap from `ranges`. Biases are drawn as fractions of a white
    /// key width and converted to lateral angles at each fingertip radius.
    pub fn sample(ranges: &GapRanges, seed: u64, hand_cfg: &HandConfig, dims: &KeyboardDims) -> GapModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
        let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let mut lateral_bias = [[0.0; FINGERS]; 2];
        for hand in &mut lateral_bias {
            for (f, b) in hand.iter_mut().enumerate() {
                let widths = uniform(-ranges.max_bias_key_widths, ranges.max_bias_key_widths);
                *b = hand_cfg.lateral_angle_for(f, widths * dims.white_width);
            }
        }
        let mut wrist_y_offset = [0.0; 2];
        for w in &mut wrist_y_offset {
            *w = uniform(-ranges.max_wrist_y_offset, ranges.max_wrist_y_offset);
        }
        let mut wrist_z_offset = [0.0; 2];
        for w in &mut wrist_z_offset {
            *w = uniform(ranges.wrist_z_offset.0, ranges.wrist_z_offset.1);
        }
        GapModel {
            lateral_bias,
            wrist_y_offset,
            wrist_z_offset,
            lag_alpha: uniform(ranges.lag_alpha.0, ranges.lag_alpha.1),
            actuation_noise_sd: ranges.actuation_noise_sd,
            threshold_shift: uniform(ranges.threshold_shift.0, ranges.threshold_shift.1),
            seed,
        }
    }

    pub fn from_preset(preset: GapPreset, seed: u64, hand_cfg: &HandConfig, dims: &KeyboardDims) -> GapModel {
        match preset {
            GapPreset::Identity => GapModel {
                seed,
                ..GapModel::identity()
            },
            _ => GapModel::sample(&preset.ranges(), seed, hand_cfg, dims),
        }
    }
}

/// Sampling ranges for gap parameters (presets and domain randomization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapRanges {
    pub max_bias_key_widths: f64,
    pub max_wrist_y_offset: f64,
    /// Meters, drawn per hand; positive raises the hand.
    pub wrist_z_offset: (f64, f64),
    pub lag_alpha: (f64, f64),
    pub actuation_noise_sd: f64,
    pub threshold_shift: (f64, f64),
}

impl Default for GapRanges {
    fn default() -> Self {
        GapPreset::PaperLike.ranges()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapPreset {
    Identity,
    BiasOnly,
    PaperLike,
}

impl GapPreset {
    pub const ALL: [GapPreset; 3] = [GapPreset::Identity, GapPreset::BiasOnly, GapPreset::PaperLike];

    pub fn ranges(self) -> GapRanges {
        match self {
            GapPreset::Identity => GapRanges {
                max_bias_key_widths: 0.0,
                max_wrist_y_offset: 0.0,
                wrist_z_offset: (0.0, 0.0),
                lag_alpha: (1.0, 1.0),
                actuation_noise_sd: 0.0,
                threshold_shift: (0.0, 0.0),
            },
            GapPreset::BiasOnly => GapRanges {
                max_bias_key_widths: 0.6,
                ..GapPreset::Identity.ranges()
            },
            GapPreset::PaperLike => GapRanges {
                max_bias_key_widths: 0.6,
                max_wrist_y_offset: 0.0,
                wrist_z_offset: (0.005, 0.008),
                lag_alpha: (0.2, 0.3),
                actuation_noise_sd: 0.002,
                threshold_shift: (0.4, 0.45),
            },
        }
    }
}

impl fmt::Display for GapPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GapPreset::Identity => "identity",
            GapPreset::BiasOnly => "bias-only",
            GapPreset::PaperLike => "paper-like",
        })
    }
}

impl FromStr for GapPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GapPreset::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown gap preset '{s}' (expected identity, bias-only or paper-like)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub activation_threshold: f64,
    pub goal_horizon: usize,
    pub substeps: usize,
    /// Keys of padding around a hand's used span in its observed region.
    pub region_pad: u8,
    pub reward: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            activation_threshold: 0.5,
            goal_horizon: 10,
            substeps: 8,
            region_pad: 2,
            reward: RewardConfig::default(),
        }
    }
}

/// Per-hand observation, in the order [`Observation::flatten`] emits it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// 12 finger joint readings then wrist `y` relative to the episode start.
    pub proprioception: Vec<f64>,
    /// Depression of each key in the hand's region.
    pub current_activation: Vec<f64>,
    /// `goal_horizon × region`, row per step starting at the current one.
    pub goal_window: Vec<f64>,
    /// `goal_horizon × 3`, whether each finger has a goal.
    pub active_fingers: Vec<f64>,
    pub phase: f64,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.proprioception.len() + self.current_activation.len() + self.goal_window.len() + self.active_fingers.len() + 1
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.proprioception);
        v.extend_from_slice(&self.current_activation);
        v.extend_from_slice(&self.goal_window);
        v.extend_from_slice(&self.active_fingers);
        v.push(self.phase);
        v
    }
}

/// Everything observable about one 10 Hz step of one hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub command: HandJoints,
    pub actual: HandJoints,
    /// Active keys under each finger.
    pub pressed: [Vec<u8>; FINGERS],
    pub active: Vec<u8>,
    pub goals: Vec<Goal>,
    pub events: Vec<PressEvent>,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Observation,
    pub record: StepRecord,
    /// Key state after the step (for reward recomputation).
    pub keys: KeyState,
}

/// One hand's MDP.
#[derive(Debug, Clone)]
pub struct HandEnv {
    hand: Hand,
    roll: Arc<PianoRoll>,
    keyboard: Arc<Keyboard>,
    hand_cfg: HandConfig,
    gap: GapModel,
    cfg: EnvConfig,
    region: (u8, u8),
    initial_wrist: [f64; 3],
    q: [[f64; 4]; FINGERS],
    last_command: HandJoints,
    keys: KeyState,
    t: usize,
    rng: ChaCha8Rng,
}

impl HandEnv {
    pub fn new(
        hand: Hand,
        roll: Arc<PianoRoll>,
        keyboard: Arc<Keyboard>,
        hand_cfg: HandConfig,
        gap: GapModel,
        cfg: EnvConfig,
        initial_wrist: [f64; 3],
    ) -> HandEnv {
        let region = observed_region(&roll, hand, cfg.region_pad, keyboard.num_keys() as u8);
        let rest = HandJoints::rest(&hand_cfg, initial_wrist);
        let mut env = HandEnv {
            hand,
            keys: KeyState::released(keyboard.num_keys()),
            roll,
            keyboard,
            q: rest.fingers,
            last_command: rest,
            hand_cfg,
            rng: ChaCha8Rng::seed_from_u64(gap.seed),
            gap,
            cfg,
            region,
            initial_wrist,
            t: 0,
        };
        env.reset(0);
        env
    }

    pub fn hand(&self) -> Hand {
        self.hand
    }

    pub fn roll(&self) -> &PianoRoll {
        &self.roll
    }

    pub fn keyboard(&self) -> &Keyboard {
        &self.keyboard
    }

    pub fn hand_config(&self) -> &HandConfig {
        &self.hand_cfg
    }

    pub fn gap(&self) -> &GapModel {
        &self.gap
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn set_gap(&mut self, gap: GapModel) {
        self.gap = gap;
    }

    pub fn set_key_on_coef(&mut self, coef: f64) {
        self.cfg.reward.key_on_coef = coef;
    }

    /// Inclusive key range covered by the observation.
    pub fn region(&self) -> (u8, u8) {
        self.region
    }

    pub fn num_steps(&self) -> usize {
        self.roll.num_steps()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn obs_dim(&self) -> usize {
        let r = usize::from(self.region.1 - self.region.0) + 1;
        13 + r + self.cfg.goal_horizon * (r + FINGERS) + 1
    }

    pub fn last_command(&self) -> &HandJoints {
        &self.last_command
    }

    /// Rest pose at the initial wrist, keys up, `t = 0`. Actuation noise is
    /// reseeded from the gap seed mixed with `episode_seed`.
    pub fn reset(&mut self, episode_seed: u64) -> Observation {
        let rest = HandJoints::rest(&self.hand_cfg, self.initial_wrist);
        self.last_command = rest;
        self.q = rest.fingers;
        let bias = self.gap.lateral_bias[self.hand.index()];
        for f in 0..FINGERS {
            self.q[f][LATERAL] += bias[f];
        }
        self.keys = KeyState::released(self.keyboard.num_keys());
        self.t = 0;
        let mix = self.gap.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ episode_seed.rotate_left(17) ^ self.hand.index() as u64;
        self.rng = ChaCha8Rng::seed_from_u64(mix);
        self.observe()
    }

    pub fn goal_keys(&self, step: usize) -> Vec<u8> {
        self.roll.hand_goals_at(step, self.hand).map(|g| g.key).collect()
    }

    fn observe(&self) -> Observation {
        let (lo, hi) = self.region;
        let width = usize::from(hi - lo) + 1;
        let bias = self.gap.lateral_bias[self.hand.index()];
        let mut proprioception = Vec::with_capacity(13);
        for f in 0..FINGERS {
            for j in 0..4 {
                let b = if j == LATERAL { bias[f] } else { 0.0 };
                proprioception.push(self.q[f][j] - b);
            }
        }
        proprioception.push(self.last_command.wrist[1] - self.initial_wrist[1]);
        let current_activation = (lo..=hi).map(|k| self.keys.depression[usize::from(k)]).collect();
        let h = self.cfg.goal_horizon;
        let mut goal_window = vec![0.0; h * width];
        let mut active_fingers = vec![0.0; h * FINGERS];
        for i in 0..h {
            for g in self.roll.hand_goals_at(self.t + i, self.hand) {
                if (lo..=hi).contains(&g.key) {
                    goal_window[i * width + usize::from(g.key - lo)] = 1.0;
                }
                if let Some(f) = g.finger {
                    active_fingers[i * FINGERS + f.index()] = 1.0;
                }
            }
        }
        let n = self.roll.num_steps();
        Observation {
            proprioception,
            current_activation,
            goal_window,
            active_fingers,
            phase: if n == 0 { 0.0 } else { self.t as f64 / n as f64 },
        }
    }

    /// Actual joints and wrist, as the hardware would be.
    pub fn actual(&self) -> HandJoints {
        let mut wrist = self.last_command.wrist;
        wrist[1] += self.gap.wrist_y_offset[self.hand.index()];
        wrist[2] += self.gap.wrist_z_offset[self.hand.index()];
        HandJoints { fingers: self.q, wrist }
    }

    /// Applies an absolute joint command for one 10 Hz step.
    pub fn step(&mut self, command: &HandJoints) -> Result<StepOutcome> {
        if self.t >= self.roll.num_steps() {
            return Err(Error::Contract(format!(
                "step called at t={} on a {}-step episode",
                self.t,
                self.roll.num_steps()
            )));
        }
        let mut cmd = *command;
        self.hand_cfg.clamp(&mut cmd);
        let prev = self.last_command;
        let bias = self.gap.lateral_bias[self.hand.index()];
        let alpha = self.gap.lag_alpha;
        let sd = self.gap.actuation_noise_sd;
        let n = self.cfg.substeps.max(1);
        for k in 1..=n {
            let frac = k as f64 / n as f64;
            for f in 0..FINGERS {
                for j in 0..4 {
                    let c = if k == n {
                        cmd.fingers[f][j]
                    } else {
                        prev.fingers[f][j] + frac * (cmd.fingers[f][j] - prev.fingers[f][j])
                    };
                    let target = if j == LATERAL { c + bias[f] } else { c };
                    let q = &mut self.q[f][j];
                    *q = if alpha == 1.0 { target } else { *q + alpha * (target - *q) };
                    if sd > 0.0 {
                        let e: f64 = self.rng.sample(StandardNormal);
                        *q += sd * e;
                    }
                }
            }
        }
        for f in &mut self.q {
            self.hand_cfg.clamp_finger(f);
        }
        self.last_command = cmd;

        let actual = self.actual();
        let mut tips = forward_kinematics(&self.hand_cfg, self.hand, &actual);
        for tip in &mut tips {
            tip[2] = self.keyboard.depth_clamp(tip[2]);
        }
        let tagged: Vec<(usize, [f64; 3])> = tips.iter().copied().enumerate().collect();
        let threshold = self.cfg.activation_threshold + self.gap.threshold_shift;
        let ks = self.keyboard.step_keys(&tagged, &self.keys, threshold);

        let goals: Vec<Goal> = self.roll.hand_goals_at(self.t, self.hand).copied().collect();
        let goal_keys: Vec<u8> = goals.iter().map(|g| g.key).collect();
        let fingered: Vec<(Finger, u8)> = goals.iter().filter_map(|g| g.finger.map(|f| (f, g.key))).collect();
        let rc = &self.cfg.reward;
        let key_press = key_press_reward(&ks.state, &goal_keys, rc.key_on_coef);
        let fingering = fingering_reward(&tips, &fingered, &self.keyboard);
        let action_l1: f64 = cmd
            .fingers
            .iter()
            .zip(&prev.fingers)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .sum();
        let reward = RewardBreakdown {
            key_press,
            fingering,
            action_l1,
            total: rc.fingering_coef * fingering + rc.key_press_coef * key_press - rc.action_l1_coef * action_l1,
        };

        let mut pressed: [Vec<u8>; FINGERS] = Default::default();
        for &(f, k) in &ks.contacts {
            if !pressed[f].contains(&k) {
                pressed[f].push(k);
            }
        }
        for p in &mut pressed {
            p.sort_unstable();
        }
        let record = StepRecord {
            step: self.t,
            command: cmd,
            actual,
            pressed,
            active: ks.state.active_keys().collect(),
            goals,
            events: ks.events,
            reward,
        };
        self.keys = ks.state;
        self.t += 1;
        Ok(StepOutcome {
            obs: self.observe(),
            record,
            keys: self.keys.clone(),
        })
    }
}

/// Used key span of `hand` padded by `pad`, kept on the hand's side of the
/// split. A hand with no notes observes five keys an octave from the split.
pub fn observed_region(roll: &PianoRoll, hand: Hand, pad: u8, num_keys: u8) -> (u8, u8) {
    let split = roll.split();
    let (lo, hi) = match roll.key_span(hand) {
        Some((lo, hi)) => (lo.saturating_sub(pad), hi.saturating_add(pad)),
        None => {
            let c = match hand {
                Hand::Left => split.saturating_sub(12),
                Hand::Right => split.saturating_add(12),
            };
            (c.saturating_sub(2), c + 2)
        }
    };
    match hand {
        Hand::Left => (lo, hi.min(split.saturating_sub(1))),
        Hand::Right => (lo.max(split), hi.min(num_keys - 1)),
    }
}

/// Both hands stepped in lockstep.
#[derive(Debug, Clone)]
pub struct PianoEnv {
    pub hands: [HandEnv; 2],
}

impl PianoEnv {
    pub fn new(
        roll: Arc<PianoRoll>,
        keyboard: Arc<Keyboard>,
        hand_cfg: &HandConfig,
        gap: &GapModel,
        cfg: &EnvConfig,
        initial: &JointState,
    ) -> PianoEnv {
        let make = |hand: Hand| {
            HandEnv::new(
                hand,
                roll.clone(),
                keyboard.clone(),
                hand_cfg.clone(),
                gap.clone(),
                cfg.clone(),
                initial.hand(hand).wrist,
            )
        };
        PianoEnv {
            hands: [make(Hand::Left), make(Hand::Right)],
        }
    }

    pub fn num_steps(&self) -> usize {
        self.hands[0].num_steps()
    }

    pub fn roll(&self) -> &PianoRoll {
        self.hands[0].roll()
    }

    pub fn reset(&mut self, seed: u64) -> [Observation; 2] {
        [self.hands[0].reset(seed), self.hands[1].reset(seed)]
    }

    pub fn step(&mut self, command: &JointState) -> Result<[StepOutcome; 2]> {
        let l = self.hands[0].step(&command.hands[0])?;
        let r = self.hands[1].step(&command.hands[1])?;
        Ok([l, r])
    }
}

/// Per-hand step records of one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub hands: [Vec<StepRecord>; 2],
}

impl RolloutLog {
    pub fn len(&self) -> usize {
        self.hands[0].len().max(self.hands[1].len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hand(&self, hand: Hand) -> &[StepRecord] {
        &self.hands[hand.index()]
    }

    /// Union of active keys of both hands per step, ascending.
    pub fn active_per_step(&self) -> Vec<Vec<u8>> {
        (0..self.len())
            .map(|t| {
                let mut keys: Vec<u8> = self
                    .hands
                    .iter()
                    .filter_map(|h| h.get(t))
                    .flat_map(|r| r.active.iter().copied())
                    .collect();
                keys.sort_unstable();
                keys.dedup();
                keys
            })
            .collect()
    }

    pub fn press_events(&self) -> Vec<(usize, PressEvent)> {
        let mut out = Vec::new();
        for h in &self.hands {
            for r in h {
                out.extend(r.events.iter().map(|e| (r.step, *e)));
            }
        }
        out.sort_by_key(|(s, e)| (*s, e.key));
        out
    }

    /// Line-oriented log: one row per hand and step.
    pub fn to_text(&self, header: &ArtifactHeader) -> String {
        let mut out = header.render("rollout");
        out.push_str("# hand step | command (12 joints, wrist xyz) | actual (same) | pressed per finger | goals key:finger | key_press fingering action_l1 total\n");
        for (hi, hand) in Hand::BOTH.iter().enumerate() {
            for r in &self.hands[hi] {
                let _ = write!(out, "{hand} {} |", r.step);
                for j in [&r.command, &r.actual] {
                    for q in j.flat() {
                        let _ = write!(out, " {q:.6}");
                    }
                    for w in j.wrist {
                        let _ = write!(out, " {w:.6}");
                    }
                    out.push_str(" |");
                }
                for p in &r.pressed {
                    let keys: Vec<String> = p.iter().map(u8::to_string).collect();
                    let _ = write!(out, " [{}]", keys.join(","));
                }
                out.push_str(" |");
                for g in &r.goals {
                    let f = g.finger.map_or_else(|| "-".to_string(), |f| f.number().to_string());
                    let _ = write!(out, " {}:{f}", g.key);
                }
                let rw = &r.reward;
                let _ = writeln!(
                    out,
                    " | {:.6} {:.6} {:.6} {:.6}",
                    rw.key_press, rw.fingering, rw.action_l1, rw.total
                );
            }
        }
        out
    }
}

/// Executes `traj` open-loop: step `t` commands `s_{t+1}`.
pub fn execute_trajectory(env: &mut PianoEnv, traj: &JointTrajectory, seed: u64) -> Result<RolloutLog> {
    traj.check_matches(env.roll())?;
    env.reset(seed);
    let mut log = RolloutLog::default();
    for t in 0..env.num_steps() {
        let [l, r] = env.step(&traj.states[t + 1])?;
        log.hands[0].push(l.record);
        log.hands[1].push(r.record);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::script_wrist;
    use crate::score::{NoteEvent, DEFAULT_SPLIT};

    fn setup(notes: &[(u8, usize, usize, Finger)]) -> (Arc<PianoRoll>, Arc<Keyboard>, HandConfig, JointTrajectory) {
        let notes = notes
            .iter()
            .map(|&(key, onset, duration, f)| NoteEvent {
                key,
                onset,
                duration,
                hand: Hand::for_key(key, DEFAULT_SPLIT),
                finger: Some(f),
            })
            .collect();
        let roll = Arc::new(PianoRoll::new("t", DEFAULT_SPLIT, notes).unwrap());
        let kb = Arc::new(Keyboard::build(88, &KeyboardDims::default()));
        let cfg = HandConfig::default();
        let wrists = script_wrist(&roll, &kb, &cfg).unwrap();
        let traj = JointTrajectory::rest(&roll, &cfg, &wrists);
        (roll, kb, cfg, traj)
    }

    /// Flexes the goal fingers of each step fully down.
    fn pressing(roll: &PianoRoll, mut traj: JointTrajectory) -> JointTrajectory {
        for t in 0..roll.num_steps() {
            for g in roll.goals_at(t) {
                traj.states[t + 1].hands[g.hand.index()].fingers[g.finger.unwrap().index()][1] = 0.85;
            }
        }
        traj
    }

    fn env_for(roll: &Arc<PianoRoll>, kb: &Arc<Keyboard>, cfg: &HandConfig, gap: GapModel, traj: &JointTrajectory) -> PianoEnv {
        PianoEnv::new(roll.clone(), kb.clone(), cfg, &gap, &EnvConfig::default(), &traj.states[0])
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel(0.0), 1.0);
        assert!((kernel(0.05) - 0.1).abs() < 1e-15);
        assert!(kernel(1.0) < 1e-100);
    }

    fn keys_with(pressed: &[(u8, f64)]) -> KeyState {
        let mut ks = KeyState::released(88);
        for &(k, d) in pressed {
            ks.depression[usize::from(k)] = d;
            ks.active[usize::from(k)] = d >= 0.5;
        }
        ks
    }

    #[test]
    fn key_press_reward_cases() {
        assert_eq!(key_press_reward(&keys_with(&[(60, 1.0), (64, 1.0)]), &[60, 64], 0.7), 1.0);
        let r = key_press_reward(&keys_with(&[(60, 1.0), (61, 1.0)]), &[60], 0.7);
        assert!((r - 0.7).abs() < 1e-15);
        assert_eq!(key_press_reward(&keys_with(&[]), &[], 0.7), 1.0);
        // Nothing sounding with a goal: only the false-positive bonus remains.
        let r = key_press_reward(&keys_with(&[]), &[60], 0.7);
        assert!((r - (0.7 * kernel(1.0) + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn real_reward_switches_coefficient() {
        let ks = keys_with(&[(60, 1.0), (61, 1.0)]);
        assert!((make_real_reward(&ks, &[60], 0) - 0.7).abs() < 1e-15);
        assert!((make_real_reward(&ks, &[60], 9_999) - 0.7).abs() < 1e-15);
        assert!((make_real_reward(&ks, &[60], 10_000) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fingering_reward_cases() {
        let kb = Keyboard::build(88, &KeyboardDims::default());
        let s = kb.spec(50);
        let mut tips = [[s.contact_x, s.center_y, 0.0]; 3];
        assert_eq!(fingering_reward(&tips, &[(Finger::Index, 50)], &kb), 1.0);
        tips[0][1] += 0.05;
        assert!((fingering_reward(&tips, &[(Finger::Index, 50)], &kb) - 0.1).abs() < 1e-12);
        assert_eq!(fingering_reward(&tips, &[], &kb), 1.0);
        // Depth does not matter.
        tips[0] = [s.contact_x - 0.03, s.center_y, 0.0];
        assert_eq!(fingering_reward(&tips, &[(Finger::Index, 50)], &kb), 1.0);
    }

    #[test]
    fn nominal_press_scores_full_reward() {
        let (roll, kb, cfg, traj) = setup(&[(51, 0, 3, Finger::Middle)]);
        let traj = pressing(&roll, traj);
        let mut env = env_for(&roll, &kb, &cfg, GapModel::identity(), &traj);
        let log = execute_trajectory(&mut env, &traj, 0).unwrap();
        for r in log.hand(Hand::Right) {
            assert_eq!(r.active, vec![51]);
            assert_eq!(r.reward.key_press, 1.0);
            assert_eq!(r.pressed[1], vec![51]);
        }
    }

    #[test]
    fn lateral_bias_presses_neighbour() {
        // Key 51 (C5) is white, 50 (B4) white below it with no black key between.
        let (roll, kb, cfg, traj) = setup(&[(51, 0, 2, Finger::Middle)]);
        let traj = pressing(&roll, traj);
        let mut gap = GapModel::identity();
        gap.lateral_bias[Hand::Right.index()][1] = -cfg.lateral_angle_for(1, kb.specs()[50].half_width * 2.0);
        let mut env = env_for(&roll, &kb, &cfg, gap, &traj);
        let log = execute_trajectory(&mut env, &traj, 0).unwrap();
        let r = &log.hand(Hand::Right)[0];
        assert_eq!(r.active, vec![50]);
        assert_eq!(r.events[0].key, 50);
        let d = r.actual.fingers[1][0];
        assert!(d < 0.0);
        // Goal key untouched, wrong key sounding.
        assert!((r.reward.key_press - 0.7 * kernel(1.0)).abs() < 1e-15);
    }

    #[test]
    fn idle_command_presses_nothing() {
        let (roll, kb, cfg, traj) = setup(&[(51, 2, 3, Finger::Index)]);
        let mut env = env_for(&roll, &kb, &cfg, GapModel::identity(), &traj);
        let log = execute_trajectory(&mut env, &traj, 0).unwrap();
        for r in log.hand(Hand::Right) {
            assert!(r.active.is_empty());
            let expect = if r.goals.is_empty() { 1.0 } else { 0.7 * kernel(1.0) + 0.3 };
            assert!((r.reward.key_press - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn reset_is_repeatable_and_windows_goals() {
        let (roll, kb, cfg, traj) = setup(&[(51, 0, 3, Finger::Index), (53, 12, 2, Finger::Ring)]);
        let mut env = HandEnv::new(Hand::Right, roll, kb, cfg, GapModel::identity(), EnvConfig::default(), traj.states[0].hands[1].wrist);
        let a = env.reset(4);
        let b = env.reset(4);
        assert_eq!(a, b);
        assert!(a.current_activation.iter().all(|&d| d == 0.0));
        assert_eq!(a.dim(), env.obs_dim());
        let (lo, hi) = env.region();
        let width = usize::from(hi - lo) + 1;
        for i in 0..10 {
            let row = &a.goal_window[i * width..(i + 1) * width];
            let want: Vec<f64> = (lo..=hi).map(|k| if k == 51 && i < 3 { 1.0 } else { 0.0 }).collect();
            assert_eq!(row, &want[..]);
        }
    }

    #[test]
    fn goal_window_zero_padded_at_end() {
        let (roll, kb, cfg, traj) = setup(&[(51, 0, 4, Finger::Index)]);
        let mut env = HandEnv::new(Hand::Right, roll, kb, cfg, GapModel::identity(), EnvConfig::default(), traj.states[0].hands[1].wrist);
        env.reset(0);
        let mut obs = None;
        for t in 0..3 {
            obs = Some(env.step(&traj.states[t + 1].hands[1]).unwrap().obs);
        }
        let obs = obs.unwrap();
        let width = usize::from(env.region().1 - env.region().0) + 1;
        assert_eq!(obs.goal_window.iter().sum::<f64>(), 1.0);
        assert!(obs.goal_window[width..].iter().all(|&v| v == 0.0));
        assert_eq!(obs.dim(), env.obs_dim());
        env.step(&traj.states[4].hands[1]).unwrap();
        assert!(matches!(env.step(&traj.states[4].hands[1]), Err(Error::Contract(_))));
    }

    #[test]
    fn lag_converges_geometrically() {
        let (roll, kb, cfg, traj) = setup(&[(51, 0, 30, Finger::Index)]);
        let mut gap = GapModel::identity();
        gap.lag_alpha = 0.3;
        gap.lateral_bias[1][0] = 0.05;
        let mut env = HandEnv::new(Hand::Right, roll, kb, cfg.clone(), gap, EnvConfig::default(), traj.states[0].hands[1].wrist);
        env.reset(0);
        let mut cmd = traj.states[0].hands[1];
        cmd.fingers[0][0] = 0.2;
        // First step ramps the command; afterwards it is constant.
        env.step(&cmd).unwrap();
        let target = 0.2 + 0.05;
        let e0 = target - env.actual().fingers[0][0];
        env.step(&cmd).unwrap();
        let e1 = target - env.actual().fingers[0][0];
        assert!((e1 / e0 - 0.7f64.powi(8)).abs() < 1e-9);
    }

    #[test]
    fn identity_gap_matches_nominal_bit_for_bit() {
        let roll = Arc::new(crate::songs::bundled("twinkle").unwrap());
        let kb = Arc::new(Keyboard::build(88, &KeyboardDims::default()));
        let cfg = HandConfig::default();
        let wrists = script_wrist(&roll, &kb, &cfg).unwrap();
        let traj = pressing(&roll, JointTrajectory::rest(&roll, &cfg, &wrists));
        let gap = GapModel::from_preset(GapPreset::Identity, 99, &cfg, &KeyboardDims::default());
        let mut a = env_for(&roll, &kb, &cfg, GapModel::identity(), &traj);
        let mut b = env_for(&roll, &kb, &cfg, gap, &traj);
        let la = execute_trajectory(&mut a, &traj, 3).unwrap();
        let lb = execute_trajectory(&mut b, &traj, 3).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn preset_names_round_trip() {
        for p in GapPreset::ALL {
            assert_eq!(p.to_string().parse::<GapPreset>().unwrap(), p);
        }
        assert!("bogus".parse::<GapPreset>().is_err());
    }

    #[test]
    fn bias_only_gap_stays_within_range() {
        let cfg = HandConfig::default();
        let dims = KeyboardDims::default();
        for seed in 0..20 {
            let gap = GapModel::from_preset(GapPreset::BiasOnly, seed, &cfg, &dims);
            for h in gap.lateral_bias {
                for (f, b) in h.into_iter().enumerate() {
                    assert!(b.abs() <= cfg.lateral_angle_for(f, 0.6 * dims.white_width));
                }
            }
            assert_eq!(gap.lag_alpha, 1.0);
        }
    }
}
