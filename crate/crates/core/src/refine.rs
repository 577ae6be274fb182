//! Lateral-joint refinement of an open-loop trajectory from press logs.
//!
//! Each iteration executes the trajectory, compares the keys each active
//! finger pressed against its target, and nudges that finger's lateral joint
//! toward the target by a signed step that is averaged over a chunk of
//! upcoming steps. The step anneals geometrically and the best trajectory by
//! F1 is kept.

use serde::{Deserialize, Serialize};

use crate::env::{execute_trajectory, PianoEnv, StepRecord};
use crate::error::{Error, Result};
use crate::eval::score_f1;
use crate::hand::{fingers_left_to_right, HandConfig, JointTrajectory, FINGERS, LATERAL};
use crate::keyboard::KeyboardDims;
use crate::score::{Finger, Hand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// First-iteration step size in radians.
    pub delta_init: f64,
    pub anneal_factor: f64,
    pub iterations: usize,
    pub chunk_k: usize,
    pub lookahead_l: usize,
    pub neighbor_coef: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            delta_init: default_delta_init(&HandConfig::default(), &KeyboardDims::default()),
            anneal_factor: 0.7,
            iterations: 10,
            chunk_k: 10,
            lookahead_l: 5,
            neighbor_coef: 0.3,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_init > 0.0) {
            return Err(Error::Config("refine.delta_init must be > 0".into()));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor < 1.0) {
            return Err(Error::Config("refine.anneal_factor must be in (0, 1)".into()));
        }
        if self.chunk_k < 1 {
            return Err(Error::Config("refine.chunk_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Half the lateral angle one white key subtends at the middle fingertip.
pub fn default_delta_init(hand: &HandConfig, dims: &KeyboardDims) -> f64 {
    0.5 * hand.lateral_angle_for(Finger::Middle.index(), dims.white_width)
}

/// Partitions `pressed` among `targets` (ordered left to right) into
/// contiguous, order-preserving blocks minimizing total distance from each
/// key to its finger's target. Ties prefer smaller blocks to the left.
pub fn assign_fingers(pressed: &[u8], targets: &[(Finger, u8)]) -> Vec<(Finger, Vec<u8>)> {
    let mut keys = pressed.to_vec();
    keys.sort_unstable();
    keys.dedup();
    if keys.is_empty() || targets.is_empty() {
        return Vec::new();
    }
    let n = keys.len();
    let m = targets.len();
    let cost = |f: usize, from: usize, to: usize| -> u32 {
        keys[from..to]
            .iter()
            .map(|&k| u32::from(k.abs_diff(targets[f].1)))
            .sum()
    };
    // best[f][j]: (cost, first block size) assigning keys[j..] to fingers f..
    let mut best = vec![vec![(u32::MAX, 0usize); n + 1]; m + 1];
    best[m][n] = (0, 0);
    for f in (0..m).rev() {
        for j in 0..=n {
            let sizes = if f == m - 1 { n - j..=n - j } else { 0..=n - j };
            for s in sizes {
                let rest = best[f + 1][j + s].0;
                if rest == u32::MAX {
                    continue;
                }
                let c = cost(f, j, j + s) + rest;
                if c < best[f][j].0 {
                    best[f][j] = (c, s);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(m);
    let mut j = 0;
    for (f, &(finger, _)) in targets.iter().enumerate() {
        let s = best[f][j].1;
        out.push((finger, keys[j..j + s].to_vec()));
        j += s;
    }
    out
}

/// `+delta` when the pressed key is below the target, `-delta` above, else 0.
/// A finger that pressed nothing yields 0.
pub fn signed_error(pressed_closest: Option<u8>, target: u8, delta: f64) -> f64 {
    match pressed_closest {
        Some(p) if p < target => delta,
        Some(p) if p > target => -delta,
        _ => 0.0,
    }
}

/// Sum of the `K + L + 1` supplied errors divided by `K + L`.
pub fn chunk_correction(deltas: &[f64], k: usize, l: usize) -> f64 {
    deltas.iter().sum::<f64>() / (k + l) as f64
}

/// Closest key to `target` (ties toward the lower key).
fn closest(keys: &[u8], target: u8) -> Option<u8> {
    keys.iter().copied().min_by_key(|&k| (k.abs_diff(target), k))
}

/// Per-finger signed errors for one hand's log, indexed `[finger][step]`.
pub fn hand_errors(records: &[StepRecord], hand: Hand, delta: f64) -> [Vec<f64>; FINGERS] {
    let order = fingers_left_to_right(hand);
    let mut out: [Vec<f64>; FINGERS] = std::array::from_fn(|_| vec![0.0; records.len()]);
    for (t, r) in records.iter().enumerate() {
        let mut targets: Vec<(Finger, u8)> = r.goals.iter().filter_map(|g| g.finger.map(|f| (f, g.key))).collect();
        if targets.is_empty() {
            continue;
        }
        targets.sort_by_key(|(f, k)| (order.iter().position(|o| o == f), *k));
        for (finger, keys) in assign_fingers(&r.active, &targets) {
            let target = targets.iter().find(|(f, _)| *f == finger).map(|t| t.1).unwrap();
            out[finger.index()][t] += signed_error(closest(&keys, target), target, delta);
        }
    }
    out
}

/// Fingers physically adjacent to `finger` within the hand.
fn neighbors(finger: usize) -> &'static [usize] {
    match finger {
        0 => &[1],
        1 => &[0, 2],
        _ => &[1],
    }
}

/// One update: chunked corrections per finger, single-hop neighbor terms,
/// clamped to joint limits. Only lateral joints change.
pub fn refine_iteration(
    traj: &JointTrajectory,
    log: &[Vec<StepRecord>; 2],
    delta: f64,
    cfg: &RefineConfig,
    hand_cfg: &HandConfig,
) -> Result<JointTrajectory> {
    let steps = traj.num_steps();
    for records in log {
        if records.len() != steps {
            return Err(Error::LengthMismatch {
                what: "press log vs trajectory steps",
                expected: steps,
                got: records.len(),
            });
        }
    }
    let mut out = traj.clone();
    let (k, l) = (cfg.chunk_k, cfg.lookahead_l);
    for hand in Hand::BOTH {
        let errors = hand_errors(&log[hand.index()], hand, delta);
        let mut start = 0;
        while start < steps {
            let mut shift = [0.0; FINGERS];
            for f in 0..FINGERS {
                let window: Vec<f64> = (start..=start + k + l)
                    .map(|j| errors[f].get(j).copied().unwrap_or(0.0))
                    .collect();
                let c = chunk_correction(&window, k, l);
                if c != 0.0 {
                    shift[f] += c;
                    for &n in neighbors(f) {
                        shift[n] += cfg.neighbor_coef * c;
                    }
                }
            }
            if shift.iter().any(|&s| s != 0.0) {
                let (lo, hi) = hand_cfg.joint_limits[LATERAL];
                for t in start..(start + k).min(steps) {
                    let h = &mut out.states[t + 1].hands[hand.index()];
                    for f in 0..FINGERS {
                        if shift[f] != 0.0 {
                            h.fingers[f][LATERAL] = (h.fingers[f][LATERAL] + shift[f]).clamp(lo, hi);
                        }
                    }
                }
            }
            start += k;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub best: JointTrajectory,
    pub best_f1: f64,
    pub best_iteration: usize,
    /// F1 of the trajectory entering each iteration, then of the final one.
    pub history: Vec<f64>,
    pub trajectories: Vec<JointTrajectory>,
}

/// Alternates rollouts and updates, keeping the best trajectory by F1.
/// Rollout `i` uses episode seed `seed + i`.
pub fn refine(
    env: &mut PianoEnv,
    traj0: &JointTrajectory,
    cfg: &RefineConfig,
    hand_cfg: &HandConfig,
    seed: u64,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    let roll = env.roll().clone();
    let mut current = traj0.clone();
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    let mut trajectories = Vec::with_capacity(cfg.iterations + 1);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for i in 0..=cfg.iterations {
        let log = execute_trajectory(env, &current, seed + i as u64)?;
        let f1 = score_f1(&log.active_per_step(), &roll)?.f1;
        log::debug!("refine iteration {i}: F1 {f1:.4}");
        history.push(f1);
        if f1 > best.0 {
            best = (f1, i);
        }
        trajectories.push(current.clone());
        if i == cfg.iterations {
            break;
        }
        let delta = cfg.delta_init * cfg.anneal_factor.powi(i as i32);
        current = refine_iteration(&current, &log.hands, delta, cfg, hand_cfg)?;
    }
    Ok(RefineOutcome {
        best: trajectories[best.1].clone(),
        best_f1: best.0,
        best_iteration: best.1,
        history,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, GapModel, RewardBreakdown};
    use crate::hand::{script_wrist, HandJoints};
    use crate::keyboard::Keyboard;
    use crate::score::{Goal, NoteEvent, PianoRoll, DEFAULT_SPLIT};
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn assign_examples() {
        let t = [(Finger::Index, 60), (Finger::Ring, 64)];
        assert_eq!(assign_fingers(&[60, 64], &t), vec![(Finger::Index, vec![60]), (Finger::Ring, vec![64])]);
        assert!(assign_fingers(&[], &t).is_empty());
        assert_eq!(
            assign_fingers(&[60, 61, 64], &t),
            vec![(Finger::Index, vec![60, 61]), (Finger::Ring, vec![64])]
        );
        // Equidistant key goes to the right finger (smaller left block).
        assert_eq!(assign_fingers(&[62], &t), vec![(Finger::Index, vec![]), (Finger::Ring, vec![62])]);
    }

    fn brute_assign(keys: &[u8], targets: &[(Finger, u8)]) -> Vec<usize> {
        let n = keys.len();
        let m = targets.len();
        let mut best: Option<(u32, Vec<usize>)> = None;
        // Every map keys -> fingers, kept only when non-decreasing.
        let total = m.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let assign: Vec<usize> = (0..n)
                .map(|_| {
                    let f = c % m;
                    c /= m;
                    f
                })
                .collect();
            if assign.windows(2).any(|w| w[0] > w[1]) {
                continue;
            }
            let cost: u32 = keys.iter().zip(&assign).map(|(&k, &f)| u32::from(k.abs_diff(targets[f].1))).sum();
            let sizes: Vec<usize> = (0..m).map(|f| assign.iter().filter(|&&a| a == f).count()).collect();
            let better = match &best {
                None => true,
                Some((bc, bs)) => cost < *bc || (cost == *bc && sizes < *bs),
            };
            if better {
                best = Some((cost, sizes));
            }
        }
        best.unwrap().1
    }

    proptest! {
        #[test]
        fn assign_matches_brute_force(
            keys in proptest::collection::btree_set(40u8..70, 1..6),
            t in proptest::collection::vec(40u8..70, 1..4),
        ) {
            let keys: Vec<u8> = keys.into_iter().collect();
            let targets: Vec<(Finger, u8)> = t.iter().enumerate().map(|(i, &k)| (Finger::from_index(i), k)).collect();
            let got = assign_fingers(&keys, &targets);
            let sizes: Vec<usize> = got.iter().map(|(_, b)| b.len()).collect();
            prop_assert_eq!(sizes, brute_assign(&keys, &targets));
            let flat: Vec<u8> = got.into_iter().flat_map(|(_, b)| b).collect();
            prop_assert_eq!(flat, keys);
        }

        #[test]
        fn chunk_matches_formula(d in proptest::collection::vec(-1.0f64..1.0, 2..30), k in 1usize..10) {
            let l = d.len() - 1 - (k.min(d.len() - 1));
            let k = d.len() - 1 - l;
            prop_assume!(k >= 1);
            let mut direct = 0.0;
            for x in &d { direct += x; }
            prop_assert!((chunk_correction(&d, k, l) - direct / (k + l) as f64).abs() <= 1e-15);
        }
    }

    #[test]
    fn signed_error_cases() {
        assert_eq!(signed_error(Some(60), 62, 0.02), 0.02);
        assert_eq!(signed_error(Some(64), 62, 0.02), -0.02);
        assert_eq!(signed_error(Some(62), 62, 0.02), 0.0);
        assert_eq!(signed_error(None, 62, 0.02), 0.0);
    }

    #[test]
    fn chunk_examples() {
        assert!((chunk_correction(&[0.1, 0.1, 0.0, 0.0], 2, 1) - 0.2 / 3.0).abs() < 1e-15);
        assert_eq!(chunk_correction(&[0.0; 16], 10, 5), 0.0);
        assert!((chunk_correction(&[0.02, 0.02], 1, 0) - 0.04).abs() < 1e-15);
    }

    fn toy(steps: usize) -> (JointTrajectory, PianoRoll) {
        let notes = vec![NoteEvent {
            key: 60,
            onset: 0,
            duration: steps,
            hand: Hand::Right,
            finger: Some(Finger::Middle),
        }];
        let roll = PianoRoll::new("toy", DEFAULT_SPLIT, notes).unwrap();
        let cfg = HandConfig::default();
        let kb = Keyboard::build(88, &KeyboardDims::default());
        let wrists = script_wrist(&roll, &kb, &cfg).unwrap();
        (JointTrajectory::rest(&roll, &cfg, &wrists), roll)
    }

    fn record(t: usize, active: Vec<u8>, goals: Vec<Goal>) -> StepRecord {
        StepRecord {
            step: t,
            command: HandJoints::rest(&HandConfig::default(), [0.0; 3]),
            actual: HandJoints::rest(&HandConfig::default(), [0.0; 3]),
            pressed: Default::default(),
            active,
            goals,
            events: vec![],
            reward: RewardBreakdown::default(),
        }
    }

    fn logs(roll: &PianoRoll, pressed: impl Fn(usize) -> Vec<u8>) -> [Vec<StepRecord>; 2] {
        let right = (0..roll.num_steps())
            .map(|t| record(t, pressed(t), roll.goals_at(t).to_vec()))
            .collect();
        let left = (0..roll.num_steps()).map(|t| record(t, vec![], vec![])).collect();
        [left, right]
    }

    #[test]
    fn one_key_left_hand_trace() {
        // 10 steps, K=4, L=2: chunks start at 0, 4, 8.
        let (traj, roll) = toy(10);
        let cfg = RefineConfig {
            chunk_k: 4,
            lookahead_l: 2,
            ..RefineConfig::default()
        };
        let hc = HandConfig::default();
        let d = 0.02;
        let out = refine_iteration(&traj, &logs(&roll, |_| vec![59]), d, &cfg, &hc).unwrap();
        let chunk_sum = |start: usize| (start..=start + 6).filter(|&j| j < 10).count() as f64 * d / 6.0;
        for t in 0..10 {
            let c = chunk_sum(t / 4 * 4);
            let before = &traj.states[t + 1].hands[1].fingers;
            let after = &out.states[t + 1].hands[1].fingers;
            assert!((after[1][0] - before[1][0] - c).abs() < 1e-15);
            assert!((after[0][0] - before[0][0] - 0.3 * c).abs() < 1e-15);
            assert!((after[2][0] - before[2][0] - 0.3 * c).abs() < 1e-15);
            for f in 0..3 {
                assert_eq!(&after[f][1..], &before[f][1..]);
            }
            assert_eq!(out.states[t + 1].hands[1].wrist, traj.states[t + 1].hands[1].wrist);
        }
        assert_eq!(out.states[0], traj.states[0]);
        // First chunk has the full K+L+1 terms.
        assert!((chunk_sum(0) - d * 7.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_log_is_identity() {
        let (traj, roll) = toy(12);
        let out = refine_iteration(&traj, &logs(&roll, |_| vec![60]), 0.1, &RefineConfig::default(), &HandConfig::default()).unwrap();
        assert_eq!(out, traj);
    }

    #[test]
    fn correction_clamps_at_limit() {
        let (traj, roll) = toy(12);
        let hc = HandConfig::default();
        let out = refine_iteration(&traj, &logs(&roll, |_| vec![40]), 5.0, &RefineConfig::default(), &hc).unwrap();
        assert_eq!(out.states[3].hands[1].fingers[1][0], hc.joint_limits[0].1);
    }

    // Each chunk sum has K+L+1 terms over K+L, and the middle finger takes
    // neighbor terms from both sides, so the per-joint total over annealed
    // iterations is bounded by (K+L+1)/(K+L) * (1 + 0.3 n) * delta / (1 - a).
    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn total_correction_is_bounded(
            presses in proptest::collection::vec(proptest::collection::btree_set(56u8..69, 0..4), 6..6 * 5),
            iters in 1usize..6,
            k in 1usize..6,
            l in 0usize..4,
        ) {
            let n = presses.len() / 6 * 6;
            let notes = [(60, Finger::Index), (62, Finger::Middle), (64, Finger::Ring)]
                .map(|(key, f)| NoteEvent { key, onset: 0, duration: n, hand: Hand::Right, finger: Some(f) })
                .to_vec();
            let roll = PianoRoll::new("three", DEFAULT_SPLIT, notes).unwrap();
            let hc = HandConfig { joint_limits: [(-50.0, 50.0), (-0.3, 0.9), (0.0, 1.0), (0.0, 1.6)], ..HandConfig::default() };
            let kb = Keyboard::build(88, &KeyboardDims::default());
            let wrists = script_wrist(&roll, &kb, &HandConfig::default()).unwrap();
            let traj0 = JointTrajectory::rest(&roll, &hc, &wrists);
            let cfg = RefineConfig { chunk_k: k, lookahead_l: l, ..RefineConfig::default() };
            let mut traj = traj0.clone();
            let mut total = vec![[0.0f64; FINGERS]; n];
            for i in 0..iters {
                let log = logs(&roll, |t| presses[t].iter().copied().collect());
                let delta = cfg.delta_init * cfg.anneal_factor.powi(i as i32);
                let next = refine_iteration(&traj, &log, delta, &cfg, &hc).unwrap();
                for t in 0..n {
                    for f in 0..FINGERS {
                        total[t][f] += (next.states[t + 1].hands[1].fingers[f][LATERAL] - traj.states[t + 1].hands[1].fingers[f][LATERAL]).abs();
                    }
                }
                traj = next;
            }
            let kl = (k + l) as f64;
            for row in &total {
                for f in 0..FINGERS {
                    let bound = (kl + 1.0) / kl * (1.0 + cfg.neighbor_coef * neighbors(f).len() as f64) * cfg.delta_init / (1.0 - cfg.anneal_factor);
                    prop_assert!(row[f] <= bound + 1e-12, "finger {} total {} bound {}", f, row[f], bound);
                }
            }
        }
    }

    #[test]
    fn log_length_mismatch() {
        let (traj, roll) = toy(12);
        let mut l = logs(&roll, |_| vec![60]);
        l[1].pop();
        assert!(matches!(
            refine_iteration(&traj, &l, 0.1, &RefineConfig::default(), &HandConfig::default()),
            Err(Error::LengthMismatch { .. })
        ));
    }

    fn pressing_env(gap: GapModel) -> (PianoEnv, JointTrajectory) {
        let roll = Arc::new(crate::songs::bundled("buns").unwrap());
        let kb = Arc::new(Keyboard::build(88, &KeyboardDims::default()));
        let hc = HandConfig::default();
        let wrists = script_wrist(&roll, &kb, &hc).unwrap();
        let mut traj = JointTrajectory::rest(&roll, &hc, &wrists);
        for t in 0..roll.num_steps() {
            for g in roll.goals_at(t) {
                traj.states[t + 1].hands[g.hand.index()].fingers[g.finger.unwrap().index()][1] = 0.85;
            }
        }
        let env = PianoEnv::new(roll, kb, &hc, &gap, &EnvConfig::default(), &traj.states[0]);
        (env, traj)
    }

    #[test]
    fn identity_gap_returns_input() {
        let (mut env, traj) = pressing_env(GapModel::identity());
        let out = refine(&mut env, &traj, &RefineConfig::default(), &HandConfig::default(), 0).unwrap();
        assert_eq!(out.best, traj);
        assert_eq!(out.history.len(), 11);
        assert!(out.history.iter().all(|&f| f == out.history[0]));
    }

    #[test]
    fn zero_iterations_returns_input() {
        let (mut env, traj) = pressing_env(GapModel::identity());
        let cfg = RefineConfig {
            iterations: 0,
            ..RefineConfig::default()
        };
        let out = refine(&mut env, &traj, &cfg, &HandConfig::default(), 0).unwrap();
        assert_eq!(out.best, traj);
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn bias_is_corrected_and_only_laterals_move() {
        let hc = HandConfig::default();
        let mut gap = GapModel::identity();
        // Every finger lands about one key off.
        gap.lateral_bias[1] = [0.25, -0.25, 0.22];
        gap.lateral_bias[0] = [-0.24, 0.25, 0.23];
        let (mut env, traj) = pressing_env(gap);
        let out = refine(&mut env, &traj, &RefineConfig::default(), &hc, 0).unwrap();
        assert!(out.history[0] < 0.5, "history {:?}", out.history);
        assert!(out.best_f1 >= out.history[0]);
        assert!(out.best_f1 > 0.9, "history {:?}", out.history);
        for (a, b) in out.best.states.iter().zip(&traj.states) {
            for h in 0..2 {
                assert_eq!(a.hands[h].wrist, b.hands[h].wrist);
                for f in 0..3 {
                    assert_eq!(a.hands[h].fingers[f][1..], b.hands[h].fingers[f][1..]);
                }
            }
        }
    }
}
