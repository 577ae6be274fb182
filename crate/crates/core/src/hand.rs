//! Kinematics of two three-finger hands and the scripted wrist tracks.
//!
//! Each finger is a serial chain: a lateral joint rotating about the vertical
//! axis at the finger base, followed by three flexion joints rotating about
//! the finger's lateral axis (positive flexion curls the finger downward).
//! Link `i` follows joint `i`. Fingers point along `+x` at zero lateral angle.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ArtifactHeader;
use crate::keyboard::Keyboard;
use crate::score::{Finger, Hand, PianoRoll};

pub const FINGERS: usize = 3;
pub const JOINTS_PER_FINGER: usize = 4;
pub const LATERAL: usize = 0;
/// Joint held at a constant angle by the sim-training pipeline.
pub const LAST_FLEXION: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandConfig {
    /// Link lengths per finger (index, middle, ring), proximal first.
    pub link_lengths: [[f64; JOINTS_PER_FINGER]; FINGERS],
    /// Finger base positions relative to the wrist, right hand. The left hand
    /// mirrors `y`, so its index finger sits on the high side.
    pub finger_base_offsets: [[f64; 3]; FINGERS],
    /// `[lo, hi]` per joint, shared by all fingers.
    pub joint_limits: [(f64, f64); JOINTS_PER_FINGER],
    /// Resting (hover) joint angles, shared by all fingers.
    pub rest_pose: [f64; JOINTS_PER_FINGER],
    /// Angle of the last flexion joint in trained trajectories.
    pub fixed_last_joint: f64,
    /// Fingertip height above the white key tops in the rest pose.
    pub hover_height: f64,
}

impl Default for HandConfig {
    fn default() -> Self {
        let links = [0.02, 0.045, 0.03, 0.015];
        HandConfig {
            link_lengths: [links; FINGERS],
            finger_base_offsets: [[0.0, -0.025, 0.0], [0.0, 0.0, 0.0], [0.0, 0.025, 0.0]],
            joint_limits: [(-0.4, 0.4), (-0.3, 0.9), (0.0, 1.0), (0.0, 1.6)],
            rest_pose: [0.0, 0.2, 0.3, 1.0],
            fixed_last_joint: 1.0,
            hover_height: 0.02,
        }
    }
}

impl HandConfig {
    pub fn base_offset(&self, hand: Hand, finger: usize) -> [f64; 3] {
        let [x, y, z] = self.finger_base_offsets[finger];
        match hand {
            Hand::Right => [x, y, z],
            Hand::Left => [x, -y, z],
        }
    }

    pub fn clamp_finger(&self, joints: &mut [f64; JOINTS_PER_FINGER]) {
        for (q, &(lo, hi)) in joints.iter_mut().zip(&self.joint_limits) {
            *q = q.clamp(lo, hi);
        }
    }

    pub fn clamp(&self, joints: &mut HandJoints) {
        for f in &mut joints.fingers {
            self.clamp_finger(f);
        }
    }

    /// Fingertip of one finger relative to the wrist.
    pub fn fingertip_local(&self, hand: Hand, finger: usize, q: &[f64; JOINTS_PER_FINGER]) -> [f64; 3] {
        let l = &self.link_lengths[finger];
        let base = self.base_offset(hand, finger);
        let mut phi = 0.0;
        let mut reach = l[0];
        let mut drop = 0.0;
        for j in 1..JOINTS_PER_FINGER {
            phi += q[j];
            reach += l[j] * phi.cos();
            drop += l[j] * phi.sin();
        }
        let (s, c) = q[LATERAL].sin_cos();
        [base[0] + reach * c, base[1] + reach * s, base[2] - drop]
    }

    /// Rest-pose fingertip positions relative to the wrist.
    pub fn finger_offsets(&self, hand: Hand) -> [[f64; 3]; FINGERS] {
        std::array::from_fn(|f| self.fingertip_local(hand, f, &self.rest_pose))
    }

    /// Horizontal distance from the lateral joint to the rest-pose fingertip.
    pub fn fingertip_radius(&self, finger: usize) -> f64 {
        let local = self.fingertip_local(Hand::Right, finger, &{
            let mut q = self.rest_pose;
            q[LATERAL] = 0.0;
            q
        });
        local[0] - self.finger_base_offsets[finger][0]
    }

    /// Largest lateral fingertip displacement the lateral joint allows.
    pub fn lateral_reach(&self, finger: usize) -> f64 {
        let (lo, hi) = self.joint_limits[LATERAL];
        self.fingertip_radius(finger) * hi.abs().min(lo.abs()).sin()
    }

    /// Lateral angle subtended by a lateral distance at the fingertip radius.
    pub fn lateral_angle_for(&self, finger: usize, distance: f64) -> f64 {
        (distance / self.fingertip_radius(finger)).atan()
    }

    /// Wrist height placing rest-pose fingertips `hover_height` above `top_z`.
    pub fn wrist_height(&self, top_z: f64) -> f64 {
        let off = self.finger_offsets(Hand::Right);
        top_z + self.hover_height - off[1][2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandJoints {
    pub fingers: [[f64; JOINTS_PER_FINGER]; FINGERS],
    pub wrist: [f64; 3],
}

impl HandJoints {
    pub fn rest(cfg: &HandConfig, wrist: [f64; 3]) -> HandJoints {
        HandJoints {
            fingers: [cfg.rest_pose; FINGERS],
            wrist,
        }
    }

    /// The 12 finger joint angles, finger-major.
    pub fn flat(&self) -> [f64; FINGERS * JOINTS_PER_FINGER] {
        let mut out = [0.0; FINGERS * JOINTS_PER_FINGER];
        for (f, q) in self.fingers.iter().enumerate() {
            out[f * JOINTS_PER_FINGER..(f + 1) * JOINTS_PER_FINGER].copy_from_slice(q);
        }
        out
    }
}

/// Joint targets for both hands, indexed by [`Hand::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub hands: [HandJoints; 2],
}

impl JointState {
    pub fn hand(&self, hand: Hand) -> &HandJoints {
        &self.hands[hand.index()]
    }

    pub fn hand_mut(&mut self, hand: Hand) -> &mut HandJoints {
        &mut self.hands[hand.index()]
    }
}

/// Fingertip positions (keyboard frame) for one hand.
pub fn forward_kinematics(cfg: &HandConfig, hand: Hand, joints: &HandJoints) -> [[f64; 3]; FINGERS] {
    std::array::from_fn(|f| {
        let local = cfg.fingertip_local(hand, f, &joints.fingers[f]);
        [
            joints.wrist[0] + local[0],
            joints.wrist[1] + local[1],
            joints.wrist[2] + local[2],
        ]
    })
}

/// Fingers of `hand` ordered from lowest to highest `y` (keyboard left to right).
pub fn fingers_left_to_right(hand: Hand) -> [Finger; FINGERS] {
    match hand {
        Hand::Right => [Finger::Index, Finger::Middle, Finger::Ring],
        Hand::Left => [Finger::Ring, Finger::Middle, Finger::Index],
    }
}

/// Wrist positions per trajectory state, stored relative to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WristTrack {
    pub initial: [f64; 3],
    pub relative: Vec<[f64; 3]>,
}

impl WristTrack {
    pub fn len(&self) -> usize {
        self.relative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relative.is_empty()
    }

    pub fn absolute(&self, state: usize) -> [f64; 3] {
        let r = self.relative[state];
        [self.initial[0] + r[0], self.initial[1] + r[1], self.initial[2] + r[2]]
    }
}

/// Scripts the wrist of each hand from the fingered roll.
///
/// Each goal anchors the wrist so that its finger's rest-pose fingertip sits
/// over the key (`y`) at the key's contact depth (`x`). Simultaneous goals
/// average `y` and take the smallest `x`. Steps between anchors are linearly
/// interpolated; before the first and after the last anchor the wrist holds.
/// The returned tracks have `num_steps + 1` entries: state `j >= 1` carries
/// the wrist for goal step `j - 1`, state 0 repeats goal step 0.
pub fn script_wrist(roll: &PianoRoll, keyboard: &Keyboard, cfg: &HandConfig) -> Result<[WristTrack; 2]> {
    let z = cfg.wrist_height(keyboard.specs().iter().map(|s| s.top_z).fold(f64::INFINITY, f64::min));
    let mut tracks = Vec::with_capacity(2);
    for hand in Hand::BOTH {
        let offsets = cfg.finger_offsets(hand);
        let mut anchors: Vec<(usize, f64, f64)> = Vec::new();
        for step in 0..roll.num_steps() {
            let goals: Vec<_> = roll.hand_goals_at(step, hand).collect();
            if goals.is_empty() {
                continue;
            }
            let mut ys = Vec::with_capacity(goals.len());
            let mut x = f64::INFINITY;
            for g in &goals {
                let finger = g.finger.ok_or_else(|| Error::Unreachable {
                    step,
                    key: g.key,
                    msg: "note has no finger assignment".into(),
                })?;
                let spec = keyboard.spec(g.key);
                let off = offsets[finger.index()];
                ys.push(spec.center_y - off[1]);
                x = x.min(spec.contact_x - off[0]);
            }
            let y = ys.iter().sum::<f64>() / ys.len() as f64;
            for g in &goals {
                let f = g.finger.unwrap().index();
                let miss = keyboard.spec(g.key).center_y - (y + offsets[f][1]);
                if miss.abs() > cfg.lateral_reach(f) {
                    return Err(Error::Unreachable {
                        step,
                        key: g.key,
                        msg: format!(
                            "{} finger would need {:.1} mm of lateral reach (max {:.1} mm)",
                            g.finger.unwrap(),
                            miss.abs() * 1e3,
                            cfg.lateral_reach(f) * 1e3
                        ),
                    });
                }
            }
            anchors.push((step, x, y));
        }

        let per_step: Vec<[f64; 2]> = if anchors.is_empty() {
            let key = match hand {
                Hand::Left => roll.split().saturating_sub(12),
                Hand::Right => (roll.split() + 12).min(keyboard.num_keys() as u8 - 1),
            };
            let spec = keyboard.spec(key);
            let xy = [spec.contact_x - offsets[1][0], spec.center_y - offsets[1][1]];
            vec![xy; roll.num_steps().max(1)]
        } else {
            interpolate_anchors(&anchors, roll.num_steps().max(1))
        };

        let absolute: Vec<[f64; 3]> = std::iter::once(per_step[0])
            .chain(per_step.iter().copied().take(roll.num_steps()))
            .map(|[x, y]| [x, y, z])
            .collect();
        let initial = absolute[0];
        let relative = absolute
            .iter()
            .map(|p| [p[0] - initial[0], p[1] - initial[1], p[2] - initial[2]])
            .collect();
        tracks.push(WristTrack { initial, relative });
    }
    let right = tracks.pop().unwrap();
    let left = tracks.pop().unwrap();
    Ok([left, right])
}

/// Piecewise-linear fill between `(step, x, y)` anchors over `n` steps.
fn interpolate_anchors(anchors: &[(usize, f64, f64)], n: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(n);
    let mut next = 0;
    for step in 0..n {
        while next < anchors.len() && anchors[next].0 < step {
            next += 1;
        }
        let p = if next == 0 {
            let (_, x, y) = anchors[0];
            [x, y]
        } else if next == anchors.len() {
            let (_, x, y) = anchors[anchors.len() - 1];
            [x, y]
        } else if anchors[next].0 == step {
            [anchors[next].1, anchors[next].2]
        } else {
            let (s0, x0, y0) = anchors[next - 1];
            let (s1, x1, y1) = anchors[next];
            let t = (step - s0) as f64 / (s1 - s0) as f64;
            [x0 + t * (x1 - x0), y0 + t * (y1 - y0)]
        };
        out.push(p);
    }
    out
}

/// An open-loop plan: one [`JointState`] per trajectory index `0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub roll_ref: String,
    pub states: Vec<JointState>,
}

impl JointTrajectory {
    /// Rest-pose fingers riding the scripted wrist tracks.
    pub fn rest(roll: &PianoRoll, cfg: &HandConfig, wrists: &[WristTrack; 2]) -> JointTrajectory {
        let states = (0..=roll.num_steps())
            .map(|j| JointState {
                hands: [
                    HandJoints::rest(cfg, wrists[0].absolute(j)),
                    HandJoints::rest(cfg, wrists[1].absolute(j)),
                ],
            })
            .collect();
        JointTrajectory {
            roll_ref: roll.title().to_string(),
            states,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of goal steps the trajectory drives (`len - 1`).
    pub fn num_steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn check_matches(&self, roll: &PianoRoll) -> Result<()> {
        if self.states.len() != roll.num_steps() + 1 {
            return Err(Error::LengthMismatch {
                what: "trajectory states vs roll steps + 1",
                expected: roll.num_steps() + 1,
                got: self.states.len(),
            });
        }
        Ok(())
    }

    /// Column names of the text format, in order.
    pub fn columns() -> Vec<String> {
        let mut cols = vec!["index".to_string()];
        for hand in Hand::BOTH {
            for finger in Finger::ALL {
                for j in 0..JOINTS_PER_FINGER {
                    cols.push(format!("{hand}_{finger}_q{j}"));
                }
            }
            for axis in ["x", "y", "z"] {
                cols.push(format!("{hand}_wrist_{axis}"));
            }
        }
        cols
    }

    pub fn to_text(&self, header: &ArtifactHeader) -> String {
        let mut out = header.render("trajectory");
        let _ = writeln!(out, "# roll: {}", self.roll_ref);
        let _ = writeln!(out, "{}", Self::columns().join(" "));
        for (i, s) in self.states.iter().enumerate() {
            let _ = write!(out, "{i}");
            for h in &s.hands {
                for q in h.flat() {
                    let _ = write!(out, " {q}");
                }
                for w in h.wrist {
                    let _ = write!(out, " {w}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<JointTrajectory> {
        let mut roll_ref = String::new();
        let mut states = Vec::new();
        let ncols = Self::columns().len();
        let mut saw_columns = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(title) = rest.trim().strip_prefix("roll:") {
                    roll_ref = title.trim().to_string();
                }
                continue;
            }
            if !saw_columns {
                if line.split_whitespace().collect::<Vec<_>>() != Self::columns() {
                    return Err(Error::format(origin, n + 1, "unexpected trajectory column header"));
                }
                saw_columns = true;
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(origin, n + 1, format!("bad number: {e}")))?;
            if vals.len() != ncols {
                return Err(Error::format(origin, n + 1, format!("expected {ncols} columns, got {}", vals.len())));
            }
            if vals[0] as usize != states.len() {
                return Err(Error::format(origin, n + 1, "state indices must be consecutive from 0"));
            }
            let mut it = vals[1..].iter().copied();
            let mut hand = || {
                let mut fingers = [[0.0; JOINTS_PER_FINGER]; FINGERS];
                for f in &mut fingers {
                    for q in f.iter_mut() {
                        *q = it.next().unwrap();
                    }
                }
                let wrist = [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
                HandJoints { fingers, wrist }
            };
            let left = hand();
            let right = hand();
            states.push(JointState { hands: [left, right] });
        }
        if !saw_columns {
            return Err(Error::format(origin, 0, "missing column header"));
        }
        Ok(JointTrajectory { roll_ref, states })
    }

    pub fn save(&self, path: &Path, header: &ArtifactHeader) -> Result<()> {
        std::fs::write(path, self.to_text(header)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<JointTrajectory> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyboard::KeyboardDims;
    use crate::score::{NoteEvent, DEFAULT_SPLIT};

    fn unit_cfg() -> HandConfig {
        HandConfig {
            link_lengths: [[1.0; 4]; 3],
            finger_base_offsets: [[0.0; 3]; 3],
            ..HandConfig::default()
        }
    }

    fn joints(q: [f64; 4]) -> HandJoints {
        HandJoints {
            fingers: [q; 3],
            wrist: [0.0; 3],
        }
    }

    #[test]
    fn zero_pose_points_along_x() {
        let cfg = HandConfig::default();
        let tips = forward_kinematics(&cfg, Hand::Right, &joints([0.0; 4]));
        for f in 0..3 {
            let base = cfg.base_offset(Hand::Right, f);
            assert!((tips[f][0] - (base[0] + 0.11)).abs() < 1e-15);
            assert_eq!(tips[f][1], base[1]);
            assert_eq!(tips[f][2], base[2]);
        }
    }

    #[test]
    fn lateral_rotation_sweeps_in_plane() {
        let cfg = unit_cfg();
        let theta = 0.3f64;
        let tip = forward_kinematics(&cfg, Hand::Right, &joints([theta, 0.0, 0.0, 0.0]))[0];
        assert!((tip[0] - 4.0 * theta.cos()).abs() < 1e-14);
        assert!((tip[1] - 4.0 * theta.sin()).abs() < 1e-14);
        assert_eq!(tip[2], 0.0);
    }

    #[test]
    fn right_angle_flexions_fold_back() {
        // Unit links, flexions pi/2 each: link directions +x, -z, -x, +z.
        let cfg = unit_cfg();
        let h = std::f64::consts::FRAC_PI_2;
        let tip = forward_kinematics(&cfg, Hand::Right, &joints([0.0, h, h, h]))[0];
        assert!(tip[0].abs() < 1e-15);
        assert!(tip[1].abs() < 1e-15);
        assert!(tip[2].abs() < 1e-15);
        let tip = forward_kinematics(&cfg, Hand::Right, &joints([0.0, h, 0.0, 0.0]))[0];
        assert!((tip[0] - 1.0).abs() < 1e-15 && (tip[2] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn left_hand_mirrors_finger_order() {
        let cfg = HandConfig::default();
        let l = forward_kinematics(&cfg, Hand::Left, &joints(cfg.rest_pose));
        let r = forward_kinematics(&cfg, Hand::Right, &joints(cfg.rest_pose));
        assert!(r[0][1] < r[1][1] && r[1][1] < r[2][1]);
        assert!(l[2][1] < l[1][1] && l[1][1] < l[0][1]);
        assert_eq!(fingers_left_to_right(Hand::Left)[0], Finger::Ring);
    }

    #[test]
    fn clamp_is_idempotent() {
        let cfg = HandConfig::default();
        let mut j = joints([2.0, -3.0, 0.5, 9.0]);
        cfg.clamp(&mut j);
        let once = j;
        cfg.clamp(&mut j);
        assert_eq!(once, j);
        assert_eq!(j.fingers[0], [0.4, -0.3, 0.5, 1.6]);
    }

    fn roll_of(notes: &[(u8, usize, usize, Finger)]) -> PianoRoll {
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
        PianoRoll::new("t", DEFAULT_SPLIT, notes).unwrap()
    }

    #[test]
    fn repeated_note_gives_constant_track() {
        let kb = Keyboard::build(88, &KeyboardDims::default());
        let cfg = HandConfig::default();
        let roll = roll_of(&[(51, 0, 4, Finger::Index), (51, 5, 4, Finger::Index)]);
        let [_, right] = script_wrist(&roll, &kb, &cfg).unwrap();
        assert_eq!(right.len(), roll.num_steps() + 1);
        assert!(right.relative.iter().all(|r| *r == [0.0, 0.0, 0.0]));
        let off = cfg.finger_offsets(Hand::Right)[0];
        let w = right.absolute(3);
        assert!((w[1] + off[1] - kb.spec(51).center_y).abs() < 1e-15);
    }

    #[test]
    fn chord_anchor_is_mean_y_and_min_x() {
        let kb = Keyboard::build(88, &KeyboardDims::default());
        let cfg = HandConfig::default();
        // White key 51 with index, black key 54 with ring.
        let roll = roll_of(&[(51, 0, 2, Finger::Index), (54, 0, 2, Finger::Ring)]);
        let [_, right] = script_wrist(&roll, &kb, &cfg).unwrap();
        let off = cfg.finger_offsets(Hand::Right);
        let y1 = kb.spec(51).center_y - off[0][1];
        let y2 = kb.spec(54).center_y - off[2][1];
        let w = right.absolute(1);
        assert!((w[1] - (y1 + y2) / 2.0).abs() < 1e-15);
        assert!((w[0] - (kb.spec(54).contact_x - off[2][0])).abs() < 1e-15);
    }

    #[test]
    fn track_interpolates_between_anchors() {
        let anchors = [(0, 0.0, 0.0), (10, 0.0, 0.1)];
        let track = interpolate_anchors(&anchors, 11);
        assert!((track[5][1] - 0.05).abs() < 1e-15);
        assert_eq!(track[0][1], 0.0);
        assert_eq!(track[10][1], 0.1);
    }

    #[test]
    fn unreachable_chord_is_reported() {
        let kb = Keyboard::build(88, &KeyboardDims::default());
        let cfg = HandConfig::default();
        // Index and middle fingers on keys an octave and a half apart.
        let roll = roll_of(&[(51, 3, 2, Finger::Index), (70, 3, 2, Finger::Middle)]);
        match script_wrist(&roll, &kb, &cfg) {
            Err(Error::Unreachable { step: 3, .. }) => {}
            other => panic!("expected unreachable, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_text_round_trip_is_exact() {
        let kb = Keyboard::build(88, &KeyboardDims::default());
        let cfg = HandConfig::default();
        let roll = crate::songs::bundled("twinkle").unwrap();
        let wrists = script_wrist(&roll, &kb, &cfg).unwrap();
        let mut traj = JointTrajectory::rest(&roll, &cfg, &wrists);
        traj.states[7].hands[1].fingers[2][0] = 0.1 + 0.2;
        let text = traj.to_text(&ArtifactHeader::new("test", 3, "cafe"));
        let back = JointTrajectory::from_text(&text, "mem").unwrap();
        assert_eq!(back, traj);
    }

    type Mat4 = [[f64; 4]; 4];

    fn mul(a: &Mat4, b: &Mat4) -> Mat4 {
        let mut c = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        c
    }

    fn trans(v: [f64; 3]) -> Mat4 {
        [[1.0, 0.0, 0.0, v[0]], [0.0, 1.0, 0.0, v[1]], [0.0, 0.0, 1.0, v[2]], [0.0, 0.0, 0.0, 1.0]]
    }

    fn rot_z(t: f64) -> Mat4 {
        let (s, c) = t.sin_cos();
        [[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    }

    // Positive angle takes +x toward -z.
    fn rot_y(t: f64) -> Mat4 {
        let (s, c) = t.sin_cos();
        [[c, 0.0, s, 0.0], [0.0, 1.0, 0.0, 0.0], [-s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
    }

    pub(crate) fn fk_oracle(cfg: &HandConfig, hand: Hand, j: &HandJoints, f: usize) -> [f64; 3] {
        let q = j.fingers[f];
        let l = cfg.link_lengths[f];
        let mut t = mul(&trans(j.wrist), &trans(cfg.base_offset(hand, f)));
        t = mul(&t, &rot_z(q[0]));
        t = mul(&t, &trans([l[0], 0.0, 0.0]));
        for k in 1..4 {
            t = mul(&t, &rot_y(q[k]));
            t = mul(&t, &trans([l[k], 0.0, 0.0]));
        }
        [t[0][3], t[1][3], t[2][3]]
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(1000))]
        #[test]
        fn fk_matches_transform_chain(
            q in proptest::array::uniform12(-3.0f64..3.0),
            w in proptest::array::uniform3(-1.0f64..1.0),
            left in proptest::bool::ANY,
        ) {
            let cfg = HandConfig::default();
            let hand = if left { Hand::Left } else { Hand::Right };
            let j = HandJoints {
                fingers: [[q[0], q[1], q[2], q[3]], [q[4], q[5], q[6], q[7]], [q[8], q[9], q[10], q[11]]],
                wrist: w,
            };
            let tips = forward_kinematics(&cfg, hand, &j);
            for f in 0..3 {
                let o = fk_oracle(&cfg, hand, &j, f);
                for a in 0..3 {
                    proptest::prop_assert!((tips[f][a] - o[a]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn clamp_idempotent_prop(q in proptest::array::uniform4(-5.0f64..5.0)) {
            let cfg = HandConfig::default();
            let mut a = q;
            cfg.clamp_finger(&mut a);
            let mut b = a;
            cfg.clamp_finger(&mut b);
            proptest::prop_assert_eq!(a, b);
        }
    }
}
