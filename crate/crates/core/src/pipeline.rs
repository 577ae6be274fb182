//! Stage wiring shared by the command line and the experiment matrix.

use std::fmt;
use std::sync::Arc;

use crate::config::Config;
use crate::env::{GapModel, PianoEnv};
use crate::error::Result;
use crate::eval::{mean_sd, score_f1};
use crate::hand::{script_wrist, JointTrajectory, WristTrack};
use crate::io::ArtifactHeader;
use crate::keyboard::Keyboard;
use crate::learn::residual::{evaluate, EVAL_SEED_OFFSET};
use crate::learn::{ppo_train, run_mode, train_residual, PpoOutcome, ResidualConfig, ResidualOutcome, RolloutMode, SimPolicy};
use crate::refine::{refine, RefineOutcome};
use crate::score::PianoRoll;

/// A song bound to a config, with its wrist script.
#[derive(Debug, Clone)]
pub struct Setup {
    pub cfg: Config,
    pub roll: Arc<PianoRoll>,
    pub keyboard: Arc<Keyboard>,
    pub wrists: [WristTrack; 2],
}

impl Setup {
    pub fn new(cfg: Config, roll: PianoRoll) -> Result<Setup> {
        cfg.validate()?;
        let keyboard = Arc::new(cfg.keyboard());
        let wrists = script_wrist(&roll, &keyboard, &cfg.hand)?;
        Ok(Setup {
            roll: Arc::new(roll),
            keyboard,
            wrists,
            cfg,
        })
    }

    /// Scripted wrist with rest-pose fingers: the from-scratch base.
    pub fn rest_trajectory(&self) -> JointTrajectory {
        JointTrajectory::rest(&self.roll, &self.cfg.hand, &self.wrists)
    }

    pub fn env(&self, gap: &GapModel) -> PianoEnv {
        let start = self.rest_trajectory().states[0];
        PianoEnv::new(self.roll.clone(), self.keyboard.clone(), &self.cfg.hand, gap, &self.cfg.env, &start)
    }

    /// Env under the configured gap.
    pub fn real_env(&self) -> PianoEnv {
        self.env(&self.cfg.gap_model())
    }

    pub fn train_sim(&self, seed: u64) -> Result<PpoOutcome> {
        ppo_train(self.roll.clone(), self.keyboard.clone(), &self.cfg.hand, &self.cfg.env, &self.cfg.ppo, seed)
    }

    /// Residual config for learning finger control from the rest pose.
    pub fn scratch_config(&self) -> ResidualConfig {
        ResidualConfig {
            full_range: true,
            ..self.cfg.residual.clone()
        }
    }
}

/// F1 × 100 (mean, sd) of `n` rollouts in `mode`, seeded as residual
/// evaluations are so rows of the matrix share episode seeds.
pub fn evaluate_mode(
    env: &mut PianoEnv,
    mode: RolloutMode,
    policy: Option<&SimPolicy>,
    traj: Option<&JointTrajectory>,
    n: usize,
) -> Result<(f64, f64)> {
    let roll = env.roll().clone();
    let mut scores = Vec::with_capacity(n);
    for k in 0..n as u64 {
        let log = run_mode(env, mode, policy, traj, EVAL_SEED_OFFSET + k)?;
        scores.push(100.0 * score_f1(&log.active_per_step(), &roll)?.f1);
    }
    Ok(mean_sd(&scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    SimClosedLoop,
    Scratch,
    SimOpenLoop,
    SimResidual,
    RefineOnly,
    RefineResidual,
}

impl Baseline {
    /// Reporting order, weakest family first.
    pub const ALL: [Baseline; 6] = [
        Baseline::SimClosedLoop,
        Baseline::Scratch,
        Baseline::SimOpenLoop,
        Baseline::SimResidual,
        Baseline::RefineOnly,
        Baseline::RefineResidual,
    ];
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::SimClosedLoop => "pi_sim (closed-loop)",
            Baseline::Scratch => "RL from scratch",
            Baseline::SimOpenLoop => "pi_sim (open-loop)",
            Baseline::SimResidual => "pi_sim + residual",
            Baseline::RefineOnly => "refine only",
            Baseline::RefineResidual => "refine + residual",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub baseline: Baseline,
    pub mean: f64,
    pub sd: f64,
}

/// Everything the matrix trained, for callers that want more than the table.
pub struct MatrixRun {
    pub rows: Vec<MatrixRow>,
    pub refined: RefineOutcome,
    pub residuals: Vec<(Baseline, ResidualOutcome)>,
}

/// Runs the six baselines against the configured gap. `closed_loop` is the
/// policy used for the closed-loop row (typically trained with gap
/// randomization); `tau_sim` is the open-loop trajectory of pi_sim.
pub fn run_matrix(setup: &Setup, tau_sim: &JointTrajectory, closed_loop: &SimPolicy, seed: u64, eval_rollouts: usize) -> Result<MatrixRun> {
    let mut env = setup.real_env();
    let refined = refine(&mut env, tau_sim, &setup.cfg.refine, &setup.cfg.hand, seed)?;
    let mut rows = Vec::new();
    let mut residuals = Vec::new();
    for b in Baseline::ALL {
        log::info!("matrix: {b}");
        let (mean, sd) = match b {
            Baseline::SimClosedLoop => evaluate_mode(&mut env, RolloutMode::ClosedLoop, Some(closed_loop), None, eval_rollouts)?,
            Baseline::SimOpenLoop => evaluate(&mut env, tau_sim, None, eval_rollouts)?,
            Baseline::RefineOnly => evaluate(&mut env, &refined.best, None, eval_rollouts)?,
            Baseline::Scratch | Baseline::SimResidual | Baseline::RefineResidual => {
                let (base, cfg) = match b {
                    Baseline::Scratch => (setup.rest_trajectory(), setup.scratch_config()),
                    Baseline::SimResidual => (tau_sim.clone(), setup.cfg.residual.clone()),
                    _ => (refined.best.clone(), setup.cfg.residual.clone()),
                };
                let out = train_residual(&mut env, &base, &cfg, &setup.cfg.hand, seed)?;
                let r = evaluate(&mut env, &base, Some(&out.best), eval_rollouts)?;
                residuals.push((b, out));
                r
            }
        };
        rows.push(MatrixRow { baseline: b, mean, sd });
    }
    Ok(MatrixRun { rows, refined, residuals })
}

pub fn matrix_table(rows: &[MatrixRow], header: &ArtifactHeader) -> String {
    let mut out = header.render("matrix");
    out.push_str(&format!("{:<24} {:>8} {:>8}\n", "method", "f1_mean", "f1_sd"));
    for r in rows {
        out.push_str(&format!("{:<24} {:>8.2} {:>8.2}\n", r.baseline.to_string(), r.mean, r.sd));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GapPreset;
    use crate::learn::PpoConfig;
    use crate::songs;

    #[test]
    fn matrix_has_six_rows_in_order() {
        let mut cfg = Config::default();
        cfg.gap.preset = GapPreset::BiasOnly;
        cfg.ppo = PpoConfig {
            total_steps: 2_000,
            ..PpoConfig::default()
        };
        cfg.refine.iterations = 1;
        cfg.residual = ResidualConfig {
            hidden: vec![8],
            batch: 16,
            initial_exploration: 32,
            episodes: 1,
            eval_every: 1,
            eval_rollouts: 1,
            ..ResidualConfig::default()
        };
        let setup = Setup::new(cfg, songs::bundled("toy").unwrap()).unwrap();
        let sim = setup.train_sim(0).unwrap();
        let run = run_matrix(&setup, &sim.best_trajectory, &sim.policy, 0, 1).unwrap();
        let order: Vec<Baseline> = run.rows.iter().map(|r| r.baseline).collect();
        assert_eq!(order, Baseline::ALL);
        assert_eq!(run.residuals.len(), 3);
        assert!(run.rows.iter().all(|r| (0.0..=100.0).contains(&r.mean)));
        let table = matrix_table(&run.rows, &ArtifactHeader::new("matrix", 0, "x"));
        assert_eq!(table.lines().filter(|l| !l.starts_with('#')).count(), 7);
    }

    #[test]
    fn scratch_base_is_rest_pose() {
        let setup = Setup::new(Config::default(), songs::bundled("toy").unwrap()).unwrap();
        let t = setup.rest_trajectory();
        let rest = crate::hand::HandJoints::rest(&setup.cfg.hand, [0.0; 3]).fingers;
        assert!(t.states.iter().all(|s| s.hands.iter().all(|h| h.fingers == rest)));
        assert!(setup.scratch_config().full_range);
    }
}
