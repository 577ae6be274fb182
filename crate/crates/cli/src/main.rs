//! `pianorl`: run the pipeline one stage at a time.
//!
//! Stages read and write artifacts in the output directory, so each command
//! names the one that produces its input when that input is missing.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pianorl::env::GapPreset;
use pianorl::learn::RolloutMode;

use artifacts::CliError;

#[derive(Parser, Debug)]
#[command(name = "pianorl", version, about = "Sim-to-pseudo-real piano playing pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML config with [keyboard], [hand], [env], [gap], [refine], [residual], [ppo] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set residual.gamma=0.9`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Residual network size and batch the config starts from.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Compact)]
    pub profile: Profile,
    /// Gap preset (overrides gap.preset).
    #[arg(long, global = true, value_parser = parse_preset)]
    pub gap: Option<GapPreset>,
    /// Seed the gap is drawn with (overrides gap.seed).
    #[arg(long, global = true)]
    pub gap_seed: Option<u64>,
    /// Training / rollout seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Bundled song name.
    #[arg(long, global = true, conflicts_with = "roll")]
    pub song: Option<String>,
    /// Roll produced by `pianorl parse` (default: <out>/roll.json when present).
    #[arg(long, global = true)]
    pub roll: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Two 64-unit hidden layers, batch 128; fits a single core.
    Compact,
    /// Three 256-unit hidden layers, batch 2048.
    Paper,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// MIDI file plus fingering sidecar to a roll.
    Parse {
        #[arg(long)]
        midi: PathBuf,
        /// Sidecar of `step key finger hand` lines.
        #[arg(long)]
        fingering: Option<PathBuf>,
        /// Lowest right-hand key index (A0 = 0).
        #[arg(long, default_value_t = pianorl::score::DEFAULT_SPLIT)]
        split: u8,
    },
    /// PPO in the nominal simulator; writes pi_sim and its best trajectory.
    TrainSim {
        /// Env steps per hand (overrides ppo.total_steps).
        #[arg(long)]
        steps: Option<u64>,
        /// Stop once evaluation F1 reaches this value in [0, 1].
        #[arg(long)]
        target_f1: Option<f64>,
        /// Randomize the gap per episode over the configured ranges.
        #[arg(long)]
        randomize: bool,
        /// Artifact name stem.
        #[arg(long, default_value = "pi_sim")]
        name: String,
    },
    /// Execute pi_sim or its trajectory under the gap; writes a log and prints F1.
    Rollout {
        #[arg(long, value_parser = parse_mode, default_value = "open-loop")]
        mode: RolloutMode,
        /// Trajectory for open-loop (default <out>/tau_sim.traj).
        #[arg(long)]
        traj: Option<PathBuf>,
        /// Policy for closed-loop and hybrid (default <out>/pi_sim.json).
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Lateral refinement of a trajectory against the gap.
    Refine {
        /// Input trajectory (default <out>/tau_sim.traj).
        #[arg(long)]
        traj: Option<PathBuf>,
        /// Overrides refine.iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Output trajectory (default <out>/tau_star.traj).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Residual TD3 over a base trajectory.
    TrainResidual {
        /// Base trajectory (default <out>/tau_star.traj).
        #[arg(long, conflicts_with = "from_scratch")]
        base: Option<PathBuf>,
        /// Rest-pose base with the residual widened to the full joint range.
        #[arg(long)]
        from_scratch: bool,
        /// Overrides residual.episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Actor and learner on separate threads (not bitwise reproducible).
        #[arg(long)]
        threaded: bool,
        /// Artifact name stem.
        #[arg(long, default_value = "residual")]
        name: String,
    },
    /// Evaluation protocol plus a roll report of the first rollout.
    Eval {
        #[arg(long, value_enum, default_value_t = EvalTarget::Residual)]
        what: EvalTarget,
        /// Rollouts to average.
        #[arg(short = 'n', long, default_value_t = 10)]
        rollouts: usize,
        /// Trajectory for open-loop (default <out>/tau_star.traj, then tau_sim.traj).
        #[arg(long)]
        traj: Option<PathBuf>,
        /// Policy for closed-loop and hybrid (default <out>/pi_sim.json).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Residual artifact (default <out>/residual.json).
        #[arg(long)]
        residual: Option<PathBuf>,
    },
    /// All six baselines on one song; writes a comparison table.
    Matrix {
        /// Rollouts per row.
        #[arg(short = 'n', long, default_value_t = 10)]
        rollouts: usize,
        /// Reuse <out>/pi_sim.json and tau_sim.traj instead of training.
        #[arg(long)]
        reuse_sim: bool,
        /// Train a second, gap-randomized policy for the closed-loop row.
        #[arg(long)]
        randomized_closed_loop: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTarget {
    OpenLoop,
    ClosedLoop,
    Hybrid,
    Residual,
}

fn parse_preset(s: &str) -> Result<GapPreset, String> {
    s.parse().map_err(|e: pianorl::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<RolloutMode, String> {
    s.parse().map_err(|e: pianorl::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl CliError {
    /// 2 for bad inputs, 3 for failures while running.
    pub fn exit_code(&self) -> u8 {
        use pianorl::Error as E;
        match self {
            CliError::Missing { .. } => 2,
            CliError::Core(e) => match e {
                E::MidiParse { .. }
                | E::Validation(_)
                | E::Fingering(_)
                | E::Unreachable { .. }
                | E::LengthMismatch { .. }
                | E::Config(_)
                | E::Format { .. } => 2,
                E::Contract(_) | E::Diverged(_) | E::Io { .. } | E::Json(_) => 3,
            },
        }
    }
}
