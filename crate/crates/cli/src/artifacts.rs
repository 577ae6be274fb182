//! Artifact names, loaders and the CLI error type.

use std::path::{Path, PathBuf};

use pianorl::io::load_json;
use pianorl::learn::{ResidualPolicy, SimPolicy};
use pianorl::{songs, JointTrajectory, PianoRoll};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Global;

pub const ROLL: &str = "roll.json";
pub const PI_SIM: &str = "pi_sim";
pub const TAU_SIM: &str = "tau_sim.traj";
pub const TAU_STAR: &str = "tau_star.traj";
pub const RESIDUAL: &str = "residual";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{} not found; {hint}", path.display())]
    Missing { path: PathBuf, hint: String },
    #[error(transparent)]
    Core(#[from] pianorl::Error),
}

pub type CliResult<T> = Result<T, CliError>;

/// A trained residual and the base it was trained over.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualArtifact {
    pub base: JointTrajectory,
    pub policies: [ResidualPolicy; 2],
    pub best_f1: f64,
    pub best_episode: usize,
    pub from_scratch: bool,
}

pub fn require(path: &Path, producer: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing {
            path: path.to_path_buf(),
            hint: format!("run `pianorl {producer}` first or pass the path explicitly"),
        })
    }
}

/// Trajectory file name written next to a policy named `stem`.
pub fn traj_name(stem: &str) -> String {
    if stem == PI_SIM {
        TAU_SIM.to_string()
    } else {
        format!("{stem}.traj")
    }
}

pub fn load_roll(g: &Global) -> CliResult<PianoRoll> {
    if let Some(name) = &g.song {
        return Ok(songs::bundled(name)?);
    }
    let path = g.roll.clone().unwrap_or_else(|| g.out.join(ROLL));
    if !path.exists() {
        return Err(CliError::Missing {
            path,
            hint: format!(
                "pass --song NAME (bundled: {}, toy) or run `pianorl parse --midi FILE` first",
                songs::names().join(", ")
            ),
        });
    }
    Ok(load_json::<PianoRoll>(&path)?.1)
}

pub fn load_traj(path: &Path, producer: &str) -> CliResult<JointTrajectory> {
    require(path, producer)?;
    Ok(JointTrajectory::load(path)?)
}

pub fn load_policy(path: &Path) -> CliResult<SimPolicy> {
    require(path, "train-sim")?;
    Ok(load_json::<SimPolicy>(path)?.1)
}

pub fn load_residual(path: &Path) -> CliResult<ResidualArtifact> {
    require(path, "train-residual")?;
    Ok(load_json::<ResidualArtifact>(path)?.1)
}
