//! Sim-to-pseudo-real adaptation for robotic piano playing.
//!
//! A nominal kinematic simulator of two three-finger hands over a keyboard is
//! paired with a gap-injected "pseudo-real" copy. Open-loop trajectories from
//! a policy pretrained in the nominal simulator are adapted to the gapped one
//! by lateral-joint refinement followed by residual TD3.

pub mod env;
pub mod config;
pub mod error;
pub mod eval;
pub mod hand;
pub mod io;
pub mod keyboard;
pub mod learn;
pub mod pipeline;
pub mod refine;
pub mod score;
pub mod songs;

pub use config::Config;
pub use error::{Error, Result};
pub use hand::{HandConfig, HandJoints, JointState, JointTrajectory, WristTrack};
pub use io::ArtifactHeader;
pub use keyboard::{KeyState, Keyboard, KeyboardDims};
pub use score::{Finger, Goal, Hand, NoteEvent, PianoRoll};
