//! Numerical laboratory for front propagation in `∂t u = Δu + f(u)`.
//!
//! - [`reaction`]: reaction terms and their structural hypotheses
//! - [`front`]: traveling-front speeds and profiles
//! - [`pde`]: finite-difference evolution with a co-moving frame
//! - [`support`]: initial supports, direction sets, spreading envelopes, distances
//! - [`levelset`]: level-set extraction and flattening metrics
//! - [`analysis`]: speeds, logarithmic lags, envelope comparisons, audits
//! - [`scenario`]: declarative scenarios, presets and artifacts

pub mod analysis;
pub mod front;
pub mod levelset;
pub mod numerics;
pub mod pde;
pub mod reaction;
pub mod scenario;
pub mod support;

pub use front::{FrontProfile, SpeedBracket};
pub use levelset::{LevelSetSeries, LevelSetSlice, UpperLevelCloud};
pub use pde::{Domain, Field, RunRecord, SolverConfig};
pub use reaction::{HypothesisReport, ReactionSpec};
pub use support::{Envelope, GammaSpec, SupportSpec};
