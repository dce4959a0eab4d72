//! Scale functions, last-zero excursion identities and Monte Carlo
//! verification for spectrally negative Lévy processes.

pub mod error;
pub mod generator;
pub mod harness;
pub mod identities;
pub mod mc;
pub mod model;
pub mod pathsim;
pub mod quad;
pub mod rng;
pub mod scale;
pub mod talbot;

pub use error::{Error, Result};
pub use identities::{IdentityContext, Kernel};
pub use mc::MCEstimate;
pub use model::{JumpLaw, JumpSpec, LevyModel, ModelConfig, Regime};
pub use scale::{Backend, ScaleEvaluator};
pub use pathsim::{Crossing, PathSkeleton, SimOptions};
