//! Mean-square consensus for identical linear agents whose links (or input
//! channels) carry multiplicative white noise.
//!
//! The crate covers graph spectra, Riccati-based gain synthesis, seeded
//! Monte Carlo simulation and an exact second-moment oracle.

pub mod dynamics;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod mare;
pub mod moments;
pub mod noise;
pub mod scenario;
pub mod simulate;
pub mod synthesis;

pub use dynamics::DynamicsModel;
pub use error::{Assumption, Error, Result};
pub use graph::{Edge, Mode, Topology};
pub use mare::{MareProblem, MareSolution, SolverOptions};
pub use moments::NoiseGeneratorSet;
pub use noise::{Distribution, NoiseDraw, NoiseSpec};
pub use scenario::ScenarioFile;
pub use simulate::{EnsembleConfig, Execution, Scenario, TrajectoryEnsemble};
pub use synthesis::{ConditionReport, ProtocolGain, SynthesisOptions};
