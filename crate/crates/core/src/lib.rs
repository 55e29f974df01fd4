//! Protected linear bandits.
//!
//! A learner picks actions to maximise reward along a hidden target vector
//! `θ₀`, but only the part of `θ₀` orthogonal to a hidden protected subspace
//! (spanned by vectors `θ₁..θ_L`) counts. Every round it also chooses which
//! vector to receive noisy linear feedback about.
//!
//! * [`linalg`]: small dense linear algebra (eigenproblems, projections, solves).
//! * [`confidence`]: ridge estimators and confidence ellipsoids.
//! * [`environment`]: instances, action sets, feedback and regret.
//! * [`coreset`]: CORE-SET subset selection.
//! * [`policies`]: Protected LinUCB and baselines.
//! * [`instances`]: instance generators and dataset ingestion.
//! * [`harness`]: experiment configuration, parallel runs and output.

pub mod confidence;
pub mod coreset;
pub mod environment;
pub mod error;
pub mod harness;
pub mod instances;
pub mod linalg;
pub mod policies;

pub use confidence::{beta_radius, ConfidenceParams, EstimatorState};
pub use coreset::{best_subset, run_coreset, run_coreset_known_lambda, CoresetConfig, CoresetResult, SubsetScore};
pub use environment::{ActionSpaceSpec, ArmSet, Environment, ProtectedInstance, RoundOutcome};
pub use error::{Error, Result};
pub use harness::{aggregate, run_experiment, ExperimentConfig, RegretTrace};
pub use policies::{ActionChoice, OptimisticChoice, ProtectedLinUCBState};
