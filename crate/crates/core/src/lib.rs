//! GROUSE subspace estimation on the Grassmannian: orthonormal bases and
//! convergence metrics, the rank-one geodesic step with its step-size
//! schedules, a planted low-rank data model, and evaluators for the
//! iteration and rate bounds.

pub mod basis;
pub mod bounds;
pub mod error;
pub mod metrics;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod step;

pub use basis::{orthonormalize, random_orthonormal, OrthonormalBasis};
pub use bounds::{detect_phases, k1_bound, k1_bound_derivation, k2_bound, mu0, BoundParams, PhaseReport};
pub use error::{GrouseError, Result};
pub use metrics::{determinant_similarity, frobenius_discrepancy, principal_angles, MetricSample, PrincipalAngles};
pub use model::{make_planted, PlantedModel, Sample};
pub use step::{grouse_step, OracleInfo, StepConfig, StepMode, StepOutcome, Stepper};
