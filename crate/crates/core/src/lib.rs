//! Online control of non-stationary linear-quadratic regulators.
//!
//! The crate provides stationary LQR solvers ([`lqr`]), non-stationary
//! instance generators ([`instances`]), interval least-squares estimation
//! ([`estimation`]), the adaptive-restart controller ([`dynlqr`]), baseline
//! controllers ([`baselines`]) and a simulation / regret harness ([`harness`]).

pub mod baselines;
pub mod controller;
pub mod dynlqr;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod instances;
pub mod linalg;
pub mod lqr;
pub mod rng;

pub use error::{Error, Result};
pub use estimation::{OlsEstimate, Trajectory};
pub use instances::{DynamicsSeq, GainSeq, StabilityCert, VariationReport};
pub use lqr::{CostSpec, Gain, Theta, ValueMatrix};
pub use controller::{ControlDecision, Controller, Event};
pub use dynlqr::{DynLqr, DynLqrConfig};
pub use harness::{simulate, RegretReport, SimOutput};
