//! Fault-path expansion of system–bath evolution with Hamiltonian noise,
//! analytic bounds on fault-path norms, and the concatenated-code threshold
//! arithmetic built on them.
//!
//! Modules, bottom-up:
//!
//! - [`opcore`]: dense complex operators, sup norm, exponentials, tensor embedding.
//! - [`model`]: gate schedules, system–bath Hamiltonians, JSON model documents.
//! - [`faultpath`]: the numerical fault-path oracle and bound verification.
//! - [`bounds`]: closed-form bounds and locality-strength conversions.
//! - [`threshold`]: recursion of effective noise strength across levels.
//! - [`decay`]: lattice sums for power-law decaying couplings.

pub mod bounds;
pub mod decay;
pub mod error;
pub mod faultpath;
pub mod model;
pub mod opcore;
pub mod threshold;

pub use error::{Error, Result};
pub use faultpath::{
    BoundReport, DeltaPolicy, FaultPathOracle, FaultSet, MicroGrid, Regime, ReportLine, BOUND_SLACK, MAX_FAULTS,
};
pub use model::{load_model, save_model, MacroLocation, NoiseMode, SystemBathModel};
pub use opcore::{sup_norm, Operator, TensorFactorSpec, Tolerances, C64};
