//! Blind over-the-air computation (BlairComp) with randomly initialized
//! Wirtinger flow.
//!
//! A fusion center observes `y_j = Σ_i b_jᴴ h̄_i x̄_iᴴ a_ij + e_j` and wants the
//! sum `Σ_i x̄_i` without knowing the channels `h̄_i`. This crate generates
//! synthetic instances of that bilinear model ([`ensemble`]), solves it by
//! Wirtinger flow from a random start ([`solver`]), and measures the solver's
//! dynamics: ambiguity-aligned errors and signal/perpendicular components
//! ([`metrics`]), state-evolution recursions and stage boundaries
//! ([`state_evolution`]), and leave-one-out / random-sign auxiliary runs
//! ([`diagnostics`]).

pub mod diagnostics;
pub mod ensemble;
mod error;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod solver;
pub mod state_evolution;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

pub use ensemble::{Dims, GroundTruth, MeasurementModel, ProblemInstance};
pub use metrics::{align_pair, decompose, dist, relative_error, AlignmentResult, NodeComponents};
pub use solver::{random_init, run_wf, Iterate, NodeBlock, SolverSettings, StateTrace};
pub use state_evolution::{detect_stages, StageReport, StageThresholds};
