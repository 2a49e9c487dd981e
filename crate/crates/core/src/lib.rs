//! Bayesian experimental design for the oral glucose tolerance test.
//!
//! The crate simulates a five-compartment glucose model, fits patient
//! parameters to noisy measurements with a self-adjusting MCMC sampler,
//! estimates the expected utility of a measurement schedule by nested Monte
//! Carlo, compares schedules with a z-test and searches the 15-minute grid for
//! better schedules.
//!
//! The model, integrator and quadrature are generic over [`Real`]; everything
//! statistical runs in `f64`. The aliases below fix the scalar type.

pub mod compare;
pub mod config;
pub mod design;
pub mod distributions;
pub mod error;
pub mod inference;
pub mod model;
pub mod ode;
pub mod quadrature;
pub mod scalar;
pub mod search;
pub mod seeding;
pub mod store;
pub mod utility;
pub mod validation;

pub use design::Design;
pub use error::{Error, ErrorKind, Result};
pub use scalar::Real;

pub type PatientParams = model::PatientParams<f64>;
pub type ModelConstants = model::ModelConstants<f64>;
pub type GlucoseState = model::GlucoseState<f64>;
pub type Trajectory = model::Trajectory<f64>;
pub type SolverOptions = ode::SolverOptions<f64>;
pub type SimpsonGrid = quadrature::SimpsonGrid<f64>;

pub type PatientParamsF32 = model::PatientParams<f32>;
pub type ModelConstantsF32 = model::ModelConstants<f32>;
pub type TrajectoryF32 = model::Trajectory<f32>;
pub type SolverOptionsF32 = ode::SolverOptions<f32>;
