//! Multilevel optimization for linear inverse problems.
//!
//! The crate is organized around accuracy *levels*: a level `l` selects an
//! approximation of the forward model (here a finite element mesh with
//! `2^⌈log₂ l⌉` elements) whose evaluation costs `l`. Optimizers consume a
//! [`schedule::LevelSchedule`] that assigns a level to every iteration.
//!
//! * [`schedule`]: single-level and multilevel level schedules, error bound and cost.
//! * [`forward`]: leveled forward maps and the 1D elliptic finite element model.
//! * [`descent`]: gradient descent variants driven by a schedule.
//! * [`eki`]: ensemble Kalman inversion, plain and Tikhonov regularized.
//! * [`langevin`]: interacting Langevin sampler.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`). The `f64`
//! aliases at the crate root cover the common case.

pub mod descent;
pub mod eki;
pub mod error;
pub mod forward;
pub mod langevin;
pub mod problem;
pub mod rng;
pub mod scalar;
pub mod schedule;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ConvergenceModel = schedule::ConvergenceModel<f64>;
pub type LevelSchedule = schedule::LevelSchedule<f64>;
pub type SineFemModel = forward::SineFemModel<f64>;
pub type InverseProblemSpec = problem::InverseProblemSpec<f64>;
pub type Ensemble = eki::Ensemble<f64>;
pub type AugmentedSystem = eki::AugmentedSystem<f64>;
pub type PosteriorSpec = langevin::PosteriorSpec<f64>;
