//! Steady-state temperature field inversion for heat-source plates.
//!
//! The crate bundles a finite-difference forward solver used as ground truth,
//! quasi-random observation samplers, condition-number based sensor placement,
//! and a physics-informed MLP surrogate trained with exact second-order jets.

pub mod config;
pub mod diffnet;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod fd_system;
pub mod inversion;
pub mod par;
pub mod placement;
pub mod sampling;

pub use domain::{BoundaryKind, Case, DomainSpec, Edge, HeatSource, Point2};
pub use error::{Error, Result};
pub use fd_system::{assemble, solve_forward, CoefficientSystem, Grid, ScalarField};
