//! Leap-frog finite-difference time-domain solver for the Schrödinger equation
//! on rectangular regions with boundary hanging variables.
//!
//! The crate advances the real part of the wavefunction at integer time steps
//! and the imaginary part at half steps, and evaluates discrete probability,
//! energy, probability current and supplied power whose balance laws hold to
//! round-off. Stability limits (closed-form and spectral) and the coupling of
//! several regions across shared faces are included.
//!
//! Conventions: SI units and `f64` everywhere. Public node/edge/hanging-variable
//! indices are 1-based triples; storage offsets are 0-based.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod constants;
pub mod coupling;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod operators;
pub mod scenarios;
pub mod stability;
pub mod stepper;
pub mod sum;

pub use constants::PhysicalConstants;
pub use error::{Error, Result};
pub use grid::{Axis, Face, RegionGrid};
pub use operators::Operators;
pub use stepper::{BoundaryCondition, FaceConditions, Simulation, StaggeredState};
