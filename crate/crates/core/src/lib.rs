//! Simulation and coherence analysis for a tunable low-energy field-emission
//! electron source with two extraction apertures.
//!
//! The crate covers the whole chain: the axisymmetric electrostatic field of
//! the tip/aperture assembly ([`field`], [`geometry`]), electron ray tracing
//! through it ([`trajectory`]), the Fowler-Nordheim intensity model
//! ([`emission`]), the biprism interferometer forward model and fringe fit
//! ([`optics`]), the Wien-filter coherence analysis ([`wien`]), synthetic
//! detector events under periodic dephasing ([`events`]) and the second-order
//! correlation analysis that removes it ([`correlation`]). [`scenario`] wires
//! these into reproducible end-to-end runs.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod constants;
pub mod correlation;
pub mod emission;
pub mod error;
pub mod events;
pub mod exec;
pub mod field;
pub mod geometry;
pub mod lm;
pub mod optics;
pub mod scenario;
pub mod special;
pub mod trajectory;
pub mod wien;

pub use error::{Error, Result, Violation};
pub use exec::Exec;

/// Version tag written into every JSON output.
pub const SCHEMA_VERSION: u32 = 1;
