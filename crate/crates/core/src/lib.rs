//! Finite-element synthesis and reconstruction of conductivity from interior
//! power-density data when only part of the boundary is controlled.
//!
//! The pipeline runs mesh → forward solves → optional noise → two Poisson
//! reconstructions (current angle θ, then log σ) → error metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod export;
pub mod fem;
pub mod forward;
pub mod mesh;
pub mod metrics;
pub mod noise;
pub mod recon;

pub use error::{Error, Result};
