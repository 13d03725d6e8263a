//! Quantum stroboscopy: time distributions built from projective measurements
//! on independently prepared copies, together with the reference
//! distributions (quantum clock, probability flow) and the continuous
//! measurement models (fuzzy position pointer, photodetection clicks) they are
//! compared against.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clock;
pub mod continuous;
pub mod detector;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod stroboscope;
pub mod system;
pub mod window;

pub use error::{Error, Result};
