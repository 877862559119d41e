//! Disturbance-immune weight sharing for one-shot architecture search.
//!
//! The core is `no_std` (with `alloc`): dense matrices, the orthogonal
//! projection state, a small reverse-mode network tape, the toy cell search
//! space, the REINFORCE controller, the alternating trainer and the
//! disturbance metrics. File formats and the command line live in the `diws`
//! crate.

#![no_std]

extern crate alloc;

pub mod controller;
pub mod convergence;
pub mod data;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod netcore;
pub mod ogd;
pub mod rng;
pub mod searchspace;
pub mod trainer;

pub use error::{Error, Result};
