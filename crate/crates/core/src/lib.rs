//! Numerical kernels for probing a moving inclusion inside a heat conductor.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! threads or the command line lives in the `dynprobe-lab` companion crate.
//!
//! Layout:
//! - [`geometry`]: body, moving inclusions, probe curves, hypothesis checks.
//! - [`conductivity`]: background and perturbed matrix fields.
//! - [`mesh`], [`pde`]: P1 finite elements, implicit Euler, traces, D-N maps.
//! - [`special`]: mollifier, explicit kernels, special solutions, Aronson fit.
//! - [`runge`]: boundary-controlled approximation of the special solutions.
//! - [`indicator`]: pre-indicator, volume indicator, slopes, classification.
//! - [`verify`]: empirical constants for the supporting estimates.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod math;
pub mod linalg;
pub mod mesh;
pub mod geometry;
pub mod conductivity;
pub mod pde;
pub mod special;
pub mod runge;
pub mod indicator;
pub mod verify;

pub use error::{Error, Result};
pub use math::Point;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
