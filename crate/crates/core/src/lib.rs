//! Registration and fusion of Gaussian Splatting scene models under a
//! similarity transform.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! and image export live in the `gsreg` companion crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod coarse;
pub mod config;
pub mod error;
pub mod estimate;
pub mod eval;
pub mod features;
pub mod fine;
pub mod fusion;
pub mod geometry;
pub mod kdtree;
pub mod model;
pub mod overlap;
pub mod pipeline;
pub mod render;
pub mod sh;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{CameraPose, Mat3, Sim3, Vec3};
pub use model::{ColoredPointCloud, Gaussian, GaussianModel};
