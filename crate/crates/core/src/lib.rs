//! Tensor engine, networks, objectives and the alternating training step of a
//! mutual-information constrained CycleGAN for unpaired image translation.
//!
//! The crate is `no_std` (with `alloc`); file formats, the training loop driver
//! and the command line live in the `mutualgan` crate.

#![no_std]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

mod error;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod synth;
mod scalar;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use scalar::{Real, Scalar};
pub use tensor::Tensor;
