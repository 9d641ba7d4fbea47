//! Adversarially diversified rehearsal memory for class-incremental
//! learning.
//!
//! The crate trains a model over a sequence of tasks while keeping a small
//! episodic memory of past examples. Its central idea: before replaying a
//! memory batch, perturb each sample with a per-sample FGSM step, split the
//! results into samples that now fool the model and samples that resist,
//! and mix a slice of both back into the rehearsal batch. The perturbations
//! track the model's current decision boundaries, so the memory keeps
//! producing fresh gradients long after its raw pixels stopped doing so.
//!
//! Everything is driven by named RNG streams derived from one master seed;
//! two runs with the same config produce byte-identical artifacts.

pub mod attack;
pub mod cli;
pub mod config;
pub mod data;
pub mod diversify;
pub mod error;
pub mod eval;
pub mod memory;
pub mod model;
pub mod npy;
pub mod rng;
pub mod runs;
pub mod train;

pub use error::{Error, Result};
