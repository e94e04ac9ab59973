//! Predicting strain time histories in one bridge member from a single
//! measured member, using a peephole LSTM trained on sliding windows.
//!
//! The crate is organized bottom-up:
//!
//! - [`math`]: dense `f64` matrices and vectors, activations, the seeded
//!   ChaCha8 generator and a central-difference gradient oracle
//! - [`lstm`]: the peephole cell, stacked layers and the dense head
//! - [`training`]: MSE loss, backpropagation through time, clipping, Adam
//! - [`dataset`]: CSV ingestion, z-score normalization, windowing
//! - [`metrics`]: RMSE and L2-norm accuracy
//! - [`sim`]: synthetic influence-line strain records
//! - [`store`]: JSON model artifacts
//! - [`experiment`], [`presets`], [`predictions`], [`plot`], [`cli`]: the
//!   end-to-end workflow

pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiment;
mod batched;
mod io;
pub mod lstm;
pub mod math;
pub mod metrics;
pub mod plot;
pub mod predictions;
pub mod presets;
pub mod sim;
pub mod store;
pub mod training;

pub use error::{Error, Result};
