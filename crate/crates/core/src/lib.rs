//! Behavioral simulator and experiment harness for eNVM compute-in-memory
//! DNN inference engines with two protection mechanisms: per-chip model
//! binding through ADC offset retraining, and keyed input-channel shuffle
//! with zero insertion.
//!
//! Modules
//! - [`netcore`]: quantized NN core (tensors, training, datasets, checkpoints)
//! - [`xbar`]: 128x128 binary crossbar mapping and bit-serial execution
//! - [`adcvar`]: statistical ADC offset model (Flash/SAR) and fingerprints
//! - [`shufflekey`]: keyed channel shuffle, zero insertion, security bounds
//! - [`threatbench`]: retraining, clone/key attacks, sweep experiments
//! - [`hwcost`]: area/latency/energy cost model and shuffle overhead

pub mod adcvar;
pub mod error;
pub mod hwcost;
pub mod netcore;
pub mod rng;
pub mod shufflekey;
pub mod threatbench;
pub mod xbar;

pub use error::{Error, Result};
