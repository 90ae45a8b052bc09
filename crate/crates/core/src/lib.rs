//! Speech emotion recognition with a siamese two-branch CNN.
//!
//! The crate covers corpus ingestion, MFCC/log-mel extraction, the network
//! with exact gradients, pairwise and cross-entropy losses, training, and
//! evaluation under session-wise cross-validation.

pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod seed;
pub mod train;

pub use error::{Result, SerError};
