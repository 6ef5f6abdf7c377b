//! Data-driven filterbank learning and cepstral speaker verification.

pub mod analysis;
pub mod dsp;
pub mod error;
pub mod features;
pub mod filterbank;
pub mod gmm;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod pitch;
pub mod sad;
pub mod synth;
pub mod scale;

pub use error::{Error, Result};
