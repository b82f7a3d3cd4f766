//! Semantic image transmission over simulated OFDM links.
//!
//! Images are masked by patch importance, encoded by a learned patch
//! autoencoder into 16-QAM symbols, optionally power-allocated across ranked
//! subcarriers, and sent through AWGN, flat Rayleigh or multipath channels.
//! A JPEG-like separable chain serves as the reference, and a UDP emulator
//! stands in for the radio link.

pub mod baseline;
pub mod channel;
pub mod codec;
pub mod corpus;
pub mod emulator;
pub mod error;
pub mod frame;
pub mod harness;
pub mod image;
pub mod link;
pub mod metrics;
pub mod phy;
pub mod power;
pub mod preprocess;
pub mod rng;
pub mod wire;

pub use error::{Error, Result};
