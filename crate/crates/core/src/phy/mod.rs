//! Complex-baseband OFDM physical layer.

mod ofdm;
mod qam;

pub use ofdm::*;
pub use qam::*;
