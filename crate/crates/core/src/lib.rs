pub mod array_geometry;
pub mod beamforming;
pub mod channel;
pub mod config_io;
pub mod error;
pub mod experiments;
pub mod export;
pub mod protocol;
pub mod sensing;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
