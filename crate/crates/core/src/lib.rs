pub mod channel;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod iq;
pub mod nn;
pub mod rng;
pub mod scheduler;
pub mod sensing;
pub mod sim;
pub mod spectrum;

pub use error::{Error, Result};
