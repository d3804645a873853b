pub mod actdist;
pub mod analysis;
pub mod clustering;
pub mod downstream;
pub mod error;
pub mod gridworld;
pub mod harness;
pub mod hashing;
pub mod nn;
pub mod representations;
pub mod rng;
pub mod softgcp;

pub use error::{Error, Result};
