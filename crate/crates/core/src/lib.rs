pub mod error;
pub mod corpus;
pub mod decoding;
pub mod math;
pub mod memory;
pub mod model;
pub mod pipeline;
pub mod session;
pub mod simulator;

pub use error::{Error, Result};
