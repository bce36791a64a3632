pub mod error;
pub mod channel;
pub mod linalg;
pub mod rf;
pub mod broadcast;
pub mod downlink;
pub mod bl;
pub mod uplink;
pub mod config;
pub mod harness;

pub use error::{Error, Result};
