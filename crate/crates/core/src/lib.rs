//! Learned sensor privacy mappings for decentralized detection.

pub mod data;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod losses;
pub mod oracle;
pub mod risk;
pub mod solver;

pub use error::{Error, Result};
