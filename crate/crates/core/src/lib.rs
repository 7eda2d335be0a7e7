//! Frequency-secured stochastic unit commitment with aggregated electric
//! vehicle fleets, simulated in a rolling horizon.

pub mod config;
pub mod degradation;
pub mod error;
pub mod frequency;
pub mod lp;
pub mod rolling;
pub mod study;
pub mod system;
pub mod uc;
pub mod validation;
pub mod wind;

pub use error::{Error, Result};
