//! STAR-RIS assisted V2X resource allocation: scenario and channel models,
//! link metrics, the MDP environment, learning agents, the SCA beamformer and
//! the experiment harness.

pub mod agent;
pub mod beamformer;
pub mod channel;
pub mod env;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod par;
pub mod params;
pub mod rng;
pub mod scenario;
pub mod star_ris;
pub mod stats;
pub mod units;

pub use error::{Error, Result};
pub use params::{Profile, SimParams};
