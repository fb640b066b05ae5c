//! Cell-free massive MIMO with wireless fronthaul: channel models, access power
//! control, multicast fronthaul beamforming, TDMA scheduling, AP grouping and
//! Monte Carlo end-to-end rate evaluation.

pub mod access_power;
pub mod beamforming;
pub mod channel;
pub mod error;
pub mod fronthaul_sched;
pub mod grouping;
pub mod pipeline;
pub mod scenario;

pub use error::{Error, Result};
