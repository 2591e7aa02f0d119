//! Demand-driven multi-tier computation runtime.

pub mod clock;
pub mod codec;
pub mod demand;
pub mod diag;
pub mod fusion;
pub mod marf;
pub mod protocol;
pub mod store;
pub mod tier;
pub mod transport;
