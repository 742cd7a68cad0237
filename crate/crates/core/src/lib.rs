//! Simulation of Byzantine-committee payment channel networks.

pub mod analysis;
pub mod broadcast;
pub mod channel;
pub mod crypto;
pub mod ledger;
pub mod psyncpcn;
pub mod scenario;
pub mod simnet;
pub mod syncpcn;
