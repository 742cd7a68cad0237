//! Payments where each channel is run by a Byzantine committee under
//! partial synchrony.

pub mod account;
pub mod env;
pub mod member;
pub mod msg;
pub mod party;
pub mod world;

pub use account::{CommitteeAccount, Mode, PartyAccount, PayError, Topology};
pub use world::{run, PsyncWorld};
