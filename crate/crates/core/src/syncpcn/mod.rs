//! Multi-hop payments over committee-backed channels under synchrony.

mod dispute;
pub mod env;
mod flow;
pub mod member;
pub mod msg;
pub mod party;
pub mod plan;
pub mod world;

pub use plan::{
    hop_amounts, hop_timelocks, setup_payment, validate_hop, validate_receiver, HopPolicy, IncomingCp, OutgoingChannel,
    PaymentPlan, RejectReason, SetupError,
};
pub use world::{run, SyncWorld};
