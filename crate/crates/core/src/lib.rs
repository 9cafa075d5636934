//! Exact replica-state distributions for BFT consensus happy paths under
//! independent link omissions and per-phase crashes, with a seeded simulator
//! to check them against.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod exec;
pub mod phase;
pub mod prob;
pub mod protocols;
pub mod sim;

pub use error::{Error, Result};
pub use prob::{FailureParams, Pmf};
pub use protocols::{PhaseTrace, Protocol, ProtocolConfig, QuorumTable};
