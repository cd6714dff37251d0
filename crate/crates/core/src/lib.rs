//! Resonance-driven message passing on small graphs.
//!
//! The crate covers a dense reverse-mode kernel ([`numkernel`]), graph
//! loading and generation ([`graphcore`]), a configurable GCN ([`gcn`]),
//! resonance intensity diagnostics ([`resonance`]), local resonance
//! subgraphs ([`lrs`]), edge-transmitted signals ([`edgesignal`]), the GRN
//! model ([`grn`]) and attack/robustness experiments ([`attackbench`]).

pub mod attackbench;
pub mod checkpoint;
pub mod edgesignal;
pub mod error;
pub mod gcn;
pub mod graphcore;
pub mod grn;
pub mod lrs;
pub mod numkernel;
pub mod report;
pub mod resonance;

pub use error::{Error, Result};
