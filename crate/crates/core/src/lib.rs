//! Deterministic simulator for decentralized federated learning with
//! per-node, per-round, per-phase energy and CO₂ accounting.
//!
//! The crate is organised bottom-up:
//!
//! * [`domain`], [`config`], [`registry`]: shared types, scenario files and profile CSVs.
//! * [`topology`]: undirected communication graphs.
//! * [`learning`]: synthetic data, partitioning, a small MLP and its wire format.
//! * [`energy`], [`carbon`]: joule and gCO₂ accounting.
//! * [`aggregation`], [`selection`]: FedAvg, Krum, emission-threshold aggregation
//!   and carbon-intensity voting.
//! * [`engine`]: the round loop.
//! * [`ledger`], [`report`], [`cli`]: persistence, summary tables and the command line.

pub mod aggregation;
pub mod carbon;
pub mod cli;
pub mod config;
pub mod domain;
pub mod energy;
pub mod engine;
pub mod learning;
pub mod ledger;
pub mod registry;
pub mod report;
pub mod rng;
pub mod selection;
pub mod topology;

pub use domain::{
    CommMedium, HardwareProfile, MediumKind, NodeId, NodeProfile, Phase, RegionProfile,
    JOULES_PER_KWH,
};
