//! Deterministic discrete-event simulation of in-situ scientific workflows.
//!
//! An in-situ workflow couples an iterative simulation code with a data
//! analytics component running concurrently on shared resources, connected
//! by a Data Transport Layer (DTL). This crate reproduces that structure at
//! desk scale so allocation ratios, analysis stride/cost configurations and
//! in-situ versus in-transit mappings can be evaluated without a cluster:
//!
//! - [`platform`] describes the simulated cluster (nodes, cores, links) and
//!   answers routing queries;
//! - [`engine`] is the discrete-event core: virtual clock, cooperative
//!   actors, compute delays and flow-level communications under max-min
//!   fair bandwidth sharing;
//! - [`dtl`] provides producer-consumer message queues with instantaneous
//!   and rendezvous-mailbox semantics;
//! - [`workflow`] models the application: a configurable rank skeleton,
//!   analytics actors, and a metric collector exchanging data through two
//!   queues;
//! - [`model`] is the analytical side: per-step stage costs, idle time,
//!   makespan and efficiency, plus extraction of measured stages from
//!   simulation traces;
//! - [`experiments`] builds scenario grids, runs sweeps and emits CSV
//!   reports.
//!
//! Simulations are bitwise deterministic: identical inputs produce
//! identical traces and reports.

pub mod dtl;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod model;
pub mod platform;
pub mod workflow;

pub use error::{Error, Result};
