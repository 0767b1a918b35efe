//! Desk-scale event store: an always-online header catalog indirecting into
//! bulk payload files, a simulated hierarchical storage manager (disk cache
//! plus tape), a buffered central-data-recording ingestion pipeline,
//! stateless byte-range data serving with two load-balancing strategies,
//! and a live migration path between the two payload backends with full and
//! sampled consistency verification.

pub mod backend;
pub mod catalog;
pub mod cdr;
pub mod codec;
pub mod config;
pub mod metrics;
pub mod migration;
pub mod harness;
pub mod hsm;
pub mod rng;
pub mod server;

pub use config::Config;
