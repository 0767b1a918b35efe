//! The orchestration layer: synthetic data generation, full-pipeline
//! deployment, fault scheduling, the scan-scalability stress experiment,
//! and plot-data emission.

pub mod fault;
pub mod generate;
pub mod report;
pub mod rig;
pub mod scenario;
pub mod stress;
