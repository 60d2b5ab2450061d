//! Dual-brain speech runtime: a formulation brain thinks while an
//! articulation brain speaks, paced by a deterministic virtual-time scheduler.

pub mod assembler;
pub mod backend;
pub mod model;
pub mod scheduler;
pub mod transcript;
pub mod metrics;
pub mod par;
pub mod scenario;
pub mod corpus;
pub mod sweep;
pub mod config;
pub mod cli;
