//! Cornus and baseline two-phase commit over a shared log store, with a
//! deterministic simulator and a trace checker for the atomic-commit
//! properties.

pub mod bench;
pub mod check;
pub mod cornus;
pub mod explore;
pub mod message;
pub mod node;
pub mod sim;
pub mod smoke;
pub mod storage;
pub mod stress;
pub mod trace;
pub mod twopc;
pub mod types;
pub mod workload;
