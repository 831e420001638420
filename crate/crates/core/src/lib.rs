//! Desk-scale simulator and analysis toolchain for near-memory
//! offloading over a CXL-style fabric.

pub mod analyze;
pub mod fabric;
pub mod ir;
pub mod workloads;
