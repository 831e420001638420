//! Message-level model of the memory fabric: a host root complex,
//! switches, and endpoints connected by latency/bandwidth edges.
//! Traffic is plain timed request/response; data-bearing responses
//! always carry exactly one 64-byte line.

pub mod message;
pub mod near;
pub mod net;
pub mod topology;

pub use message::{FabricMessage, MessageKind, SliceOutcome, SliceResult};
pub use near::{exec_slice_body, SliceRun, SliceTrap};
pub use net::Fabric;
pub use topology::{parse_topology, NodeKind, Topology, TopologyError};
