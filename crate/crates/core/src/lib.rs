//! Programmable packet scheduling built on push-in first-out queues.
//!
//! A scheduling algorithm is a tree of nodes, each holding a small
//! transaction that computes a rank for every packet. Trees run directly in
//! a behavioral model ([`tree`], [`sim`]), or are compiled onto a mesh of
//! PIFO blocks ([`compiler`]) and replayed cycle by cycle ([`mesh`]),
//! optionally over a model of the block's flow scheduler and rank store
//! ([`hw`]). [`trace`] holds the file formats and generators.

pub mod compiler;
pub mod hw;
pub mod mesh;
pub mod packet;
pub mod pifo;
pub mod scalar;
pub mod sim;
pub mod trace;
pub mod tree;
pub mod txn;

pub use compiler::{check_config, compile, MeshConfig};
pub use mesh::{run_mesh, BackendKind, MeshOptions};
pub use packet::PacketRecord;
pub use pifo::{Pifo, PifoBlock, PifoElement};
pub use scalar::{RankValue, TxnScalar};
pub use sim::{run_behavioral, Departure, Event, RunOutput, SimConfig};
pub use tree::{SchedTree, SchedTreeState, TreeSpec};

/// Rank type of the behavioral model.
pub type Rank = u64;

/// Default transaction arithmetic.
pub type Scalar = scalar::Fixed;

/// Exact transaction arithmetic, for cross-checks.
pub type ExactScalar = num_rational::Ratio<i64>;
