//! Flow-table lookup built on a range-based ternary search tree.
//!
//! A flow table is split into groups of pairwise-disjoint flows; each
//! group gets a source search tree over SA prefixes whose leaves point at
//! per-prefix destination trees over the remaining header bits. Trees are
//! stored as contiguous per-level arrays with computed child addresses
//! (no stored pointers) and support in-place updates through per-key
//! valid bits. A deterministic cycle-level simulator models the dual-lane
//! pipelined architecture the layout is designed for, including write
//! bubbles that interleave updates with lookups.

pub mod engine;
pub mod flow;
pub mod gen;
pub mod io;
pub mod oracle;
pub mod partition;
pub mod report;
pub mod schema;
pub mod sim;
pub mod tree;

pub use engine::{ClassifyResult, Engine, UpdateError, UpdateOp};
pub use flow::{Flow, FlowTable, Packet, Prefix, Range, Wide};
pub use partition::{partition, GroupPlan};
pub use schema::{FieldDef, FieldKind, FieldSchema};
pub use tree::{Payload, Rtst};
