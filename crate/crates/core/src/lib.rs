//! Collaborative real-time coding engine.
//!
//! Code travels between developers only in buildable states; concurrent
//! edits are serialized through element-level pessimistic locks derived from
//! the program's AST and reference graph. A central server owns the canonical
//! project and relays buildable snapshots to every on-record client.

pub mod client;
pub mod lockmgr;
pub mod protocol;
pub mod semantics;
pub mod server;
pub mod sim;
pub mod toylang;
