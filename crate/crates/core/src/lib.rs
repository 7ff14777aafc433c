//! Evolutionary memory graph for long-horizon dialogue agents.
//!
//! The engine runs in two decoupled phases. Offline, a dialogue stream is
//! gated for redundancy, compressed into atomic facts, and coarsened into
//! a conflict-resolved graph where duplicates merge and state updates
//! become directed temporal edges. Online, a query retrieves terminal
//! facts through hybrid dense + lexical search, reconnects them with
//! algorithmically discovered bridge nodes, mines bounded-depth reasoning
//! paths, and hands one serialized evidence graph to a single generator
//! call.

pub mod cli;
pub mod config;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fastpath;
pub mod graph;
pub mod index;
pub mod ingest;
pub mod pipeline;
pub mod provider;
pub mod retrieve;
pub mod store;
pub mod synth;
pub mod text;

pub use embed::{cosine, Embedder, OfflineEmbedder, Vector};
pub use error::{Error, Result};
pub use graph::{AtomicEntry, DialogueItem, Edge, EdgeKind, EntryId, MemoryGraph, Timestamp};
pub use store::{MemorySnapshot, MemoryStore};
