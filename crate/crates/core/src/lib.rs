//! Workload-adaptive block cache engine and trace-driven simulator.
//!
//! Accesses are organised into a tree of access streams that mirrors the
//! storage hierarchy. Streams that see enough distinct children are
//! classified as sequential, random or skewed, and each classified stream
//! gets its own cache partition with a matching prefetch and eviction
//! policy. Partitions trade capacity by estimated marginal benefit.

pub mod alloc;
pub mod cache;
pub mod error;
pub mod namespace;
pub mod policy;
pub mod recognize;
pub mod sim;
pub mod trace;
pub mod tree;
pub mod workload;

pub use error::{Error, Result};
pub use namespace::{BlockId, FileId, ItemPath, NamespaceCatalog};
pub use recognize::PatternLabel;
pub use trace::AccessEvent;
