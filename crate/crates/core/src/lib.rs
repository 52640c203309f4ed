//! Query-aware input chunk selection for long-context transformer inference.
//!
//! A document is tokenized and cut into fixed-size chunks. Each chunk gets a
//! low-dimensional embedding once; at every reprioritization boundary the
//! chunks are re-scored against an evolving query embedding, and only the
//! top-k are kept in the transformer's KV cache. Evicted chunks can come back
//! later, and chunks whose causal context changed are recomputed.

pub mod embed;
pub mod error;
pub mod exec;
pub mod memmodel;
pub mod metrics;
pub mod model;
pub mod reprior;
pub mod sched;
pub mod select;
pub mod textpipe;

pub use error::{ApceError, Result};
pub use exec::Execution;
