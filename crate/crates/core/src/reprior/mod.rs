//! Reprioritization: periodic re-scoring of every chunk against an evolving
//! query, swapping buffer residents for better chunks and rebuilding K/V that
//! went stale.

mod buffer;
mod query;

pub use buffer::{
    apply_plan, reprioritization_due, reprioritize, BufferEntry, ChunkBuffer, KvBackend, ModelKv,
    ReplacementEvent, ReplacementPlan, ReplacementPolicy, ReplacementStats,
};
pub use query::{update_enhanced_query, EnhancedQueryState, QueryConfig};
