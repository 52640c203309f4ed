//! A small deterministic decoder-only transformer with a chunk-keyed KV cache.
//!
//! Every token keeps its document-absolute position, so a chunk loaded out of
//! order still gets the rotary phase it has in the source text. Generated
//! tokens sit after the whole document (positions `N, N+1, …`) in both dense
//! and selection mode.
//!
//! All kernels work one row at a time with a fixed serial reduction order.
//! Rows are independent, so they may be spread over threads without changing
//! a single bit, and a one-shot dense prefill equals a chunk-by-chunk prefill
//! of the same tokens exactly.

mod cache;
mod config;
mod cost;
mod forward;
mod snapshot;
mod weights;

pub use cache::{GenerationBlock, KvBlock, KvCache};
pub use config::ModelConfig;
pub use cost::{attention_cost, AttentionCost, PrefillCost};
pub use forward::{Model, StepOutput};
pub use weights::Weights;
