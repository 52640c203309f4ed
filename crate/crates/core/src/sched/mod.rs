//! Generation sessions on a virtual clock.
//!
//! Chunks arrive one after another at a fixed load latency. Dense mode waits
//! for the whole document; selection mode starts decoding once
//! `async_start_chunks` have arrived and lets later arrivals compete at the
//! next reprioritization boundary. Compute is charged to the clock in
//! proportion to attention-score elements, so timings are reproducible.

mod session;
mod trace;

pub use session::{
    simulate_generation, GenerationOutcome, LoadModel, Mode, ReprioritizationConfig, RunCounters,
    SelectionSnapshot, SessionConfig, SessionInputs,
};
pub use trace::{timing_summary, EventKind, GenerationTrace, TimingSummary, TraceEvent};
