use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::MeanStd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ChunkLoaded,
    TokenEmitted,
    Reprioritization,
    Recompute,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub sim_time: f64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl TraceEvent {
    pub fn new(sim_time: f64, kind: EventKind) -> Self {
        Self {
            sim_time,
            kind,
            chunk: None,
            token: None,
            step: None,
            detail: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub events: Vec<TraceEvent>,
    /// Simulated seconds until the first emitted token.
    pub ttft: f64,
    /// Simulated time of the last event.
    pub total_time: f64,
    pub output_tokens: usize,
}

impl GenerationTrace {
    /// Orders events by time (stable) and derives the summary fields.
    pub fn from_events(mut events: Vec<TraceEvent>) -> Self {
        events.sort_by(|a, b| a.sim_time.total_cmp(&b.sim_time));
        let ttft = events
            .iter()
            .find(|e| e.kind == EventKind::TokenEmitted)
            .map_or(f64::NAN, |e| e.sim_time);
        let total_time = events.last().map_or(0.0, |e| e.sim_time);
        let output_tokens = events
            .iter()
            .filter(|e| e.kind == EventKind::TokenEmitted)
            .count();
        Self {
            events,
            ttft,
            total_time,
            output_tokens,
        }
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub ttft: MeanStd,
    pub total_time: MeanStd,
}

pub fn timing_summary(traces: &[GenerationTrace]) -> Result<TimingSummary> {
    let ttft: Vec<f64> = traces.iter().map(|t| t.ttft).collect();
    let total: Vec<f64> = traces.iter().map(|t| t.total_time).collect();
    Ok(TimingSummary {
        ttft: MeanStd::of(&ttft)?,
        total_time: MeanStd::of(&total)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(ttft: f64, total: f64) -> GenerationTrace {
        GenerationTrace::from_events(vec![
            TraceEvent::new(total, EventKind::TokenEmitted),
            TraceEvent::new(ttft, EventKind::TokenEmitted),
            TraceEvent::new(0.0, EventKind::ChunkLoaded),
        ])
    }

    #[test]
    fn derived_fields() {
        let t = trace(1.5, 4.0);
        assert_eq!(t.ttft, 1.5);
        assert_eq!(t.total_time, 4.0);
        assert_eq!(t.output_tokens, 2);
        assert!(t.events.windows(2).all(|w| w[0].sim_time <= w[1].sim_time));
    }

    #[test]
    fn summaries() {
        let s = timing_summary(&[trace(2.0, 5.0), trace(4.0, 5.0)]).unwrap();
        assert_eq!(s.ttft.to_string(), "3.0000±1.0000");
        assert_eq!(s.total_time.std, 0.0);
        let one = timing_summary(&[trace(2.5, 3.0)]).unwrap();
        assert_eq!(one.ttft.std, 0.0);
        assert_eq!(one.ttft.mean, 2.5);
        assert!(timing_summary(&[]).is_err());
    }
}
