//! Per-turn decision records, written one JSON object per line.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::fault::{Counters, FaultEvent};
use crate::page::{PageId, RepLevel, SessionId, Tokens, Turn};
use crate::selector::UpgradeCandidate;
use crate::writeback::{RejectReason, UpdateOp};

/// Field carrying wall-clock timing; the only field allowed to differ
/// between two replays of the same input.
pub const LATENCY_FIELD: &str = "decision_us";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidentPage {
    pub page_id: PageId,
    pub level: RepLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WritebackResult {
    pub seq: u64,
    pub page_id: PageId,
    pub field: String,
    pub op: UpdateOp,
    pub committed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTraceRecord {
    pub session: SessionId,
    pub turn: Turn,
    pub budget: Tokens,
    pub policy: String,
    /// Assembled context, in page-id order.
    pub resident: Vec<ResidentPage>,
    pub tokens_used: Tokens,
    pub pressure: Vec<PageId>,
    pub evicted: Vec<PageId>,
    pub upgrades: Vec<UpgradeCandidate>,
    pub faults: Vec<FaultEvent>,
    pub writeback: Vec<WritebackResult>,
    /// Cumulative counters across all sessions after this turn.
    pub counters: Counters,
    pub decision_us: f64,
}

impl DecisionTraceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace record serializes")
    }
}

/// Writes records as JSON lines to any sink.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter { out }
    }

    pub fn write(&mut self, record: &DecisionTraceRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Drops the latency field from every line of a trace so two traces can be
/// compared byte for byte.
pub fn strip_latency(trace: &str) -> String {
    let mut out = String::with_capacity(trace.len());
    for line in trace.lines() {
        let mut v: serde_json::Value = serde_json::from_str(line).expect("trace line is JSON");
        if let Some(obj) = v.as_object_mut() {
            obj.remove(LATENCY_FIELD);
        }
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}
