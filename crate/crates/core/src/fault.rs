//! Fault classification and counters.
//!
//! Observers only classify. The engine owns every residency change, so the
//! same event stream can be scored under any policy without the observer
//! shifting the outcome.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::page::{Catalog, PageId, PageIdx, PageType, RepLevel, SessionId, Turn};
use crate::policy::PolicyConfig;
use crate::selector::{serves, Assembly};
use crate::table::{Boundary, SessionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    Refetch,
    DuplicateTool,
    PinnedInvariantMiss,
    PostCompactionBootstrap,
    SilentRecall,
    FlushMiss,
    /// Repeated tool call whose result was still usable. Counts toward the
    /// paging rate but not the explicit fault total.
    DuplicateSignatureAlert,
}

impl FaultClass {
    pub const ALL: [FaultClass; 7] = [
        FaultClass::Refetch,
        FaultClass::DuplicateTool,
        FaultClass::PinnedInvariantMiss,
        FaultClass::PostCompactionBootstrap,
        FaultClass::SilentRecall,
        FaultClass::FlushMiss,
        FaultClass::DuplicateSignatureAlert,
    ];

    pub fn is_explicit(self) -> bool {
        self != FaultClass::DuplicateSignatureAlert
    }

    pub fn label(self) -> &'static str {
        match self {
            FaultClass::Refetch => "refetch",
            FaultClass::DuplicateTool => "duplicate_tool",
            FaultClass::PinnedInvariantMiss => "pinned_invariant_miss",
            FaultClass::PostCompactionBootstrap => "post_compaction_bootstrap",
            FaultClass::SilentRecall => "silent_recall",
            FaultClass::FlushMiss => "flush_miss",
            FaultClass::DuplicateSignatureAlert => "duplicate_signature_alert",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReasonCode {
    Denied,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub class: FaultClass,
    pub session: SessionId,
    pub turn: Turn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_id: Option<PageId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<ReasonCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
}

impl FaultEvent {
    fn new(class: FaultClass, session: &SessionId, turn: Turn) -> Self {
        FaultEvent {
            class,
            session: session.clone(),
            turn,
            page_id: None,
            signature: None,
            reason: None,
            boundary: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub refetch: u64,
    pub duplicate_tool: u64,
    pub pinned_invariant_miss: u64,
    pub post_compaction_bootstrap: u64,
    pub silent_recall: u64,
    pub flush_miss: u64,
    pub duplicate_signature_alert: u64,
    /// Demands served from resident pages.
    pub hits: u64,
    /// Hits served by following a pointer.
    pub resolutions: u64,
    /// Non-faulting fetches of pages that were not resident.
    pub retrievals: u64,
    pub prefetches: u64,
    pub tool_calls: u64,
}

impl Counters {
    pub fn get(&self, class: FaultClass) -> u64 {
        match class {
            FaultClass::Refetch => self.refetch,
            FaultClass::DuplicateTool => self.duplicate_tool,
            FaultClass::PinnedInvariantMiss => self.pinned_invariant_miss,
            FaultClass::PostCompactionBootstrap => self.post_compaction_bootstrap,
            FaultClass::SilentRecall => self.silent_recall,
            FaultClass::FlushMiss => self.flush_miss,
            FaultClass::DuplicateSignatureAlert => self.duplicate_signature_alert,
        }
    }

    fn slot(&mut self, class: FaultClass) -> &mut u64 {
        match class {
            FaultClass::Refetch => &mut self.refetch,
            FaultClass::DuplicateTool => &mut self.duplicate_tool,
            FaultClass::PinnedInvariantMiss => &mut self.pinned_invariant_miss,
            FaultClass::PostCompactionBootstrap => &mut self.post_compaction_bootstrap,
            FaultClass::SilentRecall => &mut self.silent_recall,
            FaultClass::FlushMiss => &mut self.flush_miss,
            FaultClass::DuplicateSignatureAlert => &mut self.duplicate_signature_alert,
        }
    }

    pub fn record(&mut self, class: FaultClass) {
        *self.slot(class) += 1;
    }

    pub fn add(&mut self, other: &Counters) {
        for c in FaultClass::ALL {
            *self.slot(c) += other.get(c);
        }
        self.hits += other.hits;
        self.resolutions += other.resolutions;
        self.retrievals += other.retrievals;
        self.prefetches += other.prefetches;
        self.tool_calls += other.tool_calls;
    }

    /// Duplicate-tool plus refetch faults.
    pub fn dup_refetch(&self) -> u64 {
        self.duplicate_tool + self.refetch
    }

    /// Fault classes with a nonzero count.
    pub fn classes(&self) -> BTreeSet<FaultClass> {
        FaultClass::ALL.into_iter().filter(|c| self.get(*c) > 0).collect()
    }

    /// Explicit fault classes with a nonzero count.
    pub fn explicit_classes(&self) -> BTreeSet<FaultClass> {
        self.classes().into_iter().filter(|c| c.is_explicit()).collect()
    }
}

/// Every explicit fault, including pinned-invariant misses.
pub fn explicit_fault_total(c: &Counters) -> u64 {
    FaultClass::ALL
        .into_iter()
        .filter(|f| f.is_explicit())
        .map(|f| c.get(f))
        .sum()
}

/// Paging events per hit: `(explicit faults + alerts) / (hits + 1)`.
pub fn thrash_index(c: &Counters) -> f64 {
    let f = explicit_fault_total(c) + c.duplicate_signature_alert;
    f as f64 / (c.hits as f64 + 1.0)
}

/// Result of a demand lookup against the session's residency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupOutcome {
    Hit { resolved: bool },
    /// Evidence that had been resident earlier in the session is fetched
    /// again. The engine reinstalls it.
    Refetch,
    /// First fetch of a page; the engine installs it.
    Retrieved,
    /// The backend found nothing to return.
    Empty,
    Silent(ReasonCode),
}

/// Outcome reported by the retrieval backend for a demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendOutcome {
    #[default]
    Ok,
    Empty,
    Deny,
    Error,
}

#[derive(Debug, Clone, Default)]
pub struct FaultObserver {
    pub counters: Counters,
}

impl FaultObserver {
    pub fn new() -> Self {
        Self::default()
    }

    fn emit(&mut self, event: FaultEvent, sink: &mut Vec<FaultEvent>) {
        self.counters.record(event.class);
        sink.push(event);
    }

    /// Classifies a tool call. `seen_before` is whether the signature had been
    /// recorded earlier in the session; `result` is the page the call
    /// produces.
    #[allow(clippy::too_many_arguments)]
    pub fn observe_tool_call(
        &mut self,
        catalog: &Catalog,
        session: &SessionState,
        config: &PolicyConfig,
        signature: &str,
        seen_before: bool,
        result: PageIdx,
        turn: Turn,
        sink: &mut Vec<FaultEvent>,
    ) {
        self.counters.tool_calls += 1;
        if !seen_before {
            return;
        }
        let class = if serves(catalog, result, session.level(result), config) {
            FaultClass::DuplicateSignatureAlert
        } else {
            FaultClass::DuplicateTool
        };
        let mut e = FaultEvent::new(class, &session.id, turn);
        e.signature = Some(signature.to_owned());
        e.page_id = Some(catalog.get(result).page_id.clone());
        self.emit(e, sink);
    }

    #[allow(clippy::too_many_arguments)]
    pub fn observe_lookup(
        &mut self,
        catalog: &Catalog,
        session: &SessionState,
        config: &PolicyConfig,
        page: PageIdx,
        outcome: BackendOutcome,
        turn: Turn,
        sink: &mut Vec<FaultEvent>,
    ) -> LookupOutcome {
        let level = session.level(page);
        if serves(catalog, page, level, config) {
            self.counters.hits += 1;
            let resolved = level == Some(RepLevel::Pointer);
            if resolved {
                self.counters.resolutions += 1;
            }
            return LookupOutcome::Hit { resolved };
        }
        let silent = |reason| {
            let mut e = FaultEvent::new(FaultClass::SilentRecall, &session.id, turn);
            e.page_id = Some(catalog.get(page).page_id.clone());
            e.reason = Some(reason);
            e
        };
        match outcome {
            BackendOutcome::Deny => {
                self.emit(silent(ReasonCode::Denied), sink);
                LookupOutcome::Silent(ReasonCode::Denied)
            }
            BackendOutcome::Error => {
                self.emit(silent(ReasonCode::BackendError), sink);
                LookupOutcome::Silent(ReasonCode::BackendError)
            }
            BackendOutcome::Empty => LookupOutcome::Empty,
            BackendOutcome::Ok => {
                let p = catalog.get(page);
                if p.page_type == PageType::Evidence && session.was_ever_resident(page) {
                    let mut e = FaultEvent::new(FaultClass::Refetch, &session.id, turn);
                    e.page_id = Some(p.page_id.clone());
                    self.emit(e, sink);
                    LookupOutcome::Refetch
                } else {
                    self.counters.retrievals += 1;
                    LookupOutcome::Retrieved
                }
            }
        }
    }

    /// Checks the assembled context against the pinning invariant and, on
    /// the first assembly after a boundary, against bootstrap presence.
    #[allow(clippy::too_many_arguments)]
    pub fn observe_assembly(
        &mut self,
        catalog: &Catalog,
        session: &SessionState,
        config: &PolicyConfig,
        assembly: &Assembly,
        visible: &[PageIdx],
        turn: Turn,
        sink: &mut Vec<FaultEvent>,
    ) {
        for &idx in &assembly.pressure {
            let mut e = FaultEvent::new(FaultClass::PinnedInvariantMiss, &session.id, turn);
            e.page_id = Some(catalog.get(idx).page_id.clone());
            self.emit(e, sink);
        }
        let Some(boundary) = session.pending_check else { return };
        if boundary == Boundary::Flush {
            return;
        }
        for &idx in visible {
            let page = catalog.get(idx);
            if page.page_type != PageType::Bootstrap || config.is_hard_pinned(page) {
                continue;
            }
            if assembly.level_of(idx).is_none_or(|l| l < RepLevel::Structured) {
                let mut e = FaultEvent::new(FaultClass::PostCompactionBootstrap, &session.id, turn);
                e.page_id = Some(page.page_id.clone());
                e.boundary = Some(boundary);
                self.emit(e, sink);
            }
        }
    }

    /// One flush miss per page that was dirty at the boundary and did not
    /// commit.
    #[allow(clippy::too_many_arguments)]
    pub fn observe_boundary(
        &mut self,
        catalog: &Catalog,
        session: &SessionId,
        boundary: Boundary,
        dirty_before: &BTreeSet<PageIdx>,
        committed: &BTreeSet<PageIdx>,
        turn: Turn,
        sink: &mut Vec<FaultEvent>,
    ) {
        for idx in dirty_before.difference(committed) {
            let mut e = FaultEvent::new(FaultClass::FlushMiss, session, turn);
            e.page_id = Some(catalog.get(*idx).page_id.clone());
            e.boundary = Some(boundary);
            self.emit(e, sink);
        }
    }
}
