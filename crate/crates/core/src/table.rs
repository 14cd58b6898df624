//! Per-session residency state.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::page::{Catalog, LifecycleContext, PageId, PageIdx, RepLevel, SessionId, Tokens, Turn};
use crate::policy::PolicyConfig;

/// Lifecycle boundary kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Compaction,
    Reset,
    Flush,
}

impl Boundary {
    pub fn context(self) -> LifecycleContext {
        match self {
            Boundary::Compaction => LifecycleContext::PostCompaction,
            Boundary::Reset => LifecycleContext::PostReset,
            Boundary::Flush => LifecycleContext::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Residency {
    pub level: RepLevel,
    pub installed_turn: Turn,
    pub last_access_turn: Turn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidencyEntry {
    pub page_id: PageId,
    pub level: RepLevel,
    pub installed_turn: Turn,
    pub last_access_turn: Turn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action", content = "level")]
pub enum CompactionOutcome {
    Degraded(RepLevel),
    Evicted,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub id: SessionId,
    entries: Vec<Option<Residency>>,
    /// Pages that have been resident at least once in this session.
    ever_resident: Vec<bool>,
    dirty: BTreeSet<PageIdx>,
    seen_signatures: BTreeSet<String>,
    pub pending_check: Option<Boundary>,
    /// Full-fidelity tokens appended to the context since the last
    /// compaction or reset; drives threshold-triggered compaction.
    pub growth: Tokens,
}

impl SessionState {
    pub fn new(id: SessionId, pages: usize) -> Self {
        SessionState {
            id,
            entries: vec![None; pages],
            ever_resident: vec![false; pages],
            dirty: BTreeSet::new(),
            seen_signatures: BTreeSet::new(),
            pending_check: None,
            growth: 0,
        }
    }

    pub fn entry(&self, idx: PageIdx) -> Option<&Residency> {
        self.entries[idx].as_ref()
    }

    pub fn level(&self, idx: PageIdx) -> Option<RepLevel> {
        self.entries[idx].map(|e| e.level)
    }

    pub fn is_resident(&self, idx: PageIdx) -> bool {
        self.entries[idx].is_some()
    }

    pub fn was_ever_resident(&self, idx: PageIdx) -> bool {
        self.ever_resident[idx]
    }

    /// Resident pages in index (page-id) order.
    pub fn resident(&self) -> impl Iterator<Item = (PageIdx, &Residency)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|e| (i, e)))
    }

    pub fn resident_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    /// Installs or re-levels a page. Callers check path and visibility.
    pub(crate) fn set(&mut self, idx: PageIdx, level: RepLevel, turn: Turn) {
        match &mut self.entries[idx] {
            Some(e) => {
                e.level = level;
                e.last_access_turn = turn;
            }
            slot @ None => {
                *slot = Some(Residency {
                    level,
                    installed_turn: turn,
                    last_access_turn: turn,
                });
            }
        }
        self.ever_resident[idx] = true;
    }

    /// Changes the level of a resident page without counting as an access.
    pub(crate) fn relevel(&mut self, idx: PageIdx, level: RepLevel) {
        if let Some(e) = &mut self.entries[idx] {
            e.level = level;
        }
    }

    pub(crate) fn evict(&mut self, idx: PageIdx) -> bool {
        self.entries[idx].take().is_some()
    }

    pub(crate) fn touch_idx(&mut self, idx: PageIdx, turn: Turn) -> bool {
        match &mut self.entries[idx] {
            Some(e) => {
                e.last_access_turn = turn;
                true
            }
            None => false,
        }
    }

    pub fn dirty(&self) -> &BTreeSet<PageIdx> {
        &self.dirty
    }

    pub(crate) fn mark_dirty_idx(&mut self, idx: PageIdx) {
        self.dirty.insert(idx);
    }

    pub(crate) fn clean(&mut self, idx: PageIdx) {
        self.dirty.remove(&idx);
    }

    pub(crate) fn clear_dirty(&mut self) {
        self.dirty.clear();
    }

    pub fn seen_signatures(&self) -> &BTreeSet<String> {
        &self.seen_signatures
    }

    /// Records a tool signature; returns `true` if it had been seen before.
    pub(crate) fn record_signature(&mut self, signature: &str) -> bool {
        if self.seen_signatures.contains(signature) {
            true
        } else {
            self.seen_signatures.insert(signature.to_owned());
            false
        }
    }

    pub(crate) fn compact(
        &mut self,
        catalog: &Catalog,
        policy: &PolicyConfig,
        active_plans: &[PageIdx],
    ) -> Vec<(PageIdx, CompactionOutcome)> {
        let mut changed = Vec::new();
        for idx in 0..self.entries.len() {
            let Some(entry) = self.entries[idx] else { continue };
            let page = catalog.get(idx);
            let outcome = if policy.is_hard_pinned(page) {
                let floor = page.min_level_for(LifecycleContext::PostCompaction, active_plans.contains(&idx));
                CompactionOutcome::Degraded(entry.level.min(floor))
            } else if policy.resolve_pointers && page.path().contains(&RepLevel::Pointer) {
                CompactionOutcome::Degraded(RepLevel::Pointer)
            } else {
                CompactionOutcome::Evicted
            };
            match outcome {
                CompactionOutcome::Degraded(level) => self.relevel(idx, level),
                CompactionOutcome::Evicted => {
                    self.evict(idx);
                }
            }
            changed.push((idx, outcome));
        }
        self.pending_check = Some(Boundary::Compaction);
        self.growth = 0;
        changed
    }

    pub(crate) fn reset(&mut self) {
        for e in &mut self.entries {
            *e = None;
        }
        self.pending_check = Some(Boundary::Reset);
        self.growth = 0;
    }
}

/// Residency for every session of one workload.
#[derive(Debug, Clone)]
pub struct PageTable {
    catalog: Arc<Catalog>,
    sessions: BTreeMap<SessionId, SessionState>,
}

impl PageTable {
    pub fn new(catalog: Arc<Catalog>, sessions: impl IntoIterator<Item = SessionId>) -> Self {
        let n = catalog.len();
        let sessions = sessions
            .into_iter()
            .map(|id| (id.clone(), SessionState::new(id, n)))
            .collect();
        PageTable { catalog, sessions }
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn session(&self, id: &SessionId) -> Result<&SessionState> {
        self.sessions
            .get(id)
            .ok_or_else(|| Error::UnknownSession(id.0.clone()))
    }

    pub fn session_mut(&mut self, id: &SessionId) -> Result<&mut SessionState> {
        self.sessions
            .get_mut(id)
            .ok_or_else(|| Error::UnknownSession(id.0.clone()))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionState> {
        self.sessions.values()
    }

    fn visible_idx(&self, session: &SessionId, page: &PageId) -> Result<PageIdx> {
        let idx = self.catalog.idx(page)?;
        if !self.catalog.get(idx).visible_to(session) {
            return Err(Error::NotVisible {
                page: page.clone(),
                session: session.0.clone(),
            });
        }
        Ok(idx)
    }

    pub fn install(&mut self, session: &SessionId, page: &PageId, level: RepLevel, turn: Turn) -> Result<()> {
        let idx = self.visible_idx(session, page)?;
        self.catalog.get(idx).variant(level)?;
        self.session_mut(session)?.set(idx, level, turn);
        Ok(())
    }

    /// Current level, or `None` when the page is absent, unknown or not
    /// visible to the session.
    pub fn resident_level(&self, session: &SessionId, page: &PageId) -> Option<RepLevel> {
        let idx = self.visible_idx(session, page).ok()?;
        self.sessions.get(session)?.level(idx)
    }

    pub fn entries(&self, session: &SessionId) -> Result<Vec<ResidencyEntry>> {
        let s = self.session(session)?;
        Ok(s.resident()
            .map(|(i, e)| ResidencyEntry {
                page_id: self.catalog.get(i).page_id.clone(),
                level: e.level,
                installed_turn: e.installed_turn,
                last_access_turn: e.last_access_turn,
            })
            .collect())
    }

    pub fn evict(&mut self, session: &SessionId, page: &PageId) -> Result<bool> {
        let idx = self.visible_idx(session, page)?;
        Ok(self.session_mut(session)?.evict(idx))
    }

    pub fn mark_dirty(&mut self, session: &SessionId, page: &PageId, _turn: Turn) -> Result<()> {
        let idx = self.visible_idx(session, page)?;
        self.session_mut(session)?.mark_dirty_idx(idx);
        Ok(())
    }

    pub fn is_dirty(&self, session: &SessionId, page: &PageId) -> bool {
        match (self.catalog.idx(page), self.sessions.get(session)) {
            (Ok(idx), Some(s)) => s.dirty.contains(&idx),
            _ => false,
        }
    }

    pub fn touch(&mut self, session: &SessionId, page: &PageId, turn: Turn) -> Result<()> {
        let idx = self.visible_idx(session, page)?;
        if self.session_mut(session)?.touch_idx(idx, turn) {
            Ok(())
        } else {
            Err(Error::NotResident(page.clone()))
        }
    }

    /// Degrades or evicts the session's resident pages as compaction would.
    pub fn apply_compaction(
        &mut self,
        session: &SessionId,
        policy: &PolicyConfig,
        _turn: Turn,
    ) -> Result<Vec<(PageId, CompactionOutcome)>> {
        let catalog = Arc::clone(&self.catalog);
        let changed = self.session_mut(session)?.compact(&catalog, policy, &[]);
        Ok(changed
            .into_iter()
            .map(|(i, o)| (catalog.get(i).page_id.clone(), o))
            .collect())
    }

    /// Clears residency. Dirty tracking is left for the caller, which must
    /// run boundary accounting first.
    pub fn apply_reset(&mut self, session: &SessionId, _turn: Turn) -> Result<()> {
        self.session_mut(session)?.reset();
        Ok(())
    }
}
