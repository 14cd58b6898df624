//! Validated writeback of staged state changes into durable storage.
//!
//! Updates are staged into an append-only journal, then validated and
//! committed one at a time. Validation runs five checks in a fixed order and
//! the first failure becomes the rejection reason:
//!
//! 1. schema: known page and field, value under the size cap, merge values
//!    are objects, versioned sets carry a version;
//! 2. provenance: the evidence reference names a catalog page or a tool
//!    signature the session has produced;
//! 3. scope: the update targets the page's scope, the page is visible to the
//!    writer, and project-scoped writes need a grant;
//! 4. destructive op: a versioned set must match the current version;
//! 5. policy: constraint pages are never written.
//!
//! The store never overwrites. Appends and sets push a new entry; merges push
//! only the subkeys not already present, so committed content always wins.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::page::{Catalog, PageId, PageIdx, PageType, Scope, SessionId, Turn};

/// Largest accepted serialized value, in bytes.
pub const MAX_VALUE_BYTES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOp {
    Append,
    Merge,
    SetWithVersion,
}

/// An update a page stages every time it is flushed while dirty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateTemplate {
    pub field: String,
    pub op: UpdateOp,
    pub value: Value,
    /// Target scope; defaults to the page's own scope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<Scope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_ref: Option<String>,
    /// Version a versioned set expects. `None` means "whatever is current".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedUpdate {
    pub page_id: PageId,
    pub field: String,
    pub op: UpdateOp,
    pub value: Value,
    pub scope: Scope,
    pub session: SessionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staged_version: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    SchemaInvalid,
    ProvenanceDangling,
    ScopeDenied,
    DestructiveOp,
    PolicyViolation,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::SchemaInvalid => "SCHEMA_INVALID",
            RejectReason::ProvenanceDangling => "PROVENANCE_DANGLING",
            RejectReason::ScopeDenied => "SCOPE_DENIED",
            RejectReason::DestructiveOp => "DESTRUCTIVE_OP",
            RejectReason::PolicyViolation => "POLICY_VIOLATION",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum EntryStatus {
    Staged,
    Committed,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub turn: Turn,
    pub update: StagedUpdate,
    pub status: EntryStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StoreKey {
    pub scope: Scope,
    /// Writing session for session-scoped keys; `None` for project keys.
    pub owner: Option<SessionId>,
    pub page_id: PageId,
    pub field: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub version: u64,
    pub entries: Vec<Value>,
}

impl Slot {
    /// Object view folded over every object entry, earliest first. Later
    /// entries never replace keys an earlier entry already set.
    pub fn merged(&self) -> Map<String, Value> {
        let mut out = Map::new();
        for e in &self.entries {
            if let Value::Object(m) = e {
                for (k, v) in m {
                    out.entry(k.clone()).or_insert_with(|| v.clone());
                }
            }
        }
        out
    }

    pub fn latest(&self) -> Option<&Value> {
        self.entries.last()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DurableStore {
    slots: BTreeMap<StoreKey, Slot>,
}

impl DurableStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn slot(&self, key: &StoreKey) -> Option<&Slot> {
        self.slots.get(key)
    }

    pub fn version(&self, key: &StoreKey) -> u64 {
        self.slots.get(key).map_or(0, |s| s.version)
    }

    pub fn slots(&self) -> impl Iterator<Item = (&StoreKey, &Slot)> {
        self.slots.iter()
    }

    pub fn entry_count(&self) -> usize {
        self.slots.values().map(|s| s.entries.len()).sum()
    }

    fn commit(&mut self, key: StoreKey, update: &StagedUpdate) {
        let slot = self.slots.entry(key).or_default();
        match update.op {
            UpdateOp::Append | UpdateOp::SetWithVersion => slot.entries.push(update.value.clone()),
            UpdateOp::Merge => {
                let current = slot.merged();
                if let Value::Object(m) = &update.value {
                    let fresh: Map<String, Value> = m
                        .iter()
                        .filter(|(k, _)| !current.contains_key(*k))
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .collect();
                    if !fresh.is_empty() {
                        slot.entries.push(Value::Object(fresh));
                    }
                }
            }
        }
        slot.version += 1;
    }
}

pub fn store_key(update: &StagedUpdate) -> StoreKey {
    StoreKey {
        scope: update.scope,
        owner: match update.scope {
            Scope::Session => Some(update.session.clone()),
            Scope::Project => None,
        },
        page_id: update.page_id.clone(),
        field: update.field.clone(),
    }
}

/// What the validator may consult besides the store.
pub struct WriteContext<'a> {
    pub catalog: &'a Catalog,
    pub seen_signatures: &'a BTreeSet<String>,
    /// Sessions allowed to write project-scoped state.
    pub project_writers: &'a BTreeSet<SessionId>,
}

pub fn validate(update: &StagedUpdate, ctx: &WriteContext<'_>, store: &DurableStore) -> Result<(), RejectReason> {
    let page = ctx
        .catalog
        .lookup(update.page_id.as_str())
        .map(|i| ctx.catalog.get(i))
        .ok_or(RejectReason::SchemaInvalid)?;
    let size = serde_json::to_vec(&update.value).map_or(usize::MAX, |v| v.len());
    if !page.fields.contains(&update.field)
        || size > MAX_VALUE_BYTES
        || (update.op == UpdateOp::Merge && !update.value.is_object())
        || (update.op == UpdateOp::SetWithVersion && update.staged_version.is_none())
    {
        return Err(RejectReason::SchemaInvalid);
    }

    match update.evidence_ref.as_deref() {
        Some(r) if !r.is_empty() && (ctx.catalog.lookup(r).is_some() || ctx.seen_signatures.contains(r)) => {}
        _ => return Err(RejectReason::ProvenanceDangling),
    }

    if update.scope != page.scope
        || !page.visible_to(&update.session)
        || (update.scope == Scope::Project && !ctx.project_writers.contains(&update.session))
    {
        return Err(RejectReason::ScopeDenied);
    }

    if update.op == UpdateOp::SetWithVersion && update.staged_version != Some(store.version(&store_key(update))) {
        return Err(RejectReason::DestructiveOp);
    }

    if page.page_type == PageType::Constraint {
        return Err(RejectReason::PolicyViolation);
    }
    Ok(())
}

/// Result of flushing a batch of staged entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlushOutcome {
    pub committed: Vec<u64>,
    pub rejected: Vec<(u64, RejectReason)>,
    /// Pages with at least one committed update.
    pub committed_pages: BTreeSet<PageIdx>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Journal {
    entries: Vec<JournalEntry>,
    /// Index of the first entry that may still be staged.
    cursor: usize,
}

impl Journal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[JournalEntry] {
        &self.entries
    }

    pub fn stage(&mut self, turn: Turn, update: StagedUpdate) -> u64 {
        let seq = self.entries.len() as u64;
        self.entries.push(JournalEntry {
            seq,
            turn,
            update,
            status: EntryStatus::Staged,
        });
        seq
    }

    pub fn pending(&self) -> usize {
        self.entries[self.cursor..]
            .iter()
            .filter(|e| e.status == EntryStatus::Staged)
            .count()
    }

    /// Validates and commits every staged entry in order. Each entry sees the
    /// store as left by the entries before it.
    pub fn flush(&mut self, ctx: &WriteContext<'_>, store: &mut DurableStore) -> FlushOutcome {
        let mut out = FlushOutcome::default();
        for e in &mut self.entries[self.cursor..] {
            if e.status != EntryStatus::Staged {
                continue;
            }
            match validate(&e.update, ctx, store) {
                Ok(()) => {
                    store.commit(store_key(&e.update), &e.update);
                    e.status = EntryStatus::Committed;
                    out.committed.push(e.seq);
                    if let Some(idx) = ctx.catalog.lookup(e.update.page_id.as_str()) {
                        out.committed_pages.insert(idx);
                    }
                }
                Err(reason) => {
                    e.status = EntryStatus::Rejected(reason);
                    out.rejected.push((e.seq, reason));
                }
            }
        }
        self.cursor = self.entries.len();
        out
    }
}

/// Builds the staged form of a template for `session`, reading the current
/// version from the store when the template leaves it open.
pub fn stage_template(
    template: &UpdateTemplate,
    page_id: &PageId,
    page_scope: Scope,
    session: &SessionId,
    store: &DurableStore,
) -> StagedUpdate {
    let mut update = StagedUpdate {
        page_id: page_id.clone(),
        field: template.field.clone(),
        op: template.op,
        value: template.value.clone(),
        scope: template.scope.unwrap_or(page_scope),
        session: session.clone(),
        evidence_ref: template.evidence_ref.clone(),
        staged_version: template.version,
    };
    if update.op == UpdateOp::SetWithVersion && update.staged_version.is_none() {
        update.staged_version = Some(store.version(&store_key(&update)));
    }
    update
}

/// Flushes a set of dirty pages: stages each page's templates, then
/// validates and commits them. Pages without templates have nothing to lose
/// and count as committed.
pub fn flush_dirty(
    dirty: &BTreeSet<PageIdx>,
    session: &SessionId,
    turn: Turn,
    ctx: &WriteContext<'_>,
    journal: &mut Journal,
    store: &mut DurableStore,
) -> FlushOutcome {
    let mut trivially_clean = BTreeSet::new();
    for &idx in dirty {
        let page = ctx.catalog.get(idx);
        if page.writeback.is_empty() {
            trivially_clean.insert(idx);
        }
        for t in &page.writeback {
            // versions are read at staging time, before any of this batch commits
            let update = stage_template(t, &page.page_id, page.scope, session, store);
            journal.stage(turn, update);
        }
    }
    let mut out = journal.flush(ctx, store);
    out.committed_pages.extend(trivially_clean);
    out
}
