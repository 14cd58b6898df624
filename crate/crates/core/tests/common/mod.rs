//! Writeback model shared by the property suite and the acceptance run.
//!
//! The model keeps its own store and its own validator, written from the
//! rules rather than from the crate, and the property compares the two after
//! every flush.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use pagevm::page::{Catalog, Page, PageId, PageType, PinClass, RepLevel, RepresentationVariant, Scope, SessionId};
use pagevm::writeback::{
    DurableStore, EntryStatus, Journal, RejectReason, StagedUpdate, UpdateOp, WriteContext, MAX_VALUE_BYTES,
};
use proptest::prelude::*;
use serde_json::{json, Map, Value};

fn page(id: &str, t: PageType, scope: Scope, owner: Option<&str>, fields: &[&str]) -> Page {
    let path: &[RepLevel] = match t {
        PageType::Constraint | PageType::Bootstrap => &[RepLevel::Full, RepLevel::Structured],
        _ => &[RepLevel::Full, RepLevel::Compressed, RepLevel::Structured, RepLevel::Pointer],
    };
    let costs = [40, 20, 10, 2];
    Page {
        page_id: PageId::new(id),
        page_type: t,
        scope,
        owner: owner.map(SessionId::new),
        provenance: format!("transcript:{id}"),
        pin: if t == PageType::Constraint { PinClass::Hard } else { PinClass::None },
        variants: path
            .iter()
            .zip(costs)
            .map(|(l, c)| RepresentationVariant {
                level: *l,
                token_cost: c,
                payload_ref: match l {
                    RepLevel::Pointer => format!("ptr:{id}#full"),
                    RepLevel::Full => format!("{id}#full"),
                    _ => format!("{id}#{l:?}"),
                },
            })
            .collect(),
        recompute_cost: 1,
        fields: fields.iter().map(|f| f.to_string()).collect(),
        writeback: vec![],
        initial_level: None,
    }
}

pub fn catalog() -> Catalog {
    Catalog::new(vec![
        page("pref", PageType::Preference, Scope::Session, Some("s1"), &["a", "b"]),
        page("other", PageType::Preference, Scope::Session, Some("s2"), &["a"]),
        page("proj", PageType::Preference, Scope::Project, None, &["a"]),
        page("con", PageType::Constraint, Scope::Session, Some("s1"), &["rule"]),
    ])
    .unwrap()
}

#[derive(Debug, Clone)]
pub struct Op {
    pub page: &'static str,
    pub field: &'static str,
    pub session: &'static str,
    pub kind: UpdateOp,
    pub value: Value,
    /// Offset applied to the version current at staging time.
    pub version_skew: i64,
    pub omit_version: bool,
    pub evidence: Option<&'static str>,
    pub flush_after: bool,
}

fn value_strategy() -> impl Strategy<Value = Value> {
    prop_oneof![
        6 => (0u32..50).prop_map(|n| json!(n)),
        6 => proptest::collection::btree_map("[k-n]", 0u32..9, 0..4)
            .prop_map(|m| Value::Object(m.into_iter().map(|(k, v)| (k, json!(v))).collect())),
        1 => Just(json!("x".repeat(MAX_VALUE_BYTES + 1))),
    ]
}

pub fn op_strategy() -> impl Strategy<Value = Op> {
    (
        prop_oneof![Just("pref"), Just("pref"), Just("other"), Just("proj"), Just("con"), Just("ghost")],
        prop_oneof![Just("a"), Just("a"), Just("b"), Just("rule"), Just("zzz")],
        prop_oneof![Just("s1"), Just("s1"), Just("s2")],
        prop_oneof![Just(UpdateOp::Append), Just(UpdateOp::Merge), Just(UpdateOp::SetWithVersion)],
        value_strategy(),
        prop_oneof![4 => Just(0i64), 1 => Just(-1i64), 1 => Just(1i64)],
        proptest::bool::weighted(0.1),
        prop_oneof![6 => Just(Some("pref")), 1 => Just(Some("fetch(doc=1)")), 1 => Just(Some("nowhere")), 1 => Just(None)],
        proptest::bool::weighted(0.3),
    )
        .prop_map(|(page, field, session, kind, value, version_skew, omit_version, evidence, flush_after)| Op {
            page,
            field,
            session,
            kind,
            value,
            version_skew,
            omit_version,
            evidence,
            flush_after,
        })
}

pub fn ops_strategy() -> impl Strategy<Value = Vec<Op>> {
    proptest::collection::vec(op_strategy(), 1..24)
}

/// Stale versioned sets seen across all cases, to confirm the generator
/// reaches the destructive-op path.
pub static STALE_SETS: AtomicUsize = AtomicUsize::new(0);

type Key = (Scope, Option<String>, String, String);

#[derive(Default)]
struct ModelSlot {
    version: u64,
    entries: Vec<Value>,
}

fn merged(entries: &[Value]) -> Map<String, Value> {
    let mut out = Map::new();
    for e in entries {
        if let Value::Object(m) = e {
            for (k, v) in m {
                if !out.contains_key(k) {
                    out.insert(k.clone(), v.clone());
                }
            }
        }
    }
    out
}

/// Independent statement of the validation rules.
fn model_check(u: &StagedUpdate, slots: &BTreeMap<Key, ModelSlot>, key: &Key) -> Result<(), RejectReason> {
    let fields: &[&str] = match u.page_id.as_str() {
        "pref" => &["a", "b"],
        "other" | "proj" => &["a"],
        "con" => &["rule"],
        _ => return Err(RejectReason::SchemaInvalid),
    };
    if !fields.contains(&u.field.as_str())
        || serde_json::to_string(&u.value).unwrap().len() > MAX_VALUE_BYTES
        || (u.op == UpdateOp::Merge && !u.value.is_object())
        || (u.op == UpdateOp::SetWithVersion && u.staged_version.is_none())
    {
        return Err(RejectReason::SchemaInvalid);
    }
    match u.evidence_ref.as_deref() {
        Some("pref") | Some("fetch(doc=1)") => {}
        _ => return Err(RejectReason::ProvenanceDangling),
    }
    let (scope, owner) = match u.page_id.as_str() {
        "proj" => (Scope::Project, None),
        "other" => (Scope::Session, Some("s2")),
        _ => (Scope::Session, Some("s1")),
    };
    let visible = owner.is_none_or(|o| o == u.session.as_str());
    let granted = scope == Scope::Session || u.session.as_str() == "s1";
    if u.scope != scope || !visible || !granted {
        return Err(RejectReason::ScopeDenied);
    }
    let current = slots.get(key).map_or(0, |s| s.version);
    if u.op == UpdateOp::SetWithVersion && u.staged_version != Some(current) {
        return Err(RejectReason::DestructiveOp);
    }
    if u.page_id.as_str() == "con" {
        return Err(RejectReason::PolicyViolation);
    }
    Ok(())
}

fn key_of(u: &StagedUpdate) -> Key {
    let owner = (u.scope == Scope::Session).then(|| u.session.as_str().to_owned());
    (u.scope, owner, u.page_id.as_str().to_owned(), u.field.clone())
}

/// Stages and flushes `ops` against the crate and the model, checking after
/// each flush that the two agree, that no committed content disappears, that
/// stale versioned sets are rejected as destructive, and that every journal
/// entry is accounted for exactly once.
pub fn check_writeback(ops: &[Op]) -> Result<(), TestCaseError> {
    let cat = catalog();
    let seen: BTreeSet<String> = ["fetch(doc=1)".to_owned()].into();
    let writers: BTreeSet<SessionId> = [SessionId::new("s1")].into();
    let ctx = WriteContext {
        catalog: &cat,
        seen_signatures: &seen,
        project_writers: &writers,
    };
    let mut journal = Journal::new();
    let mut store = DurableStore::new();
    let mut model: BTreeMap<Key, ModelSlot> = BTreeMap::new();
    let mut staged: Vec<StagedUpdate> = Vec::new();
    let mut committed_log: Vec<StagedUpdate> = Vec::new();
    let mut expected_status: Vec<EntryStatus> = Vec::new();

    for (i, op) in ops.iter().enumerate() {
        let scope = if op.page == "proj" { Scope::Project } else { Scope::Session };
        let mut u = StagedUpdate {
            page_id: PageId::new(op.page),
            field: op.field.into(),
            op: op.kind,
            value: op.value.clone(),
            scope,
            session: SessionId::new(op.session),
            evidence_ref: op.evidence.map(str::to_owned),
            staged_version: None,
        };
        if op.kind == UpdateOp::SetWithVersion && !op.omit_version {
            let now = model.get(&key_of(&u)).map_or(0, |s| s.version) as i64;
            u.staged_version = Some((now + op.version_skew).max(0) as u64);
        }
        let seq = journal.stage(i as u32, u.clone());
        prop_assert_eq!(seq as usize, staged.len());
        staged.push(u);
        expected_status.push(EntryStatus::Staged);

        if op.flush_after || i + 1 == ops.len() {
            let first = journal.entries().len() - journal.pending();
            let out = journal.flush(&ctx, &mut store);
            for (j, u) in staged.iter().enumerate().skip(first) {
                if expected_status[j] != EntryStatus::Staged {
                    continue;
                }
                let key = key_of(u);
                match model_check(u, &model, &key) {
                    Ok(()) => {
                        let slot = model.entry(key).or_default();
                        match u.op {
                            UpdateOp::Merge => {
                                let have = merged(&slot.entries);
                                let fresh: Map<String, Value> = u
                                    .value
                                    .as_object()
                                    .unwrap()
                                    .iter()
                                    .filter(|(k, _)| !have.contains_key(*k))
                                    .map(|(k, v)| (k.clone(), v.clone()))
                                    .collect();
                                if !fresh.is_empty() {
                                    slot.entries.push(Value::Object(fresh));
                                }
                            }
                            _ => slot.entries.push(u.value.clone()),
                        }
                        slot.version += 1;
                        expected_status[j] = EntryStatus::Committed;
                        committed_log.push(u.clone());
                    }
                    Err(r) => {
                        if r == RejectReason::DestructiveOp {
                            STALE_SETS.fetch_add(1, Ordering::Relaxed);
                        }
                        expected_status[j] = EntryStatus::Rejected(r);
                    }
                }
            }
            prop_assert_eq!(journal.pending(), 0);
            prop_assert_eq!(out.committed.len() + out.rejected.len(), staged.len() - first);
        }
    }

    // statuses match the model entry by entry
    let actual: Vec<EntryStatus> = journal.entries().iter().map(|e| e.status).collect();
    prop_assert_eq!(&actual, &expected_status);

    // conservation: every staged entry ends in exactly one terminal state and
    // every commit shows up as exactly one version bump
    prop_assert_eq!(journal.entries().len(), ops.len());
    let commits = actual.iter().filter(|s| **s == EntryStatus::Committed).count() as u64;
    let bumps: u64 = store.slots().map(|(_, s)| s.version).sum();
    prop_assert_eq!(commits, bumps);

    // store content matches the model exactly
    let slots: Vec<(Key, u64, Vec<Value>)> = store
        .slots()
        .map(|(k, s)| {
            (
                (k.scope, k.owner.as_ref().map(|o| o.as_str().to_owned()), k.page_id.as_str().to_owned(), k.field.clone()),
                s.version,
                s.entries.clone(),
            )
        })
        .collect();
    let expected: Vec<(Key, u64, Vec<Value>)> =
        model.into_iter().map(|(k, s)| (k, s.version, s.entries)).collect();
    prop_assert_eq!(slots, expected);

    // no committed value is lost
    for u in &committed_log {
        let k = store
            .slots()
            .find(|(k, _)| k.page_id == u.page_id && k.field == u.field && k.scope == u.scope)
            .map(|(_, s)| s.clone())
            .expect("committed key has a slot");
        match u.op {
            UpdateOp::Merge => {
                let m = k.merged();
                for key in u.value.as_object().unwrap().keys() {
                    prop_assert!(m.contains_key(key));
                }
            }
            _ => prop_assert!(k.entries.contains(&u.value)),
        }
    }
    Ok(())
}
