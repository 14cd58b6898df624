//! Workload scripts: the replay input format and the generators.
//!
//! A workload is one JSON document holding the page catalog and an ordered
//! list of turns. Everything a replay needs is in the file; nothing is drawn
//! at replay time.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::fault::BackendOutcome;
use crate::page::{
    degradation_path, Catalog, Page, PageId, PageType, PinClass, RepLevel, RepresentationVariant, Scope, SessionId,
    Tokens, Turn, POINTER_PREFIX,
};
use crate::table::Boundary;
use crate::writeback::{UpdateOp, UpdateTemplate};

pub mod adversarial;
pub mod families;
pub mod tasks;
pub mod tier1;

pub use adversarial::{build_adversarial, Adversarial};
pub use families::{generate_family, Family};
pub use tasks::{build_task_suite, TaskCategory};
pub use tier1::{build_tier1, Tier1Case, Tier1Expectation, Tier1Scenario};

/// Budget grid used by the family experiments.
pub const BUDGETS: [Tokens; 6] = [120, 180, 240, 300, 360, 500];

/// Default turn count for family generators.
pub const DEFAULT_TURNS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifecycleEvent {
    pub kind: Boundary,
    /// The runtime skipped its pre-boundary hook, so no writeback runs.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub hook_bypassed: bool,
}

impl LifecycleEvent {
    pub fn compaction() -> Self {
        LifecycleEvent {
            kind: Boundary::Compaction,
            hook_bypassed: false,
        }
    }

    pub fn reset() -> Self {
        LifecycleEvent {
            kind: Boundary::Reset,
            hook_bypassed: false,
        }
    }

    pub fn flush() -> Self {
        LifecycleEvent {
            kind: Boundary::Flush,
            hook_bypassed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    /// Canonical signature: tool name plus normalized arguments.
    pub signature: String,
    pub result: PageId,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub marks_dirty: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demand {
    pub page: PageId,
    #[serde(default, skip_serializing_if = "is_ok")]
    pub outcome: BackendOutcome,
}

fn is_ok(o: &BackendOutcome) -> bool {
    *o == BackendOutcome::Ok
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSpec {
    pub turn: Turn,
    pub session: SessionId,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pre_events: Vec<LifecycleEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    /// Pages whose state changed this turn without a tool call.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dirty: Vec<PageId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demands: Vec<Demand>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plan_active: Vec<PageId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub post_events: Vec<LifecycleEvent>,
}

impl TurnSpec {
    pub fn new(turn: Turn, session: SessionId) -> Self {
        TurnSpec {
            turn,
            session,
            pre_events: vec![],
            tool_calls: vec![],
            dirty: vec![],
            demands: vec![],
            plan_active: vec![],
            post_events: vec![],
        }
    }

    pub fn demand(&mut self, page: &str) -> &mut Self {
        self.demand_with(page, BackendOutcome::Ok)
    }

    pub fn demand_with(&mut self, page: &str, outcome: BackendOutcome) -> &mut Self {
        if !self.demands.iter().any(|d| d.page.as_str() == page) {
            self.demands.push(Demand {
                page: PageId::new(page),
                outcome,
            });
        }
        self
    }

    pub fn tool(&mut self, signature: impl Into<String>, result: &str) -> &mut Self {
        self.tool_calls.push(ToolCall {
            signature: signature.into(),
            result: PageId::new(result),
            marks_dirty: false,
        });
        self
    }

    pub fn mark_dirty(&mut self, page: &str) -> &mut Self {
        if !self.dirty.iter().any(|d| d.as_str() == page) {
            self.dirty.push(PageId::new(page));
        }
        self
    }

    pub fn active(&mut self, plan: &str) -> &mut Self {
        self.plan_active.push(PageId::new(plan));
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<TaskCategory>,
    /// Budget the workload was built for, used when none is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<Tokens>,
    /// Compact a session once the tool output appended since its last
    /// compaction reaches this fraction of the budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_compact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: String,
    pub seed: u64,
    pub sessions: Vec<SessionId>,
    pub pages: Vec<Page>,
    pub turns: Vec<TurnSpec>,
    /// Sessions allowed to write project-scoped state.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub project_writers: Vec<SessionId>,
    #[serde(default)]
    pub metadata: Metadata,
}

impl WorkloadSpec {
    /// Checks references and ordering. Page-level invariants are checked when
    /// the catalog is built.
    pub fn validate(&self) -> Result<Catalog> {
        let catalog = Catalog::new(self.pages.clone())?;
        let sessions: BTreeSet<&SessionId> = self.sessions.iter().collect();
        if sessions.len() != self.sessions.len() {
            return Err(Error::InvalidWorkload("duplicate session id".into()));
        }
        for p in &self.pages {
            if let Some(o) = &p.owner {
                if !sessions.contains(o) {
                    return Err(Error::InvalidWorkload(format!("page `{}` owned by unknown session `{o}`", p.page_id)));
                }
            }
        }
        let mut last: Option<Turn> = None;
        for t in &self.turns {
            let at = |msg: String| Error::InvalidWorkload(format!("turn {} ({}): {msg}", t.turn, t.session));
            if last.is_some_and(|l| t.turn <= l) {
                return Err(at("turn indices must be strictly increasing".into()));
            }
            last = Some(t.turn);
            if !sessions.contains(&t.session) {
                return Err(Error::UnknownSession(t.session.0.clone()));
            }
            let visible = |id: &PageId| -> Result<()> {
                let page = catalog.by_id(id)?;
                if page.visible_to(&t.session) {
                    Ok(())
                } else {
                    Err(at(format!("page `{id}` is not visible to the session")))
                }
            };
            let mut seen = BTreeSet::new();
            for d in &t.demands {
                visible(&d.page)?;
                if !seen.insert(&d.page) {
                    return Err(at(format!("page `{}` demanded twice", d.page)));
                }
            }
            for c in &t.tool_calls {
                visible(&c.result)?;
            }
            for p in t.dirty.iter().chain(&t.plan_active) {
                visible(p)?;
            }
            for p in &t.plan_active {
                if catalog.by_id(p)?.page_type != PageType::Plan {
                    return Err(at(format!("`{p}` is marked active but is not a plan page")));
                }
            }
        }
        Ok(catalog)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("workload serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<WorkloadSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec = WorkloadSpec::from_json(&text).map_err(|source| Error::Parse {
        path: path.to_owned(),
        source,
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn save_spec(spec: &WorkloadSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, spec.to_json()).map_err(|e| Error::io(path, e))
}

/// Shared page factory for the generators. Costs follow the defaults:
/// full 20 to 60, compressed half of full rounded up, structured 8 to 15 (kept
/// below compressed), pointer 2.
pub(crate) struct PageGen {
    pub rng: ChaCha8Rng,
}

impl PageGen {
    pub fn new(seed: u64) -> Self {
        PageGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn full_cost(&mut self) -> Tokens {
        self.rng.gen_range(20..=60)
    }

    pub fn page(&mut self, id: &str, page_type: PageType, scope: Scope, owner: Option<&SessionId>) -> Page {
        let full = self.full_cost();
        self.page_with_full(id, page_type, scope, owner, full)
    }

    pub fn page_with_full(
        &mut self,
        id: &str,
        page_type: PageType,
        scope: Scope,
        owner: Option<&SessionId>,
        full: Tokens,
    ) -> Page {
        let compressed = full.div_ceil(2);
        let structured = self.rng.gen_range(8..=15).min(compressed - 1);
        let full_ref = format!("{id}#full");
        let variants = degradation_path(page_type)
            .iter()
            .map(|&level| {
                let (token_cost, payload_ref) = match level {
                    RepLevel::Full => (full, full_ref.clone()),
                    RepLevel::Compressed => (compressed, format!("{id}#compressed")),
                    RepLevel::Structured => (structured, format!("{id}#structured")),
                    RepLevel::Pointer => (2, format!("{POINTER_PREFIX}{full_ref}")),
                };
                RepresentationVariant {
                    level,
                    token_cost,
                    payload_ref,
                }
            })
            .collect();
        let recompute_cost = match page_type {
            PageType::Evidence => self.rng.gen_range(3..=10),
            _ => self.rng.gen_range(1..=5),
        };
        Page {
            page_id: PageId::new(id),
            page_type,
            scope,
            owner: match scope {
                Scope::Session => owner.cloned(),
                Scope::Project => None,
            },
            provenance: match page_type {
                PageType::Evidence => format!("tool:{id}"),
                _ => format!("transcript:{id}"),
            },
            pin: match page_type {
                PageType::Constraint => PinClass::Hard,
                PageType::Bootstrap => PinClass::Soft,
                _ => PinClass::None,
            },
            variants,
            recompute_cost,
            fields: vec![],
            writeback: vec![],
            initial_level: None,
        }
    }

    /// A page resident from session start that carries a scripted note
    /// update for writeback.
    pub fn stateful(&mut self, id: &str, page_type: PageType, scope: Scope, owner: Option<&SessionId>, evidence: &str) -> Page {
        let mut p = self.page(id, page_type, scope, owner);
        p.initial_level = Some(RepLevel::Full);
        p.fields = vec!["notes".into()];
        p.writeback = vec![note(evidence, id)];
        p
    }

    pub fn resident(&mut self, id: &str, page_type: PageType, scope: Scope, owner: Option<&SessionId>) -> Page {
        let mut p = self.page(id, page_type, scope, owner);
        p.initial_level = Some(RepLevel::Full);
        p
    }
}

/// Append-only note update grounded in `evidence`.
pub(crate) fn note(evidence: &str, page: &str) -> UpdateTemplate {
    UpdateTemplate {
        field: "notes".into(),
        op: UpdateOp::Append,
        value: json!({ "page": page, "note": "state delta" }),
        scope: None,
        evidence_ref: Some(evidence.to_owned()),
        version: None,
    }
}

/// Display and parse helper shared by the named enums.
pub(crate) fn parse_named<T: Copy>(all: &[T], name: impl Fn(T) -> &'static str, s: &str) -> Option<T> {
    all.iter().copied().find(|v| name(*v) == s)
}

pub(crate) fn sid(s: &str) -> SessionId {
    SessionId::new(s)
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_named(&Family::ALL, Family::name, s).ok_or_else(|| Error::UnknownFamily(s.to_owned()))
    }
}
