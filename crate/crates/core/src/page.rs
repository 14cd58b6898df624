//! Typed pages, representation levels and minimum-fidelity rules.
//!
//! Every page class has a fixed degradation path (highest level first) and a
//! floor it may not drop below while resident. The floor depends on the page
//! class and, for bootstrap and plan pages, on the lifecycle context:
//!
//! | class        | path          | floor                                  |
//! |--------------|---------------|----------------------------------------|
//! | Bootstrap    | F → St        | St                                     |
//! | Constraint   | F → St        | St, always hard-pinned                 |
//! | Plan         | F → St → Pt   | St while the plan is active, else Pt   |
//! | Preference   | F → C → St → Pt | Pt (scope and provenance required)   |
//! | Evidence     | F → C → St → Pt | Pt (pointer must resolve)            |
//! | Conversation | F → C → St → Pt | Pt                                   |

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::writeback::UpdateTemplate;

/// Token counts. Representations never carry fractional tokens.
pub type Tokens = u32;

/// Global turn index inside a workload.
pub type Turn = u32;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PageId(pub String);

impl PageId {
    pub fn new(id: impl Into<String>) -> Self {
        PageId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PageId {
    fn from(s: &str) -> Self {
        PageId(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn new(id: impl Into<String>) -> Self {
        SessionId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        SessionId(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageType {
    Bootstrap,
    Constraint,
    Plan,
    Preference,
    Evidence,
    Conversation,
}

impl PageType {
    pub const ALL: [PageType; 6] = [
        PageType::Bootstrap,
        PageType::Constraint,
        PageType::Plan,
        PageType::Preference,
        PageType::Evidence,
        PageType::Conversation,
    ];
}

/// Representation level. The derived ordering is the fidelity ordering:
/// `Pointer < Structured < Compressed < Full`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepLevel {
    Pointer,
    Structured,
    Compressed,
    Full,
}

impl RepLevel {
    pub const ALL: [RepLevel; 4] = [
        RepLevel::Pointer,
        RepLevel::Structured,
        RepLevel::Compressed,
        RepLevel::Full,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinClass {
    Hard,
    Soft,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Session,
    Project,
}

/// Lifecycle context used when computing a page's floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleContext {
    Normal,
    PostCompaction,
    PostReset,
}

const PATH_F_ST: &[RepLevel] = &[RepLevel::Full, RepLevel::Structured];
const PATH_F_ST_PT: &[RepLevel] = &[RepLevel::Full, RepLevel::Structured, RepLevel::Pointer];
const PATH_FULL: &[RepLevel] = &[
    RepLevel::Full,
    RepLevel::Compressed,
    RepLevel::Structured,
    RepLevel::Pointer,
];

/// Degradation chain for a page class, highest level first.
pub fn degradation_path(page_type: PageType) -> &'static [RepLevel] {
    match page_type {
        PageType::Bootstrap | PageType::Constraint => PATH_F_ST,
        PageType::Plan => PATH_F_ST_PT,
        PageType::Preference | PageType::Evidence | PageType::Conversation => PATH_FULL,
    }
}

pub fn on_path(page_type: PageType, level: RepLevel) -> bool {
    degradation_path(page_type).contains(&level)
}

/// Floor level for a page class in the given context.
pub fn min_level_for(page_type: PageType, context: LifecycleContext, plan_active: bool) -> RepLevel {
    // Bootstrap bottoms out at structured in every context; after compaction
    // or reset the observer additionally requires it to be present.
    let _ = context;
    match page_type {
        PageType::Bootstrap | PageType::Constraint => RepLevel::Structured,
        PageType::Plan if plan_active => RepLevel::Structured,
        PageType::Plan => RepLevel::Pointer,
        PageType::Preference | PageType::Evidence | PageType::Conversation => RepLevel::Pointer,
    }
}

/// Next level up the path from `level`, if any. `None` as input means absent.
pub fn next_level_up(page_type: PageType, level: Option<RepLevel>) -> Option<RepLevel> {
    let path = degradation_path(page_type);
    match level {
        None => path.last().copied(),
        Some(l) => {
            let pos = path.iter().position(|p| *p == l)?;
            if pos == 0 {
                None
            } else {
                Some(path[pos - 1])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentationVariant {
    pub level: RepLevel,
    pub token_cost: Tokens,
    pub payload_ref: String,
}

pub const POINTER_PREFIX: &str = "ptr:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub page_id: PageId,
    pub page_type: PageType,
    pub scope: Scope,
    /// Owning session for session-scoped pages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<SessionId>,
    pub provenance: String,
    pub pin: PinClass,
    pub variants: Vec<RepresentationVariant>,
    pub recompute_cost: u32,
    /// Writable fields for staged updates against this page.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
    /// Updates staged for this page whenever it is flushed while dirty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub writeback: Vec<UpdateTemplate>,
    /// Level the page is resident at when its session starts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_level: Option<RepLevel>,
}

impl Page {
    pub fn path(&self) -> &'static [RepLevel] {
        degradation_path(self.page_type)
    }

    pub fn min_level(&self) -> RepLevel {
        min_level_for(self.page_type, LifecycleContext::Normal, false)
    }

    pub fn min_level_for(&self, context: LifecycleContext, plan_active: bool) -> RepLevel {
        min_level_for(self.page_type, context, plan_active)
    }

    pub fn satisfies(&self, resident: Option<RepLevel>, context: LifecycleContext, plan_active: bool) -> bool {
        match resident {
            Some(level) => level >= self.min_level_for(context, plan_active),
            None => false,
        }
    }

    pub fn variant(&self, level: RepLevel) -> Result<&RepresentationVariant> {
        if !on_path(self.page_type, level) {
            return Err(Error::InvalidRepresentation {
                page: self.page_id.clone(),
                level,
            });
        }
        self.variants
            .iter()
            .find(|v| v.level == level)
            .ok_or_else(|| Error::InvalidRepresentation {
                page: self.page_id.clone(),
                level,
            })
    }

    pub fn variant_cost(&self, level: RepLevel) -> Result<Tokens> {
        self.variant(level).map(|v| v.token_cost)
    }

    pub fn visible_to(&self, session: &SessionId) -> bool {
        match self.scope {
            Scope::Project => true,
            Scope::Session => self.owner.as_ref() == Some(session),
        }
    }

    /// Checks the structural invariants a page must hold before it can be
    /// replayed.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidWorkload(format!("page `{}`: {msg}", self.page_id)));
        let path = self.path();
        if self.variants.len() != path.len()
            || self.variants.iter().zip(path).any(|(v, l)| v.level != *l)
        {
            return bad(format!("variants must cover exactly {path:?} in that order"));
        }
        if self.variants.windows(2).any(|w| w[0].token_cost < w[1].token_cost) {
            return bad("token costs must be non-increasing along the degradation path".into());
        }
        if self.page_type == PageType::Constraint && self.pin != PinClass::Hard {
            return bad("constraint pages must be hard-pinned".into());
        }
        if matches!(self.page_type, PageType::Evidence | PageType::Preference) && self.provenance.is_empty() {
            return bad("provenance is required".into());
        }
        if self.scope == Scope::Session && self.owner.is_none() {
            return bad("session-scoped pages need an owner".into());
        }
        if let Some(level) = self.initial_level {
            if !on_path(self.page_type, level) {
                return bad(format!("initial level {level:?} is off-path"));
            }
        }
        if self.page_type == PageType::Evidence {
            if let Err(e) = self.resolve_pointer() {
                return bad(e.to_string());
            }
        }
        Ok(())
    }

    /// Follows the pointer variant's handle back to the full payload.
    pub fn resolve_pointer(&self) -> Result<&str> {
        let dangling = |reason: &str| Error::DanglingPointer {
            page: self.page_id.clone(),
            reason: reason.to_owned(),
        };
        let ptr = self
            .variants
            .iter()
            .find(|v| v.level == RepLevel::Pointer)
            .ok_or_else(|| dangling("no pointer variant"))?;
        let target = ptr
            .payload_ref
            .strip_prefix(POINTER_PREFIX)
            .ok_or_else(|| dangling("handle is not a pointer"))?;
        let full = self
            .variants
            .iter()
            .find(|v| v.level == RepLevel::Full)
            .ok_or_else(|| dangling("no full variant"))?;
        if full.payload_ref == target {
            Ok(&full.payload_ref)
        } else {
            Err(dangling("handle does not name the full payload"))
        }
    }
}

/// Dense index into a [`Catalog`]. Catalog order is page-id order, so index
/// order doubles as the deterministic tie-break order.
pub type PageIdx = usize;

/// Immutable, page-id-ordered set of page definitions.
#[derive(Debug, Clone)]
pub struct Catalog {
    pages: Vec<Page>,
    index: BTreeMap<PageId, PageIdx>,
    max_recompute: u32,
}

impl Catalog {
    pub fn new(mut pages: Vec<Page>) -> Result<Self> {
        pages.sort_by(|a, b| a.page_id.cmp(&b.page_id));
        let mut index = BTreeMap::new();
        for (i, p) in pages.iter().enumerate() {
            p.validate()?;
            if index.insert(p.page_id.clone(), i).is_some() {
                return Err(Error::InvalidWorkload(format!("duplicate page id `{}`", p.page_id)));
            }
        }
        let max_recompute = pages.iter().map(|p| p.recompute_cost).max().unwrap_or(0);
        Ok(Catalog {
            pages,
            index,
            max_recompute,
        })
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn pages(&self) -> &[Page] {
        &self.pages
    }

    pub fn get(&self, idx: PageIdx) -> &Page {
        &self.pages[idx]
    }

    pub fn idx(&self, id: &PageId) -> Result<PageIdx> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownPage(id.0.clone()))
    }

    pub fn lookup(&self, id: &str) -> Option<PageIdx> {
        self.index.get(&PageId(id.to_owned())).copied()
    }

    pub fn by_id(&self, id: &PageId) -> Result<&Page> {
        self.idx(id).map(|i| &self.pages[i])
    }

    /// Recompute cost scaled into `[0, 1]` by the catalog maximum.
    pub fn normalized_recompute(&self, idx: PageIdx) -> f64 {
        if self.max_recompute == 0 {
            0.0
        } else {
            f64::from(self.pages[idx].recompute_cost) / f64::from(self.max_recompute)
        }
    }
}

#[cfg(test)]
pub(crate) use tests::page as test_page;

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn page(id: &str, page_type: PageType, costs: &[Tokens]) -> Page {
        let path = degradation_path(page_type);
        assert_eq!(path.len(), costs.len());
        let full_ref = format!("{id}#full");
        Page {
            page_id: PageId::new(id),
            page_type,
            scope: Scope::Session,
            owner: Some(SessionId::new("s1")),
            provenance: "tool:test".into(),
            pin: if page_type == PageType::Constraint { PinClass::Hard } else { PinClass::None },
            variants: path
                .iter()
                .zip(costs)
                .map(|(l, c)| RepresentationVariant {
                    level: *l,
                    token_cost: *c,
                    payload_ref: match l {
                        RepLevel::Full => full_ref.clone(),
                        RepLevel::Pointer => format!("{POINTER_PREFIX}{full_ref}"),
                        other => format!("{id}#{other:?}"),
                    },
                })
                .collect(),
            recompute_cost: 1,
            fields: vec![],
            writeback: vec![],
            initial_level: None,
        }
    }

    #[test]
    fn degradation_paths_match_page_classes() {
        use RepLevel::*;
        assert_eq!(degradation_path(PageType::Constraint), &[Full, Structured]);
        assert_eq!(degradation_path(PageType::Bootstrap), &[Full, Structured]);
        assert_eq!(degradation_path(PageType::Plan), &[Full, Structured, Pointer]);
        for t in [PageType::Preference, PageType::Evidence, PageType::Conversation] {
            assert_eq!(degradation_path(t), &[Full, Compressed, Structured, Pointer]);
        }
    }

    #[test]
    fn floors_by_context() {
        use LifecycleContext::*;
        assert_eq!(min_level_for(PageType::Bootstrap, PostCompaction, false), RepLevel::Structured);
        assert_eq!(min_level_for(PageType::Bootstrap, PostReset, false), RepLevel::Structured);
        assert_eq!(min_level_for(PageType::Constraint, Normal, false), RepLevel::Structured);
        assert_eq!(min_level_for(PageType::Evidence, Normal, false), RepLevel::Pointer);
        assert_eq!(min_level_for(PageType::Plan, Normal, true), RepLevel::Structured);
        assert_eq!(min_level_for(PageType::Plan, Normal, false), RepLevel::Pointer);
        assert_eq!(min_level_for(PageType::Preference, Normal, false), RepLevel::Pointer);
    }

    #[test]
    fn satisfies_examples() {
        let c = page("c", PageType::Constraint, &[30, 12]);
        assert!(c.satisfies(Some(RepLevel::Structured), LifecycleContext::Normal, false));
        assert!(!c.satisfies(Some(RepLevel::Pointer), LifecycleContext::Normal, false));
        let e = page("e", PageType::Evidence, &[40, 20, 10, 2]);
        assert!(!e.satisfies(None, LifecycleContext::Normal, false));
    }

    #[test]
    fn satisfies_is_monotone_in_level() {
        for t in PageType::ALL {
            for ctx in [LifecycleContext::Normal, LifecycleContext::PostCompaction, LifecycleContext::PostReset] {
                for active in [false, true] {
                    let floor = min_level_for(t, ctx, active);
                    assert!(on_path(t, floor));
                    for l in RepLevel::ALL {
                        let sat = l >= floor;
                        for higher in RepLevel::ALL.iter().filter(|h| **h > l) {
                            if sat {
                                assert!(*higher >= floor);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn variant_cost_lookup() {
        let e = page("e", PageType::Evidence, &[40, 20, 10, 2]);
        assert_eq!(e.variant_cost(RepLevel::Full).unwrap(), 40);
        assert_eq!(e.variant_cost(RepLevel::Pointer).unwrap(), 2);
        let c = page("c", PageType::Constraint, &[30, 12]);
        assert!(matches!(
            c.variant_cost(RepLevel::Compressed),
            Err(Error::InvalidRepresentation { .. })
        ));
    }

    #[test]
    fn next_level_walks_up_the_path() {
        use RepLevel::*;
        assert_eq!(next_level_up(PageType::Evidence, None), Some(Pointer));
        assert_eq!(next_level_up(PageType::Evidence, Some(Pointer)), Some(Structured));
        assert_eq!(next_level_up(PageType::Evidence, Some(Compressed)), Some(Full));
        assert_eq!(next_level_up(PageType::Evidence, Some(Full)), None);
        assert_eq!(next_level_up(PageType::Bootstrap, None), Some(Structured));
        assert_eq!(next_level_up(PageType::Plan, Some(Structured)), Some(Full));
        assert_eq!(next_level_up(PageType::Constraint, Some(Pointer)), None);
    }

    #[test]
    fn pointer_resolution() {
        let e = page("e", PageType::Evidence, &[40, 20, 10, 2]);
        assert_eq!(e.resolve_pointer().unwrap(), "e#full");
        let mut broken = e.clone();
        broken.variants[3].payload_ref = "ptr:elsewhere".into();
        assert!(matches!(broken.resolve_pointer(), Err(Error::DanglingPointer { .. })));
        assert!(broken.validate().is_err());
    }

    #[test]
    fn validation_rejects_bad_pages() {
        let mut c = page("c", PageType::Constraint, &[30, 12]);
        c.pin = PinClass::Soft;
        assert!(c.validate().is_err());
        let rising = page("e", PageType::Evidence, &[10, 20, 10, 2]);
        assert!(rising.validate().is_err());
        let mut no_prov = page("p", PageType::Preference, &[40, 20, 10, 2]);
        no_prov.provenance.clear();
        assert!(no_prov.validate().is_err());
    }
}
