//! Representation selection: the two-phase prompt assembly.
//!
//! Phase 1 installs every hard-pinned page at its floor and brings every
//! other resident page down to its floor. If the hard-pinned set alone does
//! not fit, the pages that could not be placed are reported as invariant
//! pressure and no upgrades run. Non-pinned pages that do not fit are evicted
//! least-recently-used first.
//!
//! Phase 2 repeatedly takes the best-scoring single-step upgrade that still
//! fits the remaining budget. Only a page's next step up is ever a candidate,
//! so chains are applied in order (pointer, structured, compressed, full).
//! Ties break on `(page_id, to_level)` ascending.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::page::{
    next_level_up, Catalog, LifecycleContext, PageId, PageIdx, PageType, PinClass, RepLevel, Scope, Tokens, Turn,
};
use crate::policy::{PolicyConfig, UpgradeStrategy, UtilityWeights};
use crate::table::SessionState;

/// Fraction of a page's utility realised at each level.
pub fn level_quality(level: Option<RepLevel>) -> f64 {
    match level {
        None => 0.0,
        Some(RepLevel::Pointer) => 0.25,
        Some(RepLevel::Structured) => 0.5,
        Some(RepLevel::Compressed) => 0.75,
        Some(RepLevel::Full) => 1.0,
    }
}

/// Per-page inputs to the scoring functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageSignals {
    pub pin: PinClass,
    pub bootstrap: bool,
    pub plan_active: bool,
    pub project_scope: bool,
    pub last_access_turn: Turn,
    /// Recompute cost normalized to `[0, 1]`.
    pub recompute: f64,
    /// Demands remaining inside the oracle horizon; `None` outside the
    /// oracle strategy.
    pub future_demands: Option<u32>,
}

pub fn recency(turn: Turn, last_access_turn: Turn) -> f64 {
    1.0 / (1.0 + f64::from(turn.saturating_sub(last_access_turn)))
}

/// Level-independent page utility
/// `w_pin·I_pin + w_boot·I_boot + w_plan·I_plan + w_rec·R + w_scope·S + w_rc·C`,
/// plus `oracle_demand_weight · future_demands` when demands are known.
pub fn utility(signals: &PageSignals, turn: Turn, weights: &UtilityWeights) -> f64 {
    let pin = match signals.pin {
        PinClass::Hard => weights.w_pin_hard,
        PinClass::Soft => weights.w_pin_soft,
        PinClass::None => 0.0,
    };
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let mut u = pin
        + weights.w_boot * ind(signals.bootstrap)
        + weights.w_plan * ind(signals.plan_active)
        + weights.w_rec * recency(turn, signals.last_access_turn)
        + weights.w_scope * ind(signals.project_scope)
        + weights.w_rc * signals.recompute;
    if let Some(d) = signals.future_demands {
        u += weights.oracle_demand_weight * f64::from(d);
    }
    u
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpgradeCandidate {
    pub page_id: PageId,
    pub from_level: Option<RepLevel>,
    pub to_level: RepLevel,
    pub delta_tokens: Tokens,
    pub delta_utility: f64,
    pub score: f64,
}

/// Upgrade step keyed by catalog index; the public form carries page ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub idx: PageIdx,
    pub from: Option<RepLevel>,
    pub to: RepLevel,
    pub delta_tokens: Tokens,
    pub delta_utility: f64,
    pub score: f64,
}

impl Step {
    pub fn to_candidate(&self, catalog: &Catalog) -> UpgradeCandidate {
        UpgradeCandidate {
            page_id: catalog.get(self.idx).page_id.clone(),
            from_level: self.from,
            to_level: self.to,
            delta_tokens: self.delta_tokens,
            delta_utility: self.delta_utility,
            score: self.score,
        }
    }
}

/// Descending score, then ascending `(page, level)`.
pub fn rank(a: &Step, b: &Step) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.idx.cmp(&b.idx))
        .then(a.to.cmp(&b.to))
}

/// Inputs shared by every scoring call during one assembly.
pub struct ScoreContext<'a> {
    pub catalog: &'a Catalog,
    pub config: &'a PolicyConfig,
    pub turn: Turn,
    pub plan_active: &'a dyn Fn(PageIdx) -> bool,
    /// Future demand counts by page index for the oracle strategy.
    pub future: Option<&'a [u32]>,
}

impl ScoreContext<'_> {
    pub fn signals(&self, idx: PageIdx, last_access_turn: Turn) -> PageSignals {
        let page = self.catalog.get(idx);
        PageSignals {
            pin: self.config.effective_pin(page),
            bootstrap: page.page_type == PageType::Bootstrap,
            plan_active: page.page_type == PageType::Plan && (self.plan_active)(idx),
            project_scope: page.scope == Scope::Project,
            last_access_turn,
            recompute: self.catalog.normalized_recompute(idx),
            future_demands: match self.config.upgrade_strategy {
                UpgradeStrategy::Oracle => Some(self.future.map_or(0, |f| f[idx])),
                _ => None,
            },
        }
    }

    /// Next single-step upgrade for a page currently at `from`.
    pub fn step(&self, idx: PageIdx, from: Option<RepLevel>, last_access_turn: Turn) -> Option<Step> {
        let page = self.catalog.get(idx);
        let to = next_level_up(page.page_type, from)?;
        let to_cost = page.variant_cost(to).ok()?;
        let from_cost = match from {
            Some(l) => page.variant_cost(l).ok()?,
            None => 0,
        };
        let delta_tokens = to_cost.saturating_sub(from_cost);
        let signals = self.signals(idx, last_access_turn);
        let weights = &self.config.weights;
        let dq = level_quality(Some(to)) - level_quality(from);
        let (delta_utility, score) = match self.config.upgrade_strategy {
            UpgradeStrategy::None => return None,
            UpgradeStrategy::Utility | UpgradeStrategy::Oracle => {
                let du = utility(&signals, self.turn, weights) * dq;
                let score = if delta_tokens == 0 { f64::INFINITY } else { du / f64::from(delta_tokens) };
                (du, score)
            }
            UpgradeStrategy::Recency => {
                let u = weights.recency_rec * recency(self.turn, last_access_turn)
                    + weights.recency_rc * signals.recompute;
                (u * dq, u)
            }
            UpgradeStrategy::Lru => (dq, f64::from(last_access_turn)),
        };
        Some(Step {
            idx,
            from,
            to,
            delta_tokens,
            delta_utility,
            score,
        })
    }
}

/// All next-step candidates for the given pages, ranked.
pub fn enumerate_upgrades(
    ctx: &ScoreContext<'_>,
    current: &[(PageIdx, Option<RepLevel>, Turn)],
) -> Vec<Step> {
    if ctx.config.upgrade_strategy == UpgradeStrategy::None {
        return Vec::new();
    }
    let mut steps: Vec<Step> = current
        .iter()
        .filter_map(|&(idx, level, last)| ctx.step(idx, level, last))
        .collect();
    steps.sort_by(rank);
    steps
}

/// Outcome of one assembly, keyed by catalog index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assembly {
    /// Chosen level per page, in index order.
    pub choices: Vec<(PageIdx, RepLevel)>,
    pub tokens_used: Tokens,
    pub budget: Tokens,
    pub pressure: Vec<PageIdx>,
    pub evicted: Vec<PageIdx>,
    pub upgrades: Vec<Step>,
}

impl Assembly {
    pub fn tokens_remaining(&self) -> Tokens {
        self.budget.saturating_sub(self.tokens_used)
    }

    pub fn level_of(&self, idx: PageIdx) -> Option<RepLevel> {
        self.choices
            .binary_search_by_key(&idx, |(i, _)| *i)
            .ok()
            .map(|p| self.choices[p].1)
    }

    pub fn to_result(&self, catalog: &Catalog) -> AssemblyResult {
        AssemblyResult {
            choices: self
                .choices
                .iter()
                .map(|(i, l)| (catalog.get(*i).page_id.clone(), *l))
                .collect(),
            tokens_used: self.tokens_used,
            tokens_remaining: self.tokens_remaining(),
            invariant_pressure: self.pressure.iter().map(|i| catalog.get(*i).page_id.clone()).collect(),
            evicted: self.evicted.iter().map(|i| catalog.get(*i).page_id.clone()).collect(),
            upgrades_applied: self.upgrades.iter().map(|s| s.to_candidate(catalog)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyResult {
    pub choices: Vec<(PageId, RepLevel)>,
    pub tokens_used: Tokens,
    pub tokens_remaining: Tokens,
    pub invariant_pressure: Vec<PageId>,
    pub evicted: Vec<PageId>,
    pub upgrades_applied: Vec<UpgradeCandidate>,
}

/// Runs both phases for one session. `visible` lists the pages visible to
/// the session in index order.
pub fn assemble(
    ctx: &ScoreContext<'_>,
    session: &SessionState,
    visible: &[PageIdx],
    lifecycle: LifecycleContext,
) -> Assembly {
    let catalog = ctx.catalog;
    let config = ctx.config;
    let budget = config.budget;
    let floor_of = |idx: PageIdx| {
        let page = catalog.get(idx);
        let active = page.page_type == PageType::Plan && (ctx.plan_active)(idx);
        page.min_level_for(lifecycle, active)
    };
    let cost_of = |idx: PageIdx, level: RepLevel| catalog.get(idx).variant_cost(level).unwrap_or(0);

    let mut out = Assembly {
        budget,
        ..Assembly::default()
    };
    // (idx, level, last access)
    let mut chosen: Vec<(PageIdx, RepLevel, Turn)> = Vec::with_capacity(visible.len());

    // Phase 1a: hard-pinned pages, forced resident at their floor.
    let mut soft: Vec<(PageIdx, RepLevel, Tokens, Turn)> = Vec::new();
    for &idx in visible {
        let page = catalog.get(idx);
        let entry = session.entry(idx);
        if config.is_hard_pinned(page) {
            let floor = floor_of(idx);
            let cost = cost_of(idx, floor);
            if out.tokens_used + cost <= budget {
                out.tokens_used += cost;
                chosen.push((idx, floor, entry.map_or(ctx.turn, |e| e.last_access_turn)));
            } else {
                out.pressure.push(idx);
            }
        } else if let Some(e) = entry {
            let floor = floor_of(idx);
            soft.push((idx, floor, cost_of(idx, floor), e.last_access_turn));
        }
    }

    // Phase 1b: everything else resident drops to its floor; evict LRU on overflow.
    let soft_total: Tokens = soft.iter().map(|s| s.2).sum();
    if out.tokens_used + soft_total <= budget {
        out.tokens_used += soft_total;
        chosen.extend(soft.iter().map(|&(i, l, _, t)| (i, l, t)));
    } else {
        soft.sort_by(|a, b| b.3.cmp(&a.3).then(a.0.cmp(&b.0)));
        for (idx, level, cost, last) in soft {
            if out.tokens_used + cost <= budget {
                out.tokens_used += cost;
                chosen.push((idx, level, last));
            } else {
                out.evicted.push(idx);
            }
        }
        out.evicted.sort_unstable();
    }
    chosen.sort_unstable_by_key(|c| c.0);

    // Phase 2: greedy single-step upgrades.
    if out.pressure.is_empty() && config.upgrade_strategy != UpgradeStrategy::None {
        let mut frontier: Vec<Option<Step>> = chosen
            .iter()
            .map(|&(idx, level, last)| ctx.step(idx, Some(level), last))
            .collect();
        loop {
            let remaining = budget - out.tokens_used;
            let mut best: Option<(usize, Step)> = None;
            for (pos, slot) in frontier.iter_mut().enumerate() {
                let Some(step) = slot else { continue };
                if step.delta_tokens > remaining {
                    // remaining never grows, so this chain is finished
                    *slot = None;
                    continue;
                }
                if best.as_ref().is_none_or(|(_, b)| rank(step, b) == Ordering::Less) {
                    best = Some((pos, *step));
                }
            }
            let Some((pos, step)) = best else { break };
            out.tokens_used += step.delta_tokens;
            chosen[pos].1 = step.to;
            frontier[pos] = ctx.step(step.idx, Some(step.to), chosen[pos].2);
            out.upgrades.push(step);
        }
    }

    out.choices = chosen.into_iter().map(|(i, l, _)| (i, l)).collect();
    out
}

/// Lowest level at which a page can serve a demand: its floor, lifted above
/// pointer when pointers cannot be resolved.
pub fn serving_level(floor: RepLevel, config: &PolicyConfig) -> RepLevel {
    if floor == RepLevel::Pointer && !config.resolve_pointers {
        RepLevel::Structured
    } else {
        floor
    }
}

/// Whether a resident page can serve a demand without another fetch.
pub fn serves(catalog: &Catalog, idx: PageIdx, level: Option<RepLevel>, config: &PolicyConfig) -> bool {
    match level {
        None => false,
        Some(RepLevel::Pointer) => config.resolve_pointers && catalog.get(idx).resolve_pointer().is_ok(),
        Some(_) => true,
    }
}

/// Pages to install before demand processing: every page demanded this turn
/// that cannot currently serve the demand, at its serving level.
pub fn prefetch_plan(
    catalog: &Catalog,
    session: &SessionState,
    demanded: impl IntoIterator<Item = PageIdx>,
    config: &PolicyConfig,
    lifecycle: LifecycleContext,
    plan_active: &dyn Fn(PageIdx) -> bool,
) -> Vec<(PageIdx, RepLevel)> {
    if !config.prefetch {
        return Vec::new();
    }
    demanded
        .into_iter()
        .filter(|&idx| !serves(catalog, idx, session.level(idx), config))
        .map(|idx| {
            let page = catalog.get(idx);
            let floor = page.min_level_for(lifecycle, page.page_type == PageType::Plan && plan_active(idx));
            let target = serving_level(floor, config);
            (idx, session.level(idx).map_or(target, |l| l.max(target)))
        })
        .collect()
}

/// Resolves a resident pointer back to the full payload handle.
pub fn resolve_pointer<'c>(
    catalog: &'c Catalog,
    session: &SessionState,
    idx: PageIdx,
    config: &PolicyConfig,
) -> Result<&'c str> {
    let page = catalog.get(idx);
    if session.level(idx) != Some(RepLevel::Pointer) {
        return Err(Error::NotResident(page.page_id.clone()));
    }
    if !config.resolve_pointers {
        return Err(Error::InvalidConfig("pointer resolution is disabled".into()));
    }
    page.resolve_pointer()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::page::{test_page, Page, SessionId};
    use crate::policy::Preset;

    fn no_plans(_: PageIdx) -> bool {
        false
    }

    fn ctx<'a>(catalog: &'a Catalog, config: &'a PolicyConfig, turn: Turn) -> ScoreContext<'a> {
        ScoreContext {
            catalog,
            config,
            turn,
            plan_active: &no_plans,
            future: None,
        }
    }

    #[test]
    fn utility_matches_hand_evaluation() {
        let w = UtilityWeights {
            w_boot: 0.0,
            w_plan: 0.0,
            w_scope: 0.0,
            ..UtilityWeights::default()
        };
        let s = PageSignals {
            pin: PinClass::Hard,
            bootstrap: true,
            plan_active: false,
            project_scope: true,
            last_access_turn: 5,
            recompute: 0.5,
            future_demands: None,
        };
        // 2.0 + 0.6 * 1.0 + 0.4 * 0.5
        assert!((utility(&s, 5, &w) - 2.8).abs() < 1e-12);

        let zero = PageSignals {
            pin: PinClass::None,
            bootstrap: false,
            plan_active: false,
            project_scope: false,
            last_access_turn: 0,
            recompute: 0.0,
            future_demands: None,
        };
        // R_t = 1/(1+1e9) is effectively zero
        assert!(utility(&zero, 1_000_000_000, &UtilityWeights::default()).abs() < 1e-9);

        let oracle = PageSignals {
            future_demands: Some(2),
            ..s
        };
        assert!((utility(&oracle, 5, &w) - utility(&s, 5, &w) - 4.4).abs() < 1e-12);
    }

    fn three_pages() -> Catalog {
        Catalog::new(vec![
            test_page("a", PageType::Evidence, &[40, 20, 10, 2]),
            test_page("b", PageType::Evidence, &[40, 20, 10, 2]),
            test_page("c", PageType::Conversation, &[30, 15, 9, 2]),
        ])
        .unwrap()
    }

    fn session_with(catalog: &Catalog, installs: &[(&str, RepLevel, Turn)]) -> SessionState {
        let mut s = SessionState::new(SessionId::new("s1"), catalog.len());
        for (id, l, t) in installs {
            s.set(catalog.lookup(id).unwrap(), *l, *t);
        }
        s
    }

    #[test]
    fn none_strategy_yields_no_upgrades() {
        let catalog = three_pages();
        let cfg = Preset::Retrieval.config(300);
        let c = ctx(&catalog, &cfg, 1);
        assert!(enumerate_upgrades(&c, &[(0, Some(RepLevel::Pointer), 1)]).is_empty());
    }

    #[test]
    fn equal_scores_tie_break_on_page_id() {
        let catalog = three_pages();
        let cfg = Preset::Full.config(300);
        let c = ctx(&catalog, &cfg, 3);
        let steps = enumerate_upgrades(&c, &[(1, Some(RepLevel::Pointer), 3), (0, Some(RepLevel::Pointer), 3)]);
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].score, steps[1].score);
        assert_eq!(catalog.get(steps[0].idx).page_id.as_str(), "a");
    }

    #[test]
    fn full_level_has_no_upgrade() {
        let catalog = three_pages();
        let cfg = Preset::Full.config(300);
        let c = ctx(&catalog, &cfg, 3);
        assert!(enumerate_upgrades(&c, &[(0, Some(RepLevel::Full), 3)]).is_empty());
        let from_absent = c.step(0, None, 3).unwrap();
        assert_eq!(from_absent.to, RepLevel::Pointer);
        assert_eq!(from_absent.delta_tokens, 2);
    }

    #[test]
    fn empty_assembly() {
        let catalog = three_pages();
        let cfg = Preset::Full.config(300);
        let s = session_with(&catalog, &[]);
        let a = assemble(&ctx(&catalog, &cfg, 1), &s, &[0, 1, 2], LifecycleContext::Normal);
        assert_eq!(a.tokens_used, 0);
        assert_eq!(a.tokens_remaining(), 300);
    }

    fn pinned(id: &str, structured: Tokens) -> Page {
        test_page(id, PageType::Constraint, &[structured + 10, structured])
    }

    #[test]
    fn starvation_surfaces_pressure_without_upgrades() {
        let catalog = Catalog::new(vec![pinned("p1", 20), pinned("p2", 20), pinned("p3", 20)]).unwrap();
        let cfg = Preset::Full.config(40);
        let s = session_with(&catalog, &[]);
        let a = assemble(&ctx(&catalog, &cfg, 1), &s, &[0, 1, 2], LifecycleContext::Normal);
        assert_eq!(a.pressure, vec![2]);
        assert!(a.upgrades.is_empty());
        assert_eq!(a.tokens_used, 40);
    }

    #[test]
    fn overflow_evicts_least_recent_unpinned() {
        let catalog = three_pages();
        let mut cfg = Preset::Full.config(4);
        cfg.upgrade_strategy = UpgradeStrategy::None;
        let s = session_with(
            &catalog,
            &[("a", RepLevel::Full, 1), ("b", RepLevel::Full, 5), ("c", RepLevel::Full, 3)],
        );
        let a = assemble(&ctx(&catalog, &cfg, 6), &s, &[0, 1, 2], LifecycleContext::Normal);
        assert_eq!(a.evicted, vec![0]);
        assert_eq!(a.choices, vec![(1, RepLevel::Pointer), (2, RepLevel::Pointer)]);
    }

    #[test]
    fn chains_apply_in_order_and_respect_budget() {
        let catalog = three_pages();
        let cfg = Preset::Full.config(60);
        let s = session_with(
            &catalog,
            &[("a", RepLevel::Full, 5), ("b", RepLevel::Full, 2), ("c", RepLevel::Full, 5)],
        );
        let a = assemble(&ctx(&catalog, &cfg, 5), &s, &[0, 1, 2], LifecycleContext::Normal);
        assert!(a.tokens_used <= 60);
        let mut level: Vec<Option<RepLevel>> = vec![Some(RepLevel::Pointer); 3];
        for u in &a.upgrades {
            assert_eq!(level[u.idx], u.from);
            level[u.idx] = Some(u.to);
        }
        for (i, l) in &a.choices {
            assert_eq!(level[*i], Some(*l));
        }
    }

    #[test]
    fn serving_and_prefetch() {
        let catalog = three_pages();
        let full = Preset::Full.config(180);
        let retrieval = Preset::Retrieval.config(180);
        let s = session_with(&catalog, &[("a", RepLevel::Pointer, 1)]);
        assert!(serves(&catalog, 0, s.level(0), &full));
        assert!(!serves(&catalog, 0, s.level(0), &retrieval));
        assert!(!serves(&catalog, 1, s.level(1), &full));

        let plan = prefetch_plan(&catalog, &s, [0, 1], &full, LifecycleContext::Normal, &no_plans);
        assert_eq!(plan, vec![(1, RepLevel::Pointer)]);
        let mut no_resolve = full.clone();
        no_resolve.resolve_pointers = false;
        let plan = prefetch_plan(&catalog, &s, [0, 1], &no_resolve, LifecycleContext::Normal, &no_plans);
        assert_eq!(plan, vec![(0, RepLevel::Structured), (1, RepLevel::Structured)]);
        let mut off = full.clone();
        off.prefetch = false;
        assert!(prefetch_plan(&catalog, &s, [1], &off, LifecycleContext::Normal, &no_plans).is_empty());
    }

    #[test]
    fn pointer_resolution_errors_are_distinct() {
        let mut pages = vec![test_page("a", PageType::Evidence, &[40, 20, 10, 2])];
        let mut bad = test_page("b", PageType::Conversation, &[40, 20, 10, 2]);
        bad.variants[3].payload_ref = "ptr:gone".into();
        pages.push(bad);
        let catalog = Catalog::new(pages).unwrap();
        let cfg = Preset::Full.config(180);
        let s = session_with(&catalog, &[("a", RepLevel::Pointer, 1), ("b", RepLevel::Pointer, 1)]);
        assert_eq!(resolve_pointer(&catalog, &s, 0, &cfg).unwrap(), "a#full");
        assert!(matches!(resolve_pointer(&catalog, &s, 1, &cfg), Err(Error::DanglingPointer { .. })));
        let empty = session_with(&catalog, &[]);
        assert!(matches!(resolve_pointer(&catalog, &empty, 0, &cfg), Err(Error::NotResident(_))));
    }
}
