//! Replay engine: drives a workload turn by turn through the page table,
//! selector, fault observer and writeback journal.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fault::{explicit_fault_total, thrash_index, BackendOutcome, Counters, FaultEvent, FaultObserver, LookupOutcome};
use crate::page::{Catalog, LifecycleContext, PageIdx, PageType, RepLevel, SessionId, Tokens, Turn};
use crate::policy::{PolicyConfig, UpgradeStrategy};
use crate::report::{latency_summary, ReplayReport};
use crate::selector::{assemble, prefetch_plan, serving_level, Assembly, ScoreContext};
use crate::table::{Boundary, PageTable};
use crate::trace::{DecisionTraceRecord, ResidentPage, TraceWriter, WritebackResult};
use crate::workload::{LifecycleEvent, TaskCategory, TurnSpec, WorkloadSpec};
use crate::writeback::{flush_dirty, DurableStore, EntryStatus, Journal, WriteContext};

/// A turn with every page reference resolved to a catalog index.
#[derive(Debug, Clone)]
struct CompiledTurn {
    turn: Turn,
    session: SessionId,
    pre: Vec<LifecycleEvent>,
    tools: Vec<(String, PageIdx, bool)>,
    dirty: Vec<PageIdx>,
    demands: Vec<(PageIdx, BackendOutcome)>,
    /// Sorted.
    plans: Vec<PageIdx>,
    post: Vec<LifecycleEvent>,
}

fn compile_turn(catalog: &Catalog, t: &TurnSpec) -> Result<CompiledTurn> {
    let mut plans = t
        .plan_active
        .iter()
        .map(|p| catalog.idx(p))
        .collect::<Result<Vec<_>>>()?;
    plans.sort_unstable();
    Ok(CompiledTurn {
        turn: t.turn,
        session: t.session.clone(),
        pre: t.pre_events.clone(),
        tools: t
            .tool_calls
            .iter()
            .map(|c| Ok((c.signature.clone(), catalog.idx(&c.result)?, c.marks_dirty)))
            .collect::<Result<_>>()?,
        dirty: t.dirty.iter().map(|p| catalog.idx(p)).collect::<Result<_>>()?,
        demands: t
            .demands
            .iter()
            .map(|d| Ok((catalog.idx(&d.page)?, d.outcome)))
            .collect::<Result<_>>()?,
        plans,
        post: t.post_events.clone(),
    })
}

/// One executed turn: its trace record and the time spent deciding.
#[derive(Debug, Clone)]
pub struct TurnOutcome {
    pub record: DecisionTraceRecord,
    pub decision_ns: u64,
}

pub struct Engine {
    name: String,
    category: Option<TaskCategory>,
    catalog: Arc<Catalog>,
    config: PolicyConfig,
    table: PageTable,
    /// Visible pages per session, index order.
    visible: BTreeMap<SessionId, Vec<PageIdx>>,
    project_writers: BTreeSet<SessionId>,
    auto_compact: Option<f64>,
    turns: Vec<CompiledTurn>,
    cursor: usize,
    observer: FaultObserver,
    journal: Journal,
    store: DurableStore,
    /// Scratch buffer for oracle demand counts.
    future: Vec<u32>,
    events: Vec<FaultEvent>,
    tokens_per_turn: Vec<Tokens>,
    latencies_ns: Vec<u64>,
}

impl Engine {
    pub fn new(spec: &WorkloadSpec, config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let catalog = Arc::new(spec.validate()?);
        let turns = spec
            .turns
            .iter()
            .map(|t| compile_turn(&catalog, t))
            .collect::<Result<Vec<_>>>()?;
        let mut table = PageTable::new(catalog.clone(), spec.sessions.iter().cloned());
        let mut visible = BTreeMap::new();
        for s in &spec.sessions {
            let vis: Vec<PageIdx> = (0..catalog.len()).filter(|&i| catalog.get(i).visible_to(s)).collect();
            let state = table.session_mut(s)?;
            for &i in &vis {
                if let Some(level) = catalog.get(i).initial_level {
                    state.set(i, level, 0);
                }
            }
            visible.insert(s.clone(), vis);
        }
        Ok(Engine {
            name: spec.name.clone(),
            category: spec.metadata.category,
            future: vec![0; catalog.len()],
            catalog,
            config,
            table,
            visible,
            project_writers: spec.project_writers.iter().cloned().collect(),
            auto_compact: spec.metadata.auto_compact,
            turns,
            cursor: 0,
            observer: FaultObserver::new(),
            journal: Journal::new(),
            store: DurableStore::new(),
            events: Vec::new(),
            tokens_per_turn: Vec::new(),
            latencies_ns: Vec::new(),
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn table(&self) -> &PageTable {
        &self.table
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    pub fn store(&self) -> &DurableStore {
        &self.store
    }

    pub fn counters(&self) -> &Counters {
        &self.observer.counters
    }

    /// Every fault raised so far, in order.
    pub fn events(&self) -> &[FaultEvent] {
        &self.events
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.turns.len()
    }

    /// Runs the next scripted turn, or `None` once the workload is exhausted.
    pub fn step(&mut self) -> Option<TurnOutcome> {
        let t = self.turns.get(self.cursor)?.clone();
        let out = self.execute(&t, self.cursor);
        self.cursor += 1;
        Some(out)
    }

    /// Runs an ad-hoc turn outside the script.
    pub fn run_turn(&mut self, turn: &TurnSpec) -> Result<TurnOutcome> {
        if !self.visible.contains_key(&turn.session) {
            return Err(Error::UnknownSession(turn.session.as_str().to_owned()));
        }
        let t = compile_turn(&self.catalog, turn)?;
        Ok(self.execute(&t, self.turns.len()))
    }

    /// Replays the rest of the script, writing one trace line per turn when a
    /// sink is given.
    pub fn replay<W: Write>(mut self, mut trace: Option<&mut TraceWriter<W>>) -> Result<ReplayReport> {
        while let Some(out) = self.step() {
            if let Some(w) = trace.as_deref_mut() {
                w.write(&out.record).map_err(|e| Error::io("trace", e))?;
            }
        }
        Ok(self.report())
    }

    pub fn report(&self) -> ReplayReport {
        let c = self.observer.counters;
        let explicit = explicit_fault_total(&c);
        let mut rejections = BTreeMap::new();
        for e in self.journal.entries() {
            if let EntryStatus::Rejected(r) = e.status {
                *rejections.entry(r).or_insert(0) += 1;
            }
        }
        ReplayReport {
            workload: self.name.clone(),
            policy: self.config.name.clone(),
            budget: self.config.budget,
            category: self.category,
            turns: self.tokens_per_turn.len(),
            counters: c,
            explicit_faults: explicit,
            pinned_invariant_miss: c.pinned_invariant_miss,
            thrash: thrash_index(&c),
            tokens_per_turn: self.tokens_per_turn.clone(),
            latency: latency_summary(&self.latencies_ns),
            rejections,
            success: explicit == 0,
        }
    }

    /// Demand counts for `session` over the turns after `pos` within the
    /// oracle horizon.
    fn fill_future(&mut self, pos: usize, session: &SessionId, turn: Turn) {
        self.future.iter_mut().for_each(|f| *f = 0);
        let limit = self.config.oracle_horizon.map(|h| turn.saturating_add(h));
        for t in self.turns.iter().skip(pos + 1) {
            if limit.is_some_and(|l| t.turn > l) {
                break;
            }
            if t.session == *session {
                for (idx, _) in &t.demands {
                    self.future[*idx] += 1;
                }
            }
        }
    }

    fn boundary(
        &mut self,
        session: &SessionId,
        event: LifecycleEvent,
        turn: Turn,
        plans: &[PageIdx],
        faults: &mut Vec<FaultEvent>,
        wb: &mut Vec<WritebackResult>,
    ) {
        let state = self.table.session(session).expect("known session");
        let dirty_before = state.dirty().clone();
        let hook = match event.kind {
            Boundary::Compaction => self.config.wb_compaction && !event.hook_bypassed,
            Boundary::Reset => self.config.wb_reset && !event.hook_bypassed,
            Boundary::Flush => true,
        };
        let committed = if hook && !dirty_before.is_empty() {
            let ctx = WriteContext {
                catalog: &self.catalog,
                seen_signatures: state.seen_signatures(),
                project_writers: &self.project_writers,
            };
            let first = self.journal.entries().len();
            let out = flush_dirty(&dirty_before, session, turn, &ctx, &mut self.journal, &mut self.store);
            for e in &self.journal.entries()[first..] {
                let reason = match e.status {
                    EntryStatus::Rejected(r) => Some(r),
                    _ => None,
                };
                wb.push(WritebackResult {
                    seq: e.seq,
                    page_id: e.update.page_id.clone(),
                    field: e.update.field.clone(),
                    op: e.update.op,
                    committed: e.status == EntryStatus::Committed,
                    reason,
                });
            }
            out.committed_pages
        } else {
            BTreeSet::new()
        };

        let state = self.table.session_mut(session).expect("known session");
        match event.kind {
            Boundary::Flush => {
                for idx in &committed {
                    state.clean(*idx);
                }
            }
            Boundary::Compaction | Boundary::Reset => {
                self.observer
                    .observe_boundary(&self.catalog, session, event.kind, &dirty_before, &committed, turn, faults);
                state.clear_dirty();
                if event.kind == Boundary::Compaction {
                    state.compact(&self.catalog, &self.config, plans);
                } else {
                    state.reset();
                }
            }
        }
    }

    fn execute(&mut self, t: &CompiledTurn, pos: usize) -> TurnOutcome {
        let sid = t.session.clone();
        let turn = t.turn;
        let mut faults = Vec::new();
        let mut wb = Vec::new();

        for ev in &t.pre {
            self.boundary(&sid, *ev, turn, &t.plans, &mut faults, &mut wb);
        }

        let catalog = self.catalog.clone();
        let config = &self.config;
        for (sig, idx, dirty) in &t.tools {
            let state = self.table.session_mut(&sid).expect("known session");
            let seen = state.record_signature(sig);
            self.observer
                .observe_tool_call(&catalog, state, config, sig, seen, *idx, turn, &mut faults);
            let state = self.table.session_mut(&sid).expect("known session");
            state.set(*idx, RepLevel::Full, turn);
            state.growth += catalog.get(*idx).variant_cost(RepLevel::Full).unwrap_or(0);
            if *dirty {
                state.mark_dirty_idx(*idx);
            }
        }
        {
            let state = self.table.session_mut(&sid).expect("known session");
            for idx in &t.dirty {
                state.mark_dirty_idx(*idx);
            }
        }

        let started = Instant::now();
        let plan_active = |i: PageIdx| t.plans.binary_search(&i).is_ok();
        let lifecycle = self
            .table
            .session(&sid)
            .expect("known session")
            .pending_check
            .map_or(LifecycleContext::Normal, Boundary::context);

        let prefetch = prefetch_plan(
            &catalog,
            self.table.session(&sid).expect("known session"),
            t.demands.iter().filter(|d| d.1 == BackendOutcome::Ok).map(|d| d.0),
            config,
            lifecycle,
            &plan_active,
        );
        {
            let state = self.table.session_mut(&sid).expect("known session");
            for (idx, level) in &prefetch {
                state.set(*idx, *level, turn);
            }
            self.observer.counters.prefetches += prefetch.len() as u64;
        }

        let mut hits = Vec::new();
        for (idx, outcome) in &t.demands {
            let state = self.table.session(&sid).expect("known session");
            match self
                .observer
                .observe_lookup(&catalog, state, config, *idx, *outcome, turn, &mut faults)
            {
                LookupOutcome::Hit { .. } => hits.push(*idx),
                LookupOutcome::Refetch | LookupOutcome::Retrieved => {
                    let page = catalog.get(*idx);
                    let active = page.page_type == PageType::Plan && plan_active(*idx);
                    let level = serving_level(page.min_level_for(lifecycle, active), config);
                    self.table.session_mut(&sid).expect("known session").set(*idx, level, turn);
                }
                LookupOutcome::Empty | LookupOutcome::Silent(_) => {}
            }
        }

        let oracle = config.upgrade_strategy == UpgradeStrategy::Oracle;
        if oracle {
            self.fill_future(pos, &sid, turn);
        }
        let config = &self.config;
        let visible = &self.visible[&sid];
        let state = self.table.session(&sid).expect("known session");
        let ctx = ScoreContext {
            catalog: &catalog,
            config,
            turn,
            plan_active: &plan_active,
            future: oracle.then_some(self.future.as_slice()),
        };
        let assembly: Assembly = assemble(&ctx, state, visible, lifecycle);

        let state = self.table.session_mut(&sid).expect("known session");
        for idx in &assembly.evicted {
            state.evict(*idx);
        }
        for &(idx, level) in &assembly.choices {
            if state.is_resident(idx) {
                state.relevel(idx, level);
            } else {
                state.set(idx, level, turn);
            }
        }
        let state = self.table.session(&sid).expect("known session");
        self.observer
            .observe_assembly(&catalog, state, config, &assembly, visible, turn, &mut faults);
        self.table.session_mut(&sid).expect("known session").pending_check = None;
        let decision_ns = started.elapsed().as_nanos() as u64;

        for ev in &t.post {
            self.boundary(&sid, *ev, turn, &t.plans, &mut faults, &mut wb);
        }
        if let Some(ratio) = self.auto_compact {
            let growth = self.table.session(&sid).expect("known session").growth;
            if f64::from(growth) >= ratio * f64::from(self.config.budget) {
                self.boundary(&sid, LifecycleEvent::compaction(), turn, &t.plans, &mut faults, &mut wb);
            }
        }
        let state = self.table.session_mut(&sid).expect("known session");
        for idx in hits {
            state.touch_idx(idx, turn);
        }

        self.tokens_per_turn.push(assembly.tokens_used);
        self.latencies_ns.push(decision_ns);
        self.events.extend(faults.iter().cloned());
        let ids = |v: &[PageIdx]| v.iter().map(|i| catalog.get(*i).page_id.clone()).collect();
        let record = DecisionTraceRecord {
            session: sid,
            turn,
            budget: self.config.budget,
            policy: self.config.name.clone(),
            resident: assembly
                .choices
                .iter()
                .map(|&(i, level)| ResidentPage {
                    page_id: catalog.get(i).page_id.clone(),
                    level,
                })
                .collect(),
            tokens_used: assembly.tokens_used,
            pressure: ids(&assembly.pressure),
            evicted: ids(&assembly.evicted),
            upgrades: assembly.upgrades.iter().map(|s| s.to_candidate(&catalog)).collect(),
            faults,
            writeback: wb,
            counters: self.observer.counters,
            decision_us: decision_ns as f64 / 1000.0,
        };
        TurnOutcome { record, decision_ns }
    }
}

/// Replays a workload under a policy without writing a trace.
pub fn replay(spec: &WorkloadSpec, config: PolicyConfig) -> Result<ReplayReport> {
    Engine::new(spec, config)?.replay::<std::io::Sink>(None)
}
