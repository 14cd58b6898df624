//! The 30-task suite: 9 coding, 8 debugging, 2 writing and 11 ops tasks of
//! 5 to 14 turns each.
//!
//! Tasks compact on a threshold: once the tool output appended since the
//! last compaction reaches 90% of the budget. Outside debugging, tool output
//! stays below 162 tokens, so no budget in the grid compacts. Debugging
//! tasks cross 162 partway through but stay below 270, so budget 180
//! compacts mid-task and budget 300 never does. The last debugging task
//! crosses only on its final turn.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sid, Metadata, PageGen, TurnSpec, WorkloadSpec};
use crate::page::{PageType, Scope, Tokens, Turn};

pub const AUTO_COMPACT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    Coding,
    Debugging,
    Writing,
    Ops,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 4] = [
        TaskCategory::Coding,
        TaskCategory::Debugging,
        TaskCategory::Writing,
        TaskCategory::Ops,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskCategory::Coding => "coding",
            TaskCategory::Debugging => "debugging",
            TaskCategory::Writing => "writing",
            TaskCategory::Ops => "ops",
        }
    }

    pub fn count(self) -> usize {
        match self {
            TaskCategory::Coding => 9,
            TaskCategory::Debugging => 8,
            TaskCategory::Writing => 2,
            TaskCategory::Ops => 11,
        }
    }

    fn tools(self) -> &'static [&'static str] {
        match self {
            TaskCategory::Coding => &["read_file", "edit_file", "run_tests", "grep"],
            TaskCategory::Debugging => &["read_logs", "stack_trace", "run_tests", "grep"],
            TaskCategory::Writing => &["search_docs", "read_file"],
            TaskCategory::Ops => &["kubectl_get", "deploy_status", "query_metrics", "http_get"],
        }
    }
}

/// Largest cumulative tool output a task may reach without compacting at
/// budget 180.
const QUIET_CAP: Tokens = 150;
const CROSS: Tokens = 162;
const HARD_CAP: Tokens = 268;

pub fn build_task_suite(seed: u64) -> Vec<WorkloadSpec> {
    let mut out = Vec::with_capacity(30);
    for cat in TaskCategory::ALL {
        for i in 0..cat.count() {
            let last_debug = cat == TaskCategory::Debugging && i + 1 == cat.count();
            out.push(build_task(cat, i, seed, last_debug));
        }
    }
    out
}

fn build_task(cat: TaskCategory, index: usize, seed: u64, cross_on_last: bool) -> WorkloadSpec {
    let task_seed = seed.wrapping_mul(1_000_003) ^ ((cat as u64) << 16 | index as u64);
    let mut g = PageGen::new(task_seed);
    let s1 = sid("s1");
    let debugging = cat == TaskCategory::Debugging;
    let turns: Turn = if debugging { g.rng.gen_range(6..=14) } else { g.rng.gen_range(5..=14) };
    let cross_at: Option<Turn> = debugging.then(|| if cross_on_last { turns } else { g.rng.gen_range(2..turns) });

    let mut spec = WorkloadSpec {
        name: format!("task-{}-{:02}", cat.name(), index + 1),
        seed: task_seed,
        sessions: vec![s1.clone()],
        pages: vec![],
        turns: vec![],
        project_writers: vec![],
        metadata: Metadata {
            category: Some(cat),
            auto_compact: Some(AUTO_COMPACT),
            ..Metadata::default()
        },
    };
    spec.pages.push(g.resident("boot", PageType::Bootstrap, Scope::Session, Some(&s1)));
    spec.pages.push(g.resident("con", PageType::Constraint, Scope::Session, Some(&s1)));
    spec.pages.push(g.stateful("plan", PageType::Plan, Scope::Session, Some(&s1), "boot"));
    spec.pages.push(g.stateful("pref", PageType::Preference, Scope::Session, Some(&s1), "boot"));

    let tools = cat.tools();
    let mut produced: Vec<(String, String)> = Vec::new();
    let mut total: Tokens = 0;
    let dirty_turn = g.rng.gen_range(1..=turns.min(3));
    for t in 1..=turns {
        let mut ts = TurnSpec::new(t, s1.clone());
        ts.active("plan");
        let cap = match cross_at {
            Some(c) if t < c => QUIET_CAP - 10,
            Some(c) if t == c => Tokens::MAX,
            Some(_) => HARD_CAP,
            None => QUIET_CAP,
        };
        let mut new_call = |ts: &mut TurnSpec, g: &mut PageGen, full: Tokens, total: &mut Tokens| {
            let n = produced.len() + 1;
            let id = format!("ev-{n:02}");
            let sig = format!("{}(arg={n})", tools[n % tools.len()]);
            spec.pages.push(g.page_with_full(&id, PageType::Evidence, Scope::Session, Some(&s1), full));
            ts.tool(sig.clone(), &id);
            produced.push((sig, id));
            *total += full;
        };

        if cross_at == Some(t) {
            while total < CROSS {
                let full = (CROSS - total + g.rng.gen_range(0..=10)).clamp(20, 60);
                new_call(&mut ts, &mut g, full, &mut total);
            }
        } else {
            let full = g.full_cost();
            if total + full <= cap && (t == 1 || g.rng.gen_bool(0.7)) {
                new_call(&mut ts, &mut g, full, &mut total);
            }
        }
        if t > 1 && !produced.is_empty() {
            let k = g.rng.gen_range(0..produced.len());
            let (_, id) = produced[k].clone();
            if !ts.tool_calls.iter().any(|c| c.result.as_str() == id) {
                ts.demand(&id);
            }
        }
        if t == dirty_turn {
            ts.mark_dirty("pref");
        }
        spec.turns.push(ts);
    }
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    fn growth(spec: &WorkloadSpec) -> Vec<Tokens> {
        let mut acc = 0;
        spec.turns
            .iter()
            .map(|t| {
                for c in &t.tool_calls {
                    let p = spec.pages.iter().find(|p| p.page_id == c.result).unwrap();
                    acc += p.variants[0].token_cost;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn suite_shape_and_thresholds() {
        let suite = build_task_suite(0);
        assert_eq!(suite.len(), 30);
        for cat in TaskCategory::ALL {
            let n = suite.iter().filter(|s| s.metadata.category == Some(cat)).count();
            assert_eq!(n, cat.count());
        }
        let mut crosses_on_last = 0;
        for spec in &suite {
            spec.validate().unwrap();
            assert!((5..=14).contains(&spec.turns.len()), "{}", spec.name);
            let g = growth(spec);
            let last = *g.last().unwrap();
            assert!(last < 270, "{} grows to {last}", spec.name);
            if spec.metadata.category == Some(TaskCategory::Debugging) {
                let first = g.iter().position(|x| *x >= 162).expect("debugging tasks cross the threshold");
                if first + 1 == g.len() {
                    crosses_on_last += 1;
                }
            } else {
                assert!(last < 162, "{} grows to {last}", spec.name);
            }
        }
        assert_eq!(crosses_on_last, 1);
    }

    #[test]
    fn suite_is_deterministic() {
        let a: Vec<String> = build_task_suite(4).iter().map(|s| s.to_json()).collect();
        let b: Vec<String> = build_task_suite(4).iter().map(|s| s.to_json()).collect();
        assert_eq!(a, b);
    }
}
