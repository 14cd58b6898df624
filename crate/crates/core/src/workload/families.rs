//! The four synthetic workload families.
//!
//! Shared shape: every session owns one bootstrap page, one constraint and
//! at least one plan, all resident from the start, plus a preference page
//! that carries a scripted writeback. Evidence pages are produced by tool
//! calls. Demands never reach back across a reset, so a policy that keeps
//! its pages resident through compaction sees no refetches.
//!
//! The floor set stays under 120 tokens at every point: at most 45 tokens of
//! structured bootstrap, constraint and active plan, plus two-token pointers
//! for everything else.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sid, PageGen, TurnSpec, WorkloadSpec, Metadata, LifecycleEvent};
use crate::error::{Error, Result};
use crate::page::{PageType, Scope, SessionId, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    EvidenceHeavy,
    InterruptionHeavy,
    LifecycleTorture,
    MultiSession,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::EvidenceHeavy,
        Family::InterruptionHeavy,
        Family::LifecycleTorture,
        Family::MultiSession,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::EvidenceHeavy => "evidence_heavy",
            Family::InterruptionHeavy => "interruption_heavy",
            Family::LifecycleTorture => "lifecycle_torture",
            Family::MultiSession => "multi_session",
        }
    }

    fn salt(self) -> u64 {
        (self as u64 + 1) << 40
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

const TOOLS: [&str; 8] = [
    "grep", "read_file", "search_docs", "run_tests", "list_dir", "git_log", "http_get", "query_db",
];

fn signature(tool: usize, arg: impl std::fmt::Display) -> String {
    format!("{}(q={arg})", TOOLS[tool % TOOLS.len()])
}

pub fn generate_family(family: Family, seed: u64, turns: u32) -> Result<WorkloadSpec> {
    if turns < 10 {
        return Err(Error::InvalidWorkload(format!("{family} needs at least 10 turns, got {turns}")));
    }
    let mut g = PageGen::new(seed ^ family.salt());
    let mut spec = match family {
        Family::EvidenceHeavy => evidence_heavy(&mut g, turns),
        Family::InterruptionHeavy => interruption_heavy(&mut g, turns),
        Family::LifecycleTorture => lifecycle_torture(&mut g, turns),
        Family::MultiSession => multi_session(&mut g, turns),
    };
    spec.name = format!("{family}-s{seed}");
    spec.seed = seed;
    spec.metadata.family = Some(family);
    Ok(spec)
}

fn skeleton(sessions: Vec<SessionId>) -> WorkloadSpec {
    WorkloadSpec {
        name: String::new(),
        seed: 0,
        sessions,
        pages: vec![],
        turns: vec![],
        project_writers: vec![],
        metadata: Metadata::default(),
    }
}

/// Boot, constraint, plan and preference pages for one session.
fn base_pages(g: &mut PageGen, spec: &mut WorkloadSpec, s: &SessionId, suffix: &str, plans: &[&str]) {
    spec.pages.push(g.resident(&format!("boot{suffix}"), PageType::Bootstrap, Scope::Session, Some(s)));
    spec.pages.push(g.resident(&format!("con{suffix}"), PageType::Constraint, Scope::Session, Some(s)));
    for p in plans {
        spec.pages.push(g.stateful(p, PageType::Plan, Scope::Session, Some(s), &format!("boot{suffix}")));
    }
}

/// Rotating tool signatures with periodic compaction. Eight signatures
/// cycle, so from turn nine on every call repeats an earlier one.
fn evidence_heavy(g: &mut PageGen, turns: u32) -> WorkloadSpec {
    const K: u32 = 8;
    let s1 = sid("s1");
    let mut spec = skeleton(vec![s1.clone()]);
    base_pages(g, &mut spec, &s1, "", &["plan"]);
    spec.pages.push(g.stateful("pref", PageType::Preference, Scope::Session, Some(&s1), "boot"));
    for k in 0..K {
        spec.pages.push(g.page(&format!("ev-{k}"), PageType::Evidence, Scope::Session, Some(&s1)));
    }
    for c in 0..turns.div_ceil(3) {
        spec.pages.push(g.page(&format!("conv-{c}"), PageType::Conversation, Scope::Session, Some(&s1)));
    }

    for t in 1..=turns {
        let mut ts = TurnSpec::new(t, s1.clone());
        ts.active("plan");
        let k = (t - 1) % K;
        ts.tool(signature(k as usize, k), &format!("ev-{k}"));
        let mut earlier: Vec<u32> = (0..(t - 1).min(K)).filter(|e| *e != k).collect();
        earlier.shuffle(&mut g.rng);
        let n = g.rng.gen_range(1..=2);
        for e in earlier.iter().take(n) {
            ts.demand(&format!("ev-{e}"));
        }
        if t % 3 == 1 {
            ts.demand(&format!("conv-{}", (t - 1) / 3));
        } else if t > 3 && g.rng.gen_bool(0.3) {
            ts.demand(&format!("conv-{}", g.rng.gen_range(0..(t - 1) / 3)));
        }
        if t % 7 == 6 {
            ts.mark_dirty("pref");
        }
        if t % 7 == 0 {
            ts.post_events.push(LifecycleEvent::compaction());
        }
        spec.turns.push(ts);
    }
    spec
}

/// Two tasks interleaved in three-turn blocks, each with its own plan.
/// Compaction lands mid-epoch and resets start new epochs; both boundaries
/// find dirty state.
fn interruption_heavy(g: &mut PageGen, turns: u32) -> WorkloadSpec {
    let s1 = sid("s1");
    let mut spec = skeleton(vec![s1.clone()]);
    base_pages(g, &mut spec, &s1, "", &["plan-a", "plan-b"]);
    spec.pages.push(g.stateful("pref", PageType::Preference, Scope::Session, Some(&s1), "boot"));
    for t in 1..=turns {
        spec.pages.push(g.page(&format!("ev-{t:02}"), PageType::Evidence, Scope::Session, Some(&s1)));
    }

    let task = |t: Turn| if ((t - 1) / 3).is_multiple_of(2) { "a" } else { "b" };
    let sig = |t: Turn| signature(t as usize, format_args!("{}:{t}", task(t)));
    let mut epoch = 1;
    for t in 1..=turns {
        let mut ts = TurnSpec::new(t, s1.clone());
        let plan = format!("plan-{}", task(t));
        if t > 1 && t % 10 == 1 {
            ts.pre_events.push(LifecycleEvent::reset());
            epoch = t;
            ts.demand("boot").demand(&plan).demand("pref");
        }
        ts.active(&plan);
        ts.tool(sig(t), &format!("ev-{t:02}"));
        if t > epoch {
            if g.rng.gen_bool(0.6) {
                let u = g.rng.gen_range(epoch..t);
                ts.tool(sig(u), &format!("ev-{u:02}"));
            }
            let u = g.rng.gen_range(epoch..t);
            ts.demand(&format!("ev-{u:02}"));
        }
        match t % 10 {
            4 => {
                ts.mark_dirty("pref");
            }
            0 => {
                ts.mark_dirty(&plan);
            }
            5 => ts.post_events.push(LifecycleEvent::compaction()),
            _ => {}
        }
        spec.turns.push(ts);
    }
    spec
}

/// Compaction every third turn with state dirtied on every turn.
fn lifecycle_torture(g: &mut PageGen, turns: u32) -> WorkloadSpec {
    const M: u32 = 20;
    let s1 = sid("s1");
    let mut spec = skeleton(vec![s1.clone()]);
    base_pages(g, &mut spec, &s1, "", &["plan"]);
    spec.pages.push(g.stateful("pref", PageType::Preference, Scope::Session, Some(&s1), "boot"));
    for k in 0..M {
        spec.pages.push(g.page(&format!("ev-{k:02}"), PageType::Evidence, Scope::Session, Some(&s1)));
    }

    let call = |ts: &mut TurnSpec, u: Turn| {
        let k = (u - 1) % M;
        ts.tool(signature(k as usize, format_args!("t{k}")), &format!("ev-{k:02}"));
    };
    for t in 1..=turns {
        let mut ts = TurnSpec::new(t, s1.clone());
        ts.active("plan");
        call(&mut ts, t);
        if t > 1 {
            call(&mut ts, g.rng.gen_range(t.saturating_sub(2).max(1)..t));
            let mut recent: Vec<Turn> = (t.saturating_sub(4).max(1)..t).collect();
            recent.shuffle(&mut g.rng);
            let n = g.rng.gen_range(1..=2);
            for u in recent.iter().take(n) {
                ts.demand(&format!("ev-{:02}", (u - 1) % M));
            }
        }
        ts.mark_dirty("pref");
        if t % 3 == 0 {
            ts.post_events.push(LifecycleEvent::compaction());
        }
        spec.turns.push(ts);
    }
    spec
}

/// Two sessions on alternating turns sharing project-scoped bootstrap and
/// preference pages. Each session compacts on its own schedule.
fn multi_session(g: &mut PageGen, turns: u32) -> WorkloadSpec {
    const K: u32 = 6;
    let sessions = [sid("s1"), sid("s2")];
    let mut spec = skeleton(sessions.to_vec());
    spec.project_writers = sessions.to_vec();
    spec.pages.push(g.resident("boot", PageType::Bootstrap, Scope::Project, None));
    spec.pages.push(g.stateful("pref", PageType::Preference, Scope::Project, None, "boot"));
    for s in &sessions {
        spec.pages.push(g.resident(&format!("con-{s}"), PageType::Constraint, Scope::Session, Some(s)));
        spec.pages.push(g.stateful(&format!("plan-{s}"), PageType::Plan, Scope::Session, Some(s), "boot"));
        for k in 0..K {
            spec.pages.push(g.page(&format!("ev-{s}-{k}"), PageType::Evidence, Scope::Session, Some(s)));
        }
    }

    for t in 1..=turns {
        let (s, n, compact_at, dirty_at) = if t % 2 == 1 {
            (&sessions[0], t.div_ceil(2), 7, 5)
        } else {
            (&sessions[1], t / 2, 0, 10)
        };
        let mut ts = TurnSpec::new(t, s.clone());
        ts.active(&format!("plan-{s}"));
        let k = (n - 1) % K;
        ts.tool(signature(k as usize + 2 * (t % 2) as usize, format_args!("{s}/{k}")), &format!("ev-{s}-{k}"));
        if n > 1 {
            let e = g.rng.gen_range(0..(n - 1).min(K));
            if e != k {
                ts.demand(&format!("ev-{s}-{e}"));
            }
        }
        if g.rng.gen_bool(0.2) {
            ts.demand("pref");
        }
        if t % 12 == dirty_at {
            ts.mark_dirty("pref");
        }
        if t % 12 == compact_at {
            ts.post_events.push(LifecycleEvent::compaction());
        }
        spec.turns.push(ts);
    }
    spec
}
