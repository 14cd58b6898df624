//! Adversarial scenarios: pinned-set starvation, evidence churn and reset
//! cascades.

use serde::{Deserialize, Serialize};

use super::{parse_named, sid, LifecycleEvent, Metadata, PageGen, TurnSpec, WorkloadSpec};
use crate::error::{Error, Result};
use crate::page::{Page, PageType, Scope, Tokens, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversarial {
    Starvation,
    Churn,
    Cascade,
}

impl Adversarial {
    pub const ALL: [Adversarial; 3] = [Adversarial::Starvation, Adversarial::Churn, Adversarial::Cascade];

    pub fn name(self) -> &'static str {
        match self {
            Adversarial::Starvation => "starvation",
            Adversarial::Churn => "churn",
            Adversarial::Cascade => "cascade",
        }
    }

    /// Budget each scenario is defined at.
    pub fn budget(self) -> Tokens {
        match self {
            Adversarial::Starvation => 40,
            Adversarial::Churn | Adversarial::Cascade => 180,
        }
    }
}

impl std::str::FromStr for Adversarial {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_named(&Adversarial::ALL, Adversarial::name, s).ok_or_else(|| Error::UnknownScenario(s.to_owned()))
    }
}

pub fn build_adversarial(scenario: Adversarial) -> WorkloadSpec {
    let mut g = PageGen::new(0xAD0 + scenario as u64);
    let mut spec = WorkloadSpec {
        name: scenario.name().to_owned(),
        seed: 0,
        sessions: vec![sid("s1")],
        pages: vec![],
        turns: vec![],
        project_writers: vec![],
        metadata: Metadata {
            scenario: Some(scenario.name().to_owned()),
            budget: Some(scenario.budget()),
            ..Metadata::default()
        },
    };
    match scenario {
        Adversarial::Starvation => starvation(&mut g, &mut spec),
        Adversarial::Churn => churn(&mut g, &mut spec),
        Adversarial::Cascade => cascade(&mut g, &mut spec),
    }
    spec
}

fn set_costs(page: &mut Page, costs: &[Tokens]) {
    for (v, c) in page.variants.iter_mut().zip(costs) {
        v.token_cost = *c;
    }
}

/// Three hard-pinned constraints need 60 tokens at their floor against a
/// budget of 40. Every assembly places two and misses one.
fn starvation(g: &mut PageGen, spec: &mut WorkloadSpec) {
    let s1 = sid("s1");
    for i in 1..=3 {
        let mut p = g.resident(&format!("con-{i}"), PageType::Constraint, Scope::Session, Some(&s1));
        set_costs(&mut p, &[30, 20]);
        spec.pages.push(p);
    }
    spec.turns = (1..=10).map(|t| TurnSpec::new(t, s1.clone())).collect();
}

/// Fifty evidence pages in fifty turns. Compaction every fifth turn, resets
/// at 16 and 36. Each turn repeats the calls from two and four turns back and
/// asks for the pages from one, three and five turns back, never across a
/// reset.
fn churn(g: &mut PageGen, spec: &mut WorkloadSpec) {
    let s1 = sid("s1");
    spec.pages.push(g.resident("boot", PageType::Bootstrap, Scope::Session, Some(&s1)));
    spec.pages.push(g.resident("con", PageType::Constraint, Scope::Session, Some(&s1)));
    spec.pages.push(g.stateful("pref", PageType::Preference, Scope::Session, Some(&s1), "boot"));
    for t in 1..=50 {
        spec.pages.push(g.page(&format!("ev-{t:02}"), PageType::Evidence, Scope::Session, Some(&s1)));
    }
    let sig = |u: Turn| format!("fetch(doc={u})");
    let mut epoch = 1;
    for t in 1..=50 {
        let mut ts = TurnSpec::new(t, s1.clone());
        if t == 16 || t == 36 {
            ts.pre_events.push(LifecycleEvent::reset());
            epoch = t;
        }
        ts.tool(sig(t), &format!("ev-{t:02}"));
        for back in [2, 4] {
            if t >= epoch + back {
                ts.tool(sig(t - back), &format!("ev-{:02}", t - back));
            }
        }
        for back in [1, 3, 5] {
            if t >= epoch + back {
                ts.demand(&format!("ev-{:02}", t - back));
            }
        }
        if t % 5 == 2 {
            ts.mark_dirty("pref");
        }
        if t % 5 == 0 && t < 50 {
            ts.post_events.push(LifecycleEvent::compaction());
        }
        spec.turns.push(ts);
    }
}

/// Nine resets in thirty turns. Each epoch produces two evidence pages and
/// alternates repeating one call with asking for the other page. Seven
/// epochs leave one dirty page at their reset; two compact first with two
/// dirty pages. Bootstrap is asked for on every reset turn.
fn cascade(g: &mut PageGen, spec: &mut WorkloadSpec) {
    const COMPACTING: [Turn; 2] = [9, 18];
    let s1 = sid("s1");
    spec.pages.push(g.resident("boot", PageType::Bootstrap, Scope::Session, Some(&s1)));
    spec.pages.push(g.resident("con", PageType::Constraint, Scope::Session, Some(&s1)));
    spec.pages.push(g.stateful("plan", PageType::Plan, Scope::Session, Some(&s1), "boot"));
    spec.pages.push(g.stateful("pref", PageType::Preference, Scope::Session, Some(&s1), "boot"));
    let starts: Vec<Turn> = std::iter::once(1).chain((1..=9).map(|i| i * 3)).collect();
    for s in &starts {
        for x in ["x", "y"] {
            spec.pages.push(g.page(&format!("ev-{s:02}{x}"), PageType::Evidence, Scope::Session, Some(&s1)));
        }
    }
    let sig = |s: Turn, x: &str| format!("inspect(epoch={s},item={x})");

    for t in 1..=30 {
        let mut ts = TurnSpec::new(t, s1.clone());
        let s = *starts.iter().rev().find(|s| **s <= t).unwrap();
        let (x, y) = (format!("ev-{s:02}x"), format!("ev-{s:02}y"));
        if t % 3 == 0 && t < 30 {
            ts.pre_events.push(LifecycleEvent::reset());
            ts.demand("boot");
        }
        ts.active("plan");
        if t == s {
            ts.tool(sig(s, "x"), &x).tool(sig(s, "y"), &y);
        } else if (t - s) % 2 == 1 {
            ts.tool(sig(s, "x"), &x).demand(&y);
        } else {
            ts.demand(&x).tool(sig(s, "y"), &y);
        }
        // the turn before the next reset closes the epoch
        let closes = t % 3 == 2 && t < 27;
        if closes {
            ts.mark_dirty("pref");
            if COMPACTING.contains(&(t + 1)) {
                ts.mark_dirty("plan");
                ts.post_events.push(LifecycleEvent::compaction());
            }
        }
        spec.turns.push(ts);
    }
}
