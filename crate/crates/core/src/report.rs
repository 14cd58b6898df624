//! Replay reports and cross-run summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::{Counters, FaultClass};
use crate::page::Tokens;
use crate::workload::TaskCategory;
use crate::writeback::RejectReason;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub p50_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
}

/// Nearest-rank percentiles over nanosecond samples. `None` when empty.
pub fn latency_summary(samples_ns: &[u64]) -> Option<LatencySummary> {
    if samples_ns.is_empty() {
        return None;
    }
    let mut s = samples_ns.to_vec();
    s.sort_unstable();
    let rank = |p: f64| {
        let r = (p * s.len() as f64).ceil() as usize;
        s[r.clamp(1, s.len()) - 1] as f64 / 1000.0
    };
    Some(LatencySummary {
        count: s.len(),
        p50_us: rank(0.50),
        p95_us: rank(0.95),
        max_us: *s.last().unwrap() as f64 / 1000.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub workload: String,
    pub policy: String,
    pub budget: Tokens,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<TaskCategory>,
    pub turns: usize,
    pub counters: Counters,
    /// All explicit faults, pinned-invariant misses included.
    pub explicit_faults: u64,
    pub pinned_invariant_miss: u64,
    pub thrash: f64,
    pub tokens_per_turn: Vec<Tokens>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencySummary>,
    pub rejections: BTreeMap<RejectReason, u64>,
    /// Zero explicit faults.
    pub success: bool,
}

impl ReplayReport {
    pub fn count(&self, class: FaultClass) -> u64 {
        self.counters.get(class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub runs: usize,
    pub mean_explicit: f64,
    pub mean_thrash: f64,
    /// Percentage change against `full`; absent when `full` is missing or
    /// its mean is zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit_vs_full_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thrash_vs_full_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRate {
    pub policy: String,
    pub budget: Tokens,
    pub category: TaskCategory,
    pub succeeded: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policies: Vec<PolicySummary>,
    pub tasks: Vec<TaskRate>,
}

fn pct(x: f64, base: f64) -> Option<f64> {
    (base > 0.0).then(|| (x - base) / base * 100.0)
}

/// Per-policy means and task success rates. Policies appear in first-seen
/// order.
pub fn aggregate(reports: &[ReplayReport]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::Empty("no reports to aggregate".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.policy.as_str()) {
            order.push(&r.policy);
        }
    }
    let mut policies: Vec<PolicySummary> = order
        .iter()
        .map(|p| {
            let rs: Vec<&ReplayReport> = reports.iter().filter(|r| r.policy == *p).collect();
            let n = rs.len() as f64;
            PolicySummary {
                policy: (*p).to_owned(),
                runs: rs.len(),
                mean_explicit: rs.iter().map(|r| r.explicit_faults as f64).sum::<f64>() / n,
                mean_thrash: rs.iter().map(|r| r.thrash).sum::<f64>() / n,
                explicit_vs_full_pct: None,
                thrash_vs_full_pct: None,
            }
        })
        .collect();
    if let Some(full) = policies.iter().find(|p| p.policy == "full").cloned() {
        for p in &mut policies {
            p.explicit_vs_full_pct = pct(p.mean_explicit, full.mean_explicit);
            p.thrash_vs_full_pct = pct(p.mean_thrash, full.mean_thrash);
        }
    }

    let mut rates: BTreeMap<(usize, Tokens, TaskCategory), (usize, usize)> = BTreeMap::new();
    for r in reports {
        if let Some(cat) = r.category {
            let pi = order.iter().position(|p| *p == r.policy).unwrap();
            let e = rates.entry((pi, r.budget, cat)).or_default();
            e.0 += usize::from(r.success);
            e.1 += 1;
        }
    }
    let tasks = rates
        .into_iter()
        .map(|((pi, budget, category), (succeeded, total))| TaskRate {
            policy: order[pi].to_owned(),
            budget,
            category,
            succeeded,
            total,
        })
        .collect();
    Ok(Summary { policies, tasks })
}

impl Summary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<18} {:>5} {:>10} {:>8} {:>10}", "policy", "runs", "explicit", "thrash", "vs full");
        for p in &self.policies {
            let delta = p.explicit_vs_full_pct.map_or("-".to_owned(), |d| format!("{d:+.0}%"));
            let _ = writeln!(
                s,
                "{:<18} {:>5} {:>10.2} {:>8.3} {:>10}",
                p.policy, p.runs, p.mean_explicit, p.mean_thrash, delta
            );
        }
        if !self.tasks.is_empty() {
            let _ = writeln!(s, "\n{:<18} {:>6} {:<10} {:>8}", "policy", "budget", "category", "success");
            let mut totals: BTreeMap<(&str, Tokens), (usize, usize)> = BTreeMap::new();
            for t in &self.tasks {
                let _ = writeln!(
                    s,
                    "{:<18} {:>6} {:<10} {:>5}/{}",
                    t.policy,
                    t.budget,
                    t.category.name(),
                    t.succeeded,
                    t.total
                );
                let e = totals.entry((&t.policy, t.budget)).or_default();
                e.0 += t.succeeded;
                e.1 += t.total;
            }
            for ((p, b), (ok, n)) in totals {
                let _ = writeln!(s, "{p:<18} {b:>6} {:<10} {ok:>5}/{n}", "total");
            }
        }
        s
    }
}
