//! Batch runs over the shipped workloads: policy matrix, ablations, weight
//! sweep, oracle gap, task suite, the lifecycle gate and the latency bench.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::engine::{replay, Engine};
use crate::error::{Error, Result};
use crate::fault::{explicit_fault_total, Counters, FaultClass};
use crate::page::Tokens;
use crate::policy::{Feature, PolicyConfig, Preset, UpgradeStrategy};
use crate::report::{latency_summary, LatencySummary, ReplayReport};
use crate::workload::{
    build_tier1, build_task_suite, generate_family, Family, Tier1Expectation, Tier1Scenario, WorkloadSpec,
    DEFAULT_TURNS,
};
use crate::writeback::EntryStatus;

pub const DEFAULT_SEED: u64 = 1;
pub const ABLATION_BUDGET: Tokens = 180;

/// The four synthetic families at the default length.
pub fn family_suite(seed: u64) -> Vec<WorkloadSpec> {
    Family::ALL
        .iter()
        .map(|f| generate_family(*f, seed, DEFAULT_TURNS).expect("default length is valid"))
        .collect()
}

/// Every (workload, budget, preset) combination, workload-major.
pub fn run_matrix(specs: &[WorkloadSpec], budgets: &[Tokens], presets: &[Preset]) -> Result<Vec<ReplayReport>> {
    let mut out = Vec::new();
    for spec in specs {
        for &b in budgets {
            for &p in presets {
                out.push(replay(spec, p.config(b))?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Counters summed over the workloads.
    pub counters: Counters,
    pub explicit: u64,
}

impl AblationRow {
    pub fn count(&self, class: FaultClass) -> u64 {
        self.counters.get(class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Subtractive,
    Additive,
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subtractive" => Ok(AblationMode::Subtractive),
            "additive" => Ok(AblationMode::Additive),
            _ => Err(Error::InvalidConfig(format!("unknown ablation mode {s:?}"))),
        }
    }
}

fn summed(variant: String, specs: &[WorkloadSpec], config: &PolicyConfig) -> Result<AblationRow> {
    let mut counters = Counters::default();
    for spec in specs {
        counters.add(&replay(spec, config.clone())?.counters);
    }
    Ok(AblationRow {
        variant,
        explicit: explicit_fault_total(&counters),
        counters,
    })
}

/// Subtractive: full minus one feature at a time. Additive: the bare
/// retrieval baseline plus one feature at a time, then full. The first row
/// is the reference configuration.
pub fn run_ablation(mode: AblationMode, specs: &[WorkloadSpec], budget: Tokens) -> Result<Vec<AblationRow>> {
    let (base, on, sign, last) = match mode {
        AblationMode::Subtractive => (Preset::Full, false, '-', None),
        AblationMode::Additive => (Preset::Retrieval, true, '+', Some(Preset::Full)),
    };
    let mut rows = vec![summed(base.name().to_owned(), specs, &base.config(budget))?];
    for f in Feature::ALL {
        let mut cfg = base.config(budget).with_feature(f, on);
        cfg.name = format!("{sign}{}", f.label());
        rows.push(summed(cfg.name.clone(), specs, &cfg)?);
    }
    if let Some(p) = last {
        rows.push(summed(p.name().to_owned(), specs, &p.config(budget))?);
    }
    Ok(rows)
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

/// The default weights plus five evenly spaced values for each of the four
/// swept weights.
pub fn sweep_configs(budget: Tokens) -> Vec<PolicyConfig> {
    let base = Preset::Full.config(budget);
    let mut out = vec![PolicyConfig {
        name: "full/default".into(),
        ..base.clone()
    }];
    type Setter = fn(&mut PolicyConfig, f64);
    let axes: [(&str, f64, f64, Setter); 4] = [
        ("w_pin_hard", 0.5, 4.0, |c, v| c.weights.w_pin_hard = v),
        ("w_pin_soft", 0.0, 1.5, |c, v| c.weights.w_pin_soft = v),
        ("w_rec", 0.1, 1.2, |c, v| c.weights.w_rec = v),
        ("w_rc", 0.0, 1.2, |c, v| c.weights.w_rc = v),
    ];
    for (name, lo, hi, set) in axes {
        for v in linspace(lo, hi, 5) {
            let mut c = base.clone();
            set(&mut c, v);
            c.name = format!("full/{name}={v:.3}");
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub workload: String,
    pub config: String,
    pub explicit: u64,
    pub thrash: f64,
}

pub fn run_weight_sweep(specs: &[WorkloadSpec], budget: Tokens) -> Result<Vec<SweepRow>> {
    let configs = sweep_configs(budget);
    let mut out = Vec::with_capacity(configs.len() * specs.len());
    for spec in specs {
        for c in &configs {
            let r = replay(spec, c.clone())?;
            out.push(SweepRow {
                workload: spec.name.clone(),
                config: c.name.clone(),
                explicit: r.explicit_faults,
                thrash: r.thrash,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub workload: String,
    pub budget: Tokens,
    pub horizon: Option<u32>,
    pub oracle_faults: u64,
    pub online_faults: u64,
    pub oracle_gap: i64,
}

/// Replays `config` with the oracle strategy at horizon `h` and compares
/// against the same configuration scored online.
pub fn run_oracle(spec: &WorkloadSpec, config: &PolicyConfig, horizon: Option<u32>) -> Result<OracleResult> {
    let mut online = config.clone();
    if online.upgrade_strategy == UpgradeStrategy::Oracle {
        online.upgrade_strategy = UpgradeStrategy::Utility;
    }
    let oracle = PolicyConfig {
        upgrade_strategy: UpgradeStrategy::Oracle,
        oracle_horizon: horizon,
        ..config.clone()
    };
    let o = replay(spec, oracle)?.explicit_faults;
    let n = replay(spec, online)?.explicit_faults;
    Ok(OracleResult {
        workload: spec.name.clone(),
        budget: config.budget,
        horizon,
        oracle_faults: o,
        online_faults: n,
        oracle_gap: n as i64 - o as i64,
    })
}

/// Task suite replays: one report per task, category filled in.
pub fn run_tasks(seed: u64, budget: Tokens, presets: &[Preset]) -> Result<Vec<ReplayReport>> {
    let suite = build_task_suite(seed);
    run_matrix(&suite, &[budget], presets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier1Outcome {
    pub scenario: Tier1Scenario,
    pub expected: Tier1Expectation,
    pub observed: Tier1Expectation,
    pub passed: bool,
}

pub fn run_tier1(scenario: Tier1Scenario) -> Result<Tier1Outcome> {
    let case = build_tier1(scenario);
    let mut engine = Engine::new(&case.workload, case.config)?;
    while engine.step().is_some() {}
    let observed = Tier1Expectation {
        faults: engine.events().iter().map(|e| e.class).collect(),
        reasons: engine.events().iter().filter_map(|e| e.reason).collect(),
        rejections: engine
            .journal()
            .entries()
            .iter()
            .filter_map(|e| match e.status {
                EntryStatus::Rejected(r) => Some(r),
                _ => None,
            })
            .collect::<BTreeSet<_>>(),
    };
    Ok(Tier1Outcome {
        scenario,
        passed: observed == case.expect,
        expected: case.expect,
        observed,
    })
}

pub fn run_gate() -> Result<Vec<Tier1Outcome>> {
    Tier1Scenario::ALL.iter().map(|s| run_tier1(*s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub workload: String,
    pub policy: String,
    pub repetitions: usize,
    pub latency: LatencySummary,
}

/// Replays the workload `repetitions` times and pools per-turn decision
/// times.
pub fn bench_latency(spec: &WorkloadSpec, config: &PolicyConfig, repetitions: usize) -> Result<BenchResult> {
    if repetitions < 30 {
        return Err(Error::InvalidConfig(format!("need at least 30 repetitions, got {repetitions}")));
    }
    let mut samples = Vec::with_capacity(repetitions * spec.turns.len());
    for _ in 0..repetitions {
        let mut engine = Engine::new(spec, config.clone())?;
        while let Some(out) = engine.step() {
            samples.push(out.decision_ns);
        }
    }
    let latency = latency_summary(&samples)
        .ok_or_else(|| Error::Empty(format!("workload {} has no turns to time", spec.name)))?;
    Ok(BenchResult {
        workload: spec.name.clone(),
        policy: config.name.clone(),
        repetitions,
        latency,
    })
}
