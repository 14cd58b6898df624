//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use pagevm::alloc_meter::{self, CountingAlloc};
use pagevm::engine::{replay, Engine};
use pagevm::experiments::{
    bench_latency, family_suite, run_ablation, run_gate, run_oracle, run_weight_sweep, sweep_configs, AblationMode,
    AblationRow, DEFAULT_SEED,
};
use pagevm::fault::{Counters, FaultClass};
use pagevm::policy::{PolicyConfig, Preset};
use pagevm::report::ReplayReport;
use pagevm::trace::{strip_latency, TraceWriter};
use pagevm::workload::{
    build_adversarial, build_task_suite, build_tier1, generate_family, Adversarial, Family, TaskCategory,
    Tier1Scenario, WorkloadSpec, BUDGETS, DEFAULT_TURNS,
};
use proptest::test_runner::{Config, TestRunner};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

const GATE_LIMIT: Duration = Duration::from_secs(1);
const FLOOR_LIMIT: Duration = Duration::from_secs(10);
const CHURN_RETRIEVAL_MIN: u64 = 200;
const WRITEBACK_CASES: u32 = 10_000;
const SWEEP_CONFIGS: usize = 21;
const LRU_BUDGETS: [u32; 4] = [120, 180, 240, 300];
const P50_LIMIT_US: f64 = 50.0;
const P95_LIMIT_US: f64 = 60.0;
const BENCH_REPS: usize = 100;
const PEAK_MEMORY_LIMIT: usize = 1 << 20;

use FaultClass::*;

/// Fault classes with a nonzero count, ignoring alerts.
fn explicit_classes(c: &Counters) -> Vec<FaultClass> {
    c.explicit_classes().into_iter().collect()
}

fn d_r(c: &Counters) -> u64 {
    c.dup_refetch()
}

fn run(spec: &WorkloadSpec, preset: Preset, budget: u32) -> ReplayReport {
    replay(spec, preset.config(budget)).expect("replay")
}

fn tier1_gate() -> (bool, String) {
    let t = Instant::now();
    let outcomes = run_gate().expect("gate");
    let elapsed = t.elapsed();
    let passed = outcomes.iter().filter(|o| o.passed).count();
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.scenario.name()).collect();
    (
        passed == Tier1Scenario::ALL.len() && elapsed < GATE_LIMIT,
        format!("{passed}/6 scenarios in {elapsed:.1?} (limit {GATE_LIMIT:?}) failed={failed:?}"),
    )
}

fn fault_free_floor() -> (bool, String) {
    let t = Instant::now();
    let mut runs = 0;
    let mut bad = Vec::new();
    let mut check = |spec: &WorkloadSpec, b: u32| {
        runs += 1;
        let r = run(spec, Preset::Full, b);
        if r.explicit_faults != 0 {
            bad.push(format!("{}@{b}={}", spec.name, r.explicit_faults));
        }
    };
    for spec in family_suite(DEFAULT_SEED) {
        for b in BUDGETS {
            check(&spec, b);
        }
    }
    for a in [Adversarial::Churn, Adversarial::Cascade] {
        check(&build_adversarial(a), a.budget());
    }
    for task in build_task_suite(DEFAULT_SEED) {
        for b in [180, 300] {
            check(&task, b);
        }
    }
    let elapsed = t.elapsed();
    (
        bad.is_empty() && elapsed < FLOOR_LIMIT,
        format!("{runs} replays, {} with faults {bad:?}, {elapsed:.1?} (limit {FLOOR_LIMIT:?})", bad.len()),
    )
}

fn starvation_parity() -> (bool, String) {
    let spec = build_adversarial(Adversarial::Starvation);
    let mut ok = true;
    let mut detail = Vec::new();
    for p in [Preset::Retrieval, Preset::CompactionHybrid, Preset::Full] {
        let r = run(&spec, p, Adversarial::Starvation.budget());
        let c = r.counters;
        ok &= c.pinned_invariant_miss == 10 && r.explicit_faults == 10;
        detail.push(format!("{}: pin={} total={}", p.name(), c.pinned_invariant_miss, r.explicit_faults));
    }
    (ok, detail.join(", "))
}

fn churn() -> (bool, String) {
    let spec = build_adversarial(Adversarial::Churn);
    let b = Adversarial::Churn.budget();
    let full = run(&spec, Preset::Full, b);
    let hybrid = run(&spec, Preset::CompactionHybrid, b);
    let retrieval = run(&spec, Preset::Retrieval, b);
    let rc = retrieval.counters;
    let ok = full.explicit_faults == 0
        && hybrid.counters.post_compaction_bootstrap == 9
        && explicit_classes(&hybrid.counters) == vec![PostCompactionBootstrap]
        && retrieval.explicit_faults >= CHURN_RETRIEVAL_MIN
        && d_r(&rc) * 2 > retrieval.explicit_faults;
    (
        ok,
        format!(
            "full={} hybrid boot={} total={} retrieval total={} (D+R={} flush={} boot={})",
            full.explicit_faults,
            hybrid.counters.post_compaction_bootstrap,
            hybrid.explicit_faults,
            retrieval.explicit_faults,
            d_r(&rc),
            rc.flush_miss,
            rc.post_compaction_bootstrap
        ),
    )
}

fn cascade() -> (bool, String) {
    let spec = build_adversarial(Adversarial::Cascade);
    let b = Adversarial::Cascade.budget();
    let full = run(&spec, Preset::Full, b);
    let hybrid = run(&spec, Preset::CompactionHybrid, b);
    let retrieval = run(&spec, Preset::Retrieval, b);
    let rc = retrieval.counters;
    let ok = full.explicit_faults == 0
        && explicit_classes(&hybrid.counters) == vec![FlushMiss]
        && hybrid.counters.flush_miss == 7
        && retrieval.explicit_faults > hybrid.explicit_faults
        && rc.flush_miss > 0
        && d_r(&rc) > 0;
    (
        ok,
        format!(
            "full={} hybrid flush={} total={} retrieval total={} (flush={} D+R={} boot={})",
            full.explicit_faults,
            hybrid.counters.flush_miss,
            hybrid.explicit_faults,
            retrieval.explicit_faults,
            rc.flush_miss,
            d_r(&rc),
            rc.post_compaction_bootstrap
        ),
    )
}

fn row<'a>(rows: &'a [AblationRow], name: &str) -> &'a AblationRow {
    rows.iter().find(|r| r.variant == name).expect("variant present")
}

fn fmt_rows(rows: &[AblationRow]) -> String {
    rows.iter()
        .map(|r| {
            format!(
                "{} {}/{}/{}",
                r.variant,
                r.count(PostCompactionBootstrap),
                r.count(FlushMiss),
                d_r(&r.counters)
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn subtractive() -> (bool, String) {
    let rows = run_ablation(AblationMode::Subtractive, &family_suite(DEFAULT_SEED), 180).expect("ablation");
    let only = |name: &str, class: FaultClass| {
        let r = row(&rows, name);
        r.explicit > 0 && explicit_classes(&r.counters) == vec![class]
    };
    let resolve = row(&rows, "-resolve");
    let largest = rows.iter().all(|r| r.variant == "-resolve" || r.explicit < resolve.explicit);
    let ok = d_r(&resolve.counters) > 0
        && largest
        && only("-wb-c", FlushMiss)
        && only("-wb-r", FlushMiss)
        && only("-pin", PostCompactionBootstrap)
        && row(&rows, "-upgrade").explicit == 0
        && row(&rows, "-prefetch").explicit == 0
        && row(&rows, "full").explicit == 0;
    (ok, format!("boot/flush/D+R: {}", fmt_rows(&rows)))
}

fn additive() -> (bool, String) {
    let rows = run_ablation(AblationMode::Additive, &family_suite(DEFAULT_SEED), 180).expect("ablation");
    let base = row(&rows, "retrieval");
    let ok = row(&rows, "+pin").count(PostCompactionBootstrap) == 0
        && base.count(PostCompactionBootstrap) > 0
        && d_r(&row(&rows, "+resolve").counters) == 0
        && d_r(&base.counters) > 0
        && row(&rows, "+wb-c").count(FlushMiss) < base.count(FlushMiss)
        && row(&rows, "full").explicit == 0;
    (ok, format!("boot/flush/D+R: {}", fmt_rows(&rows)))
}

fn lru_equivalence() -> (bool, String) {
    let mut bad = Vec::new();
    let mut n = 0;
    for spec in family_suite(DEFAULT_SEED) {
        for b in LRU_BUDGETS {
            n += 1;
            let lru = run(&spec, Preset::Lru, b);
            let full = run(&spec, Preset::Full, b);
            if lru.explicit_faults != 0 || lru.thrash != full.thrash {
                bad.push(format!("{}@{b}: {} {:.4} vs {:.4}", spec.name, lru.explicit_faults, lru.thrash, full.thrash));
            }
        }
    }
    (bad.is_empty(), format!("{n} configs, mismatches {bad:?}"))
}

fn weight_sweep() -> (bool, String) {
    let families = family_suite(DEFAULT_SEED);
    let rows = run_weight_sweep(&families, 180).expect("sweep");
    let faults: u64 = rows.iter().map(|r| r.explicit).sum();
    let mut uneven = Vec::new();
    for spec in &families {
        let t: Vec<f64> = rows.iter().filter(|r| r.workload == spec.name).map(|r| r.thrash).collect();
        if t.iter().any(|x| *x != t[0]) {
            uneven.push(spec.name.clone());
        }
    }
    let ok = sweep_configs(180).len() == SWEEP_CONFIGS && rows.len() == SWEEP_CONFIGS * 4 && faults == 0 && uneven.is_empty();
    (ok, format!("{} runs, explicit faults {faults}, workloads with varying thrash {uneven:?}", rows.len()))
}

fn shipped_workloads() -> Vec<(WorkloadSpec, Vec<u32>)> {
    let mut out: Vec<(WorkloadSpec, Vec<u32>)> = family_suite(DEFAULT_SEED).into_iter().map(|s| (s, BUDGETS.to_vec())).collect();
    out.extend(Adversarial::ALL.iter().map(|a| (build_adversarial(*a), vec![a.budget()])));
    out.extend(Tier1Scenario::ALL.iter().map(|s| (build_tier1(*s).workload, vec![180])));
    out.extend(build_task_suite(DEFAULT_SEED).into_iter().map(|s| (s, vec![180, 300])));
    out
}

fn oracle_gap() -> (bool, String) {
    let mut gaps = Vec::new();
    for spec in family_suite(DEFAULT_SEED) {
        for b in BUDGETS {
            let o = run_oracle(&spec, &Preset::Full.config(b), Some(3)).expect("oracle");
            if o.oracle_gap != 0 {
                gaps.push(format!("{}@{b}", spec.name));
            }
        }
    }
    let mut worse = Vec::new();
    let mut checked = 0;
    for (spec, budgets) in shipped_workloads() {
        for b in budgets {
            let oracle = run(&spec, Preset::Oracle, b).explicit_faults;
            for p in Preset::ALL {
                checked += 1;
                let online = run(&spec, p, b).explicit_faults;
                if oracle > online {
                    worse.push(format!("{}@{b} vs {}", spec.name, p.name()));
                }
            }
        }
    }
    (
        gaps.is_empty() && worse.is_empty(),
        format!("24 configs, nonzero gaps {gaps:?}; {checked} online comparisons, oracle worse in {worse:?}"),
    )
}

fn writeback_property() -> (bool, String) {
    let mut runner = TestRunner::new(Config {
        cases: WRITEBACK_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&common::ops_strategy(), |ops| common::check_writeback(&ops));
    let stale = common::STALE_SETS.load(std::sync::atomic::Ordering::Relaxed);
    match result {
        Ok(()) => (stale > 0, format!("{WRITEBACK_CASES} cases, {stale} stale versioned sets rejected as DESTRUCTIVE_OP")),
        Err(e) => (false, format!("{e}")),
    }
}

fn trace(spec: &WorkloadSpec, config: PolicyConfig) -> String {
    let mut w = TraceWriter::new(Vec::new());
    Engine::new(spec, config).expect("engine").replay(Some(&mut w)).expect("replay");
    String::from_utf8(w.into_inner()).expect("utf-8")
}

fn determinism() -> (bool, String) {
    let mut traces = 0;
    let mut diverged = Vec::new();
    let mut specs = family_suite(DEFAULT_SEED);
    specs.extend(Adversarial::ALL.iter().map(|a| build_adversarial(*a)));
    for spec in &specs {
        for p in Preset::ALL {
            traces += 1;
            let a = trace(spec, p.config(180));
            let b = trace(spec, p.config(180));
            if strip_latency(&a) != strip_latency(&b) {
                diverged.push(format!("{}/{}", spec.name, p.name()));
            }
        }
    }
    let mut generators = 0;
    for seed in [0, DEFAULT_SEED, 42, u64::MAX] {
        for f in Family::ALL {
            generators += 1;
            if generate_family(f, seed, DEFAULT_TURNS).unwrap().to_json() != generate_family(f, seed, DEFAULT_TURNS).unwrap().to_json() {
                diverged.push(format!("{f}-s{seed}"));
            }
        }
        generators += 1;
        let a: Vec<String> = build_task_suite(seed).iter().map(WorkloadSpec::to_json).collect();
        let b: Vec<String> = build_task_suite(seed).iter().map(WorkloadSpec::to_json).collect();
        if a != b {
            diverged.push(format!("tasks-s{seed}"));
        }
    }
    (
        diverged.is_empty(),
        format!("{traces} trace pairs, {generators} generator pairs, diverged {diverged:?}"),
    )
}

fn overhead() -> (bool, String) {
    let spec = generate_family(Family::EvidenceHeavy, DEFAULT_SEED, DEFAULT_TURNS).unwrap();
    let full = bench_latency(&spec, &Preset::Full.config(180), BENCH_REPS).expect("bench").latency;
    let mut peak = 0;
    for spec in family_suite(DEFAULT_SEED) {
        for p in Preset::ALL {
            let (_, bytes) = alloc_meter::measure(|| replay(&spec, p.config(180)).expect("replay"));
            peak = peak.max(bytes);
        }
    }
    (
        full.p50_us < P50_LIMIT_US && full.p95_us < P95_LIMIT_US && peak > 0 && peak < PEAK_MEMORY_LIMIT,
        format!(
            "p50 {:.2} us (< {P50_LIMIT_US}), p95 {:.2} us (< {P95_LIMIT_US}), max {:.2} us, peak aux memory {peak} B (< {PEAK_MEMORY_LIMIT})",
            full.p50_us, full.p95_us, full.max_us
        ),
    )
}

fn task_suite() -> (bool, String) {
    let suite = build_task_suite(DEFAULT_SEED);
    let hybrid: Vec<ReplayReport> = suite.iter().map(|s| run(s, Preset::CompactionHybrid, 180)).collect();
    let failures: Vec<&ReplayReport> = hybrid.iter().filter(|r| !r.success).collect();
    let boot_only = failures
        .iter()
        .all(|r| explicit_classes(&r.counters) == vec![PostCompactionBootstrap] && r.category == Some(TaskCategory::Debugging));
    let at_300 = suite.iter().filter(|s| run(s, Preset::CompactionHybrid, 300).success).count();
    let full = suite.iter().filter(|s| run(s, Preset::Full, 180).success).count();
    (
        failures.len() == 7 && boot_only && at_300 == 30 && full == 30,
        format!(
            "compaction-hybrid {}/30 at 180 (failures all debugging bootstrap: {boot_only}), {at_300}/30 at 300; full {full}/30",
            30 - failures.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> (bool, String));

fn main() {
    let criteria: [Criterion; 14] = [
        ("tier1_gate", tier1_gate),
        ("fault_free_floor", fault_free_floor),
        ("starvation_parity", starvation_parity),
        ("churn", churn),
        ("cascade", cascade),
        ("subtractive_ablation", subtractive),
        ("additive_ablation", additive),
        ("lru_equivalence", lru_equivalence),
        ("weight_sweep", weight_sweep),
        ("oracle_gap", oracle_gap),
        ("writeback_property", writeback_property),
        ("determinism", determinism),
        ("overhead", overhead),
        ("task_suite", task_suite),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let (ok, detail) = check();
        if !ok {
            failed += 1;
        }
        println!("{} {name:<22} {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("\n{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
