use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pagevm::alloc_meter::{self, CountingAlloc};
use pagevm::engine::{replay, Engine};
use pagevm::error::{Error, Result};
use pagevm::experiments::{
    bench_latency, family_suite, run_ablation, run_gate, run_oracle, run_tasks, run_weight_sweep, AblationMode,
    DEFAULT_SEED,
};
use pagevm::policy::{PolicyConfig, Preset};
use pagevm::report::{aggregate, ReplayReport};
use pagevm::trace::TraceWriter;
use pagevm::workload::{
    build_adversarial, build_task_suite, build_tier1, generate_family, load_spec, save_spec, Adversarial, Family,
    Tier1Scenario, WorkloadSpec, DEFAULT_TURNS,
};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

const DEFAULT_BUDGET: u32 = 180;

#[derive(Parser)]
#[command(name = "pagevm", version, about = "Typed context paging: workload generation, replay and experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Generator seed.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Token budget; defaults to the workload's own budget, else 180.
    #[arg(long, global = true)]
    budget: Option<u32>,
    /// Policy preset name.
    #[arg(long, global = true, default_value = "full")]
    policy: String,
    /// Knob override applied after the preset, e.g. `prefetch=false`.
    #[arg(long = "knob", global = true, value_name = "KEY=VALUE")]
    knobs: Vec<String>,
    /// Policy configuration JSON file, used instead of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write JSON output here instead of printing a summary.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a workload specification.
    Generate {
        /// evidence_heavy, interruption_heavy, lifecycle_torture or multi_session.
        #[arg(long, conflicts_with_all = ["scenario", "tier1", "tasks"])]
        family: Option<Family>,
        /// starvation, churn or cascade.
        #[arg(long, conflicts_with_all = ["tier1", "tasks"])]
        scenario: Option<Adversarial>,
        /// A lifecycle regression scenario, e.g. reset_flush_miss.
        #[arg(long, conflicts_with = "tasks")]
        tier1: Option<Tier1Scenario>,
        /// The whole task suite; `--out` names a directory.
        #[arg(long)]
        tasks: bool,
        /// Turns per family workload.
        #[arg(long, default_value_t = DEFAULT_TURNS)]
        turns: u32,
    },
    /// Replay a workload file under one policy.
    Replay {
        workload: PathBuf,
        /// Write the JSON-lines decision trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare the oracle against the online policy on a workload file.
    Oracle {
        workload: PathBuf,
        /// Lookahead in turns; omit for unbounded.
        #[arg(long)]
        horizon: Option<u32>,
    },
    /// Feature ablation over the four families.
    Ablate {
        /// subtractive (full minus one feature) or additive (retrieval plus one).
        #[arg(long, default_value = "subtractive")]
        mode: AblationMode,
    },
    /// Utility weight sweep over the four families.
    Sweep,
    /// Run the task suite.
    Tasks,
    /// Summarize report files written by `replay --out` or `tasks --out`.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Per-turn decision latency and peak engine memory.
    Bench {
        /// Workload file; defaults to the evidence-heavy family.
        workload: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        repetitions: usize,
    },
    /// Run the lifecycle regression scenarios; exits 1 on any failure.
    Gate,
}

fn policy(g: &Global, budget: u32) -> Result<PolicyConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?
        }
        None => g.policy.parse::<Preset>()?.config(budget),
    };
    if g.budget.is_some() || g.config.is_none() {
        cfg.budget = budget;
    }
    for k in &g.knobs {
        cfg.apply_override(k)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn budget_for(g: &Global, spec: Option<&WorkloadSpec>) -> u32 {
    g.budget
        .or_else(|| spec.and_then(|s| s.metadata.budget))
        .unwrap_or(DEFAULT_BUDGET)
}

fn emit<T: Serialize>(g: &Global, value: &T, summary: impl FnOnce() -> String) -> Result<()> {
    match &g.out {
        Some(path) => write_file(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n")),
        None => {
            print!("{}", summary());
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn report_line(r: &ReplayReport) -> String {
    let c = &r.counters;
    format!(
        "{:<28} {:<18} {:>4}  explicit {:>4}  pinned {:>3}  boot {:>3}  flush {:>3}  d+r {:>4}  silent {:>3}  alerts {:>4}  hits {:>4}  thrash {:.3}\n",
        r.workload,
        r.policy,
        r.budget,
        r.explicit_faults,
        r.pinned_invariant_miss,
        c.post_compaction_bootstrap,
        c.flush_miss,
        c.dup_refetch(),
        c.silent_recall,
        c.duplicate_signature_alert,
        c.hits,
        r.thrash
    )
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match cli.command {
        Command::Generate {
            family,
            scenario,
            tier1,
            tasks,
            turns,
        } => {
            if tasks {
                let suite = build_task_suite(g.seed);
                let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("tasks"));
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for spec in &suite {
                    save_spec(spec, dir.join(format!("{}.json", spec.name)))?;
                }
                println!("wrote {} tasks to {}", suite.len(), dir.display());
                return Ok(ExitCode::SUCCESS);
            }
            let spec = match (family, scenario, tier1) {
                (Some(f), _, _) => generate_family(f, g.seed, turns)?,
                (_, Some(s), _) => build_adversarial(s),
                (_, _, Some(t)) => build_tier1(t).workload,
                _ => return Err(Error::InvalidConfig("pick one of --family, --scenario, --tier1 or --tasks".into())),
            };
            match &g.out {
                Some(path) => save_spec(&spec, path)?,
                None => print!("{}", spec.to_json()),
            }
        }
        Command::Replay { workload, trace } => {
            let spec = load_spec(&workload)?;
            let cfg = policy(g, budget_for(g, Some(&spec)))?;
            let engine = Engine::new(&spec, cfg)?;
            let report = match &trace {
                Some(path) => {
                    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
                    let mut w = TraceWriter::new(BufWriter::new(file));
                    let r = engine.replay(Some(&mut w))?;
                    w.into_inner().flush().map_err(|e| Error::io(path, e))?;
                    r
                }
                None => engine.replay::<std::io::Sink>(None)?,
            };
            emit(g, &report, || report_line(&report))?;
        }
        Command::Oracle { workload, horizon } => {
            let spec = load_spec(&workload)?;
            let cfg = policy(g, budget_for(g, Some(&spec)))?;
            let r = run_oracle(&spec, &cfg, horizon)?;
            emit(g, &r, || {
                let h = r.horizon.map_or("inf".to_owned(), |h| h.to_string());
                format!(
                    "{} budget {} h={h}: oracle {} online {} gap {}\n",
                    r.workload, r.budget, r.oracle_faults, r.online_faults, r.oracle_gap
                )
            })?;
        }
        Command::Ablate { mode } => {
            let rows = run_ablation(mode, &family_suite(g.seed), budget_for(g, None))?;
            emit(g, &rows, || {
                let mut s = format!("{:<18} {:>6} {:>6} {:>6} {:>6}\n", "variant", "boot", "flush", "d+r", "total");
                for r in &rows {
                    let c = &r.counters;
                    s += &format!(
                        "{:<18} {:>6} {:>6} {:>6} {:>6}\n",
                        r.variant,
                        c.post_compaction_bootstrap,
                        c.flush_miss,
                        c.dup_refetch(),
                        r.explicit
                    );
                }
                s
            })?;
        }
        Command::Sweep => {
            let rows = run_weight_sweep(&family_suite(g.seed), budget_for(g, None))?;
            emit(g, &rows, || {
                rows.iter()
                    .map(|r| format!("{:<26} {:<26} explicit {:>3}  thrash {:.3}\n", r.workload, r.config, r.explicit, r.thrash))
                    .collect()
            })?;
        }
        Command::Tasks => {
            let preset: Preset = g.policy.parse()?;
            let budget = budget_for(g, None);
            let reports = if g.config.is_some() || !g.knobs.is_empty() {
                let cfg = policy(g, budget)?;
                build_task_suite(g.seed)
                    .iter()
                    .map(|s| replay(s, cfg.clone()))
                    .collect::<Result<Vec<_>>>()?
            } else {
                run_tasks(g.seed, budget, &[preset])?
            };
            emit(g, &reports, || aggregate(&reports).map(|s| s.render()).unwrap_or_default())?;
        }
        Command::Report { reports } => {
            let mut all = Vec::new();
            for path in &reports {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let parse = |e| Error::parse(path, e);
                match serde_json::from_str::<Vec<ReplayReport>>(&text) {
                    Ok(mut v) => all.append(&mut v),
                    Err(_) => all.push(serde_json::from_str::<ReplayReport>(&text).map_err(parse)?),
                }
            }
            let summary = aggregate(&all)?;
            emit(g, &summary, || summary.render())?;
        }
        Command::Bench { workload, repetitions } => {
            let spec = match &workload {
                Some(p) => load_spec(p)?,
                None => generate_family(Family::EvidenceHeavy, g.seed, DEFAULT_TURNS)?,
            };
            let cfg = policy(g, budget_for(g, Some(&spec)))?;
            let result = bench_latency(&spec, &cfg, repetitions)?;
            let (_, peak) = alloc_meter::measure(|| replay(&spec, cfg.clone()));
            let out = serde_json::json!({ "bench": result, "peak_aux_bytes": peak });
            emit(g, &out, || {
                let l = result.latency;
                format!(
                    "{} {} x{}: p50 {:.2} us  p95 {:.2} us  max {:.2} us  peak memory {} bytes\n",
                    result.workload, result.policy, result.repetitions, l.p50_us, l.p95_us, l.max_us, peak
                )
            })?;
        }
        Command::Gate => {
            let outcomes = run_gate()?;
            let mut ok = true;
            for o in &outcomes {
                ok &= o.passed;
                let status = if o.passed { "PASS" } else { "FAIL" };
                println!("{status} {}", o.scenario.name());
                if !o.passed {
                    println!("  expected {:?}\n  observed {:?}", o.expected, o.observed);
                }
            }
            if let Some(path) = &g.out {
                write_file(path, &(serde_json::to_string_pretty(&outcomes).expect("serializable") + "\n"))?;
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
