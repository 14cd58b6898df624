//! Lifecycle regression scenarios. Each is a tiny workload, the policy it
//! runs under, and the exact set of fault classes, silent-recall reasons and
//! writeback rejections the replay must produce.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{parse_named, sid, LifecycleEvent, Metadata, PageGen, TurnSpec, WorkloadSpec};
use crate::error::{Error, Result};
use crate::fault::{BackendOutcome, FaultClass, ReasonCode};
use crate::page::{PageType, Scope};
use crate::policy::{PolicyConfig, Preset};
use crate::writeback::{RejectReason, UpdateOp, UpdateTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier1Scenario {
    PostCompactionBootstrap,
    ResetFlushMiss,
    ThresholdJump,
    SilentRecall,
    UnsafePersistence,
    EvidenceChurn,
}

impl Tier1Scenario {
    pub const ALL: [Tier1Scenario; 6] = [
        Tier1Scenario::PostCompactionBootstrap,
        Tier1Scenario::ResetFlushMiss,
        Tier1Scenario::ThresholdJump,
        Tier1Scenario::SilentRecall,
        Tier1Scenario::UnsafePersistence,
        Tier1Scenario::EvidenceChurn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tier1Scenario::PostCompactionBootstrap => "post_compaction_bootstrap",
            Tier1Scenario::ResetFlushMiss => "reset_flush_miss",
            Tier1Scenario::ThresholdJump => "threshold_jump",
            Tier1Scenario::SilentRecall => "silent_recall",
            Tier1Scenario::UnsafePersistence => "unsafe_persistence",
            Tier1Scenario::EvidenceChurn => "evidence_churn",
        }
    }
}

impl std::str::FromStr for Tier1Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_named(&Tier1Scenario::ALL, Tier1Scenario::name, s).ok_or_else(|| Error::UnknownScenario(s.to_owned()))
    }
}

/// What a scenario's replay must produce, compared as exact sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tier1Expectation {
    pub faults: BTreeSet<FaultClass>,
    pub reasons: BTreeSet<ReasonCode>,
    pub rejections: BTreeSet<RejectReason>,
}

#[derive(Debug, Clone)]
pub struct Tier1Case {
    pub scenario: Tier1Scenario,
    pub workload: WorkloadSpec,
    pub config: PolicyConfig,
    pub expect: Tier1Expectation,
}

const BUDGET: u32 = 180;

pub fn build_tier1(scenario: Tier1Scenario) -> Tier1Case {
    let s1 = sid("s1");
    let mut g = PageGen::new(0x7121 + scenario as u64);
    let mut spec = WorkloadSpec {
        name: format!("tier1-{}", scenario.name()),
        seed: 0,
        sessions: vec![s1.clone()],
        pages: vec![],
        turns: vec![],
        project_writers: vec![],
        metadata: Metadata {
            scenario: Some(scenario.name().to_owned()),
            budget: Some(BUDGET),
            ..Metadata::default()
        },
    };
    let mut expect = Tier1Expectation::default();
    let turn = |t| TurnSpec::new(t, s1.clone());

    let preset = match scenario {
        Tier1Scenario::PostCompactionBootstrap => {
            spec.pages.push(g.resident("boot", PageType::Bootstrap, Scope::Session, Some(&s1)));
            spec.pages.push(g.resident("con", PageType::Constraint, Scope::Session, Some(&s1)));
            let mut t1 = turn(1);
            t1.post_events.push(LifecycleEvent::compaction());
            spec.turns = vec![t1, turn(2)];
            expect.faults.insert(FaultClass::PostCompactionBootstrap);
            Preset::CompactionHybrid
        }
        Tier1Scenario::ResetFlushMiss => {
            spec.pages.push(g.resident("con", PageType::Constraint, Scope::Session, Some(&s1)));
            spec.pages.push(g.stateful("pref", PageType::Preference, Scope::Session, Some(&s1), "con"));
            let mut t1 = turn(1);
            t1.mark_dirty("pref");
            let mut t2 = turn(2);
            t2.pre_events.push(LifecycleEvent::reset());
            spec.turns = vec![t1, t2];
            expect.faults.insert(FaultClass::FlushMiss);
            Preset::CompactionHybrid
        }
        Tier1Scenario::ThresholdJump => {
            spec.pages.push(g.resident("con", PageType::Constraint, Scope::Session, Some(&s1)));
            spec.pages.push(g.stateful("pref", PageType::Preference, Scope::Session, Some(&s1), "con"));
            let mut t1 = turn(1);
            t1.mark_dirty("pref");
            t1.post_events.push(LifecycleEvent {
                hook_bypassed: true,
                ..LifecycleEvent::compaction()
            });
            spec.turns = vec![t1, turn(2)];
            expect.faults.insert(FaultClass::FlushMiss);
            Preset::Full
        }
        Tier1Scenario::SilentRecall => {
            spec.pages.push(g.resident("con", PageType::Constraint, Scope::Session, Some(&s1)));
            spec.pages.push(g.page("ev-a", PageType::Evidence, Scope::Session, Some(&s1)));
            spec.pages.push(g.page("ev-b", PageType::Evidence, Scope::Session, Some(&s1)));
            let mut t1 = turn(1);
            t1.demand_with("ev-a", BackendOutcome::Deny);
            let mut t2 = turn(2);
            t2.demand_with("ev-b", BackendOutcome::Error);
            spec.turns = vec![t1, t2];
            expect.faults.insert(FaultClass::SilentRecall);
            expect.reasons = BTreeSet::from([ReasonCode::Denied, ReasonCode::BackendError]);
            Preset::Full
        }
        Tier1Scenario::UnsafePersistence => {
            spec.pages.push(g.resident("con", PageType::Constraint, Scope::Session, Some(&s1)));
            let mut pref = g.stateful("pref", PageType::Preference, Scope::Session, Some(&s1), "con");
            pref.writeback.push(UpdateTemplate {
                field: "notes".into(),
                op: UpdateOp::SetWithVersion,
                value: json!({ "note": "replace everything" }),
                scope: None,
                evidence_ref: Some("con".into()),
                // the append above moves the key to version 1
                version: Some(0),
            });
            spec.pages.push(pref);
            let mut t1 = turn(1);
            t1.mark_dirty("pref");
            let mut t2 = turn(2);
            t2.pre_events.push(LifecycleEvent::flush());
            spec.turns = vec![t1, t2];
            expect.rejections.insert(RejectReason::DestructiveOp);
            Preset::Full
        }
        Tier1Scenario::EvidenceChurn => {
            spec.pages.push(g.resident("con", PageType::Constraint, Scope::Session, Some(&s1)));
            spec.pages.push(g.page("ev-a", PageType::Evidence, Scope::Session, Some(&s1)));
            let mut t1 = turn(1);
            t1.tool("grep(q=retry)", "ev-a");
            let mut t2 = turn(2);
            t2.tool("grep(q=retry)", "ev-a");
            spec.turns = vec![t1, t2];
            expect.faults.insert(FaultClass::DuplicateTool);
            Preset::Retrieval
        }
    };
    Tier1Case {
        scenario,
        workload: spec,
        config: preset.config(BUDGET),
        expect,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scenario_builds_a_valid_workload() {
        for s in Tier1Scenario::ALL {
            let case = build_tier1(s);
            case.workload.validate().unwrap();
            assert_eq!(s.name().parse::<Tier1Scenario>().unwrap(), s);
        }
        assert!("bogus".parse::<Tier1Scenario>().is_err());
    }
}
