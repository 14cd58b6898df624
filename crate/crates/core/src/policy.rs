//! Policy knobs, scoring weights and the named presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::page::{Page, PageType, PinClass, Tokens, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpgradeStrategy {
    None,
    Recency,
    Utility,
    Lru,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub w_pin_hard: f64,
    pub w_pin_soft: f64,
    pub w_boot: f64,
    pub w_plan: f64,
    pub w_rec: f64,
    pub w_scope: f64,
    pub w_rc: f64,
    pub oracle_demand_weight: f64,
    /// Recency and recompute weights used by the recency upgrade strategy.
    pub recency_rec: f64,
    pub recency_rc: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        UtilityWeights {
            w_pin_hard: 2.0,
            w_pin_soft: 0.6,
            w_boot: 0.8,
            w_plan: 0.8,
            w_rec: 0.6,
            w_scope: 0.2,
            w_rc: 0.4,
            oracle_demand_weight: 2.2,
            recency_rec: 0.9,
            recency_rc: 0.1,
        }
    }
}

impl UtilityWeights {
    pub fn is_finite(&self) -> bool {
        [
            self.w_pin_hard,
            self.w_pin_soft,
            self.w_boot,
            self.w_plan,
            self.w_rec,
            self.w_scope,
            self.w_rc,
            self.oracle_demand_weight,
            self.recency_rec,
            self.recency_rc,
        ]
        .iter()
        .all(|w| w.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub name: String,
    pub auto_pin: bool,
    pub prefetch: bool,
    pub wb_compaction: bool,
    pub wb_reset: bool,
    pub upgrade_strategy: UpgradeStrategy,
    pub resolve_pointers: bool,
    pub budget: Tokens,
    #[serde(default)]
    pub weights: UtilityWeights,
    /// Lookahead in turns for the oracle strategy; `None` is unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_horizon: Option<Turn>,
}

/// Named policy presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Retrieval,
    RetrievalCache,
    CompactionHybrid,
    Full,
    Lru,
    Oracle,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Retrieval,
        Preset::RetrievalCache,
        Preset::CompactionHybrid,
        Preset::Full,
        Preset::Lru,
        Preset::Oracle,
    ];

    /// The five policies compared in the main matrix.
    pub const MATRIX: [Preset; 5] = [
        Preset::Retrieval,
        Preset::RetrievalCache,
        Preset::CompactionHybrid,
        Preset::Full,
        Preset::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Retrieval => "retrieval",
            Preset::RetrievalCache => "retrieval-cache",
            Preset::CompactionHybrid => "compaction-hybrid",
            Preset::Full => "full",
            Preset::Lru => "lru",
            Preset::Oracle => "oracle",
        }
    }

    pub fn config(self, budget: Tokens) -> PolicyConfig {
        let base = PolicyConfig {
            name: self.name().to_owned(),
            auto_pin: false,
            prefetch: false,
            wb_compaction: false,
            wb_reset: false,
            upgrade_strategy: UpgradeStrategy::None,
            resolve_pointers: false,
            budget,
            weights: UtilityWeights::default(),
            oracle_horizon: None,
        };
        match self {
            Preset::Retrieval => base,
            Preset::RetrievalCache => PolicyConfig {
                resolve_pointers: true,
                ..base
            },
            Preset::CompactionHybrid => PolicyConfig {
                prefetch: true,
                wb_compaction: true,
                upgrade_strategy: UpgradeStrategy::Recency,
                resolve_pointers: true,
                ..base
            },
            Preset::Full | Preset::Lru | Preset::Oracle => PolicyConfig {
                auto_pin: true,
                prefetch: true,
                wb_compaction: true,
                wb_reset: true,
                resolve_pointers: true,
                upgrade_strategy: match self {
                    Preset::Lru => UpgradeStrategy::Lru,
                    Preset::Oracle => UpgradeStrategy::Oracle,
                    _ => UpgradeStrategy::Utility,
                },
                oracle_horizon: (self == Preset::Oracle).then_some(3),
                ..base
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_owned()))
    }
}

/// The six structural features toggled by the ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feature {
    Pin,
    Resolve,
    WbCompaction,
    WbReset,
    Upgrade,
    Prefetch,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Pin,
        Feature::Resolve,
        Feature::WbCompaction,
        Feature::WbReset,
        Feature::Upgrade,
        Feature::Prefetch,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Feature::Pin => "pin",
            Feature::Resolve => "resolve",
            Feature::WbCompaction => "wb-c",
            Feature::WbReset => "wb-r",
            Feature::Upgrade => "upgrade",
            Feature::Prefetch => "prefetch",
        }
    }
}

impl PolicyConfig {
    pub fn preset(preset: Preset, budget: Tokens) -> Self {
        preset.config(budget)
    }

    pub fn with_feature(mut self, feature: Feature, on: bool) -> Self {
        match feature {
            Feature::Pin => self.auto_pin = on,
            Feature::Resolve => self.resolve_pointers = on,
            Feature::WbCompaction => self.wb_compaction = on,
            Feature::WbReset => self.wb_reset = on,
            Feature::Prefetch => self.prefetch = on,
            Feature::Upgrade => {
                self.upgrade_strategy = if on { UpgradeStrategy::Utility } else { UpgradeStrategy::None }
            }
        }
        self
    }

    /// Pin class after auto-pinning is applied.
    pub fn effective_pin(&self, page: &Page) -> PinClass {
        if page.pin == PinClass::Hard
            || (self.auto_pin && matches!(page.page_type, PageType::Bootstrap | PageType::Constraint))
        {
            PinClass::Hard
        } else {
            page.pin
        }
    }

    pub fn is_hard_pinned(&self, page: &Page) -> bool {
        self.effective_pin(page) == PinClass::Hard
    }

    pub fn validate(&self) -> Result<()> {
        if !self.weights.is_finite() {
            return Err(Error::InvalidConfig("weights must be finite".into()));
        }
        Ok(())
    }

    /// Applies a `key=value` override, e.g. `resolve=false` or `budget=180`.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got `{spec}`")))?;
        let bad = || Error::InvalidConfig(format!("bad value for `{key}`: `{value}`"));
        let flag = || value.parse::<bool>().map_err(|_| bad());
        let num = || value.parse::<f64>().map_err(|_| bad());
        match key {
            "pin" | "auto_pin" => self.auto_pin = flag()?,
            "prefetch" => self.prefetch = flag()?,
            "wb-c" | "wb_compaction" => self.wb_compaction = flag()?,
            "wb-r" | "wb_reset" => self.wb_reset = flag()?,
            "resolve" | "resolve_pointers" => self.resolve_pointers = flag()?,
            "upgrade" | "upgrade_strategy" => {
                self.upgrade_strategy = serde_json::from_value(serde_json::Value::String(value.to_owned()))
                    .map_err(|_| bad())?
            }
            "budget" => self.budget = value.parse().map_err(|_| bad())?,
            "horizon" | "oracle_horizon" => {
                self.oracle_horizon = if value == "inf" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad())?)
                }
            }
            "name" => self.name = value.to_owned(),
            "w_pin_hard" => self.weights.w_pin_hard = num()?,
            "w_pin_soft" => self.weights.w_pin_soft = num()?,
            "w_boot" => self.weights.w_boot = num()?,
            "w_plan" => self.weights.w_plan = num()?,
            "w_rec" => self.weights.w_rec = num()?,
            "w_scope" => self.weights.w_scope = num()?,
            "w_rc" => self.weights.w_rc = num()?,
            "oracle_demand_weight" => self.weights.oracle_demand_weight = num()?,
            _ => return Err(Error::InvalidConfig(format!("unknown knob `{key}`"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_knob_matrix() {
        let r = Preset::Retrieval.config(180);
        assert!(!r.auto_pin && !r.prefetch && !r.wb_compaction && !r.wb_reset && !r.resolve_pointers);
        assert_eq!(r.upgrade_strategy, UpgradeStrategy::None);

        let rc = Preset::RetrievalCache.config(180);
        assert!(rc.resolve_pointers && !rc.auto_pin && !rc.prefetch);

        let ch = Preset::CompactionHybrid.config(180);
        assert!(ch.prefetch && ch.wb_compaction && !ch.wb_reset && !ch.auto_pin && ch.resolve_pointers);
        assert_eq!(ch.upgrade_strategy, UpgradeStrategy::Recency);

        let full = Preset::Full.config(180);
        assert!(full.auto_pin && full.prefetch && full.wb_compaction && full.wb_reset && full.resolve_pointers);
        assert_eq!(full.upgrade_strategy, UpgradeStrategy::Utility);

        let o = Preset::Oracle.config(180);
        assert_eq!(o.upgrade_strategy, UpgradeStrategy::Oracle);
        assert_eq!(o.oracle_horizon, Some(3));

        let lru = Preset::Lru.config(180);
        assert_eq!(PolicyConfig { upgrade_strategy: UpgradeStrategy::Utility, name: "full".into(), ..lru }, full);
    }

    #[test]
    fn default_weights() {
        let w = UtilityWeights::default();
        assert_eq!((w.w_pin_hard, w.w_pin_soft, w.w_rec, w.w_rc), (2.0, 0.6, 0.6, 0.4));
        assert_eq!(w.oracle_demand_weight, 2.2);
    }

    #[test]
    fn overrides() {
        let mut c = Preset::Full.config(180);
        c.apply_override("resolve=false").unwrap();
        c.apply_override("upgrade=lru").unwrap();
        c.apply_override("budget=300").unwrap();
        assert!(!c.resolve_pointers);
        assert_eq!(c.upgrade_strategy, UpgradeStrategy::Lru);
        assert_eq!(c.budget, 300);
        assert!(c.apply_override("nope=1").is_err());
        assert!(c.apply_override("resolve").is_err());
        assert!("full".parse::<Preset>().is_ok());
        assert!("bogus".parse::<Preset>().is_err());
    }
}
