//! Run configuration: one TOML file with a versioned schema. Every section
//! is optional and falls back to the calibrated defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use ui_rkd::schedule::{BenefitRule, EligibilityRow, EligibilityTable, Policy, WageConversion, DEFAULT_NET_OVER_GROSS};
use ui_rkd::search_model::ModelParams;
use ui_rkd::synth::SimConfig;

use crate::grid::GridCell;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub net_over_gross: f64,
    pub pre: BenefitRule,
    pub post: BenefitRule,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            net_over_gross: DEFAULT_NET_OVER_GROSS,
            pre: BenefitRule::pre_reform(),
            post: BenefitRule::post_reform(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EligibilitySection {
    pub rows: Vec<EligibilityRow>,
    pub pre_reform_min_contributions: u32,
}

impl Default for EligibilitySection {
    fn default() -> Self {
        let t = EligibilityTable::default();
        EligibilitySection { rows: t.rows, pre_reform_min_contributions: t.pre_reform_min_contributions }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelfareSection {
    pub delta: f64,
}

impl Default for WelfareSection {
    fn default() -> Self {
        WelfareSection { delta: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    /// Bin width in running-variable units.
    pub bin_width: f64,
    /// Half-width of the window used by the density check.
    pub density_window: f64,
    /// Percentile range of log wages kept before binning.
    pub wage_trim: (f64, f64),
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection { bin_width: 25.0, density_window: 150.0, wage_trim: (1.0, 99.0) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Seed for all simulated randomness; overrides `sim.seed`.
    pub seed: Option<u64>,
    pub schedule: ScheduleSection,
    pub eligibility: EligibilitySection,
    pub model: ModelParams,
    pub sim: SimConfig,
    pub estimation: Vec<GridCell>,
    pub welfare: WelfareSection,
    pub diagnose: DiagnoseSection,
    pub io: IoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: None,
            schedule: ScheduleSection::default(),
            eligibility: EligibilitySection::default(),
            model: ModelParams::calibrated(),
            sim: SimConfig::default(),
            estimation: Vec::new(),
            welfare: WelfareSection::default(),
            diagnose: DiagnoseSection::default(),
            io: IoSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("invalid configuration")?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {} (expected {SCHEMA_VERSION})", cfg.schema_version);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn policy(&self) -> anyhow::Result<Policy> {
        let policy = Policy {
            pre: self.schedule.pre.clone(),
            post: self.schedule.post.clone(),
            eligibility: EligibilityTable {
                rows: self.eligibility.rows.clone(),
                pre_reform_min_contributions: self.eligibility.pre_reform_min_contributions,
            },
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn conversion(&self) -> anyhow::Result<WageConversion> {
        Ok(WageConversion::new(self.schedule.net_over_gross)?)
    }

    /// Simulation settings with the top-level seed and the schedule's
    /// net/gross ratio applied.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            seed: self.seed.unwrap_or(self.sim.seed),
            net_over_gross: self.schedule.net_over_gross,
            ..self.sim.clone()
        }
    }
}
