//! Regression data from spell records: the gross reference wage is the
//! running variable and the scheduled initial benefit the treatment.

use serde::{Deserialize, Serialize};

use super::RkdData;
use crate::error::{domain, Result};
use crate::schedule::{Policy, Regime};
use crate::synth::SpellRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpellOutcome {
    TotalUiPaid,
    LogReemploymentWage,
    ReemploymentWage,
    UiMonthsCollected,
    NonemploymentMonths,
}

impl SpellOutcome {
    pub fn is_log(self) -> bool {
        self == SpellOutcome::LogReemploymentWage
    }

    /// Whether the outcome is missing for censored spells.
    pub fn needs_reemployment(self) -> bool {
        matches!(self, SpellOutcome::LogReemploymentWage | SpellOutcome::ReemploymentWage)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpellOutcome::TotalUiPaid => "total_ui_paid",
            SpellOutcome::LogReemploymentWage => "log_reemployment_wage",
            SpellOutcome::ReemploymentWage => "reemployment_wage",
            SpellOutcome::UiMonthsCollected => "ui_months_collected",
            SpellOutcome::NonemploymentMonths => "nonemployment_months",
        }
    }

    fn value(self, r: &SpellRecord) -> Option<f64> {
        match self {
            SpellOutcome::TotalUiPaid => Some(r.total_ui_paid),
            SpellOutcome::LogReemploymentWage => r.reemployment_wage.map(f64::ln),
            SpellOutcome::ReemploymentWage => r.reemployment_wage,
            SpellOutcome::UiMonthsCollected => Some(f64::from(r.ui_months_collected)),
            SpellOutcome::NonemploymentMonths => Some(f64::from(r.nonemployment_months)),
        }
    }
}

/// Continuous controls available on spell data.
pub const COVARIATE_NAMES: [&str; 7] = [
    "age",
    "male",
    "spouse",
    "children",
    "tenure_months",
    "contributions_36m",
    "severance_imputed",
];

/// Categorical controls available on spell data; `duration_group` bins
/// nonemployment into four-month groups.
pub const FIXED_EFFECT_NAMES: [&str; 4] = ["region_code", "industry_code", "layoff_year", "duration_group"];

/// Four-month nonemployment group: months 1–4 → 0, 5–8 → 1, ...
pub fn duration_group(months: u32) -> i64 {
    i64::from(months.saturating_sub(1) / 4)
}

/// Which rows were kept.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpellDataReport {
    pub n_records: usize,
    pub n_other_regime: usize,
    /// Censored spells removed, either because the outcome is missing or
    /// because duration controls were requested.
    pub n_censored_excluded: usize,
    pub n_used: usize,
}

/// Builds regression columns for one outcome, optionally restricted to a
/// regime. Censored spells are dropped when the outcome needs a
/// reemployment wage or when `exclude_censored` is set.
pub fn spell_data(
    records: &[SpellRecord],
    outcome: SpellOutcome,
    policy: &Policy,
    regime: Option<Regime>,
    exclude_censored: bool,
) -> Result<(RkdData, SpellDataReport)> {
    let mut report = SpellDataReport { n_records: records.len(), ..Default::default() };
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        if regime.is_some_and(|g| g != r.regime) {
            report.n_other_regime += 1;
            continue;
        }
        if r.censored && (exclude_censored || outcome.needs_reemployment()) {
            report.n_censored_excluded += 1;
            continue;
        }
        kept.push(r);
    }
    report.n_used = kept.len();

    let mut y = Vec::with_capacity(kept.len());
    let mut treatment = Vec::with_capacity(kept.len());
    for r in &kept {
        match outcome.value(r) {
            Some(v) if v.is_finite() => y.push(v),
            _ => return domain(format!("spell {}: outcome {} is missing", r.spell_id, outcome.as_str())),
        }
        treatment.push(policy.rule(r.regime).initial_benefit(r.net_ref_wage)?);
    }
    let col = |f: fn(&SpellRecord) -> f64| kept.iter().map(|r| f(r)).collect::<Vec<_>>();
    let fe = |f: fn(&SpellRecord) -> i64| kept.iter().map(|r| f(r)).collect::<Vec<_>>();
    let mut data = RkdData::new(col(|r| r.gross_ref_wage), y)
        .with_treatment(treatment)
        .with_regime(kept.iter().map(|r| r.regime == Regime::Post).collect())
        .with_control("age", col(|r| f64::from(r.age)))
        .with_control("male", col(|r| f64::from(u8::from(r.male))))
        .with_control("spouse", col(|r| f64::from(u8::from(r.spouse))))
        .with_control("children", col(|r| f64::from(r.children)))
        .with_control("tenure_months", col(|r| f64::from(r.tenure_months)))
        .with_control("contributions_36m", col(|r| f64::from(r.contributions_36m)))
        .with_control("severance_imputed", col(|r| r.severance_imputed))
        .with_fixed_effect("region_code", fe(|r| i64::from(r.region_code)))
        .with_fixed_effect("industry_code", fe(|r| i64::from(r.industry_code)))
        .with_fixed_effect("layoff_year", fe(|r| i64::from(r.year)))
        .with_fixed_effect("duration_group", fe(|r| duration_group(r.nonemployment_months)));
    data.censored_excluded = report.n_censored_excluded;
    Ok((data, report))
}
