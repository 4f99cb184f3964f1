//! The benefit rule: initial transfer as a kinked function of the reference
//! wage, within-spell decay, eligibility duration and the gross/net wage
//! conversion used to locate kinks in the observed (gross) running variable.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Which side of the 2006 benefit increase a spell falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Pre,
    Post,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Pre => "pre",
            Regime::Post => "post",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pre" => Ok(Regime::Pre),
            "post" => Ok(Regime::Post),
            other => Err(Error::Schema(format!("unknown regime `{other}`"))),
        }
    }
}

/// Decay bracket: from `from_month` (inclusive) onward the capped initial
/// benefit is multiplied by `fraction`, until the next bracket starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayStep {
    pub from_month: u32,
    pub fraction: f64,
}

/// A kinked transfer schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitRule {
    /// Replacement fraction applied to the net reference wage.
    pub beta: f64,
    /// Minimum monthly benefit.
    pub b_low: f64,
    /// Maximum monthly benefit.
    pub b_high: f64,
    /// Ordered decay brackets; the first must start at month 1.
    pub decay_steps: Vec<DecayStep>,
    pub regime: Regime,
}

fn default_decay() -> Vec<DecayStep> {
    vec![
        DecayStep { from_month: 1, fraction: 1.0 },
        DecayStep { from_month: 5, fraction: 0.85 },
        DecayStep { from_month: 9, fraction: 0.70 },
    ]
}

impl BenefitRule {
    /// Schedule in force before March 2006 (150 / 300 ARS).
    pub fn pre_reform() -> Self {
        BenefitRule {
            beta: 0.5,
            b_low: 150.0,
            b_high: 300.0,
            decay_steps: default_decay(),
            regime: Regime::Pre,
        }
    }

    /// Schedule in force from March 2006 (250 / 400 ARS).
    pub fn post_reform() -> Self {
        BenefitRule {
            beta: 0.5,
            b_low: 250.0,
            b_high: 400.0,
            decay_steps: default_decay(),
            regime: Regime::Post,
        }
    }

    pub fn for_regime(regime: Regime) -> Self {
        match regime {
            Regime::Pre => Self::pre_reform(),
            Regime::Post => Self::post_reform(),
        }
    }

    /// Same rule without within-spell decay.
    pub fn without_decay(mut self) -> Self {
        self.decay_steps = vec![DecayStep { from_month: 1, fraction: 1.0 }];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return domain(format!("beta must be in (0, 1], got {}", self.beta));
        }
        if !(self.b_low > 0.0 && self.b_low < self.b_high) {
            return domain(format!(
                "need 0 < b_low < b_high, got {} and {}",
                self.b_low, self.b_high
            ));
        }
        match self.decay_steps.first() {
            Some(s) if s.from_month == 1 => {}
            _ => return domain("first decay bracket must start at month 1"),
        }
        for pair in self.decay_steps.windows(2) {
            if pair[1].from_month <= pair[0].from_month {
                return domain("decay brackets must have increasing start months");
            }
            if pair[1].fraction > pair[0].fraction {
                return domain("decay fractions must be non-increasing");
            }
        }
        if self
            .decay_steps
            .iter()
            .any(|s| !(s.fraction > 0.0 && s.fraction <= 1.0))
        {
            return domain("decay fractions must lie in (0, 1]");
        }
        Ok(())
    }

    /// Decay fraction for a month of the spell (1-based).
    pub fn decay_fraction(&self, month: u32) -> f64 {
        self.decay_steps
            .iter()
            .take_while(|s| s.from_month <= month)
            .last()
            .map_or(1.0, |s| s.fraction)
    }

    /// `min{b_high, max{b_low, beta * w}}`.
    pub fn initial_benefit(&self, net_ref_wage: f64) -> Result<f64> {
        if !(net_ref_wage > 0.0) {
            return domain(format!("reference wage must be positive, got {net_ref_wage}"));
        }
        Ok(self.b_high.min(self.b_low.max(self.beta * net_ref_wage)))
    }

    /// The capped (not floored) level `min{b_high, beta * w}` that decays.
    pub fn capped_level(&self, net_ref_wage: f64) -> Result<f64> {
        if !(net_ref_wage > 0.0) {
            return domain(format!("reference wage must be positive, got {net_ref_wage}"));
        }
        Ok(self.b_high.min(self.beta * net_ref_wage))
    }

    /// Benefit paid in `month` (1-based) of the spell: `max{b_low, rho_d * level}`.
    pub fn monthly_benefit(&self, net_ref_wage: f64, month: u32) -> Result<f64> {
        if month < 1 {
            return domain("month_in_spell must be at least 1");
        }
        let level = self.capped_level(net_ref_wage)?;
        Ok(self.benefit_from_level(level, month))
    }

    /// Monthly benefit for an arbitrary capped level; used when perturbing
    /// the benefit level in the structural model.
    pub fn benefit_from_level(&self, level: f64, month: u32) -> f64 {
        self.b_low.max(self.decay_fraction(month) * level)
    }

    /// Sum of scheduled benefits over the first `months` months.
    pub fn total_paid(&self, net_ref_wage: f64, months: u32) -> Result<f64> {
        let level = self.capped_level(net_ref_wage)?;
        Ok((1..=months).map(|d| self.benefit_from_level(level, d)).sum())
    }

    /// Slope of the initial benefit in net-wage space just above and below
    /// the top kink.
    pub fn top_kink_slope_change(&self) -> f64 {
        -self.beta
    }

    pub fn kink_locations(&self, conv: &WageConversion) -> KinkLocations {
        let net_low = self.b_low / self.beta;
        let net_high = self.b_high / self.beta;
        KinkLocations {
            net_low,
            net_high,
            gross_low: conv.net_to_gross(net_low),
            gross_high: conv.net_to_gross(net_high),
        }
    }
}

/// Kink positions of a rule in net and gross reference-wage space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinkLocations {
    pub net_low: f64,
    pub net_high: f64,
    pub gross_low: f64,
    pub gross_high: f64,
}

/// Which of the two kinks an estimation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KinkSide {
    Low,
    High,
}

impl KinkLocations {
    pub fn gross(&self, side: KinkSide) -> f64 {
        match side {
            KinkSide::Low => self.gross_low,
            KinkSide::High => self.gross_high,
        }
    }
}

/// Mapping between gross and net reference wages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WageConversion {
    pub net_over_gross: f64,
}

/// Net/gross ratio that reconciles the published gross kinks with the
/// statutory net schedule.
pub const DEFAULT_NET_OVER_GROSS: f64 = 0.831;

impl Default for WageConversion {
    fn default() -> Self {
        WageConversion { net_over_gross: DEFAULT_NET_OVER_GROSS }
    }
}

impl WageConversion {
    pub fn new(net_over_gross: f64) -> Result<Self> {
        if !(net_over_gross > 0.0 && net_over_gross <= 1.0) {
            return domain(format!("net_over_gross must be in (0, 1], got {net_over_gross}"));
        }
        Ok(WageConversion { net_over_gross })
    }

    pub fn gross_to_net(&self, gross: f64) -> f64 {
        gross * self.net_over_gross
    }

    pub fn net_to_gross(&self, net: f64) -> f64 {
        net / self.net_over_gross
    }
}

/// Least-squares ratio through the origin of net kinks on gross kinks.
pub fn fit_net_over_gross(net_kinks: &[f64], gross_kinks: &[f64]) -> Result<f64> {
    if net_kinks.is_empty() || net_kinks.len() != gross_kinks.len() {
        return Err(Error::Mismatch(format!(
            "need equal-length non-empty kink lists, got {} and {}",
            net_kinks.len(),
            gross_kinks.len()
        )));
    }
    if net_kinks.iter().chain(gross_kinks).any(|&v| !(v > 0.0)) {
        return domain("kink values must be positive");
    }
    let sxy: f64 = net_kinks.iter().zip(gross_kinks).map(|(n, g)| n * g).sum();
    let sxx: f64 = gross_kinks.iter().map(|g| g * g).sum();
    Ok(sxy / sxx)
}

/// One bracket of the eligibility table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EligibilityRow {
    pub min_contributions: u32,
    pub max_contributions: u32,
    pub months_under_45: u32,
    pub months_45_plus: u32,
}

/// Potential UI duration by contribution history and age.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EligibilityTable {
    pub rows: Vec<EligibilityRow>,
    /// Minimum contributions required before the reform.
    pub pre_reform_min_contributions: u32,
}

impl Default for EligibilityTable {
    fn default() -> Self {
        let row = |min, max, young, old| EligibilityRow {
            min_contributions: min,
            max_contributions: max,
            months_under_45: young,
            months_45_plus: old,
        };
        EligibilityTable {
            rows: vec![
                row(6, 11, 2, 8),
                row(12, 23, 4, 10),
                row(24, 35, 8, 14),
                row(36, 36, 12, 18),
            ],
            pre_reform_min_contributions: 12,
        }
    }
}

impl EligibilityTable {
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return domain("eligibility table has no rows");
        }
        for r in &self.rows {
            if r.min_contributions > r.max_contributions {
                return domain("eligibility row has min > max contributions");
            }
            if r.months_under_45 == 0 || r.months_45_plus == 0 {
                return domain("potential durations must be positive");
            }
        }
        for pair in self.rows.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.min_contributions != a.max_contributions + 1 {
                return domain("eligibility rows must partition contributions without gaps or overlaps");
            }
            if b.months_under_45 < a.months_under_45 || b.months_45_plus < a.months_45_plus {
                return domain("durations must be non-decreasing in contributions");
            }
        }
        Ok(())
    }

    /// Potential duration in months, or `None` if ineligible.
    pub fn potential_duration(
        &self,
        regime: Regime,
        age: f64,
        contributions_36m: u32,
    ) -> Result<Option<u32>> {
        if !(age > 0.0) {
            return domain(format!("age must be positive, got {age}"));
        }
        if contributions_36m > 36 {
            return domain(format!("contributions_36m must be at most 36, got {contributions_36m}"));
        }
        if regime == Regime::Pre && contributions_36m < self.pre_reform_min_contributions {
            return Ok(None);
        }
        Ok(self
            .rows
            .iter()
            .find(|r| (r.min_contributions..=r.max_contributions).contains(&contributions_36m))
            .map(|r| if age >= 45.0 { r.months_45_plus } else { r.months_under_45 }))
    }
}

/// Both regimes' benefit rules together with the eligibility table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub pre: BenefitRule,
    pub post: BenefitRule,
    pub eligibility: EligibilityTable,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            pre: BenefitRule::pre_reform(),
            post: BenefitRule::post_reform(),
            eligibility: EligibilityTable::default(),
        }
    }
}

impl Policy {
    pub fn rule(&self, regime: Regime) -> &BenefitRule {
        match regime {
            Regime::Pre => &self.pre,
            Regime::Post => &self.post,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pre.validate()?;
        self.post.validate()?;
        if self.pre.regime != Regime::Pre || self.post.regime != Regime::Post {
            return domain("policy rules carry mismatched regime labels");
        }
        self.eligibility.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn initial_benefit_segments() {
        let post = BenefitRule::post_reform();
        assert_eq!(post.initial_benefit(700.0).unwrap(), 350.0);
        assert_eq!(post.initial_benefit(1000.0).unwrap(), 400.0);
        assert_eq!(post.initial_benefit(300.0).unwrap(), 250.0);
        let pre = BenefitRule::pre_reform();
        assert_eq!(pre.initial_benefit(600.0).unwrap(), 300.0);
        assert!(matches!(post.initial_benefit(0.0), Err(Error::Domain(_))));
        assert!(post.initial_benefit(-5.0).is_err());
    }

    #[test]
    fn monthly_benefit_decays_to_floor() {
        let post = BenefitRule::post_reform();
        assert_eq!(post.monthly_benefit(700.0, 3).unwrap(), 350.0);
        assert_eq!(post.monthly_benefit(700.0, 6).unwrap(), 297.5);
        assert_eq!(post.monthly_benefit(700.0, 10).unwrap(), 250.0);
        assert!(post.monthly_benefit(700.0, 0).is_err());
        assert_eq!(post.total_paid(700.0, 12).unwrap(), 3590.0);
    }

    #[test]
    fn eligibility_table_cells() {
        let t = EligibilityTable::default();
        t.validate().unwrap();
        assert_eq!(t.potential_duration(Regime::Post, 40.0, 30).unwrap(), Some(8));
        assert_eq!(t.potential_duration(Regime::Post, 50.0, 30).unwrap(), Some(14));
        assert_eq!(t.potential_duration(Regime::Post, 30.0, 8).unwrap(), Some(2));
        assert_eq!(t.potential_duration(Regime::Pre, 30.0, 8).unwrap(), None);
        assert_eq!(t.potential_duration(Regime::Post, 30.0, 3).unwrap(), None);
        assert!(t.potential_duration(Regime::Post, 30.0, 37).is_err());
        assert!(t.potential_duration(Regime::Post, 0.0, 20).is_err());
        for r in &t.rows {
            assert!(r.months_45_plus > r.months_under_45);
        }
    }

    #[test]
    fn eligibility_validation_catches_gaps() {
        let mut t = EligibilityTable::default();
        t.rows[1].min_contributions = 13;
        assert!(t.validate().is_err());
    }

    #[test]
    fn kinks_in_net_and_gross_space() {
        let post = BenefitRule::post_reform();
        let k = post.kink_locations(&WageConversion::new(1.0).unwrap());
        assert_eq!((k.net_low, k.net_high), (500.0, 800.0));
        let conv = WageConversion::default();
        let k = post.kink_locations(&conv);
        assert!(close(k.gross_low, 602.0, 1.0) && close(k.gross_high, 963.0, 1.0));
        let k = BenefitRule::pre_reform().kink_locations(&conv);
        assert!(close(k.gross_low, 361.0, 1.0) && close(k.gross_high, 722.0, 1.0));
    }

    #[test]
    fn ratio_fit_trivial_cases() {
        assert_eq!(fit_net_over_gross(&[500.0], &[500.0]).unwrap(), 1.0);
        assert_eq!(fit_net_over_gross(&[400.0], &[800.0]).unwrap(), 0.5);
        assert!(fit_net_over_gross(&[], &[]).is_err());
        assert!(fit_net_over_gross(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn rule_validation() {
        BenefitRule::post_reform().validate().unwrap();
        let mut r = BenefitRule::post_reform();
        r.decay_steps[2].fraction = 0.9;
        assert!(r.validate().is_err());
        let mut r = BenefitRule::post_reform();
        r.b_low = 500.0;
        assert!(r.validate().is_err());
        assert!(WageConversion::new(1.2).is_err());
    }
}
