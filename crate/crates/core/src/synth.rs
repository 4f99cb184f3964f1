//! Synthetic administrative spell data generated from the search model,
//! together with the exact population quantities that kink estimators run on
//! such data should recover.
//!
//! Each worker draws a layoff date, a gross reference wage and covariates,
//! receives the scheduled benefit path and searches month by month. Offers
//! arrive as a Poisson process within each month; the first offer at or above
//! the reservation wage of the current state (eligible while the month is
//! within potential duration, exhausted afterwards) ends the spell.
//!
//! All randomness for spell `i` comes from a ChaCha8 stream keyed by
//! `(seed, i)`, so any partition of spell ids reproduces the same records.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, Error, Result};
use crate::numerics::{norm_cdf, norm_pdf, GaussLegendre};
use crate::schedule::{BenefitRule, Policy, Regime, WageConversion, DEFAULT_NET_OVER_GROSS};
use crate::search_model::{
    accepted_wage_moments, expected_total_at_level, ModelParams, Solver,
};
use crate::welfare::{calibrate_formula, WelfareInputs, WelfareResult};

/// Calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return domain(format!("month must be in 1..=12, got {month}"));
        }
        Ok(YearMonth { year, month })
    }

    fn index(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    fn from_index(i: i64) -> Self {
        YearMonth { year: i.div_euclid(12) as i32, month: i.rem_euclid(12) as u32 + 1 }
    }
}

/// Gross reference wages: lognormal truncated to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefWageDist {
    pub mu: f64,
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for RefWageDist {
    fn default() -> Self {
        RefWageDist { mu: 963f64.ln(), sigma: 0.6, min: 75.0, max: 4800.0 }
    }
}

impl RefWageDist {
    fn z_range(&self) -> (f64, f64) {
        ((self.min.ln() - self.mu) / self.sigma, (self.max.ln() - self.mu) / self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateDists {
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_min: u32,
    pub age_max: u32,
    /// Years of mean age per unit of `log gross - ref_wage.mu`; a smooth
    /// dependence on the running variable.
    pub age_wage_slope: f64,
    pub male_prob: f64,
    pub spouse_prob: f64,
    pub children_mean: f64,
    pub tenure_mean_months: f64,
    /// Contributions are `contributions_min + Binomial(trials, prob)`.
    pub contributions_min: u32,
    pub contributions_trials: u32,
    pub contributions_prob: f64,
    pub n_regions: u32,
    pub n_industries: u32,
}

impl Default for CovariateDists {
    fn default() -> Self {
        CovariateDists {
            age_mean: 35.4,
            age_sd: 10.5,
            age_min: 18,
            age_max: 64,
            age_wage_slope: 0.0,
            male_prob: 0.69,
            spouse_prob: 0.51,
            children_mean: 0.77,
            tenure_mean_months: 39.0,
            contributions_min: 12,
            contributions_trials: 24,
            contributions_prob: 0.67,
            n_regions: 6,
            n_industries: 10,
        }
    }
}

/// Per-worker offsets: `λ_i = λ·exp(lambda_log_sd·z₁)`, `μ_i = μ + mu_sd·z₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Heterogeneity {
    pub lambda_log_sd: f64,
    pub mu_sd: f64,
}

impl Default for Heterogeneity {
    fn default() -> Self {
        Heterogeneity { lambda_log_sd: 0.2, mu_sd: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeAssignment {
    /// Post regime for layoffs from the reform month onward.
    ByDate,
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_workers: u64,
    pub seed: u64,
    pub ref_wage: RefWageDist,
    pub covariates: CovariateDists,
    pub net_over_gross: f64,
    /// Log-scale noise on the net/gross conversion; zero keeps it exact.
    pub net_noise_sd: f64,
    pub horizon_months: u32,
    pub heterogeneity: Option<Heterogeneity>,
    pub regime: RegimeAssignment,
    pub first_layoff: YearMonth,
    pub last_layoff: YearMonth,
    pub reform: YearMonth,
    /// Adds `slope·(gross - high kink)^+` years to mean age: a covariate with
    /// a kink at the kink, which violates the design on purpose.
    pub adversarial_age_kink: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_workers: 10_000,
            seed: 20_060_401,
            ref_wage: RefWageDist::default(),
            covariates: CovariateDists::default(),
            net_over_gross: DEFAULT_NET_OVER_GROSS,
            net_noise_sd: 0.0,
            horizon_months: 48,
            heterogeneity: None,
            regime: RegimeAssignment::ByDate,
            first_layoff: YearMonth { year: 2005, month: 1 },
            last_layoff: YearMonth { year: 2007, month: 12 },
            reform: YearMonth { year: 2006, month: 4 },
            adversarial_age_kink: None,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("{name} must be a probability, got {p}"));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_workers == 0 {
            return domain("n_workers must be positive");
        }
        if self.horizon_months == 0 {
            return domain("horizon_months must be at least 1");
        }
        let w = &self.ref_wage;
        if !(w.sigma > 0.0) || !w.mu.is_finite() || !(w.min > 0.0 && w.min < w.max) {
            return domain("reference wage distribution needs sigma > 0 and 0 < min < max");
        }
        let (z_lo, z_hi) = w.z_range();
        if norm_cdf(z_hi) - norm_cdf(z_lo) < 1e-6 {
            return domain("reference wage truncation leaves almost no mass");
        }
        WageConversion::new(self.net_over_gross)?;
        if !(self.net_noise_sd >= 0.0) {
            return domain("net_noise_sd must be non-negative");
        }
        let c = &self.covariates;
        if !(c.age_sd > 0.0) || c.age_min == 0 || c.age_min > c.age_max {
            return domain("age distribution needs sd > 0 and 0 < age_min <= age_max");
        }
        check_prob("male_prob", c.male_prob)?;
        check_prob("spouse_prob", c.spouse_prob)?;
        check_prob("contributions_prob", c.contributions_prob)?;
        if !(c.children_mean >= 0.0) || !(c.tenure_mean_months > 0.0) {
            return domain("children_mean must be >= 0 and tenure_mean_months > 0");
        }
        if c.contributions_min + c.contributions_trials > 36 {
            return domain("contributions cannot exceed 36 months");
        }
        if c.n_regions == 0 || c.n_industries == 0 {
            return domain("need at least one region and one industry");
        }
        if let Some(h) = self.heterogeneity {
            if !(h.lambda_log_sd >= 0.0 && h.mu_sd >= 0.0) {
                return domain("heterogeneity scales must be non-negative");
            }
        }
        if self.first_layoff > self.last_layoff {
            return domain("first_layoff is after last_layoff");
        }
        YearMonth::new(self.first_layoff.year, self.first_layoff.month)?;
        YearMonth::new(self.last_layoff.year, self.last_layoff.month)?;
        YearMonth::new(self.reform.year, self.reform.month)?;
        Ok(())
    }

    pub fn conversion(&self) -> WageConversion {
        WageConversion { net_over_gross: self.net_over_gross }
    }

    fn regime_at(&self, date: YearMonth) -> Regime {
        match self.regime {
            RegimeAssignment::Pre => Regime::Pre,
            RegimeAssignment::Post => Regime::Post,
            RegimeAssignment::ByDate if date >= self.reform => Regime::Post,
            RegimeAssignment::ByDate => Regime::Pre,
        }
    }

    /// Probability of each regime among layoffs.
    fn regime_shares(&self) -> Vec<(Regime, f64)> {
        let (a, b) = (self.first_layoff.index(), self.last_layoff.index());
        let total = (b - a + 1) as f64;
        let post = (a..=b)
            .filter(|&i| self.regime_at(YearMonth::from_index(i)) == Regime::Post)
            .count() as f64;
        [(Regime::Pre, 1.0 - post / total), (Regime::Post, post / total)]
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .collect()
    }

    fn age_mean_at(&self, policy: &Policy, regime: Regime, gross: f64) -> f64 {
        let c = &self.covariates;
        let mut m = c.age_mean + c.age_wage_slope * (gross.ln() - self.ref_wage.mu);
        if let Some(slope) = self.adversarial_age_kink {
            let k = policy.rule(regime).kink_locations(&self.conversion()).gross_high;
            m += slope * (gross - k).max(0.0);
        }
        m
    }
}

/// One unemployment spell, in dataset column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpellRecord {
    pub spell_id: u64,
    pub regime: Regime,
    pub year: i32,
    pub month: u32,
    pub gross_ref_wage: f64,
    pub net_ref_wage: f64,
    pub age: u32,
    #[serde(with = "zero_one")]
    pub male: bool,
    #[serde(with = "zero_one")]
    pub spouse: bool,
    pub children: u32,
    pub tenure_months: u32,
    pub contributions_36m: u32,
    pub region_code: u32,
    pub industry_code: u32,
    pub eligibility_months: u32,
    pub ui_months_collected: u32,
    pub total_ui_paid: f64,
    pub nonemployment_months: u32,
    #[serde(with = "zero_one")]
    pub censored: bool,
    pub reemployment_wage: Option<f64>,
    pub severance_imputed: f64,
}

/// Dataset header, in order.
pub const COLUMNS: [&str; 21] = [
    "spell_id",
    "regime",
    "year",
    "month",
    "gross_ref_wage",
    "net_ref_wage",
    "age",
    "male",
    "spouse",
    "children",
    "tenure_months",
    "contributions_36m",
    "region_code",
    "industry_code",
    "eligibility_months",
    "ui_months_collected",
    "total_ui_paid",
    "nonemployment_months",
    "censored",
    "reemployment_wage",
    "severance_imputed",
];

mod zero_one {
    use super::*;

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(serde::de::Error::custom(format!("expected 0 or 1, got {v}"))),
        }
    }
}

impl SpellRecord {
    /// Record-level invariants, including exact reconstruction of the
    /// amount paid from the schedule.
    pub fn validate(&self, policy: &Policy) -> Result<()> {
        let fail = |m: String| Err(Error::Schema(format!("spell {}: {m}", self.spell_id)));
        if self.ui_months_collected > self.eligibility_months {
            return fail("collected more months than eligible".into());
        }
        if !self.censored && self.ui_months_collected > self.nonemployment_months {
            return fail("collected months exceed nonemployment".into());
        }
        if self.censored == self.reemployment_wage.is_some() {
            return fail("reemployment wage must be missing exactly for censored spells".into());
        }
        let paid = policy.rule(self.regime).total_paid(self.net_ref_wage, self.ui_months_collected)?;
        if paid != self.total_ui_paid {
            return fail(format!("total_ui_paid {} but schedule gives {paid}", self.total_ui_paid));
        }
        Ok(())
    }
}

/// Solutions shared across workers with identical model inputs.
struct ModelCache {
    solver: Solver,
    solved: HashMap<(u32, u64, u64, u64), (f64, f64)>,
}

impl ModelCache {
    fn new() -> Self {
        ModelCache { solver: Solver::default(), solved: HashMap::new() }
    }

    /// `(w*_eligible, w*_exhausted)` for benefit `p.b` and a potential
    /// duration, with eligibility lost at rate `1/potential` (rate 1 for
    /// workers who are never eligible).
    fn reservation_wages(&mut self, p: &ModelParams, potential: u32) -> Result<(f64, f64)> {
        let key = (potential, p.b.to_bits(), p.lambda_offer.to_bits(), p.offers.mu.to_bits());
        if let Some(&w) = self.solved.get(&key) {
            return Ok(w);
        }
        let q = ModelParams { gamma: 1.0 / f64::from(potential.max(1)), ..*p };
        let s = self.solver.solve(&q).map_err(|e| with_params(e, &q))?;
        let w = (s.w_star_eligible, s.w_star_exhausted);
        self.solved.insert(key, w);
        Ok(w)
    }
}

fn with_params(e: Error, p: &ModelParams) -> Error {
    match e {
        Error::NonConvergence { iterations, residual, context } => Error::NonConvergence {
            iterations,
            residual,
            context: format!("{context} at {p:?}"),
        },
        Error::Domain(m) => Error::Domain(format!("{m} at {p:?}")),
        other => other,
    }
}

fn worker_params(base: &ModelParams, b: f64, z_lambda: f64, z_mu: f64, het: Option<Heterogeneity>) -> ModelParams {
    let (lambda_offer, mu) = match het {
        Some(h) => (
            base.lambda_offer * (h.lambda_log_sd * z_lambda).exp(),
            base.offers.mu + h.mu_sd * z_mu,
        ),
        None => (base.lambda_offer, base.offers.mu),
    };
    let mut p = ModelParams { b, gamma: 0.0, lambda_offer, ..*base };
    p.offers.mu = mu;
    p
}

/// Simulates spells `0..cfg.n_workers`.
pub fn simulate_population(cfg: &SimConfig, policy: &Policy, base: &ModelParams) -> Result<Vec<SpellRecord>> {
    simulate_range(cfg, policy, base, 0..cfg.n_workers)
}

/// Simulates the given spell ids; records depend only on `(cfg, id)`.
pub fn simulate_range(
    cfg: &SimConfig,
    policy: &Policy,
    base: &ModelParams,
    ids: Range<u64>,
) -> Result<Vec<SpellRecord>> {
    cfg.validate()?;
    policy.validate()?;
    base.validate()?;
    let mut cache = ModelCache::new();
    ids.map(|id| simulate_spell(cfg, policy, base, id, &mut cache)).collect()
}

fn simulate_spell(
    cfg: &SimConfig,
    policy: &Policy,
    base: &ModelParams,
    spell_id: u64,
    cache: &mut ModelCache,
) -> Result<SpellRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(spell_id);
    let c = &cfg.covariates;

    let (first, last) = (cfg.first_layoff.index(), cfg.last_layoff.index());
    let date = YearMonth::from_index(rng.random_range(first..=last));
    let regime = cfg.regime_at(date);
    let rule = policy.rule(regime);

    let w = &cfg.ref_wage;
    let gross = loop {
        let z: f64 = rng.sample(StandardNormal);
        let g = (w.mu + w.sigma * z).exp();
        if (w.min..=w.max).contains(&g) {
            break g;
        }
    };
    let noise: f64 = rng.sample(StandardNormal);
    let net = gross * cfg.net_over_gross * (cfg.net_noise_sd * noise).exp();

    let age_z: f64 = rng.sample(StandardNormal);
    let age_raw = cfg.age_mean_at(policy, regime, gross) + c.age_sd * age_z;
    let age = age_raw.round().clamp(f64::from(c.age_min), f64::from(c.age_max)) as u32;
    let male = rng.random_bool(c.male_prob);
    let spouse = rng.random_bool(c.spouse_prob);
    let children = if c.children_mean > 0.0 {
        Poisson::new(c.children_mean).expect("validated mean").sample(&mut rng) as u32
    } else {
        0
    };
    let tenure_draw: f64 = Exp::new(1.0 / c.tenure_mean_months).expect("validated mean").sample(&mut rng);
    let tenure_months = (tenure_draw.round() as u32).max(1);
    let extra = Binomial::new(u64::from(c.contributions_trials), c.contributions_prob)
        .expect("validated probability")
        .sample(&mut rng) as u32;
    let contributions_36m = c.contributions_min + extra;
    let region_code = rng.random_range(0..c.n_regions);
    let industry_code = rng.random_range(0..c.n_industries);
    let z_lambda: f64 = rng.sample(StandardNormal);
    let z_mu: f64 = rng.sample(StandardNormal);

    let potential = policy
        .eligibility
        .potential_duration(regime, f64::from(age), contributions_36m)?
        .unwrap_or(0);
    let b = rule.initial_benefit(net)?;
    let p = worker_params(base, b.max(base.b_a), z_lambda, z_mu, cfg.heterogeneity);
    let (w_eligible, w_exhausted) = cache.reservation_wages(&p, potential)?;

    let horizon = cfg.horizon_months;
    let gap = (p.lambda_offer > 0.0).then(|| Exp::new(p.lambda_offer).expect("positive rate"));
    let mut exit = None;
    'months: for d in 1..=horizon {
        let Some(gap) = &gap else { break };
        let w_res = if d <= potential { w_eligible } else { w_exhausted };
        let mut t = gap.sample(&mut rng);
        while t <= 1.0 {
            let z: f64 = rng.sample(StandardNormal);
            let offer = (p.offers.mu + p.offers.sigma * z).exp();
            if offer >= w_res {
                exit = Some((d, offer));
                break 'months;
            }
            t += gap.sample(&mut rng);
        }
    }
    let (nonemployment_months, reemployment_wage) = match exit {
        Some((d, wage)) => (d, Some(wage)),
        None => (horizon, None),
    };
    let ui_months_collected = nonemployment_months.min(potential);
    let total_ui_paid = rule.total_paid(net, ui_months_collected)?;
    let severance_years = (f64::from(tenure_months) / 12.0).round().max(1.0);

    Ok(SpellRecord {
        spell_id,
        regime,
        year: date.year,
        month: date.month,
        gross_ref_wage: gross,
        net_ref_wage: net,
        age,
        male,
        spouse,
        children,
        tenure_months,
        contributions_36m,
        region_code,
        industry_code,
        eligibility_months: potential,
        ui_months_collected,
        total_ui_paid,
        nonemployment_months,
        censored: exit.is_none(),
        reemployment_wage,
        severance_imputed: severance_years * gross,
    })
}

/// Outcomes with an exact population counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KinkOutcome {
    /// Mean log reemployment wage among spells reemployed within the horizon.
    MeanLogWage,
    TotalUiPaid,
}

/// A worker type: potential duration and search primitives, with its
/// population share.
#[derive(Debug, Clone, Copy)]
struct WorkerType {
    weight: f64,
    potential: u32,
    z_lambda: f64,
    z_mu: f64,
}

/// Exact expectations for one worker type at a benefit level.
#[derive(Debug, Clone, Copy, Default)]
struct TypeOutcome {
    ui_paid: f64,
    /// `∂ui_paid/∂level` holding survival fixed.
    mechanical: f64,
    /// Probability of reemployment within the horizon, and the mean log
    /// accepted wage weighted by state of exit.
    reemployed: f64,
    log_wage_mass: f64,
}

fn binomial_pmf(n: u32, p: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; n as usize + 1];
    if p <= 0.0 {
        pmf[0] = 1.0;
        return pmf;
    }
    if p >= 1.0 {
        pmf[n as usize] = 1.0;
        return pmf;
    }
    let lq = (1.0 - p).ln();
    let odds = p / (1.0 - p);
    pmf[0] = (f64::from(n) * lq).exp();
    for k in 1..=n as usize {
        pmf[k] = pmf[k - 1] * odds * f64::from(n - k as u32 + 1) / k as f64;
    }
    pmf
}

/// Nodes and weights for `E[f(Z)]`, `Z ~ N(0, 1)`.
fn normal_nodes(n: usize) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> =
        GaussLegendre::new(n).points(-8.0, 8.0).map(|(z, w)| (z, w * norm_pdf(z))).collect();
    let total: f64 = pts.iter().map(|p| p.1).sum();
    pts.into_iter().map(|(z, w)| (z, w / total)).collect()
}

fn worker_types(cfg: &SimConfig, policy: &Policy, regime: Regime, gross: f64) -> Result<Vec<WorkerType>> {
    let c = &cfg.covariates;
    let mean = cfg.age_mean_at(policy, regime, gross);
    let cdf = |a: f64| norm_cdf((a - mean) / c.age_sd);
    // rounding then clamping: P(age >= 45)
    let p_old = if c.age_max < 45 {
        0.0
    } else if c.age_min >= 45 {
        1.0
    } else {
        1.0 - cdf(44.5)
    };
    let contrib = binomial_pmf(c.contributions_trials, c.contributions_prob);
    let mut by_potential: BTreeMap<u32, f64> = BTreeMap::new();
    for (extra, pc) in contrib.iter().enumerate() {
        let n = c.contributions_min + extra as u32;
        for (age, pa) in [(44.0, 1.0 - p_old), (45.0, p_old)] {
            let w = pc * pa;
            if w > 0.0 {
                let pot = policy.eligibility.potential_duration(regime, age, n)?.unwrap_or(0);
                *by_potential.entry(pot).or_default() += w;
            }
        }
    }
    let het_nodes = match cfg.heterogeneity {
        Some(h) if h.lambda_log_sd > 0.0 || h.mu_sd > 0.0 => normal_nodes(24),
        _ => vec![(0.0, 1.0)],
    };
    let mut types = Vec::new();
    for (&potential, &pw) in &by_potential {
        for &(z_lambda, wl) in &het_nodes {
            for &(z_mu, wm) in &het_nodes {
                types.push(WorkerType { weight: pw * wl * wm, potential, z_lambda, z_mu });
            }
        }
    }
    Ok(types)
}

fn type_outcome(
    cache: &mut ModelCache,
    cfg: &SimConfig,
    base: &ModelParams,
    rule: &BenefitRule,
    level: f64,
    t: &WorkerType,
) -> Result<TypeOutcome> {
    let b = rule.b_low.max(level).max(base.b_a);
    let p = worker_params(base, b, t.z_lambda, t.z_mu, cfg.heterogeneity);
    let (w_e, w_x) = cache.reservation_wages(&p, t.potential)?;
    let horizon = cfg.horizon_months;
    let months = t.potential.min(horizon);
    let rate_e = p.lambda_offer * p.offers.survival(w_e);
    let rate_x = p.lambda_offer * p.offers.survival(w_x);

    let (ui_paid, mechanical) = if months > 0 {
        let paid = expected_total_at_level(rule, level, rate_e, months)?;
        let mech = (1..=months)
            .filter(|&d| rule.decay_fraction(d) * level > rule.b_low)
            .map(|d| rule.decay_fraction(d) * (-rate_e * f64::from(d - 1)).exp())
            .sum();
        (paid, mech)
    } else {
        (0.0, 0.0)
    };
    let stay_e = (-rate_e * f64::from(months)).exp();
    let p_e = 1.0 - stay_e;
    let p_x = stay_e * (1.0 - (-rate_x * f64::from(horizon - months)).exp());
    let mean_log = |w: f64, mass: f64| -> Result<f64> {
        if mass > 0.0 {
            Ok(accepted_wage_moments(&p.offers, w)?.mean_log)
        } else {
            Ok(0.0)
        }
    };
    let log_wage_mass = p_e * mean_log(w_e, p_e)? + p_x * mean_log(w_x, p_x)?;
    Ok(TypeOutcome { ui_paid, mechanical, reemployed: p_e + p_x, log_wage_mass })
}

/// Population aggregate over worker types at one benefit level.
fn aggregate(
    cache: &mut ModelCache,
    cfg: &SimConfig,
    base: &ModelParams,
    rule: &BenefitRule,
    level: f64,
    types: &[WorkerType],
) -> Result<TypeOutcome> {
    let mut acc = TypeOutcome::default();
    for t in types {
        let o = type_outcome(cache, cfg, base, rule, level, t)?;
        acc.ui_paid += t.weight * o.ui_paid;
        acc.mechanical += t.weight * o.mechanical;
        acc.reemployed += t.weight * o.reemployed;
        acc.log_wage_mass += t.weight * o.log_wage_mass;
    }
    Ok(acc)
}

fn outcome_value(o: &TypeOutcome, outcome: KinkOutcome) -> Result<f64> {
    match outcome {
        KinkOutcome::TotalUiPaid => Ok(o.ui_paid),
        KinkOutcome::MeanLogWage if o.reemployed > 0.0 => Ok(o.log_wage_mass / o.reemployed),
        KinkOutcome::MeanLogWage => domain("nobody is reemployed within the horizon"),
    }
}

/// Population derivative of an outcome with respect to the benefit level at
/// the high kink of a regime, with the reference wage held at the kink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinkEffect {
    pub outcome: KinkOutcome,
    pub regime: Regime,
    pub gross_kink: f64,
    pub b_at_kink: f64,
    /// Expected outcome at the kink.
    pub level: f64,
    /// `dE[Y]/db`.
    pub effect: f64,
    /// For total UI paid: the response holding survival fixed.
    pub mechanical: Option<f64>,
    pub behavioral: Option<f64>,
}

/// The estimand of a kink design on data from [`simulate_population`] at the
/// high kink of `regime`. Central differences with a step of 1% of `b`.
pub fn ground_truth_kink_effect(
    cfg: &SimConfig,
    policy: &Policy,
    base: &ModelParams,
    regime: Regime,
    outcome: KinkOutcome,
) -> Result<KinkEffect> {
    cfg.validate()?;
    policy.validate()?;
    let rule = policy.rule(regime);
    let gross_kink = rule.kink_locations(&cfg.conversion()).gross_high;
    let types = worker_types(cfg, policy, regime, gross_kink)?;
    let mut cache = ModelCache::new();
    let b = rule.b_high;
    let step = 0.01 * b;
    let at = |cache: &mut ModelCache, level: f64| aggregate(cache, cfg, base, rule, level, &types);
    let center = at(&mut cache, b)?;
    let up = outcome_value(&at(&mut cache, b + step)?, outcome)?;
    let down = outcome_value(&at(&mut cache, b - step)?, outcome)?;
    let effect = (up - down) / (2.0 * step);
    let (mechanical, behavioral) = match outcome {
        KinkOutcome::TotalUiPaid => (Some(center.mechanical), Some(effect - center.mechanical)),
        KinkOutcome::MeanLogWage => (None, None),
    };
    Ok(KinkEffect {
        outcome,
        regime,
        gross_kink,
        b_at_kink: b,
        level: outcome_value(&center, outcome)?,
        effect,
        mechanical,
        behavioral,
    })
}

/// Population mean of an outcome over the reference-wage distribution and
/// regimes, as sampled by [`simulate_population`].
pub fn expected_population_mean(
    cfg: &SimConfig,
    policy: &Policy,
    base: &ModelParams,
    outcome: KinkOutcome,
) -> Result<f64> {
    cfg.validate()?;
    policy.validate()?;
    if cfg.net_noise_sd > 0.0 {
        return domain("population expectations assume an exact net/gross conversion");
    }
    let conv = cfg.conversion();
    let w = &cfg.ref_wage;
    let (z_lo, z_hi) = w.z_range();
    let mass = norm_cdf(z_hi) - norm_cdf(z_lo);
    let rule_gl = GaussLegendre::new(32);
    let mut cache = ModelCache::new();
    let mut total = TypeOutcome::default();
    for (regime, share) in cfg.regime_shares() {
        let rule = policy.rule(regime);
        // non-smooth points of the benefit path, in z units
        let mut levels = vec![rule.b_low, rule.b_high];
        levels.extend(rule.decay_steps.iter().map(|s| rule.b_low / s.fraction));
        let mut cuts: Vec<f64> = levels
            .iter()
            .map(|&l| (conv.net_to_gross(l / rule.beta).ln() - w.mu) / w.sigma)
            .filter(|&z| z > z_lo && z < z_hi)
            .collect();
        cuts.push(z_lo);
        cuts.push(z_hi);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        for seg in cuts.windows(2) {
            for (z, wz) in rule_gl.points(seg[0], seg[1]) {
                let gross = (w.mu + w.sigma * z).exp();
                let level = rule.capped_level(conv.gross_to_net(gross))?;
                let types = worker_types(cfg, policy, regime, gross)?;
                let o = aggregate(&mut cache, cfg, base, rule, level, &types)?;
                let weight = share * wz * norm_pdf(z) / mass;
                total.ui_paid += weight * o.ui_paid;
                total.reemployed += weight * o.reemployed;
                total.log_wage_mass += weight * o.log_wage_mass;
            }
        }
    }
    outcome_value(&total, outcome)
}

/// Welfare gains implied by the model at the high kink, computed with the
/// same conventions as estimates from a wage fit and a UI fit:
/// `eta = b·dE[log w]/db`, `dR/db`, `R/b` at the kink, `w*/b = Λ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpliedGains {
    pub wage: KinkEffect,
    pub ui: KinkEffect,
    pub inputs: WelfareInputs,
    pub result: WelfareResult,
}

pub fn model_implied_gains(
    cfg: &SimConfig,
    policy: &Policy,
    base: &ModelParams,
    regime: Regime,
    delta: f64,
) -> Result<ImpliedGains> {
    let wage = ground_truth_kink_effect(cfg, policy, base, regime, KinkOutcome::MeanLogWage)?;
    let ui = ground_truth_kink_effect(cfg, policy, base, regime, KinkOutcome::TotalUiPaid)?;
    let inputs = WelfareInputs {
        eta_wb: wage.effect * wage.b_at_kink,
        dr_db: ui.effect,
        r_over_b: ui.level / ui.b_at_kink,
        delta,
        ..WelfareInputs::default()
    };
    let result = calibrate_formula(&inputs)?;
    Ok(ImpliedGains { wage, ui, inputs, result })
}

/// Writes records as CSV with the fixed header, even when empty.
pub fn write_dataset<W: Write>(records: &[SpellRecord], out: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record(COLUMNS)?;
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn export_dataset(records: &[SpellRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset(records, std::io::BufWriter::new(file))
}

/// Reads a dataset, requiring the exact header.
pub fn read_dataset_from<R: Read>(input: R) -> Result<Vec<SpellRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::Schema(format!(
            "dataset header {:?} does not match the expected columns {:?}",
            header.iter().collect::<Vec<_>>(),
            COLUMNS
        )));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Schema(format!("row {}: {e}", i + 1))))
        .collect()
}

pub fn read_dataset(path: &Path) -> Result<Vec<SpellRecord>> {
    let file = std::fs::File::open(path)?;
    read_dataset_from(std::io::BufReader::new(file))
}

/// Position of a spell's reference wage relative to its regime's kinks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WageBand {
    All,
    BelowLowKink,
    BetweenKinks,
    AboveHighKink,
}

/// Descriptive means for one (regime, band) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub regime: Option<Regime>,
    pub band: WageBand,
    pub n: usize,
    pub gross_ref_wage: f64,
    pub age: f64,
    pub male: f64,
    pub spouse: f64,
    pub children: f64,
    pub tenure_months: f64,
    pub contributions_36m: f64,
    pub ui_months_collected: f64,
    pub total_ui_paid: f64,
    pub nonemployment_months: f64,
    pub censored: f64,
}

/// Sample means overall and by regime and kink band.
pub fn summarize(records: &[SpellRecord], policy: &Policy, conv: &WageConversion) -> Vec<SummaryRow> {
    let band = |r: &SpellRecord| {
        let k = policy.rule(r.regime).kink_locations(conv);
        if r.gross_ref_wage < k.gross_low {
            WageBand::BelowLowKink
        } else if r.gross_ref_wage <= k.gross_high {
            WageBand::BetweenKinks
        } else {
            WageBand::AboveHighKink
        }
    };
    let row = |regime: Option<Regime>, band: WageBand, rs: &[&SpellRecord]| {
        let n = rs.len();
        let mean = |f: &dyn Fn(&SpellRecord) -> f64| {
            if n == 0 {
                f64::NAN
            } else {
                rs.iter().map(|r| f(r)).sum::<f64>() / n as f64
            }
        };
        SummaryRow {
            regime,
            band,
            n,
            gross_ref_wage: mean(&|r| r.gross_ref_wage),
            age: mean(&|r| f64::from(r.age)),
            male: mean(&|r| f64::from(u8::from(r.male))),
            spouse: mean(&|r| f64::from(u8::from(r.spouse))),
            children: mean(&|r| f64::from(r.children)),
            tenure_months: mean(&|r| f64::from(r.tenure_months)),
            contributions_36m: mean(&|r| f64::from(r.contributions_36m)),
            ui_months_collected: mean(&|r| f64::from(r.ui_months_collected)),
            total_ui_paid: mean(&|r| r.total_ui_paid),
            nonemployment_months: mean(&|r| f64::from(r.nonemployment_months)),
            censored: mean(&|r| f64::from(u8::from(r.censored))),
        }
    };
    let all: Vec<&SpellRecord> = records.iter().collect();
    let mut out = vec![row(None, WageBand::All, &all)];
    for regime in [Regime::Pre, Regime::Post] {
        for b in [WageBand::All, WageBand::BelowLowKink, WageBand::BetweenKinks, WageBand::AboveHighKink] {
            let rs: Vec<&SpellRecord> = records
                .iter()
                .filter(|r| r.regime == regime && (b == WageBand::All || band(r) == b))
                .collect();
            if !rs.is_empty() {
                out.push(row(Some(regime), b, &rs));
            }
        }
    }
    out
}
