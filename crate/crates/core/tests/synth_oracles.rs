//! Simulated spells against their exact population counterparts.

mod common;

use std::sync::OnceLock;

use ui_rkd::rkd::*;
use ui_rkd::schedule::*;
use ui_rkd::search_model::ModelParams;
use ui_rkd::synth::*;

fn config() -> SimConfig {
    SimConfig { n_workers: 100_000, seed: 314, ..SimConfig::default() }
}

fn population() -> &'static [SpellRecord] {
    static POP: OnceLock<Vec<SpellRecord>> = OnceLock::new();
    POP.get_or_init(|| simulate_population(&config(), &Policy::default(), &ModelParams::calibrated()).unwrap())
}

#[test]
fn records_reconstruct_from_the_schedule() {
    let policy = Policy::default();
    for r in population() {
        r.validate(&policy).unwrap();
    }
    let post = population().iter().filter(|r| r.regime == Regime::Post).count() as f64;
    // 21 of 36 layoff months fall after the reform
    let share = post / population().len() as f64;
    assert!((share - 21.0 / 36.0).abs() < 0.01, "{share}");
}

#[test]
fn mean_ui_paid_matches_the_population_expectation() {
    let cfg = config();
    let want = expected_population_mean(&cfg, &Policy::default(), &ModelParams::calibrated(), KinkOutcome::TotalUiPaid).unwrap();
    let paid: Vec<f64> = population().iter().map(|r| r.total_ui_paid).collect();
    let (m, se) = common::mean_se(&paid);
    assert!((m - want).abs() < 3.0 * se, "{m} ± {se} vs {want}");
}

#[test]
fn mean_log_wage_matches_the_population_expectation() {
    let cfg = config();
    let want = expected_population_mean(&cfg, &Policy::default(), &ModelParams::calibrated(), KinkOutcome::MeanLogWage).unwrap();
    let logs: Vec<f64> = population().iter().filter_map(|r| r.reemployment_wage).map(f64::ln).collect();
    let (m, se) = common::mean_se(&logs);
    assert!((m - want).abs() < 3.0 * se, "{m} ± {se} vs {want}");
}

#[test]
fn first_stage_on_simulated_spells() {
    let policy = Policy::default();
    let (data, report) = spell_data(population(), SpellOutcome::TotalUiPaid, &policy, Some(Regime::Post), false).unwrap();
    assert_eq!(report.n_used + report.n_other_regime + report.n_censored_excluded, report.n_records);
    let kink = policy.post.kink_locations(&WageConversion::default()).gross_high;
    let fit = fuzzy_rkd(&data, &RkdSpec::new(kink, Method::Fuzzy, Bandwidth::Fixed(100.0))).unwrap();
    assert!((fit.pi1 + 0.5 * 0.831).abs() < 1e-9, "{}", fit.pi1);
}

#[test]
fn reference_wages_have_no_density_kink() {
    let conv = WageConversion::default();
    for regime in [Regime::Pre, Regime::Post] {
        let w: Vec<f64> = population().iter().filter(|r| r.regime == regime).map(|r| r.gross_ref_wage).collect();
        let k = Policy::default().rule(regime).kink_locations(&conv);
        for kink in [k.gross_low, k.gross_high] {
            let d = density_kink_check(&w, kink, 10.0, 150.0).unwrap();
            assert!(d.t_stat().abs() < 3.0, "{regime} {kink}: t = {}", d.t_stat());
        }
    }
}

#[test]
fn covariate_check_detects_a_planted_kink() {
    let policy = Policy::default();
    let base = ModelParams::calibrated();
    let kink = policy.post.kink_locations(&WageConversion::default()).gross_high;
    let spec = RkdSpec::new(kink, Method::Sharp { slope_change: -0.4155 }, Bandwidth::Fixed(200.0));
    let t = |slope: Option<f64>| {
        let cfg = SimConfig { n_workers: 40_000, seed: 5, regime: RegimeAssignment::Post, adversarial_age_kink: slope, ..SimConfig::default() };
        let recs = simulate_population(&cfg, &policy, &base).unwrap();
        let (data, _) = spell_data(&recs, SpellOutcome::TotalUiPaid, &policy, None, false).unwrap();
        let age = data.with_outcome(data.control("age").unwrap().to_vec());
        let fit = covariate_smoothness(&age, &["age"], &spec).unwrap();
        fit.nu1 / fit.se_nu1
    };
    assert!(t(None).abs() < 3.0, "clean: {}", t(None));
    assert!(t(Some(0.03)).abs() > 5.0, "planted: {}", t(Some(0.03)));
}

#[test]
fn csv_round_trip_preserves_the_population() {
    let recs = &population()[..5_000];
    let mut buf = Vec::new();
    write_dataset(recs, &mut buf).unwrap();
    let back = read_dataset_from(buf.as_slice()).unwrap();
    assert_eq!(back, recs);
    let mut again = Vec::new();
    write_dataset(&back, &mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn seeds_and_partitions() {
    let policy = Policy::default();
    let base = ModelParams::calibrated();
    let cfg = SimConfig { n_workers: 2_000, ..config() };
    let whole = simulate_population(&cfg, &policy, &base).unwrap();
    let mut parts = simulate_range(&cfg, &policy, &base, 0..700).unwrap();
    parts.extend(simulate_range(&cfg, &policy, &base, 700..2_000).unwrap());
    assert_eq!(whole, parts);
    assert_eq!(&whole[..], &population()[..2_000]);
    let other = simulate_population(&SimConfig { seed: 315, ..cfg }, &policy, &base).unwrap();
    assert_ne!(whole, other);
}

#[test]
fn summary_bands_partition_each_regime() {
    let rows = summarize(population(), &Policy::default(), &WageConversion::default());
    assert_eq!(rows[0].n, population().len());
    for regime in [Regime::Pre, Regime::Post] {
        let of = |band| rows.iter().find(|r| r.regime == Some(regime) && r.band == band).map_or(0, |r| r.n);
        let parts = of(WageBand::BelowLowKink) + of(WageBand::BetweenKinks) + of(WageBand::AboveHighKink);
        assert_eq!(parts, of(WageBand::All));
    }
}

#[test]
fn ground_truth_splits_into_mechanical_and_behavioral_parts() {
    let g = ground_truth_kink_effect(&config(), &Policy::default(), &ModelParams::calibrated(), Regime::Post, KinkOutcome::TotalUiPaid).unwrap();
    let (mech, beh) = (g.mechanical.unwrap(), g.behavioral.unwrap());
    assert!((mech + beh - g.effect).abs() < 1e-9);
    // a higher benefit raises the reservation wage and lengthens spells
    assert!(beh > 0.0 && mech > 0.0);
    let wage = ground_truth_kink_effect(&config(), &Policy::default(), &ModelParams::calibrated(), Regime::Post, KinkOutcome::MeanLogWage).unwrap();
    assert!(wage.effect > 0.0);
}
