use proptest::prelude::*;
use ui_rkd::schedule::BenefitRule;
use ui_rkd::search_model::*;

fn any_params() -> impl Strategy<Value = ModelParams> {
    (
        (0.001f64..0.02, 0.005f64..0.1, 0.05f64..1.0, 0.0f64..0.5),
        (100.0f64..600.0, 0.0f64..1.0, 0.0f64..300.0, 0.0f64..60.0),
        (6.0f64..7.6, 0.2f64..0.9, prop::option::of(0.0005f64..0.004)),
    )
        .prop_map(|((r, delta, lambda_offer, gamma), (b, share, y, tau), (mu, sigma, cara))| ModelParams {
            r,
            delta,
            lambda_offer,
            gamma,
            b,
            b_a: share * b * 0.5,
            y,
            tau,
            utility: cara.map_or(Utility::Linear, |a| Utility::Cara { risk_aversion: a }),
            offers: LogNormalOffers { mu, sigma },
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exhausted_workers_are_less_choosy(p in any_params()) {
        let s = solve_model(&p, 1e-8).unwrap();
        prop_assert!(s.w_star_exhausted <= s.w_star_eligible + 1e-9);
        prop_assert!(s.residual <= 1e-8);
        prop_assert!(s.w_star_exhausted >= p.b_a + p.y + p.tau - 1e-6);
    }

    #[test]
    fn reservation_wage_rises_with_the_benefit(p in any_params(), db in 1.0f64..100.0) {
        let lo = solve_model(&p, 1e-8).unwrap();
        let hi = solve_model(&ModelParams { b: p.b + db, ..p }, 1e-8).unwrap();
        prop_assert!(hi.w_star_eligible > lo.w_star_eligible);
        // jobs return separated workers to the better eligible state
        prop_assert!(hi.w_star_exhausted <= lo.w_star_exhausted + 1e-9);
    }

    #[test]
    fn truncation_shifts_the_mean_and_shrinks_the_variance(mu in 5.0f64..8.0, sigma in 0.1f64..1.5, z in -4.0f64..4.0) {
        let offers = LogNormalOffers { mu, sigma };
        let cut = mu + sigma * z;
        let m = accepted_wage_moments(&offers, cut.exp()).unwrap();
        prop_assert!(m.mean_log >= cut && m.mean_log >= mu);
        prop_assert!(m.var_log > 0.0 && m.var_log < sigma * sigma);
        prop_assert!(m.lambda_factor >= 1.0);
    }

    #[test]
    fn spending_falls_with_the_exit_rate(level in 100.0f64..400.0, h in 0.0f64..2.0, dh in 0.01f64..1.0, months in 2u32..24) {
        let rule = BenefitRule::post_reform();
        let slow = expected_total_at_level(&rule, level, h, months).unwrap();
        let fast = expected_total_at_level(&rule, level, h + dh, months).unwrap();
        prop_assert!(fast < slow);
        let scheduled: f64 = (1..=months).map(|d| rule.benefit_from_level(level, d)).sum();
        prop_assert!(slow <= scheduled + 1e-9);
        prop_assert!(fast >= rule.benefit_from_level(level, 1) - 1e-9);
    }

    #[test]
    fn duration_is_the_inverse_exit_rate(p in any_params(), w in 200.0f64..3000.0) {
        let d = expected_ui_duration(&p, w).unwrap();
        prop_assert!((d * ui_exit_rate(&p, w) - 1.0).abs() < 1e-12);
    }
}
