mod common;

use proptest::prelude::*;
use ui_rkd::rkd::{Kernel, PolyOrder, RkdFit};
use ui_rkd::welfare::*;

fn published(c: &common::PublishedCell) -> WelfareResult {
    calibrate_formula(&WelfareInputs { eta_wb: c.eta, dr_db: c.dr_db, r_over_b: c.r_over_b, ..Default::default() }).unwrap()
}

#[test]
fn published_cells_are_reproduced() {
    for c in &common::PUBLISHED {
        let r = published(c);
        assert!((r.lhs - c.lhs).abs() <= 0.02, "{}: lhs {}", c.label, r.lhs);
        assert!((r.rhs - c.rhs).abs() <= 0.02, "{}: rhs {}", c.label, r.rhs);
        assert!((r.gains - c.gains).abs() <= 0.02, "{}: gains {}", c.label, r.gains);
    }
}

fn fit(alpha: f64, se: f64, mean: f64, log: bool) -> RkdFit {
    RkdFit {
        kink_point: 963.0,
        poly_order: PolyOrder::Linear,
        kernel: Kernel::Uniform,
        fuzzy: true,
        nu1: alpha * -0.4147,
        se_nu1: se * 0.4147,
        pi1: -0.4147,
        se_pi1: Some(0.001),
        alpha,
        se_alpha: se,
        n_used: 1_000,
        h_used: 200.0,
        mean_outcome: mean,
        first_stage_f: Some(1e5),
        weak_instrument: false,
        b_at_kink: Some(400.0),
        log_outcome: log,
        elasticity: None,
        n_singletons_dropped: 0,
        n_censored_excluded: 0,
        coefficients: vec![],
    }
}

#[test]
fn headline_fits_give_the_headline_gains() {
    let r = calibrate_from_fits(&fit(0.0009, 0.0003, 7.2, true), &fit(6.53, 1.0, 2585.57, false), 0.03).unwrap();
    assert!((r.lhs - 0.36).abs() < 0.02 && (r.rhs - 0.16).abs() < 0.01 && (r.gains - 0.21).abs() < 0.02);
    let se = r.se_gains.unwrap();
    let want = (400.0f64 * 0.0003).hypot(1.0 / (1.0 / 0.03 + 2585.57 / 400.0));
    assert!((se - want).abs() < 1e-12);
}

#[test]
fn zero_wage_response_is_a_pure_cost() {
    let r = calibrate_from_fits(&fit(0.0, 0.0, 7.2, true), &fit(4.3, 1.0, 1800.0, false), 0.03).unwrap();
    assert!(r.gains < 0.0);
    assert!((r.gains + 4.3 / (1.0 / 0.03 + 1800.0 / 400.0)).abs() < 1e-12);
}

#[test]
fn mismatched_fits_are_rejected() {
    let wage = fit(0.0009, 0.0003, 7.2, true);
    let mut ui = fit(6.53, 1.0, 2585.57, false);
    ui.kink_point = 722.0;
    assert!(calibrate_from_fits(&wage, &ui, 0.03).is_err());
    assert!(calibrate_from_fits(&fit(6.53, 1.0, 2585.57, false), &fit(6.53, 1.0, 2585.57, false), 0.03).is_err());
    assert!(calibrate_from_fits(&wage, &fit(6.53, 1.0, 2585.57, false), 0.0).is_err());
}

fn inputs() -> impl Strategy<Value = WelfareInputs> {
    (-2.0f64..2.0, 0.0f64..20.0, 0.0f64..20.0, 0.005f64..0.2, 0.5f64..5.0, 1.0f64..5.0).prop_map(
        |(eta_wb, dr_db, r_over_b, delta, w_star_over_b, lambda_factor)| WelfareInputs {
            eta_wb,
            dr_db,
            r_over_b,
            delta,
            w_star_over_b,
            lambda_factor,
        },
    )
}

proptest! {
    #[test]
    fn gains_are_lhs_minus_rhs(inp in inputs()) {
        let r = calibrate_formula(&inp).unwrap();
        prop_assert_eq!(r.gains, r.lhs - r.rhs);
    }

    #[test]
    fn gains_rise_with_the_wage_response(inp in inputs(), d in 0.01f64..1.0) {
        let a = calibrate_formula(&inp).unwrap().gains;
        let b = calibrate_formula(&WelfareInputs { eta_wb: inp.eta_wb + d, ..inp }).unwrap().gains;
        prop_assert!(b > a);
    }

    #[test]
    fn gains_fall_with_the_spending_response(inp in inputs(), d in 0.01f64..5.0) {
        let a = calibrate_formula(&inp).unwrap().gains;
        let b = calibrate_formula(&WelfareInputs { dr_db: inp.dr_db + d, ..inp }).unwrap().gains;
        prop_assert!(b < a);
    }

    #[test]
    fn unit_ratios_bound_positive_wage_responses_from_below(inp in inputs()) {
        let unit = WelfareInputs { w_star_over_b: 1.0, lambda_factor: 1.0, eta_wb: inp.eta_wb.abs(), ..inp };
        let scaled = WelfareInputs { w_star_over_b: inp.w_star_over_b.max(1.0), ..WelfareInputs { eta_wb: inp.eta_wb.abs(), ..inp } };
        prop_assert!(calibrate_formula(&scaled).unwrap().gains >= calibrate_formula(&unit).unwrap().gains);
    }
}
